//! CSV and GeoJSON readers and writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! read back is bit-identical to the one written.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue, Value};

use crate::boundary::BoundarySummary;
use crate::error::{Error, Result};
use crate::geometry::{DynamicFeature, Point2, Polyline};
use crate::impute::{DeviceTable, ImputationSet, Observation};
use crate::inference::{Checkpoint, CovSpectral, Draw, ParamSummary};
use crate::movement::Track;

pub const TRACK_HEADER: [&str; 4] = ["id", "day", "x_km", "y_km"];
pub const OBSERVATION_HEADER: [&str; 5] = ["id", "t_star", "x_km", "y_km", "device_class"];
pub const IMPUTATION_HEADER: [&str; 5] = ["id", "k", "day", "x_km", "y_km"];
pub const POSTERIOR_PARAM_HEADER: [&str; 15] = [
    "iter",
    "sigma_mu2",
    "tau2",
    "a",
    "b",
    "cx_cs",
    "cy_cs",
    "cx_sb",
    "cy_sb",
    "log_eig1_cs",
    "log_eig2_cs",
    "angle_cs",
    "log_eig1_sb",
    "log_eig2_sb",
    "angle_sb",
];

/// Shortest round-trip text of `x`, in exponent form when very small or large.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => {
            let line = match &kind {
                csv::ErrorKind::UnequalLengths { pos: Some(p), .. } => format!("line {}: ", p.line()),
                csv::ErrorKind::Utf8 { pos: Some(p), .. } => format!("line {}: ", p.line()),
                _ => String::new(),
            };
            Error::Data(format!("{}: {line}{kind:?}", path.display()))
        }
    }
}

/// A CSV table with a required header, read eagerly.
struct Table {
    path: PathBuf,
    columns: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path, required: &[&str]) -> Result<Table> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        for name in required {
            if !columns.iter().any(|c| c == name) {
                return Err(Error::Data(format!(
                    "{}: missing column `{name}` (header has {})",
                    path.display(),
                    columns.join(",")
                )));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    fn col(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("checked in read")
    }

    fn bad(&self, line: u64, msg: impl std::fmt::Display) -> Error {
        Error::Data(format!("{}: line {line}: {msg}", self.path.display()))
    }

    fn text<'a>(&self, line: u64, rec: &'a csv::StringRecord, col: usize) -> Result<&'a str> {
        match rec.get(col) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(self.bad(line, format!("empty `{}`", self.columns[col]))),
        }
    }

    fn float(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<f64> {
        let s = self.text(line, rec, col)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.bad(line, format!("`{}` is not a finite number: `{s}`", self.columns[col]))),
        }
    }

    fn int(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<i64> {
        let s = self.text(line, rec, col)?;
        s.parse::<i64>()
            .map_err(|_| self.bad(line, format!("`{}` is not an integer: `{s}`", self.columns[col])))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACK_HEADER).map_err(|e| csv_error(path, e))?;
    for t in tracks {
        for (day, p) in t.iter() {
            w.write_record([t.id.clone(), day.to_string(), num(p.x), num(p.y)])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    finish(path, w)
}

/// Splits sorted `(day, point)` rows into runs of consecutive days.
fn contiguous_runs(id: &str, rows: &[(i64, Point2)]) -> Result<Vec<Track>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].0 != rows[i - 1].0 + 1 {
            out.push(Track::new(id, rows[start].0, rows[start..i].iter().map(|r| r.1).collect())?);
            start = i;
        }
    }
    Ok(out)
}

/// Tracks grouped by id. Gaps in an id's days split it into several tracks.
pub fn read_tracks(path: &Path) -> Result<Vec<Track>> {
    let t = Table::read(path, &TRACK_HEADER)?;
    let (ci, cd, cx, cy) = (t.col("id"), t.col("day"), t.col("x_km"), t.col("y_km"));
    let mut by_id: BTreeMap<String, Vec<(i64, Point2, u64)>> = BTreeMap::new();
    for (line, rec) in &t.rows {
        let id = t.text(*line, rec, ci)?.to_string();
        let day = t.int(*line, rec, cd)?;
        let p = Point2::new(t.float(*line, rec, cx)?, t.float(*line, rec, cy)?);
        by_id.entry(id).or_default().push((day, p, *line));
    }
    let mut out = Vec::new();
    for (id, mut rows) in by_id {
        rows.sort_by_key(|r| r.0);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(t.bad(w[1].2, format!("duplicate day {} for `{id}`", w[1].0)));
        }
        let rows: Vec<(i64, Point2)> = rows.into_iter().map(|r| (r.0, r.1)).collect();
        out.extend(contiguous_runs(&id, &rows)?);
    }
    Ok(out)
}

pub fn write_observations(path: &Path, obs: &[Observation]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(OBSERVATION_HEADER).map_err(|e| csv_error(path, e))?;
    for o in obs {
        w.write_record([
            o.id.clone(),
            num(o.t_star),
            num(o.loc.x),
            num(o.loc.y),
            o.device_class.clone(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Observations with measurement sd looked up in `devices`.
pub fn read_observations(path: &Path, devices: &DeviceTable) -> Result<Vec<Observation>> {
    let t = Table::read(path, &OBSERVATION_HEADER)?;
    let cols = OBSERVATION_HEADER.map(|c| t.col(c));
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let class = t.text(*line, rec, cols[4])?;
        let sd = devices.sd(class).map_err(|e| t.bad(*line, e))?;
        let o = Observation {
            id: t.text(*line, rec, cols[0])?.to_string(),
            t_star: t.float(*line, rec, cols[1])?,
            loc: Point2::new(t.float(*line, rec, cols[2])?, t.float(*line, rec, cols[3])?),
            device_class: class.to_string(),
            sd,
        };
        o.validate().map_err(|e| t.bad(*line, e))?;
        out.push(o);
    }
    Ok(out)
}

pub fn write_imputations(path: &Path, sets: &[ImputationSet]) -> Result<()> {
    let mut sorted: Vec<&ImputationSet> = sets.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id).then(a.segment.cmp(&b.segment)));
    let mut w = writer(path)?;
    w.write_record(IMPUTATION_HEADER).map_err(|e| csv_error(path, e))?;
    let mut i = 0;
    while i < sorted.len() {
        let id = &sorted[i].id;
        let j = i + sorted[i..].iter().take_while(|s| &s.id == id).count();
        let k_max = sorted[i..j].iter().map(|s| s.k()).max().unwrap_or(0);
        for k in 0..k_max {
            for set in &sorted[i..j] {
                let Some(path_k) = set.paths.get(k) else { continue };
                for (day, p) in path_k.iter() {
                    w.write_record([id.clone(), k.to_string(), day.to_string(), num(p.x), num(p.y)])
                        .map_err(|e| csv_error(path, e))?;
                }
            }
        }
        i = j;
    }
    finish(path, w)
}

/// Imputation sets; consecutive-day runs of an id become its segments.
pub fn read_imputations(path: &Path) -> Result<Vec<ImputationSet>> {
    let t = Table::read(path, &IMPUTATION_HEADER)?;
    let cols = IMPUTATION_HEADER.map(|c| t.col(c));
    let mut by_id: BTreeMap<String, BTreeMap<usize, Vec<(i64, Point2, u64)>>> = BTreeMap::new();
    for (line, rec) in &t.rows {
        let id = t.text(*line, rec, cols[0])?.to_string();
        let k = t.int(*line, rec, cols[1])?;
        if k < 0 {
            return Err(t.bad(*line, format!("negative imputation index {k}")));
        }
        let day = t.int(*line, rec, cols[2])?;
        let p = Point2::new(t.float(*line, rec, cols[3])?, t.float(*line, rec, cols[4])?);
        by_id.entry(id).or_default().entry(k as usize).or_default().push((day, p, *line));
    }
    let mut out = Vec::new();
    for (id, draws) in by_id {
        let kk = draws.len();
        if draws.keys().copied().ne(0..kk) {
            return Err(Error::Data(format!(
                "{}: imputation indices of `{id}` are not 0..{kk}",
                path.display()
            )));
        }
        let mut per_k: Vec<Vec<Track>> = Vec::with_capacity(kk);
        for (_, mut rows) in draws {
            rows.sort_by_key(|r| r.0);
            if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(t.bad(w[1].2, format!("duplicate day {} for `{id}`", w[1].0)));
            }
            let rows: Vec<(i64, Point2)> = rows.into_iter().map(|r| (r.0, r.1)).collect();
            per_k.push(contiguous_runs(&id, &rows)?);
        }
        let layout: Vec<(i64, usize)> = per_k[0].iter().map(|t| (t.t0, t.len())).collect();
        if per_k
            .iter()
            .any(|segs| segs.iter().map(|t| (t.t0, t.len())).ne(layout.iter().copied()))
        {
            return Err(Error::Data(format!(
                "{}: imputations of `{id}` cover different days",
                path.display()
            )));
        }
        for (s, _) in layout.iter().enumerate() {
            out.push(ImputationSet {
                id: id.clone(),
                segment: s,
                paths: per_k.iter().map(|segs| segs[s].clone()).collect(),
            });
        }
    }
    Ok(out)
}

fn draw_fields(d: &Draw) -> Vec<String> {
    let (cs, sb) = (d.cov_cs.canonical(), d.cov_sb.canonical());
    let mut f = vec![d.iter.to_string()];
    f.extend(
        [
            d.sigma2,
            d.tau2,
            d.a,
            d.b,
            d.center_cs.x,
            d.center_cs.y,
            d.center_sb.x,
            d.center_sb.y,
            cs.log_eig1,
            cs.log_eig2,
            cs.angle,
            sb.log_eig1,
            sb.log_eig2,
            sb.angle,
        ]
        .iter()
        .map(|x| num(*x)),
    );
    f.extend(d.z.iter().map(u8::to_string));
    f
}

fn posterior_header(n: usize) -> Vec<String> {
    POSTERIOR_PARAM_HEADER
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n).map(|i| format!("z_{i}")))
        .collect()
}

/// One chain's draws. With `append`, rows are added to an existing file
/// whose header must match.
pub fn write_posterior(path: &Path, n: usize, draws: &[Draw], append: bool) -> Result<()> {
    if append {
        let header = read_string(path)?.lines().next().unwrap_or_default().to_string();
        if header != posterior_header(n).join(",") {
            return Err(Error::Data(format!("{}: header does not match the data", path.display())));
        }
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for d in draws {
            w.write_record(draw_fields(d)).map_err(|e| csv_error(path, e))?;
        }
        return w.flush().map_err(|e| Error::io(path, e));
    }
    let mut w = writer(path)?;
    w.write_record(posterior_header(n)).map_err(|e| csv_error(path, e))?;
    for d in draws {
        w.write_record(draw_fields(d)).map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

/// Draws of one chain, covariance spectra in canonical form.
pub fn read_posterior(path: &Path) -> Result<Vec<Draw>> {
    let t = Table::read(path, &POSTERIOR_PARAM_HEADER)?;
    let p = POSTERIOR_PARAM_HEADER.map(|c| t.col(c));
    let zcols: Vec<usize> = (1..)
        .map_while(|i| t.columns.iter().position(|c| *c == format!("z_{i}")))
        .collect();
    let mut out = Vec::with_capacity(t.rows.len());
    for (line, rec) in &t.rows {
        let f = |i: usize| t.float(*line, rec, p[i]);
        let iter = t.int(*line, rec, p[0])?;
        let mut z = Vec::with_capacity(zcols.len());
        for &c in &zcols {
            match t.text(*line, rec, c)? {
                "0" => z.push(0),
                "1" => z.push(1),
                s => return Err(t.bad(*line, format!("label must be 0 or 1, got `{s}`"))),
            }
        }
        let spectral = |i: usize| -> Result<CovSpectral> {
            Ok(CovSpectral {
                log_eig1: f(i)?,
                log_eig2: f(i + 1)?,
                angle: f(i + 2)?,
            })
        };
        out.push(Draw {
            iter: usize::try_from(iter).map_err(|_| t.bad(*line, "negative iteration"))?,
            sigma2: f(1)?,
            tau2: f(2)?,
            a: f(3)?,
            b: f(4)?,
            center_cs: Point2::new(f(5)?, f(6)?),
            center_sb: Point2::new(f(7)?, f(8)?),
            cov_cs: spectral(9)?,
            cov_sb: spectral(12)?,
            z,
        });
    }
    Ok(out)
}

pub fn write_summary(path: &Path, rows: &[ParamSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["parameter", "median", "lower_2.5", "upper_97.5"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([r.name.to_string(), num(r.median), num(r.lo), num(r.hi)])
            .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

pub fn write_label_probabilities(path: &Path, probs: &[(String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "index", "p_cs"]).map_err(|e| csv_error(path, e))?;
    for (i, (id, p)) in probs.iter().enumerate() {
        w.write_record([id.clone(), (i + 1).to_string(), num(*p)])
            .map_err(|e| csv_error(path, e))?;
    }
    finish(path, w)
}

fn bits(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn unbits(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

/// Exact text form of a chain checkpoint; floats are stored as IEEE bits.
pub fn checkpoint_to_string(cp: &Checkpoint) -> String {
    let s = &cp.state;
    let floats = [
        s.sigma2,
        s.tau2,
        s.a,
        s.b,
        s.center_cs.x,
        s.center_cs.y,
        s.center_sb.x,
        s.center_sb.y,
        s.cov_cs.log_eig1,
        s.cov_cs.log_eig2,
        s.cov_cs.angle,
        s.cov_sb.log_eig1,
        s.cov_sb.log_eig2,
        s.cov_sb.angle,
    ];
    let join = |v: Vec<String>| v.join(" ");
    let mut out = String::new();
    out.push_str(&format!("chain = {}\n", cp.chain));
    out.push_str(&format!("chain_seed = {}\n", cp.chain_seed));
    out.push_str(&format!("next_iter = {}\n", cp.next_iter));
    out.push_str(&format!("state_iter = {}\n", s.iter));
    out.push_str(&format!("state = {}\n", join(floats.iter().map(|x| bits(*x)).collect())));
    out.push_str(&format!("z = {}\n", join(s.z.iter().map(u8::to_string).collect())));
    out.push_str(&format!("imputation = {}\n", join(cp.imputation.iter().map(u32::to_string).collect())));
    out.push_str(&format!("log_scales = {}\n", join(cp.log_scales.iter().map(|x| bits(*x)).collect())));
    out.push_str(&format!("accepted = {}\n", join(cp.accepted.iter().map(u64::to_string).collect())));
    out.push_str(&format!("proposed = {}\n", join(cp.proposed.iter().map(u64::to_string).collect())));
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let bad = |m: String| Error::Data(format!("checkpoint: {m}"));
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected `key = value`", i + 1)))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
    fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
        s.split_whitespace().map(|t| t.parse().ok()).collect()
    }
    let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
    let floats: Vec<f64> = get("state")?
        .split_whitespace()
        .map(unbits)
        .collect::<Option<_>>()
        .filter(|v: &Vec<f64>| v.len() == 14)
        .ok_or_else(|| bad("bad `state`".into()))?;
    let scales: Vec<f64> = get("log_scales")?
        .split_whitespace()
        .map(unbits)
        .collect::<Option<_>>()
        .filter(|v: &Vec<f64>| v.len() == 8)
        .ok_or_else(|| bad("bad `log_scales`".into()))?;
    let counts = |k: &str| -> Result<[u64; 8]> {
        parse_list::<u64>(get(k)?)
            .and_then(|v| <[u64; 8]>::try_from(v).ok())
            .ok_or_else(|| bad(format!("bad `{k}`")))
    };
    let z: Vec<u8> = parse_list(get("z")?)
        .filter(|v: &Vec<u8>| v.iter().all(|z| *z <= 1))
        .ok_or_else(|| bad("bad `z`".into()))?;
    let imputation: Vec<u32> = parse_list(get("imputation")?).ok_or_else(|| bad("bad `imputation`".into()))?;
    Ok(Checkpoint {
        chain: num("chain")? as usize,
        chain_seed: num("chain_seed")?,
        next_iter: num("next_iter")? as usize,
        state: Draw {
            iter: num("state_iter")? as usize,
            sigma2: floats[0],
            tau2: floats[1],
            a: floats[2],
            b: floats[3],
            center_cs: Point2::new(floats[4], floats[5]),
            center_sb: Point2::new(floats[6], floats[7]),
            cov_cs: CovSpectral {
                log_eig1: floats[8],
                log_eig2: floats[9],
                angle: floats[10],
            },
            cov_sb: CovSpectral {
                log_eig1: floats[11],
                log_eig2: floats[12],
                angle: floats[13],
            },
            z,
        },
        imputation,
        log_scales: scales.try_into().expect("length checked"),
        accepted: counts("accepted")?,
        proposed: counts("proposed")?,
    })
}

fn line_coords(coords: &[Vec<f64>], what: &str) -> Result<Polyline> {
    let pts = coords
        .iter()
        .map(|c| match c.as_slice() {
            [x, y, ..] => Ok(Point2::new(*x, *y)),
            _ => Err(Error::Data(format!("{what}: position with fewer than two coordinates"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Polyline::new(pts).map_err(|e| Error::Data(format!("{what}: {e}")))
}

fn geometry_lines(g: &Geometry, what: &str) -> Result<Vec<Polyline>> {
    match &g.value {
        Value::LineString(c) => Ok(vec![line_coords(c, what)?]),
        Value::MultiLineString(parts) => parts.iter().map(|c| line_coords(c, what)).collect(),
        Value::GeometryCollection(gs) => {
            let mut out = Vec::new();
            for g in gs {
                out.extend(geometry_lines(g, what)?);
            }
            Ok(out)
        }
        other => Err(Error::Data(format!("{what}: unsupported geometry type {}", other.type_name()))),
    }
}

fn parse_collection(text: &str, what: &str) -> Result<FeatureCollection> {
    match text.parse::<GeoJson>() {
        Ok(GeoJson::FeatureCollection(fc)) => Ok(fc),
        Ok(GeoJson::Feature(f)) => Ok(FeatureCollection {
            bbox: None,
            features: vec![f],
            foreign_members: None,
        }),
        Ok(_) => Err(Error::Data(format!("{what}: expected a FeatureCollection"))),
        Err(e) => Err(Error::Data(format!("{what}: {e}"))),
    }
}

fn crs_note_of(fc: &FeatureCollection) -> Option<String> {
    let v = fc.foreign_members.as_ref()?.get("crs_note")?;
    Some(match v {
        JsonValue::String(s) => s.clone(),
        other => other.to_string(),
    })
}

fn feature_day(f: &Feature, what: &str) -> Result<Option<i64>> {
    match f.property("day") {
        None | Some(JsonValue::Null) => Ok(None),
        Some(v) => v
            .as_i64()
            .or_else(|| v.as_f64().filter(|x| x.fract() == 0.0).map(|x| x as i64))
            .map(Some)
            .ok_or_else(|| Error::Data(format!("{what}: property `day` is not an integer: {v}"))),
    }
}

fn add_collection(out: &mut DynamicFeature, fc: &FeatureCollection, default_day: Option<i64>, what: &str) -> Result<()> {
    for (i, f) in fc.features.iter().enumerate() {
        let what = format!("{what}: feature {i}");
        let day = match (feature_day(f, &what)?, default_day) {
            (Some(d), Some(file_day)) if d != file_day => {
                return Err(Error::Data(format!("{what}: day {d} in a file for day {file_day}")))
            }
            (Some(d), _) => d,
            (None, Some(d)) => d,
            (None, None) => return Err(Error::Data(format!("{what}: missing integer property `day`"))),
        };
        let Some(g) = &f.geometry else {
            return Err(Error::Data(format!("{what}: no geometry")));
        };
        out.insert(day, geometry_lines(g, &what)?);
    }
    Ok(())
}

/// A feature from one GeoJSON FeatureCollection (features carry an integer
/// `day` property) or from a directory of `feature_<day>.geojson` files.
pub fn read_features(path: &Path) -> Result<DynamicFeature> {
    let mut out = DynamicFeature::new();
    if path.is_dir() {
        let mut files: Vec<(i64, PathBuf)> = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(day) = name
                .strip_prefix("feature_")
                .and_then(|s| s.strip_suffix(".geojson"))
                .and_then(|s| s.parse::<i64>().ok())
            {
                files.push((day, p));
            }
        }
        files.sort();
        for (day, p) in files {
            let what = p.display().to_string();
            let fc = parse_collection(&read_string(&p)?, &what)?;
            if out.crs_note.is_none() {
                out.crs_note = crs_note_of(&fc);
            }
            add_collection(&mut out, &fc, Some(day), &what)?;
        }
    } else {
        let what = path.display().to_string();
        let fc = parse_collection(&read_string(path)?, &what)?;
        out.crs_note = crs_note_of(&fc);
        add_collection(&mut out, &fc, None, &what)?;
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no feature geometry", path.display())));
    }
    Ok(out)
}

fn line_string(line: &[Point2]) -> Geometry {
    Geometry::new(Value::LineString(line.iter().map(|p| vec![p.x, p.y]).collect()))
}

fn feature(geometry: Geometry, props: JsonObject) -> Feature {
    Feature {
        bbox: None,
        geometry: Some(geometry),
        id: None,
        properties: Some(props),
        foreign_members: None,
    }
}

fn collection(features: Vec<Feature>, crs_note: Option<&str>) -> FeatureCollection {
    let foreign_members = crs_note.map(|n| {
        let mut m = JsonObject::new();
        m.insert("crs_note".into(), JsonValue::String(n.to_string()));
        m
    });
    FeatureCollection {
        bbox: None,
        features,
        foreign_members,
    }
}

/// Single-file form: one MultiLineString feature per day.
pub fn write_features(path: &Path, f: &DynamicFeature) -> Result<()> {
    let features = f
        .days()
        .map(|(day, lines)| {
            let mut props = JsonObject::new();
            props.insert("day".into(), JsonValue::from(day));
            let coords = lines
                .iter()
                .map(|l| l.vertices().iter().map(|p| vec![p.x, p.y]).collect())
                .collect();
            feature(Geometry::new(Value::MultiLineString(coords)), props)
        })
        .collect();
    write_string(path, &(collection(features, f.crs_note.as_deref()).to_string() + "\n"))
}

/// Central curve and the two band edges, one LineString per traced piece.
/// Band edges are offset along the central normals by the per-vertex bounds.
pub fn write_boundary_geojson(path: &Path, s: &BoundarySummary, crs_note: Option<&str>) -> Result<()> {
    let mut features = Vec::new();
    for (li, line) in s.central.iter().enumerate() {
        let mut props = JsonObject::new();
        props.insert("role".into(), "central".into());
        props.insert("piece".into(), JsonValue::from(li));
        features.push(feature(line_string(line.vertices()), props));
        let verts: Vec<_> = s.vertices.iter().filter(|v| v.line == li && v.used > 0).collect();
        for (role, pick) in [("lower", 0usize), ("upper", 1)] {
            let mut pts: Vec<Point2> = verts
                .iter()
                .map(|v| v.point + v.normal * if pick == 0 { v.lo } else { v.hi })
                .collect();
            if line.is_closed() && pts.len() == line.vertices().len() - 1 && !pts.is_empty() {
                pts.push(pts[0]);
            }
            if pts.len() < 2 {
                continue;
            }
            let mut props = JsonObject::new();
            props.insert("role".into(), role.into());
            props.insert("piece".into(), JsonValue::from(li));
            features.push(feature(line_string(&pts), props));
        }
    }
    write_string(path, &(collection(features, crs_note).to_string() + "\n"))
}

pub fn write_boundary_csv(path: &Path, s: &BoundarySummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "piece", "vertex", "x_km", "y_km", "normal_x", "normal_y", "lower_km", "upper_km", "half_width_km", "used",
        "excluded",
    ])
    .map_err(|e| csv_error(path, e))?;
    let mut idx: BTreeMap<usize, usize> = BTreeMap::new();
    for v in &s.vertices {
        let k = idx.entry(v.line).or_insert(0);
        w.write_record([
            v.line.to_string(),
            k.to_string(),
            num(v.point.x),
            num(v.point.y),
            num(v.normal.x),
            num(v.normal.y),
            num(v.lo),
            num(v.hi),
            num(v.half_width()),
            v.used.to_string(),
            v.excluded.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
        *k += 1;
    }
    finish(path, w)
}

/// `key = value` lines in the given order.
pub fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut buf = Vec::new();
    for (k, v) in entries {
        writeln!(buf, "{k} = {v}").expect("write to Vec");
    }
    write_string(path, &String::from_utf8(buf).expect("utf-8"))
}
