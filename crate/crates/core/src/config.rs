//! Run configuration: a flat `key = value` file plus `--key value` overrides.
//!
//! Lines starting with `#` are comments. Device classes are configured as
//! `device_sd.<class> = <km>`. Relative paths are taken relative to the
//! working directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gausskit::spectral_cov;
use crate::geometry::{BBox, Point2};
use crate::impute::{DeviceTable, ImputeConfig};
use crate::inference::{McmcConfig, PriorConfig};
use crate::movement::ModelParams;
use crate::rsf::Season;
use crate::scenario;

const DEVICE_PREFIX: &str = "device_sd.";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub tracks: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub imputations: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub posterior_dir: Option<PathBuf>,

    pub n_individuals: usize,
    pub days: usize,
    pub truth: ModelParams,
    pub truth_cov_cs: [f64; 3],
    pub truth_cov_sb: [f64; 3],
    pub feature_offset: f64,
    pub feature_amplitude: f64,
    pub feature_half_length: f64,
    /// Zero disables simulated observations.
    pub observe_max_gap: i64,
    pub observe_min_gap: i64,
    pub observe_device: String,

    pub impute_k: usize,
    pub impute: ImputeConfig,
    /// Zero means estimate it from the observations.
    pub process_variance: f64,
    pub devices: DeviceTable,

    pub mcmc: McmcConfig,
    pub resume: bool,
    pub priors: PriorConfig,

    pub boundary_step: f64,
    /// `None` derives the window from the posterior centers.
    pub boundary_window: Option<BBox>,

    pub validate_line_scenarios: usize,
    pub validate_radii: Vec<f64>,
    pub grid_cells: usize,

    pub bench_evaluations: usize,
    pub bench_quadratures: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let truth = scenario::default_params();
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            tracks: None,
            observations: None,
            imputations: None,
            features: None,
            posterior_dir: None,
            n_individuals: 20,
            days: 200,
            truth,
            truth_cov_cs: scenario::DEFAULT_COV_CS_SPECTRUM,
            truth_cov_sb: scenario::DEFAULT_COV_SB_SPECTRUM,
            feature_offset: scenario::DEFAULT_FEATURE_OFFSET,
            feature_amplitude: scenario::DEFAULT_FEATURE_AMPLITUDE,
            feature_half_length: scenario::DEFAULT_FEATURE_HALF_LENGTH,
            observe_max_gap: 0,
            observe_min_gap: 2,
            observe_device: "argos_b".into(),
            impute_k: 30,
            impute: ImputeConfig::default(),
            process_variance: 0.0,
            devices: DeviceTable::default(),
            mcmc: McmcConfig::default(),
            resume: false,
            priors: PriorConfig::default(),
            boundary_step: 5.0,
            boundary_window: None,
            validate_line_scenarios: 20,
            validate_radii: vec![100.0, 300.0, 1000.0],
            grid_cells: 512,
            bench_evaluations: 20_000,
            bench_quadratures: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse(key, value)?;
    if !v.is_finite() {
        return Err(Error::Config(format!("`{key}` must be finite, got `{value}`")));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_f64(key, s.trim()))
        .collect()
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_list(v: &[f64]) -> String {
    v.iter().map(|x| crate::io::num(*x)).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let f = |v: &str| parse_f64(key, v);
        if let Some(class) = key.strip_prefix(DEVICE_PREFIX) {
            if class.is_empty() {
                return Err(Error::Config("empty device class name".into()));
            }
            return self.devices.insert(class, f(value)?);
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "output_dir" => {
                self.output_dir = parse_path(value).ok_or_else(|| Error::Config("`output_dir` is empty".into()))?
            }
            "tracks" => self.tracks = parse_path(value),
            "observations" => self.observations = parse_path(value),
            "imputations" => self.imputations = parse_path(value),
            "features" => self.features = parse_path(value),
            "posterior_dir" => self.posterior_dir = parse_path(value),
            "n_individuals" => self.n_individuals = parse(key, value)?,
            "days" => self.days = parse(key, value)?,
            "sigma_mu2" => self.truth.sigma2 = f(value)?,
            "tau2" => self.truth.tau2 = f(value)?,
            "season_a" => self.truth.season.a = f(value)?,
            "season_b" => self.truth.season.b = f(value)?,
            "center_cs_x" => self.truth.center_cs.x = f(value)?,
            "center_cs_y" => self.truth.center_cs.y = f(value)?,
            "center_sb_x" => self.truth.center_sb.x = f(value)?,
            "center_sb_y" => self.truth.center_sb.y = f(value)?,
            "cov_cs_log_eig1" => self.truth_cov_cs[0] = f(value)?,
            "cov_cs_log_eig2" => self.truth_cov_cs[1] = f(value)?,
            "cov_cs_angle" => self.truth_cov_cs[2] = f(value)?,
            "cov_sb_log_eig1" => self.truth_cov_sb[0] = f(value)?,
            "cov_sb_log_eig2" => self.truth_cov_sb[1] = f(value)?,
            "cov_sb_angle" => self.truth_cov_sb[2] = f(value)?,
            "feature_offset" => self.feature_offset = f(value)?,
            "feature_amplitude" => self.feature_amplitude = f(value)?,
            "feature_half_length" => self.feature_half_length = f(value)?,
            "observe_min_gap" => self.observe_min_gap = parse(key, value)?,
            "observe_max_gap" => self.observe_max_gap = parse(key, value)?,
            "observe_device" => self.observe_device = value.to_string(),
            "impute_k" => self.impute_k = parse(key, value)?,
            "max_gap_days" => self.impute.max_gap_days = f(value)?,
            "process_variance" => self.process_variance = f(value)?,
            "iterations" => self.mcmc.iterations = parse(key, value)?,
            "burn_in" => self.mcmc.burn_in = parse(key, value)?,
            "thin" => self.mcmc.thin = parse(key, value)?,
            "chains" => self.mcmc.chains = parse(key, value)?,
            "use_likelihood" => self.mcmc.use_likelihood = parse_bool(key, value)?,
            "resume" => self.resume = parse_bool(key, value)?,
            "prior_sigma_mu2_shape" => self.priors.sigma2.shape = f(value)?,
            "prior_sigma_mu2_scale" => self.priors.sigma2.scale = f(value)?,
            "prior_tau2_shape" => self.priors.tau2.shape = f(value)?,
            "prior_tau2_scale" => self.priors.tau2.scale = f(value)?,
            "prior_a_mean" => self.priors.a.mean = f(value)?,
            "prior_a_sd" => self.priors.a.sd = f(value)?,
            "prior_b_mean" => self.priors.b.mean = f(value)?,
            "prior_b_sd" => self.priors.b.sd = f(value)?,
            "prior_p_cs" => self.priors.p_cs = f(value)?,
            "prior_center_x" => self.priors.center_mean.x = f(value)?,
            "prior_center_y" => self.priors.center_mean.y = f(value)?,
            "prior_center_sd" => self.priors.center_sd = f(value)?,
            "prior_log_eig_mean" => self.priors.log_eig.mean = f(value)?,
            "prior_log_eig_sd" => self.priors.log_eig.sd = f(value)?,
            "boundary_step" => self.boundary_step = f(value)?,
            "boundary_window" => {
                self.boundary_window = match value {
                    "" | "auto" => None,
                    _ => match parse_list(key, value)?.as_slice() {
                        [x0, y0, x1, y1] if x0 < x1 && y0 < y1 => {
                            Some(BBox::new(Point2::new(*x0, *y0), Point2::new(*x1, *y1)))
                        }
                        _ => {
                            return Err(Error::Config(format!(
                                "`boundary_window` must be `auto` or `xmin,ymin,xmax,ymax`, got `{value}`"
                            )))
                        }
                    },
                }
            }
            "validate_line_scenarios" => self.validate_line_scenarios = parse(key, value)?,
            "validate_radii" => self.validate_radii = parse_list(key, value)?,
            "grid_cells" => self.grid_cells = parse(key, value)?,
            "bench_evaluations" => self.bench_evaluations = parse(key, value)?,
            "bench_quadratures" => self.bench_quadratures = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.truth;
        let p = &self.priors;
        let window = match &self.boundary_window {
            None => "auto".to_string(),
            Some(b) => show_list(&[b.min.x, b.min.y, b.max.x, b.max.y]),
        };
        let mut out: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("tracks", show_path(&self.tracks)),
            ("observations", show_path(&self.observations)),
            ("imputations", show_path(&self.imputations)),
            ("features", show_path(&self.features)),
            ("posterior_dir", show_path(&self.posterior_dir)),
            ("n_individuals", self.n_individuals.to_string()),
            ("days", self.days.to_string()),
            ("sigma_mu2", crate::io::num(t.sigma2)),
            ("tau2", crate::io::num(t.tau2)),
            ("season_a", crate::io::num(t.season.a)),
            ("season_b", crate::io::num(t.season.b)),
            ("center_cs_x", crate::io::num(t.center_cs.x)),
            ("center_cs_y", crate::io::num(t.center_cs.y)),
            ("center_sb_x", crate::io::num(t.center_sb.x)),
            ("center_sb_y", crate::io::num(t.center_sb.y)),
            ("cov_cs_log_eig1", crate::io::num(self.truth_cov_cs[0])),
            ("cov_cs_log_eig2", crate::io::num(self.truth_cov_cs[1])),
            ("cov_cs_angle", crate::io::num(self.truth_cov_cs[2])),
            ("cov_sb_log_eig1", crate::io::num(self.truth_cov_sb[0])),
            ("cov_sb_log_eig2", crate::io::num(self.truth_cov_sb[1])),
            ("cov_sb_angle", crate::io::num(self.truth_cov_sb[2])),
            ("feature_offset", crate::io::num(self.feature_offset)),
            ("feature_amplitude", crate::io::num(self.feature_amplitude)),
            ("feature_half_length", crate::io::num(self.feature_half_length)),
            ("observe_min_gap", self.observe_min_gap.to_string()),
            ("observe_max_gap", self.observe_max_gap.to_string()),
            ("observe_device", self.observe_device.clone()),
            ("impute_k", self.impute_k.to_string()),
            ("max_gap_days", crate::io::num(self.impute.max_gap_days)),
            ("process_variance", crate::io::num(self.process_variance)),
            ("iterations", self.mcmc.iterations.to_string()),
            ("burn_in", self.mcmc.burn_in.to_string()),
            ("thin", self.mcmc.thin.to_string()),
            ("chains", self.mcmc.chains.to_string()),
            ("use_likelihood", self.mcmc.use_likelihood.to_string()),
            ("resume", self.resume.to_string()),
            ("prior_sigma_mu2_shape", crate::io::num(p.sigma2.shape)),
            ("prior_sigma_mu2_scale", crate::io::num(p.sigma2.scale)),
            ("prior_tau2_shape", crate::io::num(p.tau2.shape)),
            ("prior_tau2_scale", crate::io::num(p.tau2.scale)),
            ("prior_a_mean", crate::io::num(p.a.mean)),
            ("prior_a_sd", crate::io::num(p.a.sd)),
            ("prior_b_mean", crate::io::num(p.b.mean)),
            ("prior_b_sd", crate::io::num(p.b.sd)),
            ("prior_p_cs", crate::io::num(p.p_cs)),
            ("prior_center_x", crate::io::num(p.center_mean.x)),
            ("prior_center_y", crate::io::num(p.center_mean.y)),
            ("prior_center_sd", crate::io::num(p.center_sd)),
            ("prior_log_eig_mean", crate::io::num(p.log_eig.mean)),
            ("prior_log_eig_sd", crate::io::num(p.log_eig.sd)),
            ("boundary_step", crate::io::num(self.boundary_step)),
            ("boundary_window", window),
            ("validate_line_scenarios", self.validate_line_scenarios.to_string()),
            ("validate_radii", show_list(&self.validate_radii)),
            ("grid_cells", self.grid_cells.to_string()),
            ("bench_evaluations", self.bench_evaluations.to_string()),
            ("bench_quadratures", self.bench_quadratures.to_string()),
        ];
        let devices: Vec<(String, String)> = self
            .devices
            .iter()
            .map(|(k, v)| (format!("{DEVICE_PREFIX}{k}"), crate::io::num(v)))
            .collect();
        let mut entries: Vec<(String, String)> = out.drain(..).map(|(k, v)| (k.to_string(), v)).collect();
        entries.extend(devices);
        entries
    }

    /// Parses `key = value` text on top of the defaults. A config that lists
    /// any `device_sd.*` key replaces the default device table.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut devices_reset = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
            if k.starts_with(DEVICE_PREFIX) && !devices_reset {
                cfg.devices = DeviceTable::empty();
                devices_reset = true;
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_text(&text)
    }

    /// Applies `--key value` or `--key=value` pairs; dashes in keys may be
    /// written as hyphens.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let Some(flag) = args[i].strip_prefix("--") else {
                return Err(Error::Config(format!("expected `--key value`, got `{}`", args[i])));
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = args
                        .get(i + 1)
                        .ok_or_else(|| Error::Config(format!("`--{flag}` needs a value")))?;
                    i += 1;
                    (flag.to_string(), v.clone())
                }
            };
            let key = if key.starts_with(DEVICE_PREFIX) { key } else { key.replace('-', "_") };
            self.set(&key, &value)?;
            i += 1;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        self.priors.validate().map_err(|e| Error::Config(strip_prefix(&e)))?;
        self.truth_params().map_err(|e| Error::Config(strip_prefix(&e)))?;
        let positive = [
            ("feature_half_length", self.feature_half_length),
            ("max_gap_days", self.impute.max_gap_days),
            ("boundary_step", self.boundary_step),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        if self.process_variance < 0.0 {
            return Err(Error::Config("`process_variance` must be >= 0".into()));
        }
        if self.impute_k == 0 {
            return Err(Error::Config("`impute_k` must be at least 1".into()));
        }
        if self.observe_max_gap != 0 && !(1 <= self.observe_min_gap && self.observe_min_gap <= self.observe_max_gap) {
            return Err(Error::Config(format!(
                "need 1 <= observe_min_gap <= observe_max_gap, got {} and {}",
                self.observe_min_gap, self.observe_max_gap
            )));
        }
        if self.validate_radii.iter().any(|r| *r <= 0.0) {
            return Err(Error::Config("`validate_radii` must be positive".into()));
        }
        if self.grid_cells < 32 {
            return Err(Error::Config("`grid_cells` must be at least 32".into()));
        }
        if self.bench_evaluations == 0 || self.bench_quadratures == 0 {
            return Err(Error::Config("bench counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Simulation parameters with covariances built from their spectra.
    pub fn truth_params(&self) -> Result<ModelParams> {
        let [a1, a2, a3] = self.truth_cov_cs;
        let [b1, b2, b3] = self.truth_cov_sb;
        let p = ModelParams {
            season: Season::new(self.truth.season.a, self.truth.season.b)?,
            cov_cs: spectral_cov(a1, a2, a3),
            cov_sb: spectral_cov(b1, b2, b3),
            ..self.truth
        };
        p.validate()?;
        Ok(p)
    }

    /// Path under `key`, required to exist.
    pub fn require_path(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "tracks" => &self.tracks,
            "observations" => &self.observations,
            "imputations" => &self.imputations,
            "features" => &self.features,
            "posterior_dir" => &self.posterior_dir,
            _ => return Err(Error::Config(format!("`{key}` is not a path key"))),
        };
        let p = p
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))?;
        if !p.exists() {
            return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(p)
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    for p in ["config error: ", "invalid parameter: "] {
        if let Some(rest) = s.strip_prefix(p) {
            return rest.to_string();
        }
    }
    s
}
