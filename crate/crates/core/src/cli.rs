//! Command-line front end.
//!
//! Every command writes under `output_dir` using a fixed layout:
//! `tracks/`, `imputations/`, `posterior/`, `boundary/` and `reports/`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::boundary::{summarize_boundary, GaussianPair};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{BBox, DynamicFeature, Point2};
use crate::impute::{estimate_process_variance, group_by_id, log_q_standard_error, smooth_and_impute, Observation};
use crate::inference::{label_probabilities_of, mcmc_fit, run_chain, summarize_draws, FitData, BLOCK_NAMES};
use crate::io;
use crate::rng::derive_seed;
use crate::scenario;
use crate::validation;

#[derive(Debug, Parser)]
#[command(name = "edgetrack", version, about = "Movement models with selection toward dynamic linear features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate tracks (and optionally noisy observations) from the model.
    Simulate(CommandArgs),
    /// Smooth observations and draw daily path imputations.
    Impute(CommandArgs),
    /// Run the MCMC sampler on tracks or imputations.
    Fit(CommandArgs),
    /// Trace the equal-density boundary and its posterior band.
    Boundary(CommandArgs),
    /// Compare tangent-line step densities with quadrature.
    #[command(name = "validate-linearization")]
    ValidateLinearization(CommandArgs),
    /// Time closed-form step densities against quadrature normalizers.
    Bench(CommandArgs),
}

#[derive(Debug, clap::Args)]
pub struct CommandArgs {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// `--key value` overrides of config keys.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    pub overrides: Vec<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Impute(_) => "impute",
            Command::Fit(_) => "fit",
            Command::Boundary(_) => "boundary",
            Command::ValidateLinearization(_) => "validate-linearization",
            Command::Bench(_) => "bench",
        }
    }

    fn args(&self) -> &CommandArgs {
        match self {
            Command::Simulate(a)
            | Command::Impute(a)
            | Command::Fit(a)
            | Command::Boundary(a)
            | Command::ValidateLinearization(a)
            | Command::Bench(a) => a,
        }
    }
}

/// Parses arguments (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(args: &CommandArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(command: &Command) -> Result<()> {
    let cfg = load_config(command.args())?;
    let name = command.name();
    io::write_string(
        &cfg.output_dir.join("reports").join(format!("{name}.effective-config")),
        &cfg.to_text(),
    )?;
    match command {
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Impute(_) => cmd_impute(&cfg),
        Command::Fit(_) => cmd_fit(&cfg),
        Command::Boundary(_) => cmd_boundary(&cfg),
        Command::ValidateLinearization(_) => cmd_validate(&cfg),
        Command::Bench(_) => cmd_bench(&cfg),
    }
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn kf(k: &str, v: f64) -> (String, String) {
    (k.to_string(), io::num(v))
}

fn sim_feature(cfg: &RunConfig, last_day: i64) -> Result<(DynamicFeature, bool)> {
    match &cfg.features {
        Some(_) => Ok((io::read_features(cfg.require_path("features")?)?, false)),
        None => Ok((
            scenario::moving_line(0..last_day + 1, cfg.feature_offset, cfg.feature_amplitude, cfg.feature_half_length)?,
            true,
        )),
    }
}

/// Tracks, true labels and parameters, the generated feature, and noisy
/// observations when `observe_max_gap > 0`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let params = cfg.truth_params()?;
    let last_start = (0..cfg.n_individuals).map(scenario::staggered_start).max().unwrap_or(0);
    let (feature, generated) = sim_feature(cfg, last_start + cfg.days as i64)?;
    let pop = scenario::simulate_population(&params, &feature, cfg.n_individuals, cfg.days, cfg.seed)?;
    let dir = cfg.output_dir.join("tracks");
    io::create_dir(&dir)?;
    io::write_tracks(&dir.join("tracks.csv"), &pop.tracks)?;
    let labels: Vec<(String, String)> = pop
        .tracks
        .iter()
        .zip(&pop.labels)
        .map(|(t, z)| (t.id.clone(), z.z().to_string()))
        .collect();
    let mut lines = String::from("id,z\n");
    for (id, z) in &labels {
        lines.push_str(&format!("{id},{z}\n"));
    }
    io::write_string(&dir.join("labels.csv"), &lines)?;
    let truth: Vec<(String, String)> = cfg
        .to_text()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .filter(|(k, _)| {
            matches!(
                *k,
                "sigma_mu2"
                    | "tau2"
                    | "season_a"
                    | "season_b"
                    | "center_cs_x"
                    | "center_cs_y"
                    | "center_sb_x"
                    | "center_sb_y"
                    | "cov_cs_log_eig1"
                    | "cov_cs_log_eig2"
                    | "cov_cs_angle"
                    | "cov_sb_log_eig1"
                    | "cov_sb_log_eig2"
                    | "cov_sb_angle"
                    | "seed"
            )
        })
        .map(|(k, v)| kv(k, v))
        .collect();
    io::write_key_values(&dir.join("truth.txt"), &truth)?;
    if generated {
        io::write_features(&dir.join("features.geojson"), &feature)?;
    }
    let mut observed = 0;
    if cfg.observe_max_gap > 0 {
        let mut obs: Vec<Observation> = Vec::new();
        for t in &pop.tracks {
            obs.extend(scenario::observe(
                t,
                cfg.observe_min_gap,
                cfg.observe_max_gap,
                &cfg.observe_device,
                &cfg.devices,
                cfg.seed,
            )?);
        }
        observed = obs.len();
        io::write_observations(&dir.join("observations.csv"), &obs)?;
    }
    io::write_key_values(
        &cfg.output_dir.join("reports").join("simulate.txt"),
        &[
            kv("individuals", pop.tracks.len()),
            kv("track_rows", pop.tracks.iter().map(|t| t.len()).sum::<usize>()),
            kv("observations", observed),
            kv("feature", if generated { "generated" } else { "input" }),
        ],
    )?;
    println!("simulate: {} individuals x {} days -> {}", pop.tracks.len(), cfg.days, dir.display());
    Ok(())
}

pub fn cmd_impute(cfg: &RunConfig) -> Result<()> {
    let obs = io::read_observations(cfg.require_path("observations")?, &cfg.devices)?;
    if obs.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    let q = if cfg.process_variance > 0.0 {
        cfg.process_variance
    } else {
        estimate_process_variance(&obs, &cfg.impute)?
    };
    let se = log_q_standard_error(&obs, q, &cfg.impute).unwrap_or(f64::NAN);
    let groups: Vec<(String, Vec<Observation>)> = group_by_id(&obs).into_iter().collect();
    let sets: Vec<_> = groups
        .par_iter()
        .map(|(_, o)| smooth_and_impute(o, cfg.impute_k, q, cfg.seed, &cfg.impute))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let path = cfg.output_dir.join("imputations").join("imputations.csv");
    io::write_imputations(&path, &sets)?;
    io::write_key_values(
        &cfg.output_dir.join("reports").join("impute.txt"),
        &[
            kv("individuals", groups.len()),
            kv("observations", obs.len()),
            kv("segments", sets.len()),
            kv("k", cfg.impute_k),
            kf("process_variance", q),
            kv("process_variance_estimated", cfg.process_variance == 0.0),
            kf("log_process_variance_se", se),
        ],
    )?;
    println!("impute: {} ids, {} segments, q = {q} -> {}", groups.len(), sets.len(), path.display());
    Ok(())
}

fn fit_data(cfg: &RunConfig, feature: &DynamicFeature) -> Result<FitData> {
    if cfg.imputations.is_some() {
        let sets = io::read_imputations(cfg.require_path("imputations")?)?;
        FitData::from_imputations(&sets, feature)
    } else if cfg.tracks.is_some() {
        FitData::from_tracks(&io::read_tracks(cfg.require_path("tracks")?)?, feature)
    } else {
        Err(Error::Config("fit needs `imputations` or `tracks`".into()))
    }
}

fn chain_path(dir: &Path, c: usize) -> PathBuf {
    dir.join(format!("chain_{c}.csv"))
}

fn checkpoint_path(dir: &Path, c: usize) -> PathBuf {
    dir.join(format!("checkpoint_{c}.txt"))
}

/// Posterior chains, checkpoints, the summary table and label probabilities.
/// With `resume`, each chain continues from its checkpoint to `iterations`
/// and new draws are appended.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let feature = io::read_features(cfg.require_path("features")?)?;
    let data = fit_data(cfg, &feature)?;
    if data.is_empty() {
        return Err(Error::Data("no individuals to fit".into()));
    }
    let dir = cfg.output_dir.join("posterior");
    io::create_dir(&dir)?;
    let chains = if cfg.resume {
        let starts = (0..cfg.mcmc.chains)
            .map(|c| {
                let p = checkpoint_path(&dir, c);
                if !p.exists() {
                    return Err(Error::Config(format!("resume: no checkpoint {}", p.display())));
                }
                let cp = io::checkpoint_from_str(&io::read_string(&p)?)?;
                if cp.next_iter > cfg.mcmc.iterations {
                    return Err(Error::Config(format!(
                        "resume: checkpoint is at iteration {}, beyond `iterations` = {}",
                        cp.next_iter, cfg.mcmc.iterations
                    )));
                }
                Ok(cp)
            })
            .collect::<Result<Vec<_>>>()?;
        starts
            .into_par_iter()
            .map(|cp| run_chain(&data, &cfg.priors, &cfg.mcmc, cp))
            .collect::<Result<Vec<_>>>()?
    } else {
        mcmc_fit(&data, &cfg.priors, &cfg.mcmc, cfg.seed)?
    };
    for s in &chains {
        io::write_posterior(&chain_path(&dir, s.chain), data.len(), &s.draws, cfg.resume)?;
        io::write_string(&checkpoint_path(&dir, s.chain), &io::checkpoint_to_string(&s.checkpoint))?;
    }
    let all: Vec<Vec<_>> = (0..cfg.mcmc.chains)
        .map(|c| io::read_posterior(&chain_path(&dir, c)))
        .collect::<Result<_>>()?;
    let ids = data.ids();
    let pooled = all.iter().flatten();
    if all.iter().all(Vec::is_empty) {
        return Err(Error::Data("no post-burn-in draws; increase `iterations` or lower `burn_in`".into()));
    }
    io::write_summary(&dir.join("summary.csv"), &summarize_draws(pooled.clone())?)?;
    io::write_label_probabilities(&dir.join("labels.csv"), &label_probabilities_of(&ids, pooled))?;
    let mut report = vec![
        kv("individuals", data.len()),
        kv("chains", chains.len()),
        kv("iterations", cfg.mcmc.iterations),
        kv("burn_in", cfg.mcmc.burn_in),
        kv("thin", cfg.mcmc.thin),
        kv("draws", all.iter().map(Vec::len).sum::<usize>()),
    ];
    if let Some(note) = &feature.crs_note {
        report.push(kv("crs_note", note));
    }
    for s in &chains {
        for (name, r) in BLOCK_NAMES.iter().zip(s.acceptance_rates()) {
            report.push(kf(&format!("acceptance.{}.{name}", s.chain), r));
        }
    }
    io::write_key_values(&cfg.output_dir.join("reports").join("fit.txt"), &report)?;
    println!(
        "fit: {} individuals, {} chains x {} iterations -> {}",
        data.len(),
        chains.len(),
        cfg.mcmc.iterations,
        dir.display()
    );
    Ok(())
}

/// Chain files `chain_<c>.csv` in a posterior directory, in chain order.
pub fn read_posterior_dir(dir: &Path) -> Result<Vec<crate::inference::Draw>> {
    let mut files: Vec<(usize, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("posterior directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let c = name.strip_prefix("chain_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((c, p))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for (_, p) in files {
        out.extend(io::read_posterior(&p)?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no posterior draws in {}", dir.display())));
    }
    Ok(out)
}

/// Window around both median centers padded by three standard deviations
/// of the wider covariance.
pub fn auto_window(central: &GaussianPair) -> BBox {
    let spread = central
        .cov_cs
        .log_eig1
        .max(central.cov_cs.log_eig2)
        .max(central.cov_sb.log_eig1)
        .max(central.cov_sb.log_eig2);
    let pad = 3.0 * (0.5 * spread).exp();
    let (a, b) = (central.center_cs, central.center_sb);
    BBox::new(
        Point2::new(a.x.min(b.x) - pad, a.y.min(b.y) - pad),
        Point2::new(a.x.max(b.x) + pad, a.y.max(b.y) + pad),
    )
}

pub fn cmd_boundary(cfg: &RunConfig) -> Result<()> {
    let post_dir = match &cfg.posterior_dir {
        Some(_) => cfg.require_path("posterior_dir")?.to_path_buf(),
        None => cfg.output_dir.join("posterior"),
    };
    let draws = read_posterior_dir(&post_dir)?;
    let pairs: Vec<GaussianPair> = draws.iter().map(GaussianPair::from_draw).collect();
    let window = match cfg.boundary_window {
        Some(w) => w,
        None => auto_window(&crate::boundary::median_pair(&pairs)?),
    };
    let summary = summarize_boundary(&pairs, &window, cfg.boundary_step)?;
    let crs = match &cfg.features {
        Some(_) => io::read_features(cfg.require_path("features")?)?.crs_note,
        None => None,
    };
    let dir = cfg.output_dir.join("boundary");
    io::write_boundary_geojson(&dir.join("boundary.geojson"), &summary, crs.as_deref())?;
    io::write_boundary_csv(&dir.join("vertices.csv"), &summary)?;
    let mut report = vec![
        kv("draws", pairs.len()),
        kv("pieces", summary.central.len()),
        kv("vertices", summary.vertices.len()),
        kv("excluded_total", summary.total_excluded()),
        kv("window", [window.min.x, window.min.y, window.max.x, window.max.y].map(io::num).join(",")),
    ];
    if let Some(note) = crs {
        report.push(kv("crs_note", note));
    }
    io::write_key_values(&cfg.output_dir.join("reports").join("boundary.txt"), &report)?;
    println!(
        "boundary: {} pieces, {} vertices, {} exclusions -> {}",
        summary.central.len(),
        summary.vertices.len(),
        summary.total_excluded(),
        dir.display()
    );
    Ok(())
}

/// The posterior medians of σ_μ and τ used for the curved-feature cases.
pub const CIRCLE_SIGMA_MU: f64 = 16.5;
pub const CIRCLE_TAU: f64 = 93.0;

pub fn validation_cases(cfg: &RunConfig) -> Result<Vec<validation::LinearizationCase>> {
    let mut cases = (0..cfg.validate_line_scenarios)
        .map(|i| validation::random_line_case(cfg.seed, i))
        .collect::<Result<Vec<_>>>()?;
    for &r in &cfg.validate_radii {
        cases.push(validation::circle_case(r, CIRCLE_SIGMA_MU.powi(2), CIRCLE_TAU.powi(2))?);
    }
    Ok(cases)
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let cases = validation_cases(cfg)?;
    let path = cfg.output_dir.join("reports").join("validate_linearization.csv");
    let mut out = String::from("scenario,curvature,sigma_mu,tau,tv,runtime_exact,runtime_linearized\n");
    let mut worst: f64 = 0.0;
    for c in &cases {
        let r = validation::evaluate_case(c, cfg.grid_cells)?;
        worst = worst.max(r.tv);
        let fields = [
            c.curvature,
            c.params.sigma2.sqrt(),
            c.params.tau2.sqrt(),
            r.tv,
            r.runtime_exact.as_secs_f64(),
            r.runtime_linearized.as_secs_f64(),
        ];
        out.push_str(&c.name);
        for x in fields {
            out.push(',');
            out.push_str(&io::num(x));
        }
        out.push('\n');
    }
    io::write_string(&path, &out)?;
    println!("validate-linearization: {} scenarios, max tv {worst:.3e} -> {}", cases.len(), path.display());
    Ok(())
}

pub const BENCH_CONTEXTS: usize = 20;

pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let params = cfg.truth_params()?;
    let last = params.season.b.ceil() as i64 + BENCH_CONTEXTS as i64 + 2;
    let (feature, _) = sim_feature(cfg, last.max(400))?;
    let contexts = validation::bench_contexts(&params, &feature, BENCH_CONTEXTS, derive_seed(cfg.seed, "bench"))?;
    let r = validation::bench(
        &params,
        &feature,
        &contexts,
        cfg.bench_evaluations,
        cfg.bench_quadratures,
        cfg.grid_cells,
    )?;
    io::write_key_values(
        &cfg.output_dir.join("reports").join("bench.txt"),
        &[
            kv("contexts", r.contexts),
            kv("evaluations", r.evaluations),
            kv("quadratures", r.quadratures),
            kv("grid_cells", r.cells),
            kf("max_log_normalizer_gap", r.max_log_normalizer_gap),
            kf("linearized_seconds_per_eval", r.linearized_seconds),
            kf("quadrature_seconds_per_eval", r.quadrature_seconds),
            kf("speedup", r.speedup()),
        ],
    )?;
    println!(
        "bench: linearized {:.3e} s, quadrature ({}²) {:.3e} s, speedup {:.0}x",
        r.linearized_seconds,
        r.cells,
        r.quadrature_seconds,
        r.speedup()
    );
    Ok(())
}
