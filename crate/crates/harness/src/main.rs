use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sdelab_harness::acceptance::run_suite;
use sdelab_harness::bundle::ReportBundle;
use sdelab_harness::config::SdeVariant;
use sdelab_harness::{run_stages, write_report, ExperimentConfig, HarnessError, ReportFormat, RunPlan, Stage, THREADS_ENV};

const EXIT_CONFIG: u8 = 1;
const EXIT_STAGE: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "sdelab", version, about = "Singular-drift SDE laboratory")]
struct Cli {
    /// Worker threads (capped by SINGULAR_SDE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config(s), JSON.
    #[arg(long = "config", num_args = 1..)]
    config: Vec<PathBuf>,
    /// Output directory (defaults to the config's output_dir, then `out/<id>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configs run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    format: ReportFormat,
}

#[derive(Args, Clone, Default)]
struct SimOverrides {
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "schedule-n")]
    schedule_n: Option<u32>,
    #[arg(long)]
    variant: Option<SdeVariant>,
}

#[derive(Subcommand)]
enum Command {
    /// Relative bounds of the coefficients.
    Bounds(Common),
    /// Bounds plus the admissibility check.
    Admit(Common),
    /// Everything up to the regularized coefficients.
    Regularize(Common),
    /// Everything up to the resolvent monitors.
    Resolvent(Common),
    /// Everything up to the SDE ensembles.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimOverrides,
    },
    /// Full runs of the given configs, failing on any verdict; without
    /// configs, the built-in acceptance suite.
    Check {
        #[command(flatten)]
        common: Common,
        /// Criterion ids of the built-in suite (all when absent).
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
}

fn worker_threads(requested: Option<usize>) -> usize {
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|v| *v > 0);
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let want = requested.unwrap_or(avail);
    cap.map_or(want, |c| want.min(c)).max(1)
}

fn apply_overrides(cfg: &mut ExperimentConfig, sim: &SimOverrides) -> Result<(), HarnessError> {
    if let Some(v) = sim.variant {
        cfg.variant = v;
    }
    if let Some(s) = sim.seed {
        cfg.seed = s;
    }
    let touches = sim.paths.is_some() || sim.dt.is_some() || sim.horizon.is_some() || sim.schedule_n.is_some();
    if touches {
        let e = cfg.ensemble.as_mut().ok_or_else(|| HarnessError::ConfigInvalid("config has no ensemble section".into()))?;
        if let Some(p) = sim.paths {
            e.paths = p;
        }
        if let Some(dt) = sim.dt {
            e.dt = dt;
        }
        if let Some(h) = sim.horizon {
            e.horizon = h;
            e.times.retain(|t| *t <= h);
        }
        if let Some(n) = sim.schedule_n {
            e.schedule_n = Some(n);
        }
    }
    Ok(())
}

fn load(path: &Path, sim: &SimOverrides) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(path)?;
    apply_overrides(&mut cfg, sim)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.validate(base)?;
    cfg.load_data(base)?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, many: bool) -> PathBuf {
    match (&common.out, &cfg.output_dir) {
        (Some(o), _) if many => o.join(&cfg.id),
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("out").join(&cfg.id),
    }
}

fn run_configs(common: &Common, sim: &SimOverrides, plan: RunPlan, strict: bool) -> u8 {
    if common.config.is_empty() {
        eprintln!("error: --config is required");
        return EXIT_CONFIG;
    }
    let mut cfgs = Vec::new();
    for p in &common.config {
        match load(p, sim) {
            Ok(c) => cfgs.push(c),
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return EXIT_CONFIG;
            }
        }
    }
    let many = cfgs.len() > 1;
    let run_one = |cfg: &ExperimentConfig| -> (ReportBundle, Result<Vec<PathBuf>, HarnessError>) {
        let b = run_stages(cfg, plan);
        let w = write_report(&b, &out_dir(common, cfg, many), common.format);
        (b, w)
    };
    let results: Vec<_> = if common.jobs > 1 {
        cfgs.par_iter().with_max_len(1).map(run_one).collect()
    } else {
        cfgs.iter().map(run_one).collect()
    };
    let mut code = 0u8;
    for (b, w) in results {
        match w {
            Ok(files) => println!("{}: wrote {} file(s)", b.experiment_id, files.len()),
            Err(e) => {
                eprintln!("{}: {e}", b.experiment_id);
                code = code.max(EXIT_STAGE);
            }
        }
        if let Some(tag) = &b.cond0_tag {
            eprintln!("warning: {}: admissibility condition fails; downstream reports tagged \"{tag}\"", b.experiment_id);
        }
        for s in b.failed_stages() {
            eprintln!("{}: stage {} failed: {}", b.experiment_id, s.stage.name(), s.error.as_deref().unwrap_or(""));
            code = code.max(EXIT_STAGE);
        }
        for v in &b.acceptance {
            println!("{}: {} [{}] {}", b.experiment_id, v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        }
        if strict && code == 0 && !b.all_verdicts_pass() {
            code = EXIT_ACCEPTANCE;
        }
    }
    code
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = worker_threads(cli.threads);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("warning: thread pool: {e}");
    }
    let none = SimOverrides::default();
    let code = match &cli.command {
        Command::Bounds(c) => run_configs(c, &none, RunPlan::until(Stage::Bounds), false),
        Command::Admit(c) => run_configs(c, &none, RunPlan::until(Stage::Admissibility), false),
        Command::Regularize(c) => run_configs(c, &none, RunPlan::until(Stage::Regularization), false),
        Command::Resolvent(c) => run_configs(c, &none, RunPlan::until(Stage::Resolvent), false),
        Command::Simulate { common, sim } => run_configs(common, sim, RunPlan::until(Stage::Simulate), false),
        Command::Check { common, criteria } if !common.config.is_empty() => {
            let _ = criteria;
            run_configs(common, &none, RunPlan::full(), true)
        }
        Command::Check { criteria, .. } => {
            let results = run_suite(criteria, |r| println!("{r}"));
            if results.iter().all(|r| r.pass) {
                0
            } else {
                EXIT_ACCEPTANCE
            }
        }
    };
    ExitCode::from(code)
}
