use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use svlvgp::bench::{self, NoiseSpec};
use svlvgp::latent_map::{canonicalize, write_latent_csv};
use svlvgp::{artifact, io, Error, FitSpec, ModelFamily};

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "SVLVGP_THREADS";

#[derive(Parser)]
#[command(name = "svlvgp", version, about = "Sparse variational latent-variable Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the single-output benchmark grid (2 quantitative inputs, 5 levels).
    GenSingle(GenSingle),
    /// Write the two-output benchmark grid (2 quantitative inputs, 5 x 5 levels).
    GenMulti(GenMulti),
    /// Fit a model and write its artifact.
    Train(Train),
    /// Predict means and variances at query points.
    Predict(Predict),
    /// k-fold cross-validation RMSE.
    Cv(Cv),
    /// Write the canonicalized latent vectors of a trained model.
    LatentExport(ModelOutput),
    /// Write the training trace stored in an artifact.
    TraceExport(ModelOutput),
    /// Check that an artifact reloads and predicts bit-identically.
    Roundtrip(Roundtrip),
}

#[derive(Args)]
struct GenSingle {
    /// Grid as N1xN2 or N1xN2x5.
    #[arg(long, default_value = "20x20x5")]
    grid: String,
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenMulti {
    /// Grid as N1xN2 or N1xN2x5x5.
    #[arg(long, default_value = "10x10x5x5")]
    grid: String,
    /// One SD for both outputs, or `SD1,SD2`.
    #[arg(long, default_value = "0")]
    noise_sd: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Settings shared by `train` and `cv`. Flags override the config file,
/// which overrides the defaults.
#[derive(Args)]
struct FitFlags {
    /// exact-lvgp, sv-lvgp, lmc-sv-lvgp-s or lmc-sv-lvgp-i.
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    /// JSON file with any subset of the fit settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    inducing: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Latent functions of the multi-output families.
    #[arg(long)]
    functions: Option<usize>,
    /// Give each latent function its own inducing inputs.
    #[arg(long)]
    untied: bool,
    #[arg(long)]
    batch: Option<usize>,
    /// Optimizer iterations (sparse and exact families).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    natgrad_step: Option<f64>,
    /// Fraction of the iterations after which latent vectors are frozen.
    #[arg(long)]
    z_freeze: Option<f64>,
    /// Convergence window; 0 runs all iterations.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Random restarts of the exact family.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    fit: FitFlags,
    /// Artifact path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the training trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Include wall-clock seconds in the trace CSV (not reproducible).
    #[arg(long)]
    with_seconds: bool,
}

#[derive(Args)]
struct Predict {
    /// Artifact path.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Cv {
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Seed of the fold assignment; fold f trains with seed + f.
    #[arg(long, default_value_t = 0)]
    cv_seed: u64,
    /// Per-fold CSV. A JSON summary with the effective settings is written to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Include per-fold wall-clock seconds (not reproducible).
    #[arg(long)]
    with_seconds: bool,
}

#[derive(Args)]
struct ModelOutput {
    /// Artifact path.
    #[arg(long)]
    model: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Roundtrip {
    /// Artifact path.
    #[arg(long)]
    model: PathBuf,
}

enum Failure {
    Usage(String),
    AllFoldsFailed(usize),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidConfig(_)) => 2,
            Failure::AllFoldsFailed(_) => 4,
            Failure::Core(e) if e.is_numeric() => 4,
            Failure::Core(_) => 3,
        }
    }

    fn line(&self) -> String {
        let (code, msg) = match self {
            Failure::Usage(m) => ("USAGE", m.clone()),
            Failure::AllFoldsFailed(k) => ("ALL_FOLDS_FAILED", format!("all {k} folds failed")),
            Failure::Core(e) => (e.code(), e.to_string()),
        };
        format!("error[{code}]: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(Failure::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::GenSingle(a) => gen_single(a),
        Command::GenMulti(a) => gen_multi(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Cv(a) => cv(a),
        Command::LatentExport(a) => latent_export(a),
        Command::TraceExport(a) => trace_export(a),
        Command::Roundtrip(a) => roundtrip(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", f.line());
    ExitCode::from(f.exit_code())
}

fn configure_threads() -> Outcome {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("{THREADS_VAR}={value} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("{THREADS_VAR}: {e}")))
}

/// Writes to `path` atomically, or to standard output.
fn emit<F>(path: Option<&Path>, fill: F) -> Outcome
where
    F: FnOnce(&mut dyn Write) -> svlvgp::Result<()>,
{
    match path {
        Some(p) => io::write_atomic(p, fill)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

/// Parses `AxB` followed by the fixed level counts in `levels`.
fn parse_grid(text: &str, levels: &[usize]) -> std::result::Result<(usize, usize), Failure> {
    let bad = || {
        let suffix: String = levels.iter().map(|l| format!("x{l}")).collect();
        Failure::Usage(format!("grid '{text}' is not N1xN2 or N1xN2{suffix}"))
    };
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    match parts.as_slice() {
        [a, b] => Ok((*a, *b)),
        [a, b, rest @ ..] if rest == levels => Ok((*a, *b)),
        _ => Err(bad()),
    }
}

fn gen_single(a: GenSingle) -> Outcome {
    let (n1, n2) = parse_grid(&a.grid, &[bench::CATEGORY_LEVELS])?;
    let data = bench::gen_single(n1, n2, NoiseSpec::new(a.noise_sd, a.seed)?)?;
    emit(Some(&a.out), |w| io::write_dataset(&data, w))?;
    info!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(())
}

fn gen_multi(a: GenMulti) -> Outcome {
    let (n1, n2) = parse_grid(&a.grid, &[bench::CATEGORY_LEVELS; 2])?;
    let sds: Vec<f64> = a
        .noise_sd
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("noise sd '{}' is not SD or SD1,SD2", a.noise_sd)))?;
    let (sd1, sd2) = match sds.as_slice() {
        [s] => (*s, *s),
        [s1, s2] => (*s1, *s2),
        _ => return Err(Failure::Usage(format!("noise sd '{}' is not SD or SD1,SD2", a.noise_sd))),
    };
    let noise = [NoiseSpec::new(sd1, a.seed)?, NoiseSpec::new(sd2, a.seed)?];
    let data = bench::gen_multi(n1, n2, noise)?;
    emit(Some(&a.out), |w| io::write_dataset(&data, w))?;
    info!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(())
}

fn family(tag: &str) -> std::result::Result<ModelFamily, Failure> {
    ModelFamily::from_tag(tag).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown model '{tag}' (expected exact-lvgp, sv-lvgp, lmc-sv-lvgp-s or lmc-sv-lvgp-i)"
        ))
    })
}

fn effective_spec(f: &FitFlags) -> std::result::Result<FitSpec, Failure> {
    let mut spec = match &f.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<FitSpec>(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?
        }
        None => FitSpec::default(),
    };
    if let Some(v) = f.inducing {
        spec.n_inducing = v;
    }
    if let Some(v) = f.latent_dim {
        spec.latent_dim = v;
    }
    if let Some(v) = f.functions {
        spec.functions = v;
    }
    if f.untied {
        spec.tie_inducing = false;
    }
    if let Some(v) = f.batch {
        spec.train.batch_size = v;
    }
    if let Some(v) = f.max_iters {
        spec.train.max_iters = v;
        spec.exact.max_iters = v;
    }
    if let Some(v) = f.lr {
        spec.train.adam.learning_rate = v;
        spec.exact.adam.learning_rate = v;
    }
    if let Some(v) = f.natgrad_step {
        spec.train.natgrad_step = v;
    }
    if let Some(v) = f.z_freeze {
        spec.train.z_freeze_fraction = v;
    }
    if let Some(v) = f.window {
        spec.train.window = v;
        spec.exact.window = v;
    }
    if let Some(v) = f.tolerance {
        spec.train.tolerance = v;
        spec.exact.tolerance = v;
    }
    if let Some(v) = f.restarts {
        spec.exact.restarts = v;
    }
    if let Some(v) = f.seed {
        spec.train.seed = v;
    }
    Ok(spec)
}

fn train(a: Train) -> Outcome {
    let family = family(&a.fit.model)?;
    let spec = effective_spec(&a.fit)?;
    let data = io::read_dataset_file(&a.fit.data, None)?;
    if matches!(family, ModelFamily::Sv | ModelFamily::Exact) && data.outputs_count() > 1 {
        warn!("{} is single-output; training on y_1 only", family.tag());
    }
    let (model, trace) = svlvgp::training::fit(family, &data, &spec)?;
    let art = artifact::ModelArtifact::new(&model, &spec, &trace);
    artifact::save(&art, &a.out)?;
    if let Some(path) = &a.trace {
        emit(Some(path), |w| trace.write_csv(w, a.with_seconds))?;
    }
    if let Some(last) = trace.last() {
        info!(
            "{}: {} iterations, stop {:?}, best iteration {}, final objective {}",
            family.tag(),
            trace.len(),
            trace.stop,
            trace.best_iteration,
            last.elbo
        );
    }
    Ok(())
}

fn predict(a: Predict) -> Outcome {
    let (_, model) = artifact::load(&a.model)?;
    let queries = io::read_queries(std::fs::File::open(&a.queries)?, model.schema())?;
    let pred = model.predict_marginal(&queries)?;
    emit(a.out.as_deref(), |w| io::write_predictions(model.schema(), &queries, &pred, w))
}

fn cv(a: Cv) -> Outcome {
    let family = family(&a.fit.model)?;
    let spec = effective_spec(&a.fit)?;
    let data = io::read_dataset_file(&a.fit.data, None)?;
    let report = bench::crossvalidate(family, &spec, &data, a.folds, a.cv_seed)?;
    emit(Some(&a.out), |w| report.write_csv(w, a.with_seconds))?;
    let summary = serde_json::json!({
        "family": family.tag(),
        "folds": a.folds,
        "cv_seed": a.cv_seed,
        "config": spec,
        "mean_rmse": report.mean,
        "sd_rmse": report.sd,
        "failures": report.failures(),
    });
    let mut summary_path = a.out.clone().into_os_string();
    summary_path.push(".json");
    let text = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    emit(Some(Path::new(&summary_path)), |w| Ok(w.write_all(text.as_bytes())?))?;
    eprint!("{}", report.summary());
    if report.failures() == a.folds {
        return Err(Failure::AllFoldsFailed(a.folds));
    }
    Ok(())
}

fn latent_export(a: ModelOutput) -> Outcome {
    let (_, model) = artifact::load(&a.model)?;
    let map = canonicalize(model.latent_map());
    emit(a.out.as_deref(), |w| write_latent_csv(&map, model.schema(), w))
}

fn trace_export(a: ModelOutput) -> Outcome {
    let (art, _) = artifact::load(&a.model)?;
    emit(a.out.as_deref(), |w| art.trace.write_csv(w, false))
}

fn roundtrip(a: Roundtrip) -> Outcome {
    let report = artifact::roundtrip(&a.model)?;
    println!(
        "PASS {} ({} bytes, {} probe predictions bit-identical)",
        report.family.tag(),
        report.bytes,
        report.probes
    );
    Ok(())
}
