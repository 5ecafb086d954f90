//! `lkgp`: fit, predict, evaluate and benchmark latent Kronecker GP models.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lkgp::alloc_track::TrackingAllocator;
use lkgp::bench::{run_bench, write_bench_csv, BenchConfig};
use lkgp::data_io::{
    align_predictions, load_model, read_csv, read_predictions, read_targets, read_truth, save_model, synth_benchmark,
    synth_curves, to_training_data, write_csv, write_predictions, write_truth, PredictionRow, TargetRow, TruthRow,
};
use lkgp::linalg::CgConfig;
use lkgp::{metrics_mse_llh, Backend, BackendChoice, FitConfig, FitReport, LkgpError, LkgpModel64};
use nalgebra::DMatrix;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lkgp",
    version,
    about = "Learning-curve prediction with latent Kronecker Gaussian processes"
)]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Auto,
    Exact,
    Iterative,
}

impl From<BackendArg> for BackendChoice {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Auto => BackendChoice::Auto,
            BackendArg::Exact => BackendChoice::Exact,
            BackendArg::Iterative => BackendChoice::Iterative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Curves,
    Benchmark,
}

#[derive(Subcommand)]
enum Command {
    /// Fit kernel parameters on a curves CSV and write a model file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        backend: BackendArg,
        #[arg(long, default_value_t = 0.01)]
        cg_tol: f64,
        #[arg(long, default_value_t = 10000)]
        cg_max_iters: usize,
        #[arg(long, default_value_t = 16)]
        probes: usize,
        #[arg(long, default_value_t = 100)]
        lbfgs_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        restarts: usize,
        /// Also write the fit report JSON to this path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict means and variances for target configurations.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append the individual posterior draws as columns s0, s1, ...
        #[arg(long)]
        write_samples: bool,
    },
    /// Score predictions against ground truth; prints {"mse", "llh"}.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Time and memory scaling on synthetic grids; writes CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, value_delimiter = ',', default_value = "exact,iterative")]
        backends: Vec<String>,
        #[arg(long, default_value_t = 512)]
        test_configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        lbfgs_iters: usize,
        /// Per-cell budget; the number of test configurations shrinks to fit.
        #[arg(long)]
        max_seconds: Option<f64>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic curves CSV.
    Synth {
        #[arg(long, value_enum, default_value = "curves")]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0.5)]
        missing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Final values of the curves listed in `--targets`, as `config_id,value`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Test targets (configurations of curves with hidden suffixes).
        #[arg(long)]
        targets: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<LkgpError> for Failure {
    fn from(e: LkgpError) -> Self {
        use LkgpError::*;
        let msg = e.to_string();
        match e {
            Breakdown(_) | LanczosBreakdown { .. } | Cholesky { .. } | Eigen(_) | DenseCapExceeded { .. } => {
                Failure::Numeric(msg)
            }
            _ => Failure::Data(msg),
        }
    }
}

fn with_path(path: &Path) -> impl Fn(LkgpError) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Data(m) => Failure::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn json_out(value: &FitReport) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    data: &Path,
    out: &Path,
    backend: BackendArg,
    cg_tol: f64,
    cg_max_iters: usize,
    probes: usize,
    lbfgs_iters: usize,
    seed: u64,
    restarts: usize,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let cg = CgConfig::new(cg_tol, cg_max_iters).map_err(|e| Failure::Usage(e.to_string()))?;
    if probes == 0 {
        return Err(Failure::Usage("--probes must be at least 1".into()));
    }
    let ds = read_csv(data)?;
    let prepared = to_training_data::<f64>(&ds).map_err(with_path(data))?;
    let cfg = FitConfig {
        backend: backend.into(),
        cg,
        probes,
        max_lbfgs_iters: lbfgs_iters,
        seed,
        restarts,
        ..FitConfig::default()
    };
    let model = LkgpModel64::fit(prepared, &cfg)?;
    let fit = model.fit_report.as_ref().expect("fit sets a report");
    for (k, v) in fit.objective_trace.iter().enumerate() {
        log::info!("iter {k}: objective {v:.6}");
    }
    if let Some(w) = &fit.warning {
        log::warn!("{w}");
    }
    save_model(&model, out).map_err(with_path(out))?;
    let text = json_out(fit)?;
    if let Some(path) = report {
        let mut w = create(path)?;
        writeln!(w, "{text}").map_err(|e| Failure::Data(e.to_string()))?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_predict(
    model_path: &Path,
    targets_path: &Path,
    out: &Path,
    samples: usize,
    seed: u64,
    write_samples: bool,
) -> Result<(), Failure> {
    if samples < 2 {
        return Err(Failure::Usage("--samples must be at least 2".into()));
    }
    let model: LkgpModel64 = load_model(model_path).map_err(with_path(model_path))?;
    let targets = read_targets(open(targets_path)?).map_err(with_path(targets_path))?;
    let d = model.data.d();
    if let Some(bad) = targets.iter().find(|t| t.hyperparams.len() != d) {
        return Err(Failure::Data(format!(
            "{}: config {} has {} hyperparameters, model expects {d}",
            targets_path.display(),
            bad.config_id,
            bad.hyperparams.len()
        )));
    }
    let last = *model.steps.last().expect("model grid is non-empty");
    // group targets sharing a step list so each group costs one solve
    let mut groups: BTreeMap<Vec<u64>, Vec<&TargetRow>> = BTreeMap::new();
    for t in &targets {
        let steps = t.steps.clone().unwrap_or_else(|| model.steps.clone());
        if steps.iter().any(|&s| s > last) {
            log::warn!(
                "config {}: steps beyond the last training step {last} are extrapolated",
                t.config_id
            );
        }
        groups
            .entry(steps.iter().map(|s| s.to_bits()).collect())
            .or_default()
            .push(t);
    }
    let mut rows = Vec::new();
    for (key, members) in &groups {
        let steps: Vec<f64> = key.iter().map(|&b| f64::from_bits(b)).collect();
        let x = DMatrix::from_fn(members.len(), d, |i, k| members[i].hyperparams[k]);
        let pred = model.predict(&x, &steps, samples, seed, write_samples)?;
        for (i, t) in members.iter().enumerate() {
            for (j, &s) in steps.iter().enumerate() {
                rows.push(PredictionRow {
                    config_id: t.config_id.clone(),
                    step: s,
                    mean: pred.mean[(i, j)],
                    variance: pred.variance[(i, j)],
                    samples: pred
                        .samples
                        .as_ref()
                        .map(|set| set.samples.iter().map(|m| m[(i, j)]).collect())
                        .unwrap_or_default(),
                });
            }
        }
    }
    let order: BTreeMap<&str, usize> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| (t.config_id.as_str(), i))
        .collect();
    rows.sort_by(|a, b| {
        order[a.config_id.as_str()]
            .cmp(&order[b.config_id.as_str()])
            .then(a.step.total_cmp(&b.step))
    });
    write_predictions(&rows, create(out)?).map_err(with_path(out))?;
    Ok(())
}

fn cmd_eval(pred: &Path, truth: &Path) -> Result<(), Failure> {
    let preds = read_predictions(open(pred)?).map_err(with_path(pred))?;
    let truths = read_truth(open(truth)?).map_err(with_path(truth))?;
    let (mean, var, val) = align_predictions(&preds, &truths)
        .map_err(|ids| Failure::Data(format!("unmatched config ids: {}", ids.join(", "))))?;
    let m = metrics_mse_llh(&mean, &var, &val)?;
    println!("{}", serde_json::json!({ "mse": m.mse, "llh": m.llh }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    sizes: Vec<usize>,
    d: usize,
    backends: &[String],
    test_configs: usize,
    seed: u64,
    lbfgs_iters: usize,
    max_seconds: Option<f64>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let backends = backends
        .iter()
        .map(|b| match b.as_str() {
            "exact" => Ok(Backend::Exact),
            "iterative" => Ok(Backend::Iterative),
            other => Err(Failure::Usage(format!("unknown backend {other:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = BenchConfig {
        sizes,
        d,
        backends,
        test_configs,
        seed,
        max_seconds,
        fit: FitConfig {
            max_lbfgs_iters: lbfgs_iters,
            ..FitConfig::default()
        },
        ..BenchConfig::default()
    };
    let rows = run_bench(&cfg, |r| {
        log::info!(
            "size {} {:?}: fit {:.2}s, predict {:.2}s, {}",
            r.size,
            r.backend,
            r.fit_seconds,
            r.predict_seconds,
            r.status
        )
    })
    .map_err(|e| Failure::Usage(e.to_string()))?;
    match out {
        Some(path) => write_bench_csv(&rows, create(path)?)?,
        None => write_bench_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    kind: SynthKind,
    n: usize,
    m: usize,
    d: usize,
    noise: f64,
    missing: f64,
    seed: u64,
    out: &Path,
    truth: Option<&Path>,
    targets: Option<&Path>,
) -> Result<(), Failure> {
    let usage = |e: LkgpError| Failure::Usage(e.to_string());
    let (ds, finals) = match kind {
        SynthKind::Curves => synth_curves(n, m, d, noise, missing, seed).map_err(usage)?,
        SynthKind::Benchmark => (synth_benchmark(n, m, d, seed).map_err(usage)?, Vec::new()),
    };
    write_csv(&ds, out).map_err(with_path(out))?;
    if let Some(path) = truth {
        let rows: Vec<TruthRow> = finals
            .iter()
            .filter(|f| f.hidden)
            .map(|f| TruthRow {
                config_id: f.config_id.clone(),
                step: None,
                value: f.value,
            })
            .collect();
        write_truth(&rows, create(path)?)?;
    }
    if let Some(path) = targets {
        let mut w = create(path)?;
        let header: Vec<String> = (1..=d).map(|k| format!("hp_{k}")).collect();
        let mut text = format!("config_id,{}\n", header.join(","));
        for f in finals.iter().filter(|f| f.hidden) {
            let hp: Vec<String> = f.hyperparams.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&format!("{},{}\n", f.config_id, hp.join(",")));
        }
        w.write_all(text.as_bytes()).map_err(|e| Failure::Data(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit {
            data,
            out,
            backend,
            cg_tol,
            cg_max_iters,
            probes,
            lbfgs_iters,
            seed,
            restarts,
            report,
        } => cmd_fit(
            &data,
            &out,
            backend,
            cg_tol,
            cg_max_iters,
            probes,
            lbfgs_iters,
            seed,
            restarts,
            report.as_deref(),
        ),
        Command::Predict {
            model,
            targets,
            out,
            samples,
            seed,
            write_samples,
        } => cmd_predict(&model, &targets, &out, samples, seed, write_samples),
        Command::Eval { pred, truth } => cmd_eval(&pred, &truth),
        Command::Bench {
            sizes,
            d,
            backends,
            test_configs,
            seed,
            lbfgs_iters,
            max_seconds,
            out,
        } => cmd_bench(
            sizes,
            d,
            &backends,
            test_configs,
            seed,
            lbfgs_iters,
            max_seconds,
            out.as_deref(),
        ),
        Command::Synth {
            kind,
            n,
            m,
            d,
            noise,
            missing,
            seed,
            out,
            truth,
            targets,
        } => cmd_synth(
            kind,
            n,
            m,
            d,
            noise,
            missing,
            seed,
            &out,
            truth.as_deref(),
            targets.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
