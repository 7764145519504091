use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latent_ransac::bench::{report_csv, run_bench, stopping_csv, stopping_table, BenchConfig};
use latent_ransac::calibrate::{calibrate_tolerance, DEFAULT_HYPOTHESES, DEFAULT_QUANTILE};
use latent_ransac::io::{self, RunReport, TruthFile};
use latent_ransac::{estimate, synth, DetectionModel, EmbeddingConfig, EstimatorConfig, InstanceSpec, Mode, ProblemKind};

#[derive(Parser)]
#[command(name = "latent-ransac", version, about = "Latent-RANSAC estimation and benchmarking")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Master seed; a random one is generated and printed when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 0.99)]
    p0: f64,
    #[arg(long, global = true, default_value = "latent")]
    mode: Mode,
    /// Latent collision tolerance; required in latent mode unless calibrated.
    #[arg(long = "t", global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true, default_value_t = 1.8)]
    c_factor: f64,
    #[arg(long, global = true, default_value_t = 4)]
    tables: usize,
    #[arg(long, global = true, default_value_t = 19)]
    table_bits: u32,
    #[arg(long, global = true, default_value_t = 5_000_000)]
    max_iters: u64,
    /// Inlier residual threshold (pixels or length units).
    #[arg(long, global = true, default_value_t = 3.0)]
    threshold: f64,
    /// Length units per radian for rigid embeddings.
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Detection probability assumed by the latent stopping rule.
    #[arg(long, global = true, default_value = "ideal")]
    detection: DetectionModel,
}

#[derive(Args, Clone)]
struct InstanceArgs {
    #[arg(long, default_value = "homography")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Planted inlier rate.
    #[arg(long, default_value_t = 0.1)]
    omega: f64,
    /// Inlier noise standard deviation per coordinate.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance and its ground-truth sidecar.
    Synth {
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Estimate a model from a match file and print a JSON report.
    Run {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        min_inliers: usize,
    },
    /// Run seeded trials on synthetic instances and print a CSV report.
    Bench {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Comma-separated list of modes.
        #[arg(long, value_delimiter = ',', default_value = "vanilla,latent")]
        modes: Vec<Mode>,
        /// Recalibrate t per trial at this quantile instead of using --t.
        #[arg(long)]
        calibrate_quantile: Option<f64>,
    },
    /// Iteration counts of the vanilla and latent stopping rules.
    StoppingTable {
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.95,0.99")]
        p0s: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "3,4")]
        gammas: Vec<u32>,
        /// Explicit inlier rates; defaults to 0.01, 0.02, ..., 0.99.
        #[arg(long, value_delimiter = ',')]
        omegas: Vec<f64>,
    },
    /// Recommend a latent tolerance from pure-inlier hypothesis scatter.
    Calibrate {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value_t = DEFAULT_QUANTILE)]
        quantile: f64,
        #[arg(long, default_value_t = DEFAULT_HYPOTHESES)]
        hypotheses: usize,
    },
}

enum Failure {
    NotAccepted,
    Input(String),
}

impl From<latent_ransac::Error> for Failure {
    fn from(e: latent_ransac::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn seed(shared: &Shared) -> u64 {
    shared.seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn embedding(shared: &Shared, canvas: Option<(f64, f64)>) -> EmbeddingConfig {
    let mut e = EmbeddingConfig::default();
    if let Some((w, h)) = canvas {
        e.canvas_width = w;
        e.canvas_height = h;
    }
    if let Some(rho) = shared.rho {
        e.rho = rho;
    }
    e
}

fn estimator(shared: &Shared, seed: u64, canvas: Option<(f64, f64)>) -> EstimatorConfig {
    EstimatorConfig {
        mode: shared.mode,
        p0: shared.p0,
        max_iterations: shared.max_iters,
        threshold: shared.threshold,
        tolerance: shared.tolerance.unwrap_or(0.0),
        c_factor: shared.c_factor,
        tables: shared.tables,
        table_bits: Some(shared.table_bits),
        embedding: embedding(shared, canvas),
        seed,
        detection: shared.detection,
        ..EstimatorConfig::default()
    }
}

fn spec(args: &InstanceArgs, seed: u64) -> InstanceSpec {
    match args.problem {
        ProblemKind::Homography => InstanceSpec::homography(args.n, args.omega, args.sigma, seed),
        ProblemKind::Rigid3d => InstanceSpec::rigid(args.n, args.omega, args.sigma, seed),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotAccepted) => ExitCode::from(1),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let shared = &cli.shared;
    match &cli.command {
        Command::Synth { instance } => {
            let Some(out) = shared.out.as_deref() else {
                return Err(Failure::Input("synth needs --out <match file>".into()));
            };
            let s = spec(instance, seed(shared));
            let inst = synth(&s)?;
            let canvas = (inst.matches.kind() == ProblemKind::Homography).then_some((s.canvas_width, s.canvas_height));
            io::write_matches(out, &inst.matches, canvas)?;
            io::write_truth(&io::truth_path(out), &TruthFile::new(&inst.truth, Some(s)))?;
            Ok(())
        }
        Command::Run { input, min_inliers } => {
            let file = io::read_matches(input).map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
            if shared.mode == Mode::Latent && shared.tolerance.is_none() {
                return Err(Failure::Input("latent mode needs --t (see the calibrate subcommand)".into()));
            }
            let mut cfg = estimator(shared, seed(shared), file.canvas);
            cfg.min_inliers_to_accept = *min_inliers;
            let result = estimate(&file.matches, &cfg)?;
            let truth_file = io::truth_path(input);
            let truth_recall = if truth_file.exists() {
                let truth = io::read_truth(&truth_file)?;
                Some(io::recall(&result.inlier_mask, &truth.inlier_mask))
            } else {
                None
            };
            let report = RunReport {
                format_version: io::FORMAT_VERSION,
                input: Some(input.display().to_string()),
                config: &cfg,
                result: &result,
                truth_recall,
            };
            emit(shared.out.as_deref(), &(io::report_json(&report) + "\n"))?;
            if result.accepted {
                Ok(())
            } else {
                Err(Failure::NotAccepted)
            }
        }
        Command::Bench {
            instance,
            trials,
            modes,
            calibrate_quantile,
        } => {
            if modes.contains(&Mode::Latent) && shared.tolerance.is_none() && calibrate_quantile.is_none() {
                return Err(Failure::Input("latent mode needs --t or --calibrate-quantile".into()));
            }
            let s = spec(instance, seed(shared));
            let cfg = BenchConfig {
                spec: s,
                trials: *trials,
                modes: modes.clone(),
                estimator: estimator(shared, s.seed, Some((s.canvas_width, s.canvas_height))),
                jobs: shared.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                calibrate_quantile: *calibrate_quantile,
            };
            let report = run_bench(&cfg)?;
            emit(shared.out.as_deref(), &report_csv(&report)?)
        }
        Command::StoppingTable { p0s, gammas, omegas } => {
            let omegas = if omegas.is_empty() {
                (1..100).map(|i| i as f64 / 100.0).collect()
            } else {
                omegas.clone()
            };
            let rows = stopping_table(p0s, gammas, &omegas)?;
            emit(shared.out.as_deref(), &stopping_csv(&rows)?)
        }
        Command::Calibrate {
            instance,
            quantile,
            hypotheses,
        } => {
            let s = spec(instance, seed(shared));
            let t = calibrate_tolerance(&s, &embedding(shared, Some((s.canvas_width, s.canvas_height))), *quantile, *hypotheses)?;
            emit(shared.out.as_deref(), &format!("{t}\n"))
        }
    }
}
