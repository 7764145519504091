//! Seeded trial batches and stopping-rule tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_tolerance, DEFAULT_HYPOTHESES};
use crate::engine::{estimate, EstimateResult, EstimatorConfig, Mode, StopReason};
use crate::error::{Error, Result};
use crate::io::recall;
use crate::stopping::{required_iterations_latent, required_iterations_vanilla};
use crate::synth::{synth, InstanceSpec};

/// Fraction of planted inliers a run must recover to count as a success.
pub const SUCCESS_RECALL: f64 = 0.9;

/// Derives an independent stream seed from a master seed and indices.
pub fn derive_seed(master: u64, trial: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Instance template; its seed is the master seed.
    pub spec: InstanceSpec,
    pub trials: usize,
    pub modes: Vec<Mode>,
    /// Estimator template; mode and seed are set per trial.
    pub estimator: EstimatorConfig,
    pub jobs: usize,
    /// When set, each trial recalibrates the latent tolerance on its own
    /// instance at this quantile.
    pub calibrate_quantile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub mode: Mode,
    pub trial: usize,
    pub instance_seed: u64,
    pub estimator_seed: u64,
    pub tolerance: f64,
    pub success: bool,
    pub recall: f64,
    pub inlier_rate: f64,
    pub iterations: u64,
    pub fits: u64,
    pub collisions: u64,
    pub verifications: u64,
    pub stop_reason: Option<StopReason>,
    pub sampling_ms: f64,
    pub fitting_ms: f64,
    pub hashing_ms: f64,
    pub verification_ms: f64,
    pub total_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_iterations: f64,
    pub p95_iterations: f64,
    pub mean_fits: f64,
    pub mean_collisions: f64,
    pub mean_verifications: f64,
    pub mean_sampling_ms: f64,
    pub mean_fitting_ms: f64,
    pub mean_hashing_ms: f64,
    pub mean_verification_ms: f64,
    pub mean_total_ms: f64,
    pub p95_total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
}

fn row_from_result(
    mode: Mode,
    trial: usize,
    seeds: (u64, u64),
    tolerance: f64,
    planted: &[bool],
    r: &EstimateResult,
) -> TrialRow {
    let rec = recall(&r.inlier_mask, planted);
    TrialRow {
        mode,
        trial,
        instance_seed: seeds.0,
        estimator_seed: seeds.1,
        tolerance,
        success: r.best_model.is_some() && rec >= SUCCESS_RECALL,
        recall: rec,
        inlier_rate: r.best_inlier_rate,
        iterations: r.iterations_used,
        fits: r.counters.fits,
        collisions: r.counters.collisions_reported,
        verifications: r.counters.verifications_run,
        stop_reason: Some(r.stop_reason),
        sampling_ms: r.timing_ms.sampling_ms,
        fitting_ms: r.timing_ms.fitting_ms,
        hashing_ms: r.timing_ms.hashing_ms,
        verification_ms: r.timing_ms.verification_ms,
        total_ms: r.timing_ms.total_ms,
        error: None,
    }
}

fn failed_row(mode: Mode, trial: usize, seeds: (u64, u64), tolerance: f64, e: &Error) -> TrialRow {
    TrialRow {
        mode,
        trial,
        instance_seed: seeds.0,
        estimator_seed: seeds.1,
        tolerance,
        success: false,
        recall: 0.0,
        inlier_rate: 0.0,
        iterations: 0,
        fits: 0,
        collisions: 0,
        verifications: 0,
        stop_reason: None,
        sampling_ms: 0.0,
        fitting_ms: 0.0,
        hashing_ms: 0.0,
        verification_ms: 0.0,
        total_ms: 0.0,
        error: Some(e.to_string()),
    }
}

/// Runs one trial; errors are recorded in the row rather than returned.
pub fn run_trial(cfg: &BenchConfig, mode: Mode, trial: usize) -> TrialRow {
    let seeds = (
        derive_seed(cfg.spec.seed, trial as u64, 0),
        derive_seed(cfg.spec.seed, trial as u64, 1),
    );
    let spec = InstanceSpec {
        seed: seeds.0,
        ..cfg.spec
    };
    let mut est = EstimatorConfig {
        mode,
        seed: seeds.1,
        ..cfg.estimator
    };
    if let (Some(q), Mode::Latent) = (cfg.calibrate_quantile, mode) {
        match calibrate_tolerance(&spec, &est.embedding, q, DEFAULT_HYPOTHESES) {
            Ok(t) => est.tolerance = t,
            Err(e) => return failed_row(mode, trial, seeds, f64::NAN, &e),
        }
    }
    let t = est.tolerance;
    match synth(&spec).and_then(|inst| {
        estimate(&inst.matches, &est).map(|r| row_from_result(mode, trial, seeds, t, &inst.truth.inlier_mask, &r))
    }) {
        Ok(row) => row,
        Err(e) => failed_row(mode, trial, seeds, t, &e),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn aggregate(mode: Mode, rows: &[TrialRow]) -> Aggregate {
    let rows: Vec<&TrialRow> = rows.iter().filter(|r| r.mode == mode).collect();
    let f = |g: fn(&TrialRow) -> f64| mean(rows.iter().map(|r| g(r)));
    let iters: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
    let totals: Vec<f64> = rows.iter().map(|r| r.total_ms).collect();
    Aggregate {
        mode,
        trials: rows.len(),
        success_rate: f(|r| r.success as u8 as f64),
        mean_iterations: f(|r| r.iterations as f64),
        p95_iterations: percentile(&iters, 95.0),
        mean_fits: f(|r| r.fits as f64),
        mean_collisions: f(|r| r.collisions as f64),
        mean_verifications: f(|r| r.verifications as f64),
        mean_sampling_ms: f(|r| r.sampling_ms),
        mean_fitting_ms: f(|r| r.fitting_ms),
        mean_hashing_ms: f(|r| r.hashing_ms),
        mean_verification_ms: f(|r| r.verification_ms),
        mean_total_ms: f(|r| r.total_ms),
        p95_total_ms: percentile(&totals, 95.0),
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<TrialReport> {
    if cfg.trials < 1 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if cfg.modes.is_empty() {
        return Err(Error::InvalidConfig("no modes selected".into()));
    }
    cfg.spec.validate()?;
    let jobs: Vec<(Mode, usize)> = cfg
        .modes
        .iter()
        .flat_map(|&m| (0..cfg.trials).map(move |t| (m, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Resource(e.to_string()))?;
    let rows: Vec<TrialRow> = pool.install(|| jobs.par_iter().map(|&(m, t)| run_trial(cfg, m, t)).collect());
    let aggregates = cfg.modes.iter().map(|&m| aggregate(m, &rows)).collect();
    Ok(TrialReport { rows, aggregates })
}

const CSV_HEADER: [&str; 17] = [
    "mode",
    "trial",
    "instance_seed",
    "tolerance",
    "success",
    "recall",
    "inlier_rate",
    "iterations",
    "fits",
    "collisions",
    "verifications",
    "sampling_ms",
    "fitting_ms",
    "hashing_ms",
    "verification_ms",
    "total_ms",
    "stop_reason",
];

/// One CSV row per trial, then `mean` and `p95` rows per mode over the same
/// columns (`success` becomes the success rate).
type Stat = fn(&[f64]) -> f64;

pub fn report_csv(report: &TrialReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in &report.rows {
        let stop = match (&r.error, r.stop_reason) {
            (Some(e), _) => format!("error: {e}"),
            (None, Some(StopReason::CriterionMet)) => "criterion_met".into(),
            (None, Some(StopReason::CapReached)) => "cap_reached".into(),
            (None, None) => String::new(),
        };
        w.write_record([
            r.mode.to_string(),
            r.trial.to_string(),
            r.instance_seed.to_string(),
            r.tolerance.to_string(),
            (r.success as u8).to_string(),
            r.recall.to_string(),
            r.inlier_rate.to_string(),
            r.iterations.to_string(),
            r.fits.to_string(),
            r.collisions.to_string(),
            r.verifications.to_string(),
            r.sampling_ms.to_string(),
            r.fitting_ms.to_string(),
            r.hashing_ms.to_string(),
            r.verification_ms.to_string(),
            r.total_ms.to_string(),
            stop,
        ])
        .map_err(err)?;
    }
    for a in &report.aggregates {
        let rows: Vec<&TrialRow> = report.rows.iter().filter(|r| r.mode == a.mode).collect();
        let col = |g: fn(&TrialRow) -> f64| -> Vec<f64> { rows.iter().map(|r| g(r)).collect() };
        let stats: [(&str, Stat); 2] = [
            ("mean", |v| mean(v.iter().copied())),
            ("p95", |v| percentile(v, 95.0)),
        ];
        for (label, stat) in stats {
            let cell = |g: fn(&TrialRow) -> f64| stat(&col(g)).to_string();
            w.write_record([
                a.mode.to_string(),
                label.to_string(),
                String::new(),
                cell(|r| r.tolerance),
                cell(|r| r.success as u8 as f64),
                cell(|r| r.recall),
                cell(|r| r.inlier_rate),
                cell(|r| r.iterations as f64),
                cell(|r| r.fits as f64),
                cell(|r| r.collisions as f64),
                cell(|r| r.verifications as f64),
                cell(|r| r.sampling_ms),
                cell(|r| r.fitting_ms),
                cell(|r| r.hashing_ms),
                cell(|r| r.verification_ms),
                cell(|r| r.total_ms),
                String::new(),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRow {
    pub omega: f64,
    pub gamma: u32,
    pub p0: f64,
    pub n_vanilla: u64,
    pub n_latent: u64,
    pub ratio: f64,
}

/// Iteration counts of both stopping rules with perfect detection.
pub fn stopping_table(p0s: &[f64], gammas: &[u32], omegas: &[f64]) -> Result<Vec<StoppingRow>> {
    let mut rows = Vec::with_capacity(p0s.len() * gammas.len() * omegas.len());
    for &p0 in p0s {
        for &gamma in gammas {
            for &omega in omegas {
                let n_vanilla = required_iterations_vanilla(p0, omega, gamma)?;
                let n_latent = required_iterations_latent(p0, omega, gamma, 1.0)?;
                rows.push(StoppingRow {
                    omega,
                    gamma,
                    p0,
                    n_vanilla,
                    n_latent,
                    ratio: n_latent as f64 / n_vanilla as f64,
                });
            }
        }
    }
    Ok(rows)
}

pub fn stopping_csv(rows: &[StoppingRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bench(modes: Vec<Mode>) -> BenchConfig {
        BenchConfig {
            spec: InstanceSpec::homography(200, 0.5, 0.2, 42),
            trials: 6,
            modes,
            estimator: EstimatorConfig {
                tolerance: 40.0,
                max_iterations: 20_000,
                table_bits: Some(12),
                ..Default::default()
            },
            jobs: 2,
            calibrate_quantile: None,
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for t in 0..1000 {
            for s in 0..2 {
                assert!(seen.insert(derive_seed(7, t, s)));
            }
        }
    }

    #[test]
    fn bench_easy_instance_succeeds_and_aggregates_recompute() {
        let report = run_bench(&small_bench(vec![Mode::Vanilla, Mode::Latent])).unwrap();
        assert_eq!(report.rows.len(), 12);
        for a in &report.aggregates {
            assert_eq!(a.success_rate, 1.0, "{a:?}");
            assert_eq!(*a, aggregate(a.mode, &report.rows));
        }
        let csv = report_csv(&report).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 12 + 4);
        assert!(lines[0].starts_with("mode,trial,"));
        assert!(lines[13].starts_with("vanilla,mean,,40,1,"));
    }

    #[test]
    fn bench_is_independent_of_job_count() {
        let mut a = run_bench(&small_bench(vec![Mode::Latent])).unwrap();
        let mut cfg = small_bench(vec![Mode::Latent]);
        cfg.jobs = 1;
        let mut b = run_bench(&cfg).unwrap();
        for r in a.rows.iter_mut().chain(b.rows.iter_mut()) {
            r.sampling_ms = 0.0;
            r.fitting_ms = 0.0;
            r.hashing_ms = 0.0;
            r.verification_ms = 0.0;
            r.total_ms = 0.0;
        }
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn failed_trials_are_recorded() {
        let mut cfg = small_bench(vec![Mode::Vanilla]);
        cfg.estimator.p0 = 1.0;
        let report = run_bench(&cfg).unwrap();
        assert!(report.rows.iter().all(|r| !r.success && r.error.is_some()));
        assert_eq!(report.aggregates[0].success_rate, 0.0);
    }

    #[test]
    fn stopping_rows() {
        let rows = stopping_table(&[0.99], &[4], &[0.1, 0.95]).unwrap();
        assert_eq!(rows[0].n_vanilla, 46050);
        assert_eq!(rows[0].n_latent, 66381);
        assert!(rows[1].ratio < 2.0);
        let csv = stopping_csv(&rows).unwrap();
        assert!(csv.starts_with("omega,gamma,p0,n_vanilla,n_latent,ratio\n0.1,4,0.99,46050,66381,"));
    }
}
