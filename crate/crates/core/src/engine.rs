//! Estimation pipelines.
//!
//! Vanilla: sample, fit, verify every hypothesis, stop adaptively.
//! Latent: sample, fit, embed and hash; only hypotheses that collide with an
//! earlier one within tolerance are verified, and the stopping rule asks for
//! two good samples instead of one.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    embed_homography, embed_rigid, recover_homography, recover_rigid, EmbeddingConfig, LatentVector,
};
use crate::error::{Error, Result};
use crate::geometry::{
    count_inliers, inlier_count, Homography, Match2D, Match3D, MatchSet, Model, ProblemKind,
    RigidMotion, Transform,
};
use crate::grid::{default_table_bits, GridConfig, GridStats, RandomGrid};
use crate::solvers::{
    fit_homography_4pt, fit_rigid_3pt, is_degenerate_homography, is_degenerate_rigid, MinimalSample,
};
use crate::stopping::{detection_lower_bound, required_iterations_latent, required_iterations_vanilla};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Vanilla,
    Latent,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "latent" => Ok(Mode::Latent),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Vanilla => "vanilla",
            Mode::Latent => "latent",
        })
    }
}

/// Detection probability used by the latent stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionModel {
    /// Assume a pair of good hypotheses is always detected.
    Ideal,
    /// Lower bound `1 - (1 - (1 - t/c)^λ)^L` for a pair at the tolerance.
    Analytic,
}

impl std::str::FromStr for DetectionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(DetectionModel::Ideal),
            "analytic" => Ok(DetectionModel::Analytic),
            other => Err(Error::InvalidConfig(format!("unknown detection model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: Mode,
    /// Target success probability.
    pub p0: f64,
    pub max_iterations: u64,
    /// Residual threshold for verification (pixels or length units).
    pub threshold: f64,
    /// Latent collision tolerance `t`.
    pub tolerance: f64,
    /// Cell size is `c_factor * tolerance`.
    pub c_factor: f64,
    pub tables: usize,
    /// Defaults to `max_iterations / 10` slots rounded up to a power of two.
    pub table_bits: Option<u32>,
    pub embedding: EmbeddingConfig,
    pub seed: u64,
    pub min_inliers_to_accept: usize,
    /// Inlier-rate estimate used before anything has been verified.
    pub omega_floor: f64,
    pub max_consecutive_degenerate: u64,
    pub detection: DetectionModel,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Latent,
            p0: 0.99,
            max_iterations: 5_000_000,
            threshold: 3.0,
            tolerance: 70.0,
            c_factor: 1.8,
            tables: 4,
            table_bits: None,
            embedding: EmbeddingConfig::default(),
            seed: 0,
            min_inliers_to_accept: 0,
            omega_floor: 0.001,
            max_consecutive_degenerate: 10_000,
            detection: DetectionModel::Ideal,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::InvalidConfig(format!("p0 = {} not in (0, 1)", self.p0)));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidConfig("threshold must be positive".into()));
        }
        if !(self.omega_floor > 0.0 && self.omega_floor <= 1.0) {
            return Err(Error::InvalidConfig("omega_floor must be in (0, 1]".into()));
        }
        if self.max_consecutive_degenerate < 1 {
            return Err(Error::InvalidConfig("max_consecutive_degenerate must be at least 1".into()));
        }
        self.embedding.validate()?;
        if self.mode == Mode::Latent {
            if !(self.c_factor >= 1.0 && self.c_factor.is_finite()) {
                return Err(Error::InvalidConfig("c_factor must be at least 1".into()));
            }
            self.grid_config(ProblemKind::Homography).validate()?;
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.c_factor * self.tolerance
    }

    pub fn grid_config(&self, kind: ProblemKind) -> GridConfig {
        GridConfig {
            tables: self.tables,
            cell_size: self.cell_size(),
            tolerance: self.tolerance,
            dim: kind.latent_dim(),
            table_bits: self
                .table_bits
                .unwrap_or_else(|| default_table_bits(self.max_iterations)),
            seed: self.seed ^ 0x005E_ED0F_6A1D,
        }
    }

    /// Detection probability plugged into the latent stopping rule.
    pub fn detection_probability(&self, kind: ProblemKind) -> f64 {
        match self.detection {
            DetectionModel::Ideal => 1.0,
            DetectionModel::Analytic => {
                detection_lower_bound(self.tolerance, self.cell_size(), kind.latent_dim(), self.tables)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub samples_drawn: u64,
    pub degenerate_skipped: u64,
    /// Hypotheses that could not be embedded or left the translation bound.
    pub unstable_skipped: u64,
    pub fits: u64,
    pub embeddings: u64,
    pub collisions_reported: u64,
    pub verifications_run: u64,
}

/// Wall-clock time per pipeline stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sampling_ms: f64,
    pub fitting_ms: f64,
    pub hashing_ms: f64,
    pub verification_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CriterionMet,
    CapReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub problem: ProblemKind,
    pub mode: Mode,
    pub best_model: Option<Model>,
    pub best_inlier_count: usize,
    pub best_inlier_rate: f64,
    /// Inlier mask of the best model over the input matches.
    #[serde(skip)]
    pub inlier_mask: Vec<bool>,
    pub accepted: bool,
    pub iterations_used: u64,
    /// Last adaptive iteration target (saturated at `u64::MAX`).
    pub required_iterations: u64,
    pub stop_reason: StopReason,
    pub counters: Counters,
    pub grid: Option<GridStats>,
    pub timing_ms: StageTimings,
}

/// Counts inliers of `model` and records the verification.
pub fn verify<T: Transform>(
    model: &T,
    matches: &[T::Match],
    threshold: f64,
    counters: &mut Counters,
    timings: &mut StageTimings,
) -> (usize, Vec<bool>) {
    let start = Instant::now();
    let out = count_inliers(model, matches, threshold);
    counters.verifications_run += 1;
    timings.verification_ms += ms(start.elapsed());
    out
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

trait Problem {
    type Match: Copy;
    type Model: Transform<Match = Self::Match> + Copy;
    const KIND: ProblemKind;

    fn is_degenerate(matches: &[Self::Match], sample: &MinimalSample) -> bool;
    fn fit(matches: &[Self::Match], sample: &MinimalSample) -> Result<Self::Model>;
    fn embed(model: &Self::Model, cfg: &EmbeddingConfig) -> Result<LatentVector>;
    fn recover(v: &LatentVector, cfg: &EmbeddingConfig) -> Result<Self::Model>;
    fn wrap(model: Self::Model) -> Model;
}

struct HomographyProblem;
struct RigidProblem;

impl Problem for HomographyProblem {
    type Match = Match2D;
    type Model = Homography;
    const KIND: ProblemKind = ProblemKind::Homography;

    fn is_degenerate(matches: &[Match2D], sample: &MinimalSample) -> bool {
        let idx = sample.indices();
        is_degenerate_homography(&std::array::from_fn(|i| matches[idx[i]]))
    }

    fn fit(matches: &[Match2D], sample: &MinimalSample) -> Result<Homography> {
        let idx = sample.indices();
        fit_homography_4pt(&std::array::from_fn(|i| matches[idx[i]]))
    }

    fn embed(model: &Homography, cfg: &EmbeddingConfig) -> Result<LatentVector> {
        embed_homography(model, cfg)
    }

    fn recover(v: &LatentVector, cfg: &EmbeddingConfig) -> Result<Homography> {
        recover_homography(v, cfg)
    }

    fn wrap(model: Homography) -> Model {
        Model::Homography(model)
    }
}

impl Problem for RigidProblem {
    type Match = Match3D;
    type Model = RigidMotion;
    const KIND: ProblemKind = ProblemKind::Rigid3d;

    fn is_degenerate(matches: &[Match3D], sample: &MinimalSample) -> bool {
        let idx = sample.indices();
        is_degenerate_rigid(&std::array::from_fn(|i| matches[idx[i]]))
    }

    fn fit(matches: &[Match3D], sample: &MinimalSample) -> Result<RigidMotion> {
        let idx = sample.indices();
        fit_rigid_3pt(&std::array::from_fn(|i| matches[idx[i]]))
    }

    fn embed(model: &RigidMotion, cfg: &EmbeddingConfig) -> Result<LatentVector> {
        if !model.within_bound(cfg.xi) {
            return Err(Error::UnstableHypothesis);
        }
        Ok(embed_rigid(model, cfg))
    }

    fn recover(v: &LatentVector, cfg: &EmbeddingConfig) -> Result<RigidMotion> {
        recover_rigid(v, cfg)
    }

    fn wrap(model: RigidMotion) -> Model {
        Model::Rigid(model)
    }
}

/// Robustly fits a model to `matches` with the configured pipeline.
pub fn estimate(matches: &MatchSet, cfg: &EstimatorConfig) -> Result<EstimateResult> {
    match matches {
        MatchSet::Homography(m) => run::<HomographyProblem>(m, cfg),
        MatchSet::Rigid3d(m) => run::<RigidProblem>(m, cfg),
    }
}

struct Best<M> {
    model: Option<M>,
    count: usize,
}

struct Run<'a, P: Problem> {
    matches: &'a [P::Match],
    cfg: &'a EstimatorConfig,
    counters: Counters,
    timings: StageTimings,
    best: Best<P::Model>,
    target: u64,
}

impl<'a, P: Problem> Run<'a, P> {
    fn gamma() -> u32 {
        P::KIND.sample_size() as u32
    }

    fn omega_hat(&self) -> f64 {
        (self.best.count as f64 / self.matches.len() as f64).max(self.cfg.omega_floor)
    }

    fn update_target(&mut self) -> Result<()> {
        let omega = self.omega_hat().min(1.0);
        self.target = match self.cfg.mode {
            Mode::Vanilla => required_iterations_vanilla(self.cfg.p0, omega, Self::gamma())?,
            Mode::Latent => required_iterations_latent(
                self.cfg.p0,
                omega,
                Self::gamma(),
                self.cfg.detection_probability(P::KIND),
            )?,
        };
        Ok(())
    }

    /// Verifies `model`; returns true when it becomes the new best.
    fn consider(&mut self, model: P::Model) -> bool {
        let start = Instant::now();
        let count = inlier_count(&model, self.matches, self.cfg.threshold);
        self.counters.verifications_run += 1;
        self.timings.verification_ms += ms(start.elapsed());
        // ties keep the earlier model
        if count > self.best.count || self.best.model.is_none() {
            self.best = Best {
                model: Some(model),
                count,
            };
            true
        } else {
            false
        }
    }
}

fn run<P: Problem>(matches: &[P::Match], cfg: &EstimatorConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let gamma = P::KIND.sample_size();
    if matches.len() < gamma {
        return Err(Error::NotEnoughMatches {
            needed: gamma,
            got: matches.len(),
        });
    }
    let started = Instant::now();
    let mut grid = match cfg.mode {
        Mode::Latent => Some(RandomGrid::new(cfg.grid_config(P::KIND))?),
        Mode::Vanilla => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = Run::<P> {
        matches,
        cfg,
        counters: Counters::default(),
        timings: StageTimings::default(),
        best: Best { model: None, count: 0 },
        target: u64::MAX,
    };
    state.update_target()?;
    let mut verified: HashSet<u64> = HashSet::new();
    let mut consecutive_degenerate = 0u64;
    let mut iterations = 0u64;

    while iterations < state.target.min(cfg.max_iterations) {
        iterations += 1;
        let id = iterations - 1;

        let t0 = Instant::now();
        let sample = MinimalSample::draw(&mut rng, matches.len(), gamma);
        state.counters.samples_drawn += 1;
        let degenerate = P::is_degenerate(matches, &sample);
        state.timings.sampling_ms += ms(t0.elapsed());
        if degenerate {
            state.counters.degenerate_skipped += 1;
            consecutive_degenerate += 1;
            if consecutive_degenerate >= cfg.max_consecutive_degenerate {
                return Err(Error::AllSamplesDegenerate(consecutive_degenerate));
            }
            continue;
        }

        let t1 = Instant::now();
        let fitted = P::fit(matches, &sample);
        state.timings.fitting_ms += ms(t1.elapsed());
        let model = match fitted {
            Ok(m) => m,
            Err(_) => {
                state.counters.degenerate_skipped += 1;
                consecutive_degenerate += 1;
                if consecutive_degenerate >= cfg.max_consecutive_degenerate {
                    return Err(Error::AllSamplesDegenerate(consecutive_degenerate));
                }
                continue;
            }
        };
        consecutive_degenerate = 0;
        state.counters.fits += 1;

        let improved = match grid.as_mut() {
            None => state.consider(model),
            Some(grid) => {
                let t2 = Instant::now();
                let embedded = P::embed(&model, &cfg.embedding);
                let collision = match &embedded {
                    Ok(v) => {
                        state.counters.embeddings += 1;
                        grid.insert_and_check(v, id)
                    }
                    Err(_) => None,
                };
                state.timings.hashing_ms += ms(t2.elapsed());
                if embedded.is_err() {
                    state.counters.unstable_skipped += 1;
                }
                match collision {
                    None => false,
                    Some(c) => {
                        state.counters.collisions_reported += 1;
                        verified.insert(id);
                        let mut improved = state.consider(model);
                        if verified.insert(c.existing_id) {
                            if let Ok(prior) = P::recover(&c.existing, &cfg.embedding) {
                                improved |= state.consider(prior);
                            }
                        }
                        improved
                    }
                }
            }
        };
        if improved {
            state.update_target()?;
        }
    }

    let stop_reason = if state.target <= cfg.max_iterations && iterations >= state.target {
        StopReason::CriterionMet
    } else {
        StopReason::CapReached
    };
    let (best_model, inlier_mask) = match state.best.model {
        Some(m) => {
            let (_, mask) = count_inliers(&m, matches, cfg.threshold);
            (Some(P::wrap(m)), mask)
        }
        None => (None, vec![false; matches.len()]),
    };
    let best_inlier_count = state.best.count;
    state.timings.total_ms = ms(started.elapsed());
    Ok(EstimateResult {
        problem: P::KIND,
        mode: cfg.mode,
        accepted: best_model.is_some() && best_inlier_count >= cfg.min_inliers_to_accept,
        best_model,
        best_inlier_count,
        best_inlier_rate: best_inlier_count as f64 / matches.len() as f64,
        inlier_mask,
        iterations_used: iterations,
        required_iterations: state.target,
        stop_reason,
        counters: state.counters,
        grid: grid.map(|g| g.stats()),
        timing_ms: state.timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2, Point3};
    use nalgebra::{Matrix3, Vector3};

    fn planted_homography() -> Homography {
        Homography::from_rows([[1.05, 0.02, 15.0], [-0.03, 0.97, -8.0], [2e-5, 1e-5, 1.0]]).unwrap()
    }

    fn noiseless_homography_set(n: usize) -> MatchSet {
        let h = planted_homography();
        let pts = [
            (10.0, 20.0),
            (600.0, 40.0),
            (580.0, 450.0),
            (30.0, 400.0),
            (320.0, 240.0),
            (100.0, 300.0),
            (500.0, 100.0),
        ];
        MatchSet::Homography(
            pts.iter()
                .take(n)
                .map(|&(x, y)| {
                    let p = Point2::new(x, y);
                    Match2D::new(p, h.apply(&p).unwrap())
                })
                .collect(),
        )
    }

    #[test]
    fn minimal_noiseless_set_latent() {
        let set = noiseless_homography_set(4);
        let cfg = EstimatorConfig {
            tolerance: 1.0,
            ..Default::default()
        };
        let r = estimate(&set, &cfg).unwrap();
        assert_eq!(r.best_inlier_count, 4);
        assert_eq!(r.best_inlier_rate, 1.0);
        assert_eq!(r.stop_reason, StopReason::CriterionMet);
        assert_eq!(r.iterations_used, 2);
        assert_eq!(r.counters.collisions_reported, 1);
        assert_eq!(r.counters.verifications_run, 2);
        let Some(Model::Homography(h)) = r.best_model else { panic!() };
        assert!((h.matrix() - planted_homography().matrix()).norm() < 1e-8);
    }

    #[test]
    fn minimal_noiseless_set_vanilla() {
        let set = noiseless_homography_set(4);
        let cfg = EstimatorConfig {
            mode: Mode::Vanilla,
            ..Default::default()
        };
        let r = estimate(&set, &cfg).unwrap();
        assert_eq!(r.best_inlier_count, 4);
        assert_eq!(r.iterations_used, 1);
        assert_eq!(r.counters.verifications_run, r.counters.fits);
        assert!(r.grid.is_none());
    }

    #[test]
    fn rigid_noiseless_latent() {
        let rot = crate::embedding::so3_exp(&Vector3::new(0.3, -0.2, 0.5));
        let motion = RigidMotion::new(rot, Vector3::new(10.0, -5.0, 2.0)).unwrap();
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(50.0, 0.0, 10.0),
            Point3::new(0.0, 40.0, -20.0),
            Point3::new(30.0, 30.0, 30.0),
        ];
        let set = MatchSet::Rigid3d(pts.iter().map(|p| Match3D::new(*p, motion.apply(p))).collect());
        let cfg = EstimatorConfig {
            tolerance: 0.01,
            threshold: 1e-6,
            ..Default::default()
        };
        let r = estimate(&set, &cfg).unwrap();
        assert_eq!(r.best_inlier_count, 4);
        assert_eq!(r.stop_reason, StopReason::CriterionMet);
        let Some(Model::Rigid(m)) = r.best_model else { panic!() };
        assert!((m.rotation() - rot).norm() < 1e-9);
    }

    #[test]
    fn too_few_matches() {
        let set = noiseless_homography_set(3);
        assert!(matches!(
            estimate(&set, &EstimatorConfig::default()),
            Err(Error::NotEnoughMatches { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn all_degenerate_input_is_reported() {
        let line: Vec<_> = (0..10)
            .map(|i| {
                let p = Point2::new(i as f64, 2.0 * i as f64);
                Match2D::new(p, p)
            })
            .collect();
        let cfg = EstimatorConfig {
            max_consecutive_degenerate: 100,
            ..Default::default()
        };
        assert!(matches!(
            estimate(&MatchSet::Homography(line), &cfg),
            Err(Error::AllSamplesDegenerate(100))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let set = noiseless_homography_set(4);
        for cfg in [
            EstimatorConfig { p0: 1.0, ..Default::default() },
            EstimatorConfig { threshold: 0.0, ..Default::default() },
            EstimatorConfig { max_iterations: 0, ..Default::default() },
            EstimatorConfig { c_factor: 0.5, ..Default::default() },
            EstimatorConfig { tables: 0, ..Default::default() },
        ] {
            assert!(matches!(estimate(&set, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn analytic_detection_runs_to_the_cap() {
        let set = noiseless_homography_set(5);
        let cfg = EstimatorConfig {
            tolerance: 1.0,
            detection: DetectionModel::Analytic,
            max_iterations: 300,
            ..Default::default()
        };
        let r = estimate(&set, &cfg).unwrap();
        assert_eq!(r.stop_reason, StopReason::CapReached);
        assert_eq!(r.iterations_used, 300);
        assert_eq!(r.required_iterations, crate::stopping::UNBOUNDED);
        assert!(r.counters.verifications_run <= 2 * r.counters.collisions_reported);
    }

    #[test]
    fn detection_probability_models() {
        let cfg = EstimatorConfig {
            detection: DetectionModel::Analytic,
            ..Default::default()
        };
        let expect = 1.0 - (1.0 - (1.0f64 - 1.0 / 1.8).powi(8)).powi(4);
        assert!((cfg.detection_probability(ProblemKind::Homography) - expect).abs() < 1e-15);
        assert_eq!(EstimatorConfig::default().detection_probability(ProblemKind::Rigid3d), 1.0);
    }

    #[test]
    fn verify_updates_counters() {
        let h = planted_homography();
        let MatchSet::Homography(ms) = noiseless_homography_set(7) else { unreachable!() };
        let mut counters = Counters::default();
        let mut timings = StageTimings::default();
        let (count, mask) = verify(&h, &ms, 1e-6, &mut counters, &mut timings);
        assert_eq!(count, 7);
        assert!(mask.iter().all(|&b| b));
        assert_eq!(counters.verifications_run, 1);
        let id = Homography::new(Matrix3::identity()).unwrap();
        let (count, _) = verify(&id, &ms, 1e-6, &mut counters, &mut timings);
        assert_eq!(count, 0);
        assert_eq!(counters.verifications_run, 2);
    }
}
