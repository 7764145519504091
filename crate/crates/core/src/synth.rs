//! Synthetic planted-model instances.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Match2D, Match3D, MatchSet, Model, Point2, Point3, ProblemKind, RigidMotion};
use crate::solvers::fit_homography_4pt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub problem: ProblemKind,
    pub n_matches: usize,
    pub inlier_rate: f64,
    /// Per-coordinate standard deviation of the inlier noise.
    pub noise_sigma: f64,
    pub canvas_width: f64,
    pub canvas_height: f64,
    /// Edge length of the cube (centered at the origin) holding 3D source points.
    pub box_size: f64,
    /// Rigid translations are drawn uniformly from `[-r, r]^3`.
    pub translation_range: f64,
    /// Maximal corner displacement as a fraction of the canvas size.
    pub corner_perturbation: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn homography(n_matches: usize, inlier_rate: f64, noise_sigma: f64, seed: u64) -> Self {
        Self {
            problem: ProblemKind::Homography,
            n_matches,
            inlier_rate,
            noise_sigma,
            canvas_width: 640.0,
            canvas_height: 480.0,
            box_size: 200.0,
            translation_range: 100.0,
            corner_perturbation: 0.3,
            seed,
        }
    }

    pub fn rigid(n_matches: usize, inlier_rate: f64, noise_sigma: f64, seed: u64) -> Self {
        Self {
            problem: ProblemKind::Rigid3d,
            ..Self::homography(n_matches, inlier_rate, noise_sigma, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.inlier_rate > 0.0 && self.inlier_rate <= 1.0) {
            return bad("inlier rate must be in (0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be non-negative");
        }
        if self.n_matches < self.problem.sample_size() {
            return bad("too few matches for a minimal sample");
        }
        if !(self.canvas_width > 0.0 && self.canvas_height > 0.0 && self.box_size > 0.0) {
            return bad("canvas and box must have positive size");
        }
        if !(self.translation_range >= 0.0 && self.translation_range.is_finite()) {
            return bad("translation range must be non-negative");
        }
        if !(0.0..0.5).contains(&self.corner_perturbation) {
            return bad("corner perturbation must be in [0, 0.5)");
        }
        Ok(())
    }

    pub fn inlier_count(&self) -> usize {
        (self.inlier_rate * self.n_matches as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: Model,
    pub inlier_mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub matches: MatchSet,
    pub truth: GroundTruth,
}

/// Random homography moving each canvas corner by at most
/// `corner_perturbation` of the canvas size, redrawn until the image of the
/// canvas stays convex.
pub fn random_homography<R: Rng + ?Sized>(rng: &mut R, spec: &InstanceSpec) -> Homography {
    let (w, h) = (spec.canvas_width, spec.canvas_height);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let f = spec.corner_perturbation;
    loop {
        let moved: [Point2; 4] = std::array::from_fn(|i| {
            let (x, y) = corners[i];
            Point2::new(x + rng.random_range(-f..=f) * w, y + rng.random_range(-f..=f) * h)
        });
        if !is_convex(&moved) {
            continue;
        }
        let ms = std::array::from_fn(|i| Match2D::new(Point2::new(corners[i].0, corners[i].1), moved[i]));
        if let Ok(hom) = fit_homography_4pt(&ms) {
            return hom;
        }
    }
}

fn is_convex(quad: &[Point2; 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let c = quad[(i + 2) % 4];
        let cross = (b - a).perp(&(c - b));
        if cross == 0.0 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

/// Rotation uniform over SO(3) via a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> nalgebra::Matrix3<f64> {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(quat).to_rotation_matrix().into_inner();
        }
    }
}

pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R, spec: &InstanceSpec) -> RigidMotion {
    let r = spec.translation_range;
    let t = Vector3::from_fn(|_, _| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 });
    RigidMotion::new(random_rotation(rng), t).expect("sampled rotation is orthonormal")
}

/// Generates an instance with exactly `round(ω·n)` planted inliers.
pub fn synth(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_matches;
    let n_in = spec.inlier_count();
    let mut mask: Vec<bool> = (0..n).map(|i| i < n_in).collect();
    mask.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");

    let (matches, model) = match spec.problem {
        ProblemKind::Homography => {
            let hom = random_homography(&mut rng, spec);
            let (w, h) = (spec.canvas_width, spec.canvas_height);
            let mut out = Vec::with_capacity(n);
            for &inlier in &mask {
                let m = loop {
                    let p = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
                    if inlier {
                        // convex image: the canvas never reaches the line at infinity
                        let Ok(q) = hom.apply(&p) else { continue };
                        let e = Point2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                        break Match2D::new(p, Point2::from(q.coords + e.coords));
                    }
                    let q = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
                    break Match2D::new(p, q);
                };
                out.push(m);
            }
            (MatchSet::Homography(out), Model::Homography(hom))
        }
        ProblemKind::Rigid3d => {
            let motion = random_rigid(&mut rng, spec);
            let half = spec.box_size / 2.0;
            let centre = motion.translation();
            let mut out = Vec::with_capacity(n);
            for &inlier in &mask {
                let p = Point3::from(Vector3::from_fn(|_, _| rng.random_range(-half..half)));
                let q = if inlier {
                    let e = Vector3::from_fn(|_, _| noise.sample(&mut rng));
                    motion.apply(&p) + e
                } else {
                    Point3::from(centre + Vector3::from_fn(|_, _| rng.random_range(-half..half)))
                };
                out.push(Match3D::new(p, q));
            }
            (MatchSet::Rigid3d(out), Model::Rigid(motion))
        }
    };
    Ok(Instance {
        spec: *spec,
        matches,
        truth: GroundTruth {
            model,
            inlier_mask: mask,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::count_inliers;

    #[test]
    fn noiseless_pure_inliers_fit_exactly() {
        for kind in [ProblemKind::Homography, ProblemKind::Rigid3d] {
            let spec = InstanceSpec {
                problem: kind,
                ..InstanceSpec::homography(200, 1.0, 0.0, 3)
            };
            let inst = synth(&spec).unwrap();
            assert!(inst.truth.inlier_mask.iter().all(|&b| b));
            let (count, _) = inst.truth.model.count_inliers(&inst.matches, 1e-6);
            assert_eq!(count, 200);
        }
    }

    #[test]
    fn exact_inlier_count() {
        let inst = synth(&InstanceSpec::homography(100, 0.5, 1.0, 1)).unwrap();
        assert_eq!(inst.truth.inlier_mask.iter().filter(|&&b| b).count(), 50);
        let inst = synth(&InstanceSpec::rigid(1000, 0.05, 0.5, 1)).unwrap();
        assert_eq!(inst.truth.inlier_mask.iter().filter(|&&b| b).count(), 50);
        assert_eq!(inst.matches.len(), 1000);
    }

    #[test]
    fn inliers_are_shuffled() {
        let inst = synth(&InstanceSpec::homography(1000, 0.5, 1.0, 9)).unwrap();
        let first_half = inst.truth.inlier_mask[..500].iter().filter(|&&b| b).count();
        assert!(first_half > 200 && first_half < 300);
    }

    #[test]
    fn same_seed_same_instance() {
        let a = synth(&InstanceSpec::rigid(50, 0.3, 0.5, 77)).unwrap();
        let b = synth(&InstanceSpec::rigid(50, 0.3, 0.5, 77)).unwrap();
        assert_eq!(a.matches, b.matches);
        assert_eq!(a.truth, b.truth);
        let c = synth(&InstanceSpec::rigid(50, 0.3, 0.5, 78)).unwrap();
        assert_ne!(a.matches, c.matches);
    }

    #[test]
    fn corners_stay_within_perturbation() {
        let spec = InstanceSpec::homography(10, 1.0, 0.0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let h = random_homography(&mut rng, &spec);
            for (x, y) in [(0.0, 0.0), (640.0, 0.0), (640.0, 480.0), (0.0, 480.0)] {
                let q = h.apply(&Point2::new(x, y)).unwrap();
                assert!((q.x - x).abs() <= 0.3 * 640.0 + 1e-6);
                assert!((q.y - y).abs() <= 0.3 * 480.0 + 1e-6);
            }
        }
    }

    #[test]
    fn rotations_are_uniform_in_trace() {
        // for Haar measure on SO(3), E[tr R] = 0 and Var[tr R] = 1
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let traces: Vec<f64> = (0..n).map(|_| random_rotation(&mut rng).trace()).collect();
        let mean = traces.iter().sum::<f64>() / n as f64;
        let var = traces.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    /// Inliers rescored at 3σ: each passes with probability P(|N(0,1)| < 3)^d,
    /// since the residual is the Euclidean norm we bound it by the ℓ∞ ball
    /// from below and the ℓ2 chi tail from above.
    #[test]
    fn rescoring_at_three_sigma() {
        let sigma = 1.0;
        let inst = synth(&InstanceSpec::homography(4000, 0.5, sigma, 21)).unwrap();
        let Model::Homography(h) = inst.truth.model else { unreachable!() };
        let MatchSet::Homography(ms) = &inst.matches else { unreachable!() };
        let inliers: Vec<_> = ms.iter().zip(&inst.truth.inlier_mask).filter(|(_, &b)| b).map(|(m, _)| *m).collect();
        let (count, _) = count_inliers(&h, &inliers, 3.0 * sigma);
        // 2D: P(|e| < 3σ) = 1 - exp(-9/2)
        let p = 1.0 - (-4.5f64).exp();
        let n = inliers.len() as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        assert!((count as f64 - n * p).abs() <= 2.576 * sd + 1.0, "{count} vs {}", n * p);
    }

    #[test]
    fn invalid_specs() {
        let ok = InstanceSpec::homography(100, 0.5, 1.0, 0);
        for spec in [
            InstanceSpec { inlier_rate: 0.0, ..ok },
            InstanceSpec { inlier_rate: 1.5, ..ok },
            InstanceSpec { noise_sigma: -1.0, ..ok },
            InstanceSpec { n_matches: 3, ..ok },
            InstanceSpec { corner_perturbation: 0.6, ..ok },
        ] {
            assert!(synth(&spec).is_err());
        }
    }
}
