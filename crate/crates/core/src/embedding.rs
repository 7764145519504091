//! Latent parametrizations of hypotheses.
//!
//! Homographies are represented by the images of the four canvas corners
//! (8 numbers, pixels). Rigid motions are represented by the axis-angle vector
//! of the rotation followed by the translation divided by `rho` (6 numbers,
//! radians). In both cases the ℓ∞ distance between latent vectors tracks the
//! difference of residuals the two hypotheses produce on matches.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Match2D, Point2, ProblemKind, RigidMotion, EPS_PROJ};
use crate::solvers::fit_homography_4pt;

pub const MAX_LATENT_DIM: usize = 8;

/// Embedded hypothesis. Only the first `kind.latent_dim()` entries are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentVector {
    kind: ProblemKind,
    values: [f64; MAX_LATENT_DIM],
}

impl LatentVector {
    pub fn new(kind: ProblemKind, values: &[f64]) -> Result<Self> {
        let dim = kind.latent_dim();
        if values.len() != dim {
            return Err(Error::DimensionMismatch(dim, values.len()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite latent entry".into()));
        }
        let mut arr = [0.0; MAX_LATENT_DIM];
        arr[..dim].copy_from_slice(values);
        Ok(Self { kind, values: arr })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.latent_dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Source canvas width in pixels.
    pub canvas_width: f64,
    /// Source canvas height in pixels.
    pub canvas_height: f64,
    /// Length units per radian used to bring translations into angle units.
    pub rho: f64,
    /// Translation bound: hypotheses with `|t|∞ > xi` lie outside the domain.
    pub xi: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            canvas_width: 640.0,
            canvas_height: 480.0,
            rho: 1.0 / 3.6,
            xi: 1.0e4,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.canvas_width) || !positive(self.canvas_height) {
            return Err(Error::InvalidConfig("canvas size must be positive".into()));
        }
        if !positive(self.rho) {
            return Err(Error::InvalidConfig("rho must be positive".into()));
        }
        if !positive(self.xi) {
            return Err(Error::InvalidConfig("xi must be positive".into()));
        }
        Ok(())
    }

    /// Canvas corners in embedding order.
    pub fn corners(&self) -> [Point2; 4] {
        let (w, h) = (self.canvas_width, self.canvas_height);
        [
            Point2::new(0.0, 0.0),
            Point2::new(w, 0.0),
            Point2::new(w, h),
            Point2::new(0.0, h),
        ]
    }
}

pub fn embed_homography(h: &Homography, cfg: &EmbeddingConfig) -> Result<LatentVector> {
    let mut values = [0.0; MAX_LATENT_DIM];
    for (i, corner) in cfg.corners().iter().enumerate() {
        let m = h.matrix();
        let w = m[(2, 0)] * corner.x + m[(2, 1)] * corner.y + m[(2, 2)];
        if w.abs() <= EPS_PROJ {
            return Err(Error::UnstableHypothesis);
        }
        let img = h.apply(corner).map_err(|_| Error::UnstableHypothesis)?;
        if !(img.x.is_finite() && img.y.is_finite()) {
            return Err(Error::UnstableHypothesis);
        }
        values[2 * i] = img.x;
        values[2 * i + 1] = img.y;
    }
    Ok(LatentVector {
        kind: ProblemKind::Homography,
        values,
    })
}

/// Inverse of [`embed_homography`]: the homography taking the canvas corners
/// to the four latent points.
pub fn recover_homography(v: &LatentVector, cfg: &EmbeddingConfig) -> Result<Homography> {
    if v.kind != ProblemKind::Homography {
        return Err(Error::DimensionMismatch(8, v.dim()));
    }
    let corners = cfg.corners();
    let sample: [Match2D; 4] = std::array::from_fn(|i| {
        Match2D::new(corners[i], Point2::new(v.values[2 * i], v.values[2 * i + 1]))
    });
    fit_homography_4pt(&sample)
}

pub fn embed_rigid(m: &RigidMotion, cfg: &EmbeddingConfig) -> LatentVector {
    let r = so3_log(m.rotation());
    let t = m.translation() / cfg.rho;
    let mut values = [0.0; MAX_LATENT_DIM];
    values[..3].copy_from_slice(r.as_slice());
    values[3..6].copy_from_slice(t.as_slice());
    LatentVector {
        kind: ProblemKind::Rigid3d,
        values,
    }
}

/// Inverse of [`embed_rigid`].
pub fn recover_rigid(v: &LatentVector, cfg: &EmbeddingConfig) -> Result<RigidMotion> {
    if v.kind != ProblemKind::Rigid3d {
        return Err(Error::DimensionMismatch(6, v.dim()));
    }
    let r = Vector3::new(v.values[0], v.values[1], v.values[2]);
    let t = Vector3::new(v.values[3], v.values[4], v.values[5]) * cfg.rho;
    RigidMotion::new(so3_exp(&r), t)
}

/// ℓ∞ distance between two latent vectors of the same kind.
pub fn latent_distance(a: &LatentVector, b: &LatentVector) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(linf(a.as_slice(), b.as_slice()))
}

#[inline]
pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn skew(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// Rotation `exp([r]ₓ)` by Rodrigues' formula.
pub fn so3_exp(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let k = skew(r);
    let (a, b) = if theta2 < 1e-16 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector of `rot` with angle in `[0, π]`. At exactly π the axis
/// sign is fixed by making its first nonzero component positive.
pub fn so3_log(rot: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((rot.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // sin θ · axis
    let w = Vector3::new(
        rot[(2, 1)] - rot[(1, 2)],
        rot[(0, 2)] - rot[(2, 0)],
        rot[(1, 0)] - rot[(0, 1)],
    ) / 2.0;
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if cos >= 0.0 {
        let scale = if theta < 1e-8 { 1.0 + theta * theta / 6.0 } else { theta / sin };
        return w * scale;
    }
    // Near π: the symmetric part is (1 - cos θ) a aᵀ + cos θ I.
    let sym = (rot + rot.transpose()) / 2.0 - Matrix3::identity() * cos;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut axis = sym.column(k).into_owned();
    let n = axis.norm();
    if n > 0.0 {
        axis /= n;
    }
    if sin > 1e-12 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}
