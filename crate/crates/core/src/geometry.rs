//! Matches, transforms, residuals and inlier counting.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Magnitude below which the third homogeneous coordinate is treated as zero.
pub const EPS_PROJ: f64 = 1e-12;
/// Minimum |det| of a Frobenius-normalized homography.
pub const EPS_DET: f64 = 1e-14;
/// Below this magnitude `h[2][2]` does not decide the sign convention.
pub const EPS_NORM: f64 = 1e-12;
/// Tolerance on `RᵀR = I` (Frobenius) and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Homography,
    Rigid3d,
}

impl ProblemKind {
    /// Minimal sample size γ.
    pub fn sample_size(self) -> usize {
        match self {
            ProblemKind::Homography => 4,
            ProblemKind::Rigid3d => 3,
        }
    }

    /// Latent dimension λ.
    pub fn latent_dim(self) -> usize {
        match self {
            ProblemKind::Homography => 8,
            ProblemKind::Rigid3d => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Homography => "homography",
            ProblemKind::Rigid3d => "rigid3d",
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homography" => Ok(ProblemKind::Homography),
            "rigid3d" => Ok(ProblemKind::Rigid3d),
            other => Err(Error::InvalidConfig(format!("unknown problem '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match2D {
    pub p: Point2,
    pub q: Point2,
}

impl Match2D {
    pub fn new(p: Point2, q: Point2) -> Self {
        Self { p, q }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match3D {
    pub p: Point3,
    pub q: Point3,
}

impl Match3D {
    pub fn new(p: Point3, q: Point3) -> Self {
        Self { p, q }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|v| v.is_finite())
    }
}

/// A planar projective transform, stored with unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: Matrix3<f64>,
}

impl Homography {
    /// Normalizes `m` to unit Frobenius norm with `h[2][2] ≥ 0` (or, when
    /// `h[2][2]` vanishes, the first significant entry positive).
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite homography entry".into()));
        }
        let norm = m.norm();
        if norm == 0.0 {
            return Err(Error::InvalidModel("zero homography".into()));
        }
        let mut h = m / norm;
        let pivot = if h[(2, 2)].abs() > EPS_NORM {
            h[(2, 2)]
        } else {
            // row-major scan
            let mut first = 0.0;
            'outer: for r in 0..3 {
                for c in 0..3 {
                    if h[(r, c)].abs() > EPS_NORM {
                        first = h[(r, c)];
                        break 'outer;
                    }
                }
            }
            first
        };
        if pivot < 0.0 {
            h = -h;
        }
        if h.determinant().abs() <= EPS_DET {
            return Err(Error::InvalidModel("singular homography".into()));
        }
        Ok(Self { h })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is invertible")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let h = &self.h;
        [
            [h[(0, 0)], h[(0, 1)], h[(0, 2)]],
            [h[(1, 0)], h[(1, 1)], h[(1, 2)]],
            [h[(2, 0)], h[(2, 1)], h[(2, 2)]],
        ]
    }

    /// Dehomogenized image of `p`.
    #[inline]
    pub fn apply(&self, p: &Point2) -> Result<Point2> {
        let h = &self.h;
        let w = h[(2, 0)] * p.x + h[(2, 1)] * p.y + h[(2, 2)];
        if w.abs() <= EPS_PROJ {
            return Err(Error::HomographyAtInfinity);
        }
        let x = h[(0, 0)] * p.x + h[(0, 1)] * p.y + h[(0, 2)];
        let y = h[(1, 0)] * p.x + h[(1, 1)] * p.y + h[(1, 2)];
        Ok(Point2::new(x / w, y / w))
    }
}

/// A proper rigid motion `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("non-finite rigid motion".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho > ROTATION_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "rotation is not orthonormal (|RᵀR - I| = {ortho:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidModel(format!("det(R) = {det}")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// True when every translation component lies in `[-xi, xi]`.
    pub fn within_bound(&self, xi: f64) -> bool {
        self.translation.amax() <= xi
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

/// A transform that can score matches of one kind.
pub trait Transform {
    type Match;

    /// Euclidean distance between the match target and the image of its source.
    fn residual(&self, m: &Self::Match) -> Result<f64>;
}

impl Transform for Homography {
    type Match = Match2D;

    #[inline]
    fn residual(&self, m: &Match2D) -> Result<f64> {
        let mapped = self.apply(&m.p)?;
        Ok((m.q - mapped).norm())
    }
}

impl Transform for RigidMotion {
    type Match = Match3D;

    #[inline]
    fn residual(&self, m: &Match3D) -> Result<f64> {
        Ok((m.q - self.apply(&m.p)).norm())
    }
}

pub fn residual<T: Transform>(model: &T, m: &T::Match) -> Result<f64> {
    model.residual(m)
}

#[inline]
fn is_inlier<T: Transform>(model: &T, m: &T::Match, threshold: f64) -> bool {
    matches!(model.residual(m), Ok(r) if r <= threshold)
}

/// Number of matches with residual ≤ `threshold`, plus the mask marking them.
/// Matches mapped to infinity are outliers.
pub fn count_inliers<T: Transform>(
    model: &T,
    matches: &[T::Match],
    threshold: f64,
) -> (usize, Vec<bool>) {
    let mask: Vec<bool> = matches
        .iter()
        .map(|m| is_inlier(model, m, threshold))
        .collect();
    let count = mask.iter().filter(|&&b| b).count();
    (count, mask)
}

/// Count-only form of [`count_inliers`].
pub(crate) fn inlier_count<T: Transform>(model: &T, matches: &[T::Match], threshold: f64) -> usize {
    matches
        .iter()
        .filter(|m| is_inlier(model, m, threshold))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRecord", try_from = "ModelRecord")]
pub enum Model {
    Homography(Homography),
    Rigid(RigidMotion),
}

impl Model {
    pub fn kind(&self) -> ProblemKind {
        match self {
            Model::Homography(_) => ProblemKind::Homography,
            Model::Rigid(_) => ProblemKind::Rigid3d,
        }
    }

    /// Scores every match of `set`; a model of the wrong kind has no inliers.
    pub fn count_inliers(&self, set: &MatchSet, threshold: f64) -> (usize, Vec<bool>) {
        match (self, set) {
            (Model::Homography(h), MatchSet::Homography(ms)) => count_inliers(h, ms, threshold),
            (Model::Rigid(r), MatchSet::Rigid3d(ms)) => count_inliers(r, ms, threshold),
            _ => (0, vec![false; set.len()]),
        }
    }
}

/// Serialized form of [`Model`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelRecord {
    Homography {
        matrix: [[f64; 3]; 3],
    },
    Rigid3d {
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    },
}

impl From<Model> for ModelRecord {
    fn from(m: Model) -> Self {
        match m {
            Model::Homography(h) => ModelRecord::Homography { matrix: h.to_rows() },
            Model::Rigid(r) => {
                let rot = r.rotation();
                let t = r.translation();
                ModelRecord::Rigid3d {
                    rotation: std::array::from_fn(|i| std::array::from_fn(|j| rot[(i, j)])),
                    translation: [t.x, t.y, t.z],
                }
            }
        }
    }
}

impl TryFrom<ModelRecord> for Model {
    type Error = Error;

    fn try_from(r: ModelRecord) -> Result<Self> {
        match r {
            ModelRecord::Homography { matrix } => Ok(Model::Homography(Homography::from_rows(matrix)?)),
            ModelRecord::Rigid3d {
                rotation,
                translation,
            } => Ok(Model::Rigid(RigidMotion::new(
                Matrix3::from_fn(|i, j| rotation[i][j]),
                Vector3::from(translation),
            )?)),
        }
    }
}

/// An ordered set of putative matches of a single kind.
#[derive(Debug, Clone, PartialEq)]
pub enum MatchSet {
    Homography(Vec<Match2D>),
    Rigid3d(Vec<Match3D>),
}

impl MatchSet {
    pub fn kind(&self) -> ProblemKind {
        match self {
            MatchSet::Homography(_) => ProblemKind::Homography,
            MatchSet::Rigid3d(_) => ProblemKind::Rigid3d,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MatchSet::Homography(m) => m.len(),
            MatchSet::Rigid3d(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        match self {
            MatchSet::Homography(m) => m.iter().all(Match2D::is_finite),
            MatchSet::Rigid3d(m) => m.iter().all(Match3D::is_finite),
        }
    }
}
