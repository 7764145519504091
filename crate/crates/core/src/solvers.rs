//! Minimal-sample solvers: normalized 4-point DLT for homographies and a
//! closed-form three-point rigid alignment, with collinearity screening.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Homography, Match2D, Match3D, Point2, Point3, RigidMotion};

/// Relative collinearity threshold: a triple is degenerate when its height over
/// the longest side is below `EPS_COLL` times that side.
pub const EPS_COLL: f64 = 1e-3;

/// Ratio of the second-smallest to the largest singular value of the DLT
/// system below which the null space is not one-dimensional.
const DLT_RANK_TOLERANCE: f64 = 1e-10;

const MAX_SAMPLE: usize = 4;

/// Distinct match indices forming one minimal sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinimalSample {
    indices: [usize; MAX_SAMPLE],
    len: usize,
}

impl MinimalSample {
    pub fn new(indices: &[usize], set_len: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() > MAX_SAMPLE {
            return Err(Error::InvalidConfig(format!(
                "sample size {} not in 1..={MAX_SAMPLE}",
                indices.len()
            )));
        }
        for (i, &a) in indices.iter().enumerate() {
            if a >= set_len {
                return Err(Error::InvalidConfig(format!("index {a} out of range {set_len}")));
            }
            if indices[..i].contains(&a) {
                return Err(Error::InvalidConfig(format!("duplicate index {a}")));
            }
        }
        let mut arr = [0; MAX_SAMPLE];
        arr[..indices.len()].copy_from_slice(indices);
        Ok(Self {
            indices: arr,
            len: indices.len(),
        })
    }

    /// Uniformly random `size` distinct indices in `0..set_len`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, set_len: usize, size: usize) -> Self {
        assert!((1..=MAX_SAMPLE).contains(&size) && size <= set_len);
        let mut arr = [0; MAX_SAMPLE];
        let mut k = 0;
        while k < size {
            let idx = rng.random_range(0..set_len);
            if !arr[..k].contains(&idx) {
                arr[k] = idx;
                k += 1;
            }
        }
        Self { indices: arr, len: size }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn collinear_2d(a: &Point2, b: &Point2, c: &Point2, eps: f64) -> bool {
    let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
    if longest == 0.0 {
        return true;
    }
    let u = b - a;
    let v = c - a;
    let twice_area = (u.x * v.y - u.y * v.x).abs();
    twice_area < eps * longest * longest
}

fn collinear_3d(a: &Point3, b: &Point3, c: &Point3, eps: f64) -> bool {
    let longest = (b - a).norm().max((c - a).norm()).max((c - b).norm());
    if longest == 0.0 {
        return true;
    }
    let twice_area = (b - a).cross(&(c - a)).norm();
    twice_area < eps * longest * longest
}

fn any_triple_collinear(pts: &[Point2; 4], eps: f64) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| collinear_2d(&pts[t[0]], &pts[t[1]], &pts[t[2]], eps))
}

pub fn is_degenerate_homography_with(sample: &[Match2D; 4], eps: f64) -> bool {
    let src = sample.map(|m| m.p);
    let dst = sample.map(|m| m.q);
    any_triple_collinear(&src, eps) || any_triple_collinear(&dst, eps)
}

/// True when three of the four source or target points are (near) collinear
/// or coincide.
pub fn is_degenerate_homography(sample: &[Match2D; 4]) -> bool {
    is_degenerate_homography_with(sample, EPS_COLL)
}

pub fn is_degenerate_rigid_with(sample: &[Match3D; 3], eps: f64) -> bool {
    collinear_3d(&sample[0].p, &sample[1].p, &sample[2].p, eps)
}

/// True when the three source points are (near) collinear or coincide.
pub fn is_degenerate_rigid(sample: &[Match3D; 3]) -> bool {
    is_degenerate_rigid_with(sample, EPS_COLL)
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley(points: &[Point2; 4]) -> Matrix3<f64> {
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords.push(0.0)) / 4.0;
    let (cx, cy) = (centroid.x, centroid.y);
    let mean = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform(t: &Matrix3<f64>, p: &Point2) -> Point2 {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Homography mapping each sample source point onto its target, via the
/// Hartley-normalized direct linear transform.
pub fn fit_homography_4pt(sample: &[Match2D; 4]) -> Result<Homography> {
    let src = sample.map(|m| m.p);
    let dst = sample.map(|m| m.q);
    let t_src = hartley(&src);
    let t_dst = hartley(&dst);

    // 8 equations in 9 unknowns; the zero ninth row keeps the SVD square.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let p = transform(&t_src, &src[i]);
        let q = transform(&t_dst, &dst[i]);
        let (x, y, u, v) = (p.x, p.y, q.x, q.y);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateSample)?;
    let sv = svd.singular_values;
    let mut order: [usize; 9] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, second, largest) = (order[0], order[1], order[8]);
    if !(sv[largest] > 0.0) || sv[second] < DLT_RANK_TOLERANCE * sv[largest] {
        return Err(Error::DegenerateSample);
    }
    let h = v_t.row(smallest);
    let normalized = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(Error::DegenerateSample)?;
    Homography::new(t_dst_inv * normalized * t_src).map_err(|_| Error::DegenerateSample)
}

/// Least-squares rigid motion over three pairs with `det R = +1`, the same
/// optimum as Arun's SVD method with reflection correction. For three points
/// the covariance has rank two, so the rotation is built in closed form from
/// the triangle normals and a planar angle instead of a decomposition.
pub fn fit_rigid_3pt(sample: &[Match3D; 3]) -> Result<RigidMotion> {
    if is_degenerate_rigid(sample) {
        return Err(Error::DegenerateSample);
    }
    let src_c = sample.iter().map(|m| m.p.coords).sum::<Vector3<f64>>() / 3.0;
    let dst_c = sample.iter().map(|m| m.q.coords).sum::<Vector3<f64>>() / 3.0;
    let src: [Vector3<f64>; 3] = std::array::from_fn(|i| sample[i].p.coords - src_c);
    let dst: [Vector3<f64>; 3] = std::array::from_fn(|i| sample[i].q.coords - dst_c);
    let (Some(fp), Some(fq)) = (plane_frame(&src), plane_frame(&dst)) else {
        return Err(Error::DegenerateSample);
    };
    // The optimal rotation maps the source normal to plus or minus the
    // target normal; each case is a planar Procrustes problem.
    let mut best: Option<(f64, Matrix3<f64>)> = None;
    for mirror in [1.0, -1.0] {
        let fq = Matrix3::from_columns(&[fq.column(0).into_owned(), fq.column(1) * mirror, fq.column(2) * mirror]);
        let (mut dot, mut cross) = (0.0, 0.0);
        for (a, b) in src.iter().zip(&dst) {
            let a = fp.tr_mul(a);
            let b = fq.tr_mul(b);
            dot += a.x * b.x + a.y * b.y;
            cross += a.x * b.y - a.y * b.x;
        }
        let score = dot.hypot(cross);
        if best.is_none_or(|(s, _)| score > s) {
            let theta = cross.atan2(dot);
            let (sin, cos) = theta.sin_cos();
            let rz = Matrix3::new(cos, -sin, 0.0, sin, cos, 0.0, 0.0, 0.0, 1.0);
            best = Some((score, fq * rz * fp.transpose()));
        }
    }
    let rotation = best.expect("two candidates").1;
    let translation = dst_c - rotation * src_c;
    RigidMotion::new(rotation, translation).map_err(|_| Error::DegenerateSample)
}

/// Orthonormal frame whose third axis is the normal of a centered triangle.
fn plane_frame(pts: &[Vector3<f64>; 3]) -> Option<Matrix3<f64>> {
    let normal = (pts[1] - pts[0]).cross(&(pts[2] - pts[0]));
    let longest = pts.iter().max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    if normal.norm() == 0.0 || longest.norm() == 0.0 {
        return None;
    }
    let n = normal.normalize();
    let e1 = (longest - n * n.dot(longest)).normalize();
    Some(Matrix3::from_columns(&[e1, n.cross(&e1), n]))
}
