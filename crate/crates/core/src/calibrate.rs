//! Latent tolerance calibration from the scatter of pure-inlier hypotheses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{embed_homography, embed_rigid, linf, EmbeddingConfig, LatentVector};
use crate::error::{Error, Result};
use crate::geometry::MatchSet;
use crate::solvers::{fit_homography_4pt, fit_rigid_3pt, MinimalSample};
use crate::synth::{synth, InstanceSpec};

pub const DEFAULT_QUANTILE: f64 = 0.95;
pub const DEFAULT_HYPOTHESES: usize = 1000;

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Embeds `count` hypotheses fitted to minimal samples of the pure-inlier
/// version of `spec`.
pub fn inlier_hypotheses(spec: &InstanceSpec, embedding: &EmbeddingConfig, count: usize) -> Result<Vec<LatentVector>> {
    let pure = InstanceSpec {
        inlier_rate: 1.0,
        ..*spec
    };
    let inst = synth(&pure)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xCA1B_0000);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count + 1000 {
            return Err(Error::AllSamplesDegenerate(attempts as u64));
        }
        let n = inst.matches.len();
        let v = match &inst.matches {
            MatchSet::Homography(ms) => {
                let s = MinimalSample::draw(&mut rng, n, 4);
                let i = s.indices();
                fit_homography_4pt(&std::array::from_fn(|k| ms[i[k]])).and_then(|h| embed_homography(&h, embedding))
            }
            MatchSet::Rigid3d(ms) => {
                let s = MinimalSample::draw(&mut rng, n, 3);
                let i = s.indices();
                fit_rigid_3pt(&std::array::from_fn(|k| ms[i[k]])).map(|m| embed_rigid(&m, embedding))
            }
        };
        if let Ok(v) = v {
            out.push(v);
        }
    }
    Ok(out)
}

/// Recommended latent tolerance: the `q`-quantile of pairwise ℓ∞ distances
/// between embedded pure-inlier hypotheses.
pub fn calibrate_tolerance(spec: &InstanceSpec, embedding: &EmbeddingConfig, q: f64, hypotheses: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidProbability(format!("quantile = {q}")));
    }
    if hypotheses < 2 {
        return Err(Error::InvalidConfig("need at least two hypotheses".into()));
    }
    let hs = inlier_hypotheses(spec, embedding, hypotheses)?;
    let mut d = Vec::with_capacity(hs.len() * (hs.len() - 1) / 2);
    for (i, a) in hs.iter().enumerate() {
        for b in &hs[i + 1..] {
            d.push(linf(a.as_slice(), b.as_slice()));
        }
    }
    Ok(quantile(&mut d, q))
}
