//! Multi-scale inference fused with per-pixel confidence weights.
//!
//! Each scale's prediction is brought back to the native resolution, its
//! self-entropy map `H_j` is turned into a weight `(1 − H_j) / Σ_k (1 − H_k)`,
//! and the fused volume is the per-pixel weighted sum of the predictions.

use serde::{Deserialize, Serialize};

use crate::entropy::normalized_entropy;
use crate::error::{Error, Result};
use crate::tensor::{resize_image, resize_prob, ProbVolume, RgbImage, ScalarMap};

/// Anything that maps an image to a probability volume at the same resolution.
pub trait Segmenter {
    fn classes(&self) -> usize;
    fn predict(&self, img: &RgbImage) -> Result<ProbVolume>;
}

/// Upper and lower scale parameters; scales are `{1 + s_upper, 1, 1 − s_lower}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleSet {
    pub s_upper: f64,
    pub s_lower: f64,
}

impl Default for ScaleSet {
    fn default() -> Self {
        Self {
            s_upper: 0.25,
            s_lower: 0.25,
        }
    }
}

impl ScaleSet {
    pub fn new(s_upper: f64, s_lower: f64) -> Result<Self> {
        let s = Self { s_upper, s_lower };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_upper.is_finite() && self.s_upper >= 0.0) {
            return Err(Error::invalid(format!("s_upper must be >= 0, got {}", self.s_upper)));
        }
        if !(0.0..1.0).contains(&self.s_lower) {
            return Err(Error::invalid(format!(
                "s_lower must be in [0,1), got {}",
                self.s_lower
            )));
        }
        Ok(())
    }

    /// The four (s_lower, s_upper) settings of the scale-parameter ablation.
    pub fn ablation_grid() -> [ScaleSet; 4] {
        [(0.5, 0.5), (0.5, 0.25), (0.25, 0.25), (0.25, 0.5)].map(|(lower, upper)| ScaleSet {
            s_upper: upper,
            s_lower: lower,
        })
    }

    /// Scale factors in descending order.
    pub fn factors(&self) -> [f64; 3] {
        [1.0 + self.s_upper, 1.0, 1.0 - self.s_lower]
    }
}

/// Output size of `len` pixels scaled by `factor`.
pub fn scaled_len(len: usize, factor: f64) -> usize {
    ((len as f64 * factor).round() as usize).max(1)
}

/// One prediction per scale factor, each resized back to the image's resolution.
pub fn multi_scale_probs<S: Segmenter + ?Sized>(
    model: &S,
    img: &RgbImage,
    factors: &[f64],
) -> Result<Vec<ProbVolume>> {
    if factors.is_empty() {
        return Err(Error::empty("no scale factors"));
    }
    let (h, w) = (img.height(), img.width());
    let mut cached_native: Option<ProbVolume> = None;
    let mut out = Vec::with_capacity(factors.len());
    for &f in factors {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::invalid(format!("scale factor {f} must be positive")));
        }
        let (sh, sw) = (scaled_len(h, f), scaled_len(w, f));
        let p = if (sh, sw) == (h, w) {
            match &cached_native {
                Some(p) => p.clone(),
                None => {
                    let p = model.predict(img)?;
                    cached_native = Some(p.clone());
                    p
                }
            }
        } else {
            let scaled = resize_image(img, sh, sw)?;
            resize_prob(&model.predict(&scaled)?, h, w)?
        };
        out.push(p);
    }
    Ok(out)
}

/// Per-scale weight maps at native resolution; per-pixel weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMapSet {
    pub maps: Vec<ScalarMap>,
}

fn check_same_shape(probs: &[ProbVolume]) -> Result<(usize, usize, usize)> {
    let first = probs.first().ok_or_else(|| Error::empty("no probability volumes"))?;
    let shape = (first.height, first.width, first.classes);
    if probs
        .iter()
        .any(|p| (p.height, p.width, p.classes) != shape)
    {
        return Err(Error::invalid("probability volumes differ in shape"));
    }
    Ok(shape)
}

/// Confidence weights `(1 − H_j) / Σ_k (1 − H_k)` per pixel.
///
/// A pixel where every scale has maximal entropy gets equal weights.
pub fn entropy_weight_maps(probs: &[ProbVolume]) -> Result<WeightMapSet> {
    if probs.len() < 2 {
        return Err(Error::invalid("weight maps need at least two scales"));
    }
    let (h, w, c) = check_same_shape(probs)?;
    if c < 2 {
        return Err(Error::invalid("weight maps need at least two classes"));
    }
    let n = probs.len();
    let mut weights = vec![vec![0.0; h * w]; n];
    let mut conf = vec![0.0; n];
    for px in 0..h * w {
        for (j, p) in probs.iter().enumerate() {
            conf[j] = 1.0 - normalized_entropy(&p.data[px * c..(px + 1) * c]);
        }
        let total: f64 = conf.iter().sum();
        for j in 0..n {
            weights[j][px] = if total > 0.0 {
                conf[j] / total
            } else {
                1.0 / n as f64
            };
        }
    }
    let maps = weights
        .into_iter()
        .map(|data| ScalarMap::new(h, w, data))
        .collect::<Result<_>>()?;
    Ok(WeightMapSet { maps })
}

/// Per-pixel weighted sum `Σ_j w_j · P_j`, renormalized to sum exactly to 1.
pub fn fuse(probs: &[ProbVolume], weights: &WeightMapSet) -> Result<ProbVolume> {
    let (h, w, c) = check_same_shape(probs)?;
    if weights.maps.len() != probs.len() {
        return Err(Error::invalid(format!(
            "{} weight maps for {} volumes",
            weights.maps.len(),
            probs.len()
        )));
    }
    if weights.maps.iter().any(|m| (m.height, m.width) != (h, w)) {
        return Err(Error::invalid("weight map dimensions differ from volumes"));
    }
    let mut data = vec![0.0; h * w * c];
    for (p, wm) in probs.iter().zip(&weights.maps) {
        for ((out, dist), &wt) in data.chunks_exact_mut(c).zip(p.pixels()).zip(&wm.data) {
            for (o, &v) in out.iter_mut().zip(dist) {
                *o += wt * v;
            }
        }
    }
    for dist in data.chunks_exact_mut(c) {
        let sum: f64 = dist.iter().sum();
        for v in dist.iter_mut() {
            *v = (*v / sum).clamp(0.0, 1.0);
        }
    }
    ProbVolume::new(h, w, c, data)
}

/// Full scale-invariant prediction: multi-scale inference, entropy weights, fusion.
///
/// With a single factor the prediction at that scale is returned as is.
pub fn fused_prediction<S: Segmenter + ?Sized>(
    model: &S,
    img: &RgbImage,
    factors: &[f64],
) -> Result<ProbVolume> {
    let mut probs = multi_scale_probs(model, img, factors)?;
    if probs.len() == 1 {
        return Ok(probs.pop().unwrap());
    }
    let weights = entropy_weight_maps(&probs)?;
    fuse(&probs, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, spread: f64) -> ProbVolume {
        let logits: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-spread..spread)).collect();
        ProbVolume::from_logits(h, w, c, &logits).unwrap()
    }

    #[test]
    fn factor_order() {
        assert_eq!(ScaleSet::default().factors(), [1.25, 1.0, 0.75]);
        assert!(ScaleSet::new(0.1, 1.0).is_err());
        assert!(ScaleSet::new(-0.1, 0.2).is_err());
        assert_eq!(ScaleSet::ablation_grid()[2], ScaleSet::default());
    }

    #[test]
    fn equally_confident_scales_get_equal_weights() {
        let p = ProbVolume::constant(2, 2, &[0.6, 0.3, 0.1]).unwrap();
        let w = entropy_weight_maps(&[p.clone(), p.clone(), p]).unwrap();
        for m in &w.maps {
            assert!(m.data.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn hand_weights() {
        // Entropies 0, 0.5 and 1 at the single pixel.
        let certain = ProbVolume::constant(1, 1, &[1.0, 0.0]).unwrap();
        let uniform = ProbVolume::uniform(1, 1, 2).unwrap();
        // Binary distribution with normalized entropy 0.5 (found by bisection).
        let (mut lo, mut hi) = (0.5, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normalized_entropy(&[mid, 1.0 - mid]) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let half = ProbVolume::constant(1, 1, &[lo, 1.0 - lo]).unwrap();
        let w = entropy_weight_maps(&[certain, half, uniform]).unwrap();
        let got: Vec<f64> = w.maps.iter().map(|m| m.data[0]).collect();
        for (g, e) in got.iter().zip([2.0 / 3.0, 1.0 / 3.0, 0.0]) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn all_uniform_falls_back_to_mean() {
        let u = ProbVolume::uniform(2, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = entropy_weight_maps(&[u.clone(), u.clone()]).unwrap();
        assert!(w.maps.iter().all(|m| m.data.iter().all(|&v| v == 0.5)));
        // Fallback weights applied to arbitrary volumes give their mean.
        let a = random_volume(&mut rng, 2, 3, 4, 2.0);
        let b = random_volume(&mut rng, 2, 3, 4, 2.0);
        let fused = fuse(&[a.clone(), b.clone()], &w).unwrap();
        for ((f, x), y) in fused.data.iter().zip(&a.data).zip(&b.data) {
            assert!((f - 0.5 * (x + y)).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_fusion() {
        let p1 = ProbVolume::constant(1, 1, &[0.8, 0.2]).unwrap();
        let p2 = ProbVolume::constant(1, 1, &[0.4, 0.6]).unwrap();
        let w = WeightMapSet {
            maps: vec![
                ScalarMap::filled(1, 1, 0.75).unwrap(),
                ScalarMap::filled(1, 1, 0.25).unwrap(),
            ],
        };
        let f = fuse(&[p1.clone(), p2.clone()], &w).unwrap();
        assert!((f.data[0] - 0.7).abs() < 1e-15 && (f.data[1] - 0.3).abs() < 1e-15);

        let first_only = WeightMapSet {
            maps: vec![
                ScalarMap::filled(1, 1, 1.0).unwrap(),
                ScalarMap::filled(1, 1, 0.0).unwrap(),
            ],
        };
        assert_eq!(fuse(&[p1.clone(), p2], &first_only).unwrap(), p1);
    }

    #[test]
    fn identical_volumes_fuse_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_volume(&mut rng, 3, 3, 3, 2.0);
        let vols = [p.clone(), p.clone(), p.clone()];
        let f = fuse(&vols, &entropy_weight_maps(&vols).unwrap()).unwrap();
        for (a, b) in f.data.iter().zip(&p.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = ProbVolume::uniform(2, 2, 3).unwrap();
        let b = ProbVolume::uniform(2, 3, 3).unwrap();
        assert!(entropy_weight_maps(&[a.clone(), b.clone()]).is_err());
        let w = entropy_weight_maps(&[a.clone(), a.clone()]).unwrap();
        assert!(matches!(fuse(&[a, b], &w), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn weights_and_fusion_invariants(seed in any::<u64>(), n in 2usize..4, c in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vols: Vec<_> = (0..n).map(|_| random_volume(&mut rng, 4, 5, c, 4.0)).collect();
            let w = entropy_weight_maps(&vols).unwrap();
            let hs: Vec<Vec<f64>> = vols.iter()
                .map(|v| v.pixels().map(normalized_entropy).collect()).collect();
            for px in 0..20 {
                let sum: f64 = w.maps.iter().map(|m| m.data[px]).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6);
                for a in 0..n {
                    prop_assert!((0.0..=1.0).contains(&w.maps[a].data[px]));
                    for b in 0..n {
                        if hs[a][px] < hs[b][px] {
                            prop_assert!(w.maps[a].data[px] > w.maps[b].data[px]);
                        }
                    }
                }
            }
            let fused = fuse(&vols, &w).unwrap();
            for px in 0..20 {
                for k in 0..c {
                    let vals = vols.iter().map(|v| v.data[px * c + k]);
                    let lo = vals.clone().fold(f64::INFINITY, f64::min);
                    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                    let f = fused.data[px * c + k];
                    prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
                }
            }
        }
    }
}
