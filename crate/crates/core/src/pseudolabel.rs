//! Class-balanced pseudo-label selection over a whole target set.
//!
//! Selection is two-pass. Pass one reduces every image to its per-pixel
//! argmax class and winning score ([`ScoreSummary`]) and pools the scores per
//! class across the set; each class then gets a threshold at its
//! `⌈portion · N_c⌉`-th highest score. Pass two keeps the pixels whose score
//! reaches the threshold of their class.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fused_prediction, Segmenter};
use crate::tensor::{
    argmax, resize_labels_nearest, resize_scalar, LabelMap, ProbVolume, RgbImage, ScalarMap,
    IGNORE,
};

/// Pseudo-labels plus the mask `rho` of pixels that received one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PseudoLabelSet {
    labels: LabelMap,
    rho: Vec<bool>,
}

impl PseudoLabelSet {
    /// `rho` is derived from the labels: set exactly where a label is present.
    pub fn from_labels(labels: LabelMap) -> Self {
        let rho = labels.data.iter().map(|&v| v != IGNORE).collect();
        Self { labels, rho }
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Ok(Self::from_labels(LabelMap::filled(height, width, IGNORE)?))
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn rho(&self) -> &[bool] {
        &self.rho
    }

    pub fn selected_count(&self) -> usize {
        self.rho.iter().filter(|&&r| r).count()
    }

    /// `rho` as an 8-bit mask (0 / 255).
    pub fn rho_mask(&self) -> Vec<u8> {
        self.rho.iter().map(|&r| if r { 255 } else { 0 }).collect()
    }
}

/// Per-round selection portion: `initial + round · increment`, capped at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSchedule {
    pub initial_portion: f64,
    pub increment: f64,
    pub rounds: usize,
    pub epochs_per_round: usize,
}

impl Default for SelectionSchedule {
    fn default() -> Self {
        Self {
            initial_portion: 0.15,
            increment: 0.05,
            rounds: 4,
            epochs_per_round: 2,
        }
    }
}

impl SelectionSchedule {
    pub fn portion(&self, round: usize) -> f64 {
        (self.initial_portion + round as f64 * self.increment).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_portion > 0.0 && self.initial_portion <= 1.0) {
            return Err(Error::invalid("initial_portion must be in (0,1]"));
        }
        if !(self.increment >= 0.0 && self.increment.is_finite()) {
            return Err(Error::invalid("increment must be >= 0"));
        }
        Ok(())
    }
}

/// Per-class location frequency from source labels, each map scaled to max 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPrior {
    pub classes: usize,
    pub maps: Vec<ScalarMap>,
    pub smoothing_sigma: f64,
}

/// Mass-preserving 1D Gaussian spread: every source sample's mass is
/// distributed over the in-bounds window with weights normalized to 1.
fn spread_1d(src: &[f64], dst: &mut [f64], kernel: &[f64]) {
    let n = src.len();
    let r = kernel.len() - 1;
    for (i, &v) in src.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(n - 1);
        let norm: f64 = (lo..=hi).map(|j| kernel[i.abs_diff(j)]).sum();
        for j in lo..=hi {
            dst[j] += v * kernel[i.abs_diff(j)] / norm;
        }
    }
}

/// Half Gaussian kernel `exp(−d²/2σ²)` for `d = 0..=⌈3σ⌉`.
fn half_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as usize;
    (0..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable mass-preserving Gaussian smoothing of an `h × w` plane.
pub(crate) fn smooth_plane(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = half_kernel(sigma);
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        spread_1d(&data[y * w..(y + 1) * w], &mut rows[y * w..(y + 1) * w], &kernel);
    }
    let mut out = vec![0.0; h * w];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        col_out.iter_mut().for_each(|v| *v = 0.0);
        spread_1d(&col, &mut col_out, &kernel);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}

/// Counts class occurrences per location over `source_labels` (resized to
/// `ref_h × ref_w`), smooths them with a Gaussian of `sigma` pixels and
/// divides each class map by its maximum. Classes never seen stay all-zero.
pub fn compute_spatial_priors(
    source_labels: &[LabelMap],
    classes: usize,
    ref_h: usize,
    ref_w: usize,
    sigma: f64,
) -> Result<SpatialPrior> {
    if source_labels.is_empty() {
        return Err(Error::empty("no source labels for spatial priors"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let n = ref_h * ref_w;
    let mut counts = vec![vec![0.0; n]; classes];
    for labels in source_labels {
        let l = resize_labels_nearest(labels, ref_h, ref_w)?;
        for (px, &v) in l.data.iter().enumerate() {
            if v != IGNORE {
                let c = v as usize;
                if c >= classes {
                    return Err(Error::invalid(format!("label {v} out of range for {classes} classes")));
                }
                counts[c][px] += 1.0;
            }
        }
    }
    let maps = counts
        .into_iter()
        .map(|plane| {
            let mut smoothed = smooth_plane(&plane, ref_h, ref_w, sigma);
            let max = smoothed.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                smoothed.iter_mut().for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
            }
            ScalarMap::new(ref_h, ref_w, smoothed)
        })
        .collect::<Result<_>>()?;
    Ok(SpatialPrior {
        classes,
        maps,
        smoothing_sigma: sigma,
    })
}

/// Per-pixel class scores used only for ranking (not normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVolume {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl From<ProbVolume> for ScoreVolume {
    fn from(p: ProbVolume) -> Self {
        Self {
            height: p.height,
            width: p.width,
            classes: p.classes,
            data: p.data,
        }
    }
}

impl ScoreVolume {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * classes {
            return Err(Error::invalid("score volume length mismatch"));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }
}

/// Multiplies each class's probabilities by its prior resized to `p`'s resolution.
pub fn apply_spatial_priors(p: &ProbVolume, sp: &SpatialPrior) -> Result<ScoreVolume> {
    if sp.classes != p.classes || sp.maps.len() != p.classes {
        return Err(Error::invalid(format!(
            "prior has {} classes, volume has {}",
            sp.classes, p.classes
        )));
    }
    let resized = sp
        .maps
        .iter()
        .map(|m| resize_scalar(m, p.height, p.width))
        .collect::<Result<Vec<_>>>()?;
    let mut data = p.data.clone();
    for (px, dist) in data.chunks_exact_mut(p.classes).enumerate() {
        for (c, v) in dist.iter_mut().enumerate() {
            *v *= resized[c].data[px];
        }
    }
    Ok(ScoreVolume {
        height: p.height,
        width: p.width,
        classes: p.classes,
        data,
    })
}

/// Per-pixel argmax class and its score; everything selection needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

pub fn summarize(s: &ScoreVolume) -> ScoreSummary {
    let (labels, scores) = s
        .data
        .chunks_exact(s.classes)
        .map(|d| {
            let c = argmax(d);
            (c as u8, d[c])
        })
        .unzip();
    ScoreSummary {
        height: s.height,
        width: s.width,
        labels,
        scores,
    }
}

/// Rank (1-based) of the threshold candidate among `n` sorted scores.
pub fn threshold_rank(portion: f64, n: usize) -> usize {
    // The epsilon keeps products such as 0.3 · 10 from rounding up to 4.
    let k = (portion * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

fn check_portion(portion: f64) -> Result<()> {
    if !(portion > 0.0 && portion <= 1.0) {
        return Err(Error::invalid(format!("portion must be in (0,1], got {portion}")));
    }
    Ok(())
}

/// Per-class thresholds from a whole set of summaries.
///
/// Candidates of class `c` are the pixels whose argmax is `c` with a positive
/// score. Classes without candidates get `+∞`.
pub fn thresholds_from_summaries(
    summaries: &[ScoreSummary],
    classes: usize,
    portion: f64,
) -> Result<Vec<f64>> {
    check_portion(portion)?;
    if summaries.is_empty() {
        return Err(Error::empty("no score volumes"));
    }
    let mut pools: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for s in summaries {
        for (&c, &v) in s.labels.iter().zip(&s.scores) {
            if v > 0.0 {
                pools[c as usize].push(v);
            }
        }
    }
    Ok(pools
        .into_iter()
        .map(|mut pool| {
            if pool.is_empty() {
                return f64::INFINITY;
            }
            pool.sort_unstable_by(|a, b| b.total_cmp(a));
            pool[threshold_rank(portion, pool.len()) - 1]
        })
        .collect())
}

/// Per-class thresholds over every volume of the target set.
pub fn class_thresholds(score_volumes: &[ScoreVolume], portion: f64) -> Result<Vec<f64>> {
    let classes = score_volumes
        .first()
        .ok_or_else(|| Error::empty("no score volumes"))?
        .classes;
    if score_volumes.iter().any(|s| s.classes != classes) {
        return Err(Error::invalid("score volumes differ in class count"));
    }
    let summaries: Vec<_> = score_volumes.iter().map(summarize).collect();
    thresholds_from_summaries(&summaries, classes, portion)
}

pub fn select_from_summary(s: &ScoreSummary, thresholds: &[f64]) -> PseudoLabelSet {
    let data = s
        .labels
        .iter()
        .zip(&s.scores)
        .map(|(&c, &v)| if v >= thresholds[c as usize] { c } else { IGNORE })
        .collect();
    PseudoLabelSet::from_labels(LabelMap {
        height: s.height,
        width: s.width,
        data,
    })
}

/// Labels each pixel with its argmax class iff the winning score reaches that
/// class's threshold; ties in the argmax go to the lowest class index.
pub fn select_pseudo_labels(score: &ScoreVolume, thresholds: &[f64]) -> Result<PseudoLabelSet> {
    if thresholds.len() != score.classes {
        return Err(Error::invalid(format!(
            "{} thresholds for {} classes",
            thresholds.len(),
            score.classes
        )));
    }
    Ok(select_from_summary(&summarize(score), thresholds))
}

/// Per-class candidate and selection counts of one selection round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    pub candidates: Vec<u64>,
    pub selected: Vec<u64>,
}

impl Coverage {
    pub fn fraction(&self, class: usize) -> f64 {
        match self.candidates[class] {
            0 => 0.0,
            n => self.selected[class] as f64 / n as f64,
        }
    }

    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("class,candidates,selected,fraction\n");
        for c in 0..self.candidates.len() {
            let name = class_names.get(c).copied().unwrap_or("?");
            writeln!(
                out,
                "{name},{},{},{}",
                self.candidates[c],
                self.selected[c],
                self.fraction(c)
            )
            .unwrap();
        }
        out
    }
}

/// Output of one selection round over the target set.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRound {
    pub portion: f64,
    pub thresholds: Vec<f64>,
    pub labels: Vec<PseudoLabelSet>,
    pub coverage: Coverage,
}

/// Pass two: apply thresholds to every summary and tally coverage.
pub fn select_round(
    summaries: &[ScoreSummary],
    classes: usize,
    portion: f64,
) -> Result<SelectionRound> {
    let thresholds = thresholds_from_summaries(summaries, classes, portion)?;
    let labels: Vec<_> = summaries
        .par_iter()
        .map(|s| select_from_summary(s, &thresholds))
        .collect();
    let mut coverage = Coverage {
        candidates: vec![0; classes],
        selected: vec![0; classes],
    };
    for (s, pl) in summaries.iter().zip(&labels) {
        for ((&c, &v), &r) in s.labels.iter().zip(&s.scores).zip(pl.rho()) {
            if v > 0.0 {
                coverage.candidates[c as usize] += 1;
            }
            if r {
                coverage.selected[c as usize] += 1;
            }
        }
    }
    Ok(SelectionRound {
        portion,
        thresholds,
        labels,
        coverage,
    })
}

/// Ranking scores for a fused prediction, optionally rescaled by spatial priors.
pub fn score_volume(p: ProbVolume, priors: Option<&SpatialPrior>) -> Result<ScoreVolume> {
    match priors {
        Some(sp) => apply_spatial_priors(&p, sp),
        None => Ok(p.into()),
    }
}

/// Full two-pass pseudo-labelling of a target set with a frozen model.
pub fn generate_pseudo_labels<S: Segmenter + Sync + ?Sized>(
    model: &S,
    images: &[RgbImage],
    factors: &[f64],
    portion: f64,
    priors: Option<&SpatialPrior>,
) -> Result<SelectionRound> {
    if images.is_empty() {
        return Err(Error::empty("no target images"));
    }
    check_portion(portion)?;
    let summaries = images
        .par_iter()
        .map(|img| {
            let p = fused_prediction(model, img, factors)?;
            Ok(summarize(&score_volume(p, priors)?))
        })
        .collect::<Result<Vec<_>>>()?;
    select_round(&summaries, model.classes(), portion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scores_1d(values: &[f64], classes: usize, class: usize) -> ScoreVolume {
        // One pixel per value, `class` wins with the given score.
        let mut data = Vec::new();
        for &v in values {
            let mut d = vec![0.0; classes];
            d[class] = v;
            data.extend(d);
        }
        ScoreVolume::new(1, values.len(), classes, data).unwrap()
    }

    #[test]
    fn schedule_portions() {
        let s = SelectionSchedule::default();
        let p: Vec<f64> = (0..4).map(|r| s.portion(r)).collect();
        for (a, b) in p.iter().zip([0.15, 0.2, 0.25, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s.portion(100), 1.0);
    }

    #[test]
    fn threshold_hand_case() {
        let values: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = class_thresholds(&[scores_1d(&values, 2, 1)], 0.3).unwrap();
        assert_eq!(t[1], 0.8);
        assert_eq!(t[0], f64::INFINITY);
        let pl = select_pseudo_labels(&scores_1d(&values, 2, 1), &t).unwrap();
        assert_eq!(pl.selected_count(), 3);
        assert_eq!(&pl.labels().data[7..], &[1, 1, 1]);
    }

    #[test]
    fn full_portion_takes_minimum() {
        let values = [0.4, 0.9, 0.55];
        let t = class_thresholds(&[scores_1d(&values, 3, 2)], 1.0).unwrap();
        assert_eq!(t[2], 0.4);
        let pl = select_pseudo_labels(&scores_1d(&values, 3, 2), &t).unwrap();
        assert_eq!(pl.selected_count(), 3);
    }

    #[test]
    fn extreme_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = ProbVolume::from_logits(4, 4, 3, &logits).unwrap();
        let argmax = p.argmax();
        let s: ScoreVolume = p.into();
        let all = select_pseudo_labels(&s, &[0.0; 3]).unwrap();
        assert_eq!(all.labels(), &argmax);
        assert!(all.rho().iter().all(|&r| r));
        let none = select_pseudo_labels(&s, &[f64::INFINITY; 3]).unwrap();
        assert_eq!(none.selected_count(), 0);
        assert!(none.labels().data.iter().all(|&v| v == IGNORE));
        assert!(select_pseudo_labels(&s, &[0.0; 2]).is_err());
    }

    #[test]
    fn invalid_portion_and_empty_set() {
        let s = scores_1d(&[0.5], 2, 0);
        assert!(class_thresholds(std::slice::from_ref(&s), 0.0).is_err());
        assert!(class_thresholds(&[s], 1.5).is_err());
        assert!(matches!(class_thresholds(&[], 0.5), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn spatial_prior_basic_cases() {
        let all_road = LabelMap::filled(4, 6, 2).unwrap();
        let sp = compute_spatial_priors(&[all_road], 4, 4, 6, 0.0).unwrap();
        assert!(sp.maps[2].data.iter().all(|&v| v == 1.0));
        for c in [0, 1, 3] {
            assert!(sp.maps[c].data.iter().all(|&v| v == 0.0));
        }

        let mut data = vec![1u8; 8 * 4];
        data[16..].iter_mut().for_each(|v| *v = 0);
        let top = LabelMap::new(8, 4, data).unwrap();
        let sp = compute_spatial_priors(&[top], 2, 8, 4, 0.0).unwrap();
        assert!(sp.maps[1].data[..16].iter().all(|&v| v == 1.0));
        assert!(sp.maps[1].data[16..].iter().all(|&v| v == 0.0));

        assert!(matches!(
            compute_spatial_priors(&[], 2, 4, 4, 1.0),
            Err(Error::EmptyInput(_))
        ));
    }

    /// Direct 2D scatter with a per-source normalized Gaussian window.
    fn smooth_oracle(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as i64;
        let mut out = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let v = data[(y as usize) * w + x as usize];
                let mut window = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (ty, tx) = (y + dy, x + dx);
                        if ty >= 0 && ty < h as i64 && tx >= 0 && tx < w as i64 {
                            let g = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                            window.push((ty as usize * w + tx as usize, g));
                        }
                    }
                }
                let norm: f64 = window.iter().map(|(_, g)| g).sum();
                for (i, g) in window {
                    out[i] += v * g / norm;
                }
            }
        }
        out
    }

    #[test]
    fn smoothing_matches_direct_scatter_and_keeps_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w, sigma) in &[(9, 13, 1.5), (12, 7, 3.0), (5, 5, 0.7)] {
            let data: Vec<f64> = (0..h * w).map(|_| rng.random_range(0..4) as f64).collect();
            let fast = smooth_plane(&data, h, w, sigma);
            let slow = smooth_oracle(&data, h, w, sigma);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
            let before: f64 = data.iter().sum();
            let after: f64 = fast.iter().sum();
            assert!((before - after).abs() < 1e-6);
        }
    }

    #[test]
    fn priors_rescale_scores() {
        let p = ProbVolume::constant(2, 2, &[0.6, 0.4]).unwrap();
        let ones = SpatialPrior {
            classes: 2,
            maps: vec![ScalarMap::filled(3, 3, 1.0).unwrap(); 2],
            smoothing_sigma: 0.0,
        };
        assert_eq!(apply_spatial_priors(&p, &ones).unwrap().data, p.data);

        let sp = SpatialPrior {
            classes: 2,
            maps: vec![
                ScalarMap::filled(3, 3, 0.5).unwrap(),
                ScalarMap::filled(3, 3, 1.0).unwrap(),
            ],
            smoothing_sigma: 0.0,
        };
        let s = apply_spatial_priors(&p, &sp).unwrap();
        assert!((s.data[0] - 0.3).abs() < 1e-15 && (s.data[1] - 0.4).abs() < 1e-15);
        assert_eq!(summarize(&s).labels[0], 1);

        let zero = SpatialPrior {
            classes: 2,
            maps: vec![
                ScalarMap::filled(3, 3, 0.0).unwrap(),
                ScalarMap::filled(3, 3, 1.0).unwrap(),
            ],
            smoothing_sigma: 0.0,
        };
        let p = ProbVolume::constant(2, 2, &[0.99, 0.01]).unwrap();
        let s = apply_spatial_priors(&p, &zero).unwrap();
        let t = class_thresholds(std::slice::from_ref(&s), 1.0).unwrap();
        let pl = select_pseudo_labels(&s, &t).unwrap();
        assert!(pl.labels().data.iter().all(|&v| v != 0));

        let three = ProbVolume::uniform(2, 2, 3).unwrap();
        assert!(apply_spatial_priors(&three, &sp).is_err());
    }

    #[test]
    fn rho_matches_labels() {
        let pl = PseudoLabelSet::from_labels(LabelMap::new(1, 3, vec![2, IGNORE, 0]).unwrap());
        assert_eq!(pl.rho(), &[true, false, true]);
        assert_eq!(pl.rho_mask(), vec![255, 0, 255]);
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Vec<ScoreVolume> {
        (0..n)
            .map(|_| {
                // Quantized scores force ties.
                let data = (0..h * w * c).map(|_| rng.random_range(1..40) as f64 / 40.0).collect();
                ScoreVolume::new(h, w, c, data).unwrap()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn selection_invariants(seed in any::<u64>(), p1 in 0.01f64..=1.0, p2 in 0.01f64..=1.0,
                                scale in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vols = random_scores(&mut rng, 3, 5, 6, 4);
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let t_lo = class_thresholds(&vols, lo).unwrap();
            let t_hi = class_thresholds(&vols, hi).unwrap();
            let scaled: Vec<_> = vols.iter().map(|v| ScoreVolume {
                data: v.data.iter().map(|x| x * scale).collect(), ..v.clone()
            }).collect();
            let t_scaled = class_thresholds(&scaled, lo).unwrap();
            for (v, s) in vols.iter().zip(&scaled) {
                let a = select_pseudo_labels(v, &t_lo).unwrap();
                let b = select_pseudo_labels(v, &t_hi).unwrap();
                for (ra, rb) in a.rho().iter().zip(b.rho()) {
                    prop_assert!(!ra || *rb);
                }
                prop_assert_eq!(&a, &select_pseudo_labels(v, &t_lo).unwrap());
                prop_assert_eq!(&a, &select_pseudo_labels(s, &t_scaled).unwrap());
                for (l, r) in a.labels().data.iter().zip(a.rho()) {
                    prop_assert_eq!(*l != IGNORE, *r);
                }
            }
        }
    }
}
