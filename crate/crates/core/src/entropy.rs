//! Normalized per-pixel Shannon entropy and pooled entropy statistics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, ProbVolume, ScalarMap, IGNORE};

pub const HISTOGRAM_BINS: usize = 64;

/// Entropy of one distribution, divided by `ln C`. `0·ln 0` counts as 0.
pub fn normalized_entropy(dist: &[f64]) -> f64 {
    let c = dist.len() as f64;
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (h / c.ln()).clamp(0.0, 1.0)
}

/// Per-pixel normalized self-entropy in `[0, 1]`.
pub fn self_entropy_map(p: &ProbVolume) -> Result<ScalarMap> {
    if p.classes < 2 {
        return Err(Error::invalid(format!(
            "entropy needs at least 2 classes, got {}",
            p.classes
        )));
    }
    let data = p.pixels().map(normalized_entropy).collect();
    ScalarMap::new(p.height, p.width, data)
}

/// Pooled entropy distribution over a set of maps.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyStats {
    pub mean: f64,
    pub histogram: [u64; HISTOGRAM_BINS],
    pub pixel_count: u64,
}

impl EntropyStats {
    pub fn bin_of(value: f64) -> usize {
        ((value * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
    }

    /// `bin_lower,count` rows followed by a `mean,<value>` footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,count\n");
        for (i, count) in self.histogram.iter().enumerate() {
            let lower = i as f64 / HISTOGRAM_BINS as f64;
            writeln!(out, "{lower},{count}").unwrap();
        }
        writeln!(out, "mean,{}", self.mean).unwrap();
        out
    }
}

/// Pools every selected pixel of `maps` into a mean and a 64-bin histogram.
///
/// With a mask, a pixel is selected where the mask is not [`IGNORE`]; the
/// mask must match every map's dimensions.
pub fn entropy_stats(maps: &[ScalarMap], mask: Option<&LabelMap>) -> Result<EntropyStats> {
    let mut histogram = [0u64; HISTOGRAM_BINS];
    let mut sum = 0.0;
    let mut count = 0u64;
    for map in maps {
        if let Some(m) = mask {
            if m.height != map.height || m.width != map.width {
                return Err(Error::invalid("mask and entropy map dimensions differ"));
            }
        }
        for (i, &v) in map.data.iter().enumerate() {
            if mask.is_some_and(|m| m.data[i] == IGNORE) {
                continue;
            }
            sum += v;
            count += 1;
            histogram[EntropyStats::bin_of(v)] += 1;
        }
    }
    if count == 0 {
        return Err(Error::empty("no pixels selected for entropy statistics"));
    }
    Ok(EntropyStats {
        mean: (sum / count as f64).clamp(0.0, 1.0),
        histogram,
        pixel_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_and_one_hot() {
        for c in 2..8 {
            let u = ProbVolume::uniform(2, 3, c).unwrap();
            let h = self_entropy_map(&u).unwrap();
            assert!(h.data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
            let mut onehot = vec![0.0; c];
            onehot[c - 1] = 1.0;
            let o = ProbVolume::constant(2, 3, &onehot).unwrap();
            assert!(self_entropy_map(&o).unwrap().data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_class_hand_value() {
        let p = ProbVolume::constant(1, 1, &[0.9, 0.1]).unwrap();
        let h = self_entropy_map(&p).unwrap().data[0];
        let expected = -(0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln()) / 2f64.ln();
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 0.46900).abs() < 1e-5);
    }

    #[test]
    fn single_class_rejected() {
        let p = ProbVolume::constant(1, 1, &[1.0]).unwrap();
        assert!(self_entropy_map(&p).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = entropy_stats(&[ScalarMap::filled(3, 3, 0.5).unwrap()], None).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.histogram[EntropyStats::bin_of(0.5)], 9);
        assert_eq!(s.histogram.iter().sum::<u64>(), s.pixel_count);

        let two = [
            ScalarMap::filled(4, 4, 0.2).unwrap(),
            ScalarMap::filled(4, 4, 0.8).unwrap(),
        ];
        assert!((entropy_stats(&two, None).unwrap().mean - 0.5).abs() < 1e-15);
        assert_eq!(EntropyStats::bin_of(1.0), HISTOGRAM_BINS - 1);
    }

    #[test]
    fn stats_mean_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let maps: Vec<ScalarMap> = (0..5)
            .map(|i| {
                let (h, w) = (3 + i, 7 - i);
                ScalarMap::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap()
            })
            .collect();
        let all: Vec<f64> = maps.iter().flat_map(|m| m.data.iter().copied()).collect();
        let oracle = all.iter().sum::<f64>() / all.len() as f64;
        let s = entropy_stats(&maps, None).unwrap();
        assert!((s.mean - oracle).abs() < 1e-12);
        assert_eq!(s.pixel_count as usize, all.len());
    }

    #[test]
    fn mask_and_empty_selection() {
        let m = ScalarMap::new(1, 4, vec![0.1, 0.2, 0.3, 0.9]).unwrap();
        let mask = LabelMap::new(1, 4, vec![0, IGNORE, IGNORE, 1]).unwrap();
        let s = entropy_stats(std::slice::from_ref(&m), Some(&mask)).unwrap();
        assert_eq!(s.pixel_count, 2);
        assert!((s.mean - 0.5).abs() < 1e-15);

        let none = LabelMap::filled(1, 4, IGNORE).unwrap();
        assert!(matches!(entropy_stats(&[m], Some(&none)), Err(Error::EmptyInput(_))));
        assert!(entropy_stats(&[], None).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = entropy_stats(&[ScalarMap::filled(1, 2, 0.25).unwrap()], None).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + HISTOGRAM_BINS + 1);
        assert_eq!(lines[0], "bin_lower,count");
        assert_eq!(lines[17], "0.25,2");
        assert_eq!(lines.last().unwrap(), &"mean,0.25");
    }

    proptest! {
        #[test]
        fn entropy_bounds_and_permutation(logits in prop::collection::vec(-6.0f64..6.0, 2..8),
                                          rot in 0usize..8) {
            let c = logits.len();
            let p = ProbVolume::from_logits(1, 1, c, &logits).unwrap();
            let h = normalized_entropy(&p.data);
            prop_assert!((0.0..=1.0).contains(&h));
            let mut permuted = p.data.clone();
            permuted.rotate_left(rot % c);
            permuted.swap(0, c - 1);
            prop_assert!((normalized_entropy(&permuted) - h).abs() < 1e-12);
            let uniform = logits.iter().all(|&v| v == logits[0]);
            if !uniform && p.data.iter().any(|&v| (v - 1.0 / c as f64).abs() > 1e-9) {
                prop_assert!(h < 1.0);
            }
        }
    }
}
