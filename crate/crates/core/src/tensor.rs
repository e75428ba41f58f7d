//! Dense per-pixel containers shared by every stage of the pipeline, plus the
//! resampling operations used for multi-scale inference.
//!
//! All containers are row-major with channels interleaved per pixel
//! (`(row * width + col) * channels + channel`) and use `f64` internally.

use crate::error::{Error, Result};

/// Label value for pixels that carry no class.
pub const IGNORE: u8 = 255;

/// Tolerance on the per-pixel sum of a [`ProbVolume`].
pub const PROB_SUM_TOL: f64 = 1e-5;

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("zero dimension {h}x{w}")));
    }
    Ok(())
}

fn check_len(what: &str, len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::invalid(format!(
            "{what}: data length {len} does not match expected {expected}"
        )));
    }
    Ok(())
}

/// RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("RgbImage", data.len(), height * width * 3)?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("RgbImage value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Image with every channel of every pixel set to `rgb`.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Per-pixel distance to the camera in meters; strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("DepthMap", data.len(), height * width)?;
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("depth {v} is not finite and positive")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn uniform(height: usize, width: usize, meters: f64) -> Result<Self> {
        Self::new(height, width, vec![meters; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel class distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) classes: usize,
    pub(crate) data: Vec<f64>,
}

impl ProbVolume {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if classes == 0 {
            return Err(Error::invalid("ProbVolume needs at least one class"));
        }
        check_len("ProbVolume", data.len(), height * width * classes)?;
        for (px, dist) in data.chunks_exact(classes).enumerate() {
            if let Some(v) = dist.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!(
                    "probability {v} outside [0,1] at pixel {px}"
                )));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid(format!(
                    "probabilities at pixel {px} sum to {sum}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    /// Same distribution at every pixel.
    pub fn constant(height: usize, width: usize, dist: &[f64]) -> Result<Self> {
        let data = (0..height * width)
            .flat_map(|_| dist.iter().copied())
            .collect();
        Self::new(height, width, dist.len(), data)
    }

    pub fn uniform(height: usize, width: usize, classes: usize) -> Result<Self> {
        Self::constant(height, width, &vec![1.0 / classes as f64; classes])
    }

    /// Per-pixel softmax of interleaved logits.
    pub fn from_logits(height: usize, width: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        check_dims(height, width)?;
        check_len("logits", logits.len(), height * width * classes)?;
        if classes == 0 {
            return Err(Error::invalid("ProbVolume needs at least one class"));
        }
        let mut data = vec![0.0; logits.len()];
        for (out, z) in data.chunks_exact_mut(classes).zip(logits.chunks_exact(classes)) {
            softmax_into(z, out);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.classes;
        &self.data[i..i + self.classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.classes)
    }

    /// Per-pixel most likely class; ties resolve to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let data = self.pixels().map(|p| argmax(p) as u8).collect();
        LabelMap {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index of the largest value, first one on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-pixel class ids, [`IGNORE`] marking unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("LabelMap", data.len(), height * width)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Checks that every labeled pixel is a valid id for `classes` classes.
    pub fn validate_classes(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != IGNORE && v as usize >= classes)
        {
            Some(v) => Err(Error::invalid(format!(
                "label {v} out of range for {classes} classes"
            ))),
            None => Ok(()),
        }
    }
}

/// One real value per pixel (entropy maps, weight maps, transmittance).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        check_len("ScalarMap", data.len(), height * width)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ScalarMap contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Align-corners source coordinate of output index `i`.
fn source_coord(i: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    if dst_len == 1 || src_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = (i * (src_len - 1)) as f64 / (dst_len - 1) as f64;
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize of interleaved data, align-corners convention.
///
/// Interpolates as `a + (b - a) * t` so constant fields stay exactly constant.
pub(crate) fn bilinear(
    data: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    new_h: usize,
    new_w: usize,
) -> Vec<f64> {
    if new_h == h && new_w == w {
        return data.to_vec();
    }
    let cols: Vec<_> = (0..new_w).map(|x| source_coord(x, w, new_w)).collect();
    let mut out = Vec::with_capacity(new_h * new_w * channels);
    for y in 0..new_h {
        let (y0, y1, fy) = source_coord(y, h, new_h);
        let row0 = &data[y0 * w * channels..(y0 + 1) * w * channels];
        let row1 = &data[y1 * w * channels..(y1 + 1) * w * channels];
        for &(x0, x1, fx) in &cols {
            for c in 0..channels {
                let a = row0[x0 * channels + c];
                let b = row0[x1 * channels + c];
                let d = row1[x0 * channels + c];
                let e = row1[x1 * channels + c];
                let top = a + (b - a) * fx;
                let bottom = d + (e - d) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

/// Bilinear image resize with edge clamping (align-corners).
pub fn resize_image(img: &RgbImage, new_h: usize, new_w: usize) -> Result<RgbImage> {
    check_dims(new_h, new_w)?;
    let mut data = bilinear(&img.data, img.height, img.width, 3, new_h, new_w);
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(RgbImage {
        height: new_h,
        width: new_w,
        data,
    })
}

/// Per-class bilinear resize followed by per-pixel renormalization.
pub fn resize_prob(p: &ProbVolume, new_h: usize, new_w: usize) -> Result<ProbVolume> {
    check_dims(new_h, new_w)?;
    if new_h == p.height && new_w == p.width {
        return Ok(p.clone());
    }
    let mut data = bilinear(&p.data, p.height, p.width, p.classes, new_h, new_w);
    for dist in data.chunks_exact_mut(p.classes) {
        let sum: f64 = dist.iter().sum();
        for v in dist.iter_mut() {
            *v = (*v / sum).clamp(0.0, 1.0);
        }
    }
    Ok(ProbVolume {
        height: new_h,
        width: new_w,
        classes: p.classes,
        data,
    })
}

/// Bilinear resize of a scalar map (align-corners).
pub fn resize_scalar(m: &ScalarMap, new_h: usize, new_w: usize) -> Result<ScalarMap> {
    check_dims(new_h, new_w)?;
    Ok(ScalarMap {
        height: new_h,
        width: new_w,
        data: bilinear(&m.data, m.height, m.width, 1, new_h, new_w),
    })
}

/// Nearest-neighbor source index for output index `i`.
fn nearest(i: usize, src_len: usize, dst_len: usize) -> usize {
    // Pixel-center mapping; exact block replication for integer upscales.
    let pos = ((2 * i + 1) * src_len) / (2 * dst_len);
    pos.min(src_len - 1)
}

/// Nearest-neighbor label resize; the output only contains input values.
pub fn resize_labels_nearest(l: &LabelMap, new_h: usize, new_w: usize) -> Result<LabelMap> {
    check_dims(new_h, new_w)?;
    let cols: Vec<usize> = (0..new_w).map(|x| nearest(x, l.width, new_w)).collect();
    let mut data = Vec::with_capacity(new_h * new_w);
    for y in 0..new_h {
        let sy = nearest(y, l.height, new_h);
        let row = &l.data[sy * l.width..(sy + 1) * l.width];
        data.extend(cols.iter().map(|&sx| row[sx]));
    }
    Ok(LabelMap {
        height: new_h,
        width: new_w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ProbVolume {
        let logits: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        ProbVolume::from_logits(h, w, c, &logits).unwrap()
    }

    #[test]
    fn resize_identity_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..5 * 7 * 3).map(|_| rng.random()).collect();
        let img = RgbImage::new(5, 7, data).unwrap();
        assert_eq!(resize_image(&img, 5, 7).unwrap(), img);
    }

    #[test]
    fn resize_constant_image() {
        let img = RgbImage::filled(4, 6, [0.3, 0.7, 0.123]).unwrap();
        for (h, w) in [(1, 1), (3, 9), (17, 5)] {
            let out = resize_image(&img, h, w).unwrap();
            for px in out.data.chunks_exact(3) {
                assert_eq!(px, [0.3, 0.7, 0.123]);
            }
        }
    }

    #[test]
    fn bilinear_align_corners_hand_case() {
        // 2x2 plane [[0,1],[0,1]] widened to 2x4.
        let out = bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 2, 1, 2, 4);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in out.chunks_exact(4) {
            for (a, b) in row.iter().zip(expected) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_target_dimension_is_rejected() {
        let img = RgbImage::filled(2, 2, [0.0; 3]).unwrap();
        assert!(matches!(resize_image(&img, 0, 2), Err(Error::InvalidArgument(_))));
        let p = ProbVolume::uniform(2, 2, 3).unwrap();
        assert!(resize_prob(&p, 2, 0).is_err());
        let l = LabelMap::filled(2, 2, 1).unwrap();
        assert!(resize_labels_nearest(&l, 0, 0).is_err());
    }

    #[test]
    fn resize_prob_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_volume(&mut rng, 6, 5, 4);
        assert_eq!(resize_prob(&p, 6, 5).unwrap(), p);

        let c = ProbVolume::constant(3, 4, &[0.7, 0.3]).unwrap();
        let r = resize_prob(&c, 7, 11).unwrap();
        for px in r.pixels() {
            assert!((px[0] - 0.7).abs() < 1e-15 && (px[1] - 0.3).abs() < 1e-15);
            assert_eq!(px, r.pixel(0, 0));
        }
    }

    #[test]
    fn labels_nearest_cases() {
        let l = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(resize_labels_nearest(&l, 2, 2).unwrap(), l);
        let up = resize_labels_nearest(&l, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            0, 0, 1, 1,
            0, 0, 1, 1,
            1, 1, 0, 0,
            1, 1, 0, 0,
        ];
        assert_eq!(up.data, expected);

        let uniform = LabelMap::filled(3, 5, 3).unwrap();
        let r = resize_labels_nearest(&uniform, 8, 2).unwrap();
        assert!(r.data.iter().all(|&v| v == 3));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn constructors_validate() {
        assert!(RgbImage::new(1, 1, vec![0.0, 1.2, 0.0]).is_err());
        assert!(DepthMap::new(1, 2, vec![1.0, 0.0]).is_err());
        assert!(ProbVolume::new(1, 1, 2, vec![0.6, 0.6]).is_err());
        assert!(ScalarMap::new(1, 1, vec![f64::NAN]).is_err());
        let l = LabelMap::new(1, 3, vec![0, IGNORE, 4]).unwrap();
        assert!(l.validate_classes(5).is_ok());
        assert!(l.validate_classes(4).is_err());
    }

    proptest! {
        #[test]
        fn resize_prob_sums_to_one(seed in any::<u64>(), h in 1usize..9, w in 1usize..9,
                                   nh in 1usize..13, nw in 1usize..13, c in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_volume(&mut rng, h, w, c);
            // Before renormalization the interpolated sums already stay near 1.
            let raw = bilinear(&p.data, h, w, c, nh, nw);
            for dist in raw.chunks_exact(c) {
                prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
            let r = resize_prob(&p, nh, nw).unwrap();
            for dist in r.pixels() {
                prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            prop_assert_eq!(resize_prob(&p, nh, nw).unwrap(), r);
        }

        #[test]
        fn nearest_output_values_come_from_input(seed in any::<u64>(), h in 1usize..7, w in 1usize..7,
                                                 nh in 1usize..15, nw in 1usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..4u8)).collect();
            let l = LabelMap::new(h, w, data).unwrap();
            let r = resize_labels_nearest(&l, nh, nw).unwrap();
            prop_assert!(r.data.iter().all(|v| l.data.contains(v)));
        }
    }
}
