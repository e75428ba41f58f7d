//! A small fully convolutional segmentation network with hand-written
//! forward and backward passes.
//!
//! Four 3×3 convolutions (dilations 1, 2, 4, 1) with zero padding that keeps
//! the resolution, ReLU between layers and a per-pixel softmax head.
//! Convolutions run as im2col followed by a dense matrix product, one block
//! of image rows at a time; activations are `pixels × channels` row-major
//! matrices.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fusion::Segmenter;
use crate::tensor::{ProbVolume, RgbImage};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Constant subtracted from every input channel before the first layer.
pub const INPUT_CENTER: f64 = 0.5;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// One 3×3 convolution. Weights are stored as a `(9·in_ch) × out_ch` matrix,
/// row index `tap · in_ch + in_channel` with `tap = ky · 3 + kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub dilation: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, dilation: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            dilation,
            weights: vec![0.0; TAPS * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        TAPS * self.in_ch
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Index into `weights` for output `o`, input `i`, kernel row `ky`, column `kx`.
    pub fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((ky * KERNEL + kx) * self.in_ch + i) * self.out_ch + o
    }
}

/// Image rows per im2col block, sized so a block stays cache resident.
const BLOCK_ROWS: usize = 8;

/// im2col over image rows `rows`: row `p` of `col` holds the 9 dilated
/// neighbors of pixel `p` of the block, zeros outside the image.
fn im2col(input: &[f64], h: usize, w: usize, ch: usize, dilation: usize, rows: Range<usize>, col: &mut [f64]) {
    let k = TAPS * ch;
    let d = dilation as isize;
    for (yi, y) in rows.enumerate() {
        for x in 0..w {
            let dst = &mut col[(yi * w + x) * k..(yi * w + x + 1) * k];
            for ky in 0..KERNEL {
                let sy = y as isize + (ky as isize - 1) * d;
                for kx in 0..KERNEL {
                    let sx = x as isize + (kx as isize - 1) * d;
                    let tap = &mut dst[(ky * KERNEL + kx) * ch..(ky * KERNEL + kx + 1) * ch];
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        tap.fill(0.0);
                    } else {
                        let s = (sy as usize * w + sx as usize) * ch;
                        tap.copy_from_slice(&input[s..s + ch]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds the column gradients of a block onto `out`.
fn col2im_add(dcol: &[f64], h: usize, w: usize, ch: usize, dilation: usize, rows: Range<usize>, out: &mut [f64]) {
    let k = TAPS * ch;
    let d = dilation as isize;
    for (yi, y) in rows.enumerate() {
        for x in 0..w {
            let src = &dcol[(yi * w + x) * k..(yi * w + x + 1) * k];
            for ky in 0..KERNEL {
                let sy = y as isize + (ky as isize - 1) * d;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = x as isize + (kx as isize - 1) * d;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let o = (sy as usize * w + sx as usize) * ch;
                    let tap = &src[(ky * KERNEL + kx) * ch..(ky * KERNEL + kx + 1) * ch];
                    out[o..o + ch].iter_mut().zip(tap).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}

fn blocks(h: usize) -> impl Iterator<Item = Range<usize>> {
    (0..h).step_by(BLOCK_ROWS).map(move |y0| y0..(y0 + BLOCK_ROWS).min(h))
}

/// `c = a · b` (or `c += a · b` when `accumulate`), all row-major, with
/// optional transposition of `a` or `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths match the declared shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Activations kept from a forward pass, consumed by [`ToySegNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    height: usize,
    width: usize,
    /// Input of every layer: the centered image, then each post-ReLU hidden output.
    inputs: Vec<Vec<f64>>,
}

/// Parameter gradients, same layout as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &ToySegNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(ob).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= factor);
        }
    }

    /// All gradient entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// The segmentation network: parameters plus the seed they were drawn from.
#[derive(Debug, Clone)]
pub struct ToySegNet {
    pub layers: Vec<ConvLayer>,
    pub rng_seed: u64,
    id: u64,
}

impl PartialEq for ToySegNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// `(in, out, dilation)` of each layer for a `classes`-way head.
pub fn default_architecture(classes: usize) -> [(usize, usize, usize); 4] {
    [(3, 16, 1), (16, 16, 2), (16, 16, 4), (16, classes, 1)]
}

impl ToySegNet {
    /// He-initialized network: weights `N(0, 2 / fan_in)` from a ChaCha8
    /// stream seeded with `seed`, biases zero.
    pub fn init(seed: u64, classes: usize) -> Result<Self> {
        if classes < 2 || classes > 255 {
            return Err(Error::invalid(format!("class count {classes} not in 2..=255")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = default_architecture(classes)
            .iter()
            .map(|&(i, o, d)| {
                let mut layer = ConvLayer::zeros(i, o, d);
                let std = (2.0 / layer.fan_in() as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                layer.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
                layer
            })
            .collect();
        Ok(Self {
            layers,
            rng_seed: seed,
            id: fresh_id(),
        })
    }

    /// Builds a network from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<ConvLayer>, rng_seed: u64) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("network has no layers"))?;
        if first.in_ch != 3 {
            return Err(Error::invalid(format!("first layer takes {} channels, not 3", first.in_ch)));
        }
        for pair in layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::invalid("layer channel counts do not chain"));
            }
        }
        for l in &layers {
            if l.dilation == 0
                || l.weights.len() != TAPS * l.in_ch * l.out_ch
                || l.bias.len() != l.out_ch
            {
                return Err(Error::invalid("layer parameter shapes are inconsistent"));
            }
        }
        if layers.last().unwrap().out_ch < 2 {
            return Err(Error::invalid("network head needs at least two classes"));
        }
        Ok(Self {
            layers,
            rng_seed,
            id: fresh_id(),
        })
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Sets the last layer to zero so every prediction is uniform.
    pub fn zero_head(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
        self.id = fresh_id();
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "{} parameters given, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        self.id = fresh_id();
        Ok(())
    }

    fn input_matrix(img: &RgbImage) -> Vec<f64> {
        img.data.iter().map(|v| v - INPUT_CENTER).collect()
    }

    /// Runs the network, returning raw logits and (optionally) the cache.
    fn run(&self, img: &RgbImage, keep: bool) -> (Vec<f64>, Option<ForwardCache>) {
        let (h, w) = (img.height, img.width);
        let mut act = Self::input_matrix(img);
        let mut col = Vec::new();
        let mut inputs = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (k, n) = (layer.fan_in(), layer.out_ch);
            let mut out = vec![0.0; h * w * n];
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(&layer.bias);
            }
            for rows in blocks(h) {
                let m = rows.len() * w;
                col.resize(col.len().max(m * k), 0.0);
                im2col(&act, h, w, layer.in_ch, layer.dilation, rows.clone(), &mut col[..m * k]);
                let block = &mut out[rows.start * w * n..rows.end * w * n];
                gemm(m, k, n, &col[..m * k], false, &layer.weights, false, block, true);
            }
            if li != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let input = std::mem::replace(&mut act, out);
            if keep {
                inputs.push(input);
            }
        }
        let cache = keep.then(|| ForwardCache {
            net_id: self.id,
            height: h,
            width: w,
            inputs,
        });
        (act, cache)
    }

    fn check_input(&self, img: &RgbImage) -> Result<()> {
        if self.layers[0].in_ch != 3 {
            return Err(Error::invalid("network does not take RGB input"));
        }
        if img.data.len() != img.height * img.width * 3 {
            return Err(Error::invalid("image is not 3-channel"));
        }
        Ok(())
    }

    /// Per-pixel logits, without caching.
    pub fn logits(&self, img: &RgbImage) -> Result<Vec<f64>> {
        self.check_input(img)?;
        Ok(self.run(img, false).0)
    }

    /// Forward pass keeping activations for [`ToySegNet::backward`].
    pub fn forward(&self, img: &RgbImage) -> Result<(ProbVolume, ForwardCache)> {
        self.check_input(img)?;
        let (logits, cache) = self.run(img, true);
        let p = ProbVolume::from_logits(img.height, img.width, self.classes(), &logits)?;
        Ok((p, cache.expect("cache requested")))
    }

    /// Parameter gradients given the gradient of a loss with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, logit_grad: &[f64]) -> Result<Gradients> {
        if cache.net_id != self.id {
            return Err(Error::InvalidState(
                "forward cache was produced by different parameters".into(),
            ));
        }
        let (h, w) = (cache.height, cache.width);
        let p = h * w;
        if logit_grad.len() != p * self.classes() {
            return Err(Error::invalid(format!(
                "logit gradient has {} entries, expected {}",
                logit_grad.len(),
                p * self.classes()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = logit_grad.to_vec();
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.inputs[li];
            let (dw, db) = &mut grads.layers[li];
            let (k, n) = (layer.fan_in(), layer.out_ch);
            for row in delta.chunks_exact(n) {
                db.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
            let mut din = if li > 0 { vec![0.0; p * layer.in_ch] } else { Vec::new() };
            for rows in blocks(h) {
                let m = rows.len() * w;
                col.resize(col.len().max(m * k), 0.0);
                im2col(input, h, w, layer.in_ch, layer.dilation, rows.clone(), &mut col[..m * k]);
                let d = &delta[rows.start * w * n..rows.end * w * n];
                gemm(k, m, n, &col[..m * k], true, d, false, dw, true);
                if li > 0 {
                    dcol.resize(dcol.len().max(m * k), 0.0);
                    gemm(m, n, k, d, false, &layer.weights, true, &mut dcol[..m * k], false);
                    col2im_add(&dcol[..m * k], h, w, layer.in_ch, layer.dilation, rows, &mut din);
                }
            }
            if li == 0 {
                break;
            }
            for (g, &a) in din.iter_mut().zip(input) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = din;
        }
        Ok(grads)
    }

    /// Plain SGD: returns a copy with `θ − lr · grad`.
    pub fn sgd_step(&self, grads: &Gradients, lr: f64) -> Result<ToySegNet> {
        let mut next = self.clone();
        next.apply_sgd(grads, lr)?;
        Ok(next)
    }

    /// In-place form of [`ToySegNet::sgd_step`].
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!("learning rate {lr} must be finite and >= 0")));
        }
        let shapes_match = grads.layers.len() == self.layers.len()
            && grads
                .layers
                .iter()
                .zip(&self.layers)
                .all(|((gw, gb), l)| gw.len() == l.weights.len() && gb.len() == l.bias.len());
        if !shapes_match {
            return Err(Error::invalid("gradient shapes do not match the network"));
        }
        for ((gw, gb), l) in grads.layers.iter().zip(&mut self.layers) {
            l.weights.iter_mut().zip(gw).for_each(|(p, g)| *p -= lr * g);
            l.bias.iter_mut().zip(gb).for_each(|(p, g)| *p -= lr * g);
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("parameters became non-finite".into()));
        }
        self.id = fresh_id();
        Ok(())
    }
}

impl Segmenter for ToySegNet {
    fn classes(&self) -> usize {
        ToySegNet::classes(self)
    }

    fn predict(&self, img: &RgbImage) -> Result<ProbVolume> {
        let logits = self.logits(img)?;
        ProbVolume::from_logits(img.height, img.width, self.classes(), &logits)
    }
}
