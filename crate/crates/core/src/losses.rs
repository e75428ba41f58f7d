//! Training objectives with analytic gradients with respect to the logits.
//!
//! All losses are means over contributing pixels. Gradients are laid out like
//! the probability volume (`pixel * classes + class`).

use crate::entropy::normalized_entropy;
use crate::error::{Error, Result};
use crate::pseudolabel::PseudoLabelSet;
use crate::tensor::{LabelMap, ProbVolume, IGNORE};

/// Loss value and its gradient with respect to the pre-softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    fn zero(len: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; len],
        }
    }
}

fn check_shape(p: &ProbVolume, y: &LabelMap) -> Result<()> {
    if (p.height, p.width) != (y.height, y.width) {
        return Err(Error::invalid(format!(
            "volume {}x{} and labels {}x{} differ",
            p.height, p.width, y.height, y.width
        )));
    }
    y.validate_classes(p.classes)
}

/// Mean cross-entropy over labeled pixels; `None` when nothing is labeled.
fn masked_ce(p: &ProbVolume, y: &LabelMap) -> Option<LossGrad> {
    let c = p.classes;
    let valid = y.data.iter().filter(|&&v| v != IGNORE).count();
    if valid == 0 {
        return None;
    }
    let n = valid as f64;
    let mut out = LossGrad::zero(p.data.len());
    let mut total = 0.0;
    for (px, &label) in y.data.iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let dist = &p.data[px * c..(px + 1) * c];
        let grad = &mut out.grad[px * c..(px + 1) * c];
        total -= dist[label as usize].max(f64::MIN_POSITIVE).ln();
        for (g, &q) in grad.iter_mut().zip(dist) {
            *g = q / n;
        }
        grad[label as usize] -= 1.0 / n;
    }
    out.value = total / n;
    Some(out)
}

/// Source cross-entropy, averaged over non-IGNORE pixels.
pub fn source_ce(p: &ProbVolume, y: &LabelMap) -> Result<LossGrad> {
    check_shape(p, y)?;
    masked_ce(p, y).ok_or_else(|| Error::empty("every source pixel is IGNORE"))
}

/// Cross-entropy on pseudo-labelled pixels only; zero when none were selected.
pub fn target_ce(p: &ProbVolume, pl: &PseudoLabelSet) -> Result<LossGrad> {
    check_shape(p, pl.labels())?;
    Ok(masked_ce(p, pl.labels()).unwrap_or_else(|| LossGrad::zero(p.data.len())))
}

/// Mean normalized self-entropy over all pixels.
///
/// Per pixel, `∂H/∂z_i = −p_i (ln p_i − Σ_c p_c ln p_c) / ln C`.
pub fn self_entropy_loss(p: &ProbVolume) -> Result<LossGrad> {
    let c = p.classes;
    if c < 2 {
        return Err(Error::invalid("self-entropy needs at least two classes"));
    }
    let n = (p.height * p.width) as f64;
    let scale = -1.0 / (n * (c as f64).ln());
    let mut out = LossGrad::zero(p.data.len());
    let mut total = 0.0;
    for (dist, grad) in p.data.chunks_exact(c).zip(out.grad.chunks_exact_mut(c)) {
        total += normalized_entropy(dist);
        let plogp = |q: f64| if q > 0.0 { q * q.ln() } else { 0.0 };
        let sum_plogp: f64 = dist.iter().map(|&q| plogp(q)).sum();
        for (g, &q) in grad.iter_mut().zip(dist) {
            *g = scale * (plogp(q) - q * sum_plogp);
        }
    }
    out.value = (total / n).clamp(0.0, 1.0);
    Ok(out)
}

/// Default self-entropy weight: a pixel-mean self-entropy added to
/// cross-entropy summed over a 96×128 image, rescaled to the per-pixel mean
/// cross-entropy used here.
pub const DEFAULT_LAMBDA_SE: f64 = 1.0 / (96.0 * 128.0);

/// Per-step loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub source_ce: f64,
    pub target_ce: f64,
    pub self_entropy: f64,
    pub combined: f64,
    pub lambda_se: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "source_ce,target_ce,self_entropy,lambda_se,combined";

    pub fn new(source_ce: f64, target_ce: f64, self_entropy: f64, lambda_se: f64) -> Self {
        Self {
            source_ce,
            target_ce,
            self_entropy,
            combined: source_ce + target_ce + lambda_se * self_entropy,
            lambda_se,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.source_ce, self.target_ce, self.self_entropy, self.lambda_se, self.combined
        )
    }
}

/// Combined objective and the logit gradients of both images.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub report: LossReport,
    pub source_grad: Vec<f64>,
    pub target_grad: Vec<f64>,
}

/// `source_ce + target_ce + λ · self_entropy`.
///
/// The self-entropy term is skipped entirely when `lambda_se` is 0.
pub fn combined_loss(
    source: (&ProbVolume, &LabelMap),
    target: &ProbVolume,
    pl: &PseudoLabelSet,
    lambda_se: f64,
) -> Result<CombinedLoss> {
    if !(lambda_se >= 0.0 && lambda_se.is_finite()) {
        return Err(Error::invalid(format!("lambda_se must be >= 0, got {lambda_se}")));
    }
    let src = source_ce(source.0, source.1)?;
    let tgt = target_ce(target, pl)?;
    let mut target_grad = tgt.grad;
    let se_value = if lambda_se > 0.0 {
        let se = self_entropy_loss(target)?;
        for (g, s) in target_grad.iter_mut().zip(&se.grad) {
            *g += lambda_se * s;
        }
        se.value
    } else {
        0.0
    };
    let report = LossReport::new(src.value, tgt.value, se_value, lambda_se);
    if !report.combined.is_finite() {
        return Err(Error::Numeric(format!("combined loss is {}", report.combined)));
    }
    Ok(CombinedLoss {
        report,
        source_grad: src.grad,
        target_grad,
    })
}
