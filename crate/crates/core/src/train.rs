//! Source pre-training and round-based self-training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Segmenter;
use crate::losses::{combined_loss, source_ce, LossReport, DEFAULT_LAMBDA_SE};
use crate::metrics::ConfusionMatrix;
use crate::net::{Gradients, ToySegNet};
use crate::pseudolabel::{generate_pseudo_labels, SelectionRound, SelectionSchedule, SpatialPrior};
use crate::tensor::{LabelMap, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Source images per pre-training step. Adaptation steps always use one
    /// source and one target image.
    pub batch: usize,
    pub schedule: SelectionSchedule,
    pub lambda_se: f64,
    pub seed: u64,
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch: 2,
            schedule: SelectionSchedule::default(),
            lambda_se: DEFAULT_LAMBDA_SE,
            seed: 0,
            pretrain_epochs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if !(self.lambda_se.is_finite() && self.lambda_se >= 0.0) {
            return Err(Error::invalid(format!("lambda_se must be >= 0, got {}", self.lambda_se)));
        }
        self.schedule.validate()
    }
}

/// Labeled images, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub images: &'a [RgbImage],
    pub labels: &'a [LabelMap],
}

impl<'a> Labeled<'a> {
    pub fn new(images: &'a [RgbImage], labels: &'a [LabelMap]) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} label maps",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// How pseudo-labels are produced in each round.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOptions {
    /// Inference scales; `[1.0]` disables fusion.
    pub factors: Vec<f64>,
    pub priors: Option<SpatialPrior>,
}

/// One optimization step of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub round: usize,
    pub epoch: usize,
    pub step: usize,
    pub report: LossReport,
}

impl StepLoss {
    pub const CSV_HEADER: &'static str = "round,epoch,step,source_ce,target_ce,self_entropy,lambda_se,combined";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.round, self.epoch, self.step, self.report.csv_row())
    }
}

pub fn losses_csv(trace: &[StepLoss]) -> String {
    let mut out = String::from(StepLoss::CSV_HEADER);
    out.push('\n');
    for s in trace {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: ToySegNet,
    pub losses: Vec<StepLoss>,
}

#[derive(Debug, Clone)]
pub struct AdaptOutput {
    pub net: ToySegNet,
    /// Pseudo-labels used in each round.
    pub rounds: Vec<SelectionRound>,
    /// Parameters at the end of each round.
    pub checkpoints: Vec<ToySegNet>,
    pub losses: Vec<StepLoss>,
}

/// Shuffled index order for one epoch, from a stream keyed by `(seed, tag)`.
fn epoch_order(seed: u64, tag: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn source_grad(net: &ToySegNet, img: &RgbImage, labels: &LabelMap) -> Result<(f64, Gradients)> {
    let (p, cache) = net.forward(img)?;
    let loss = source_ce(&p, labels)?;
    Ok((loss.value, net.backward(&cache, &loss.grad)?))
}

/// Source-only training: `epochs` passes over the source set in batches of
/// `config.batch`, minimizing the mean cross-entropy of the batch.
pub fn train_source(net: &ToySegNet, source: Labeled<'_>, config: &TrainConfig, epochs: usize) -> Result<TrainOutput> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::empty("source set is empty"));
    }
    let mut net = net.clone();
    let mut losses = Vec::new();
    for epoch in 0..epochs {
        let order = epoch_order(config.seed, epoch as u64, source.len());
        for (step, batch) in order.chunks(config.batch).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| source_grad(&net, &source.images[i], &source.labels[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Gradients::zeros_like(&net);
            let mut value = 0.0;
            for (v, g) in &results {
                value += v;
                grads.add_assign(g);
            }
            let scale = 1.0 / batch.len() as f64;
            grads.scale(scale);
            value *= scale;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("source loss is {value} at epoch {epoch}")));
            }
            net.apply_sgd(&grads, config.learning_rate)?;
            losses.push(StepLoss {
                round: 0,
                epoch,
                step,
                report: LossReport::new(value, 0.0, 0.0, 0.0),
            });
        }
    }
    Ok(TrainOutput { net, losses })
}

/// Self-training. Each round freezes the model, generates pseudo-labels for
/// the whole target set, then trains `epochs_per_round` epochs in which every
/// step pairs one source image with one target image and minimizes the
/// combined objective.
pub fn adapt(
    net: &ToySegNet,
    source: Labeled<'_>,
    target: &[RgbImage],
    config: &TrainConfig,
    options: &AdaptOptions,
) -> Result<AdaptOutput> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::empty("source set is empty"));
    }
    if target.is_empty() {
        return Err(Error::empty("target set is empty"));
    }
    let mut net = net.clone();
    let mut out = AdaptOutput {
        net: net.clone(),
        rounds: Vec::new(),
        checkpoints: Vec::new(),
        losses: Vec::new(),
    };
    let lr = config.learning_rate;
    for round in 0..config.schedule.rounds {
        let portion = config.schedule.portion(round);
        let selection = generate_pseudo_labels(&net, target, &options.factors, portion, options.priors.as_ref())?;
        for epoch in 0..config.schedule.epochs_per_round {
            // Tags stay clear of the pre-training streams.
            let tag = (1 + round as u64) << 32 | (epoch as u64) << 1;
            let t_order = epoch_order(config.seed, tag, target.len());
            let s_order = epoch_order(config.seed, tag | 1, source.len());
            for (step, &ti) in t_order.iter().enumerate() {
                let si = s_order[step % source.len()];
                let (fs, ft) = rayon::join(
                    || net.forward(&source.images[si]),
                    || net.forward(&target[ti]),
                );
                let ((ps, cs), (pt, ct)) = (fs?, ft?);
                let loss = combined_loss((&ps, &source.labels[si]), &pt, &selection.labels[ti], config.lambda_se)
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("round {round} epoch {epoch} step {step}: {m}")),
                        other => other,
                    })?;
                let (gs, gt) = rayon::join(
                    || net.backward(&cs, &loss.source_grad),
                    || net.backward(&ct, &loss.target_grad),
                );
                let mut grads = gs?;
                grads.add_assign(&gt?);
                net.apply_sgd(&grads, lr)?;
                out.losses.push(StepLoss {
                    round,
                    epoch,
                    step,
                    report: loss.report,
                });
            }
        }
        out.rounds.push(selection);
        out.checkpoints.push(net.clone());
    }
    out.net = net;
    Ok(out)
}

/// Argmax predictions for a batch of images, in input order.
pub fn predict_labels<S: Segmenter + Sync + ?Sized>(model: &S, images: &[RgbImage]) -> Result<Vec<LabelMap>> {
    images.par_iter().map(|img| Ok(model.predict(img)?.argmax())).collect()
}

/// Confusion matrix of argmax predictions against ground truth.
pub fn evaluate<S: Segmenter + Sync + ?Sized>(model: &S, data: Labeled<'_>) -> Result<ConfusionMatrix> {
    let preds = predict_labels(model, data.images)?;
    let mut cm = ConfusionMatrix::new(model.classes());
    for (p, gt) in preds.iter().zip(data.labels) {
        cm.accumulate(p, gt)?;
    }
    Ok(cm)
}

/// Confusion matrix of pseudo-labels on the pixels they cover.
pub fn pseudo_label_confusion(round: &SelectionRound, truth: &[LabelMap], classes: usize) -> Result<ConfusionMatrix> {
    if round.labels.len() != truth.len() {
        return Err(Error::invalid("pseudo-label and ground-truth counts differ"));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (pl, gt) in round.labels.iter().zip(truth) {
        cm.accumulate_labeled(pl.labels(), gt)?;
    }
    Ok(cm)
}
