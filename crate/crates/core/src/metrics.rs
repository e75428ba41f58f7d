//! Confusion matrices and intersection-over-union.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, IGNORE};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Pixels with IGNORE ground truth are skipped; an IGNORE
    /// prediction on a labeled pixel is an error.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        self.accumulate_inner(pred, gt, false)
    }

    /// Like [`accumulate`](Self::accumulate) but also skips pixels whose
    /// prediction is IGNORE (used to score pseudo-labels on the pixels they cover).
    pub fn accumulate_labeled(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        self.accumulate_inner(pred, gt, true)
    }

    fn accumulate_inner(&mut self, pred: &LabelMap, gt: &LabelMap, skip_unlabeled: bool) -> Result<()> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::invalid(format!(
                "prediction {}x{} and ground truth {}x{} differ",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        let c = self.classes;
        for (&p, &t) in pred.data.iter().zip(&gt.data) {
            if t == IGNORE || (skip_unlabeled && p == IGNORE) {
                continue;
            }
            if t as usize >= c || p as usize >= c {
                return Err(Error::invalid(format!(
                    "label pair ({t}, {p}) out of range for {c} classes"
                )));
            }
            self.counts[t as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::invalid("cannot merge matrices with different class counts"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Per-class IoU (`None` where TP + FP + FN = 0) and their mean.
    pub fn iou(&self, frequent: &[usize]) -> Result<IouReport> {
        let c = self.classes;
        let per_class: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fn_: u64 = (0..c).map(|j| self.get(k, j)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|i| self.get(i, k)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let mean_of = |idx: &mut dyn Iterator<Item = usize>| {
            let vals: Vec<f64> = idx.filter_map(|k| per_class.get(k).copied().flatten()).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let miou = mean_of(&mut (0..c)).ok_or_else(|| Error::empty("no class has a defined IoU"))?;
        let frequent_miou = mean_of(&mut frequent.iter().copied());
        Ok(IouReport {
            per_class,
            miou,
            frequent_miou,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub frequent_miou: Option<f64>,
}

impl IouReport {
    /// One `name,iou` row per class (empty IoU for excluded classes), then
    /// `mIoU` and `frequent_mIoU` footers.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from("class,iou\n");
        for (k, v) in self.per_class.iter().enumerate() {
            let name = class_names.get(k).copied().unwrap_or("?");
            match v {
                Some(v) => writeln!(out, "{name},{v}").unwrap(),
                None => writeln!(out, "{name},").unwrap(),
            }
        }
        writeln!(out, "mIoU,{}", self.miou).unwrap();
        match self.frequent_miou {
            Some(v) => writeln!(out, "frequent_mIoU,{v}").unwrap(),
            None => writeln!(out, "frequent_mIoU,").unwrap(),
        }
        out
    }
}
