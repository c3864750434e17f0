use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::datapipe::BinaryMask;
use crate::error::{Error, Result};

/// Pixel counts of a binary prediction against a binary label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// OA, IoU, F1, recall and precision of the changed class.
    pub fn metrics(&self) -> Result<MetricReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("metrics of an empty confusion matrix"));
        }
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let mut undefined = UndefinedMetrics::default();
        let ratio = |num: f64, den: f64, flag: &mut bool| {
            if den > 0.0 {
                num / den
            } else {
                *flag = true;
                0.0
            }
        };
        let iou = ratio(tp, tp + fn_ + fp, &mut undefined.iou);
        let prec = ratio(tp, tp + fp, &mut undefined.prec);
        let rec = ratio(tp, tp + fn_, &mut undefined.rec);
        let f1 = if undefined.prec || undefined.rec {
            undefined.f1 = true;
            0.0
        } else {
            ratio(2.0 * prec * rec, prec + rec, &mut undefined.f1)
        };
        let oa = (tp + tn) / (tp + tn + fn_ + fp);
        Ok(MetricReport {
            oa,
            iou,
            f1,
            rec,
            prec,
            undefined,
        })
    }

    /// Mean of changed-class and unchanged-class IoU.
    pub fn mean_iou(&self) -> Result<f64> {
        let changed = self.metrics()?.iou;
        let den = self.tn + self.fp + self.fn_;
        let unchanged = if den > 0 { self.tn as f64 / den as f64 } else { 0.0 };
        Ok((changed + unchanged) / 2.0)
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

pub fn confusion_matrix(pred: &BinaryMask, label: &BinaryMask) -> Result<ConfusionMatrix> {
    if pred.dims() != label.dims() {
        return Err(Error::Extent(format!(
            "prediction {:?} vs label {:?}",
            pred.dims(),
            label.dims()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in pred.data().iter().zip(label.data()) {
        match (p, l) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// Metrics whose denominator was zero (reported as 0).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedMetrics {
    pub iou: bool,
    pub f1: bool,
    pub rec: bool,
    pub prec: bool,
}

impl UndefinedMetrics {
    pub fn any(&self) -> bool {
        self.iou || self.f1 || self.rec || self.prec
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    pub iou: f64,
    pub f1: f64,
    pub rec: f64,
    pub prec: f64,
    pub undefined: UndefinedMetrics,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 5] = ["OA", "IoU", "F1", "Rec", "Prec"];

    /// Values in table column order.
    pub fn values(&self) -> [f64; 5] {
        [self.oa, self.iou, self.f1, self.rec, self.prec]
    }

    /// Plain-text table with percentages to two decimals, one row per model.
    /// Undefined entries are marked with `*`.
    pub fn table(rows: &[(&str, MetricReport)]) -> String {
        let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<name_w$}", "Model");
        for c in Self::COLUMNS {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (name, r) in rows {
            let _ = write!(out, "{name:<name_w$}");
            let flags = [
                false,
                r.undefined.iou,
                r.undefined.f1,
                r.undefined.rec,
                r.undefined.prec,
            ];
            for (v, undefined) in r.values().iter().zip(flags) {
                let mark = if undefined { "*" } else { "" };
                let _ = write!(out, "\t{:.2}{mark}", v * 100.0);
            }
            out.push('\n');
        }
        out
    }

    /// Key-value document (JSON).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}
