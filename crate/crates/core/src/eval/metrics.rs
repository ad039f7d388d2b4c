use serde::{Deserialize, Serialize};

use super::EvalError;

/// Binary confusion counts. Positive is `true`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_pairs(pred: &[bool], gt: &[bool]) -> Result<Confusion, EvalError> {
        if pred.len() != gt.len() {
            return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            c.push(p, g);
        }
        Ok(c)
    }

    pub fn push(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn add(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Ground-truth positives.
    pub fn n_pos(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// True when a marginal is empty and MCC falls back to 0.
    pub fn mcc_is_degenerate(&self) -> bool {
        mcc_denominator(self) == 0.0
    }

    pub fn mcc(&self) -> f64 {
        let den = mcc_denominator(self);
        if den == 0.0 {
            return 0.0;
        }
        let num = self.tp as f64 * self.tn as f64 - self.fp as f64 * self.fn_ as f64;
        (num / den).clamp(-1.0, 1.0)
    }

    pub fn scores(&self) -> BinaryScores {
        BinaryScores {
            f1: self.f1(),
            precision: self.precision(),
            recall: self.recall(),
            specificity: self.specificity(),
            mcc: self.mcc(),
            mcc_degenerate: self.mcc_is_degenerate(),
        }
    }
}

fn mcc_denominator(c: &Confusion) -> f64 {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt()
}

/// Zero-division yields 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub mcc: f64,
    pub mcc_degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    Precision,
    Recall,
    Specificity,
    Mcc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::F1, Metric::Precision, Metric::Recall, Metric::Specificity, Metric::Mcc];

    pub fn of(self, c: &Confusion) -> f64 {
        match self {
            Metric::F1 => c.f1(),
            Metric::Precision => c.precision(),
            Metric::Recall => c.recall(),
            Metric::Specificity => c.specificity(),
            Metric::Mcc => c.mcc(),
        }
    }
}

/// Pools the samples of all cells.
pub fn micro_aggregate(cells: &[Confusion]) -> Confusion {
    cells.iter().fold(Confusion::default(), |acc, c| acc.add(*c))
}

/// Mean of per-cell values; `None` for no cells. Values are summed in
/// sorted order so the result does not depend on cell order.
pub fn macro_aggregate(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 { 0.0 } else { 2.0 * a * b / (a + b) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let gt = [true, false, true, false, false];
        let c = Confusion::from_pairs(&gt, &gt).unwrap();
        assert_eq!(c.f1(), 1.0);
        assert_eq!(c.mcc(), 1.0);
    }

    #[test]
    fn all_negative_predictions() {
        let gt = [true, false, true, false];
        let c = Confusion::from_pairs(&[false; 4], &gt).unwrap();
        assert_eq!(c.recall(), 0.0);
        assert_eq!(c.mcc(), 0.0);
        assert!(c.mcc_is_degenerate());
    }

    #[test]
    fn twenty_sample_tally() {
        let pred = [1, 1, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0, 1].map(|v| v == 1);
        let gt = [1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 0, 1, 0, 0].map(|v| v == 1);
        let c = Confusion::from_pairs(&pred, &gt).unwrap();
        // tp 7, fp 3, fn 2, tn 8, counted by hand.
        assert_eq!(c, Confusion { tp: 7, fp: 3, fn_: 2, tn: 8 });
        assert!((c.f1() - 14.0 / 19.0).abs() < 1e-15);
        assert!((c.precision() - 0.7).abs() < 1e-15);
        assert!((c.recall() - 7.0 / 9.0).abs() < 1e-15);
        assert!((c.specificity() - 8.0 / 11.0).abs() < 1e-15);
        let mcc = (7.0 * 8.0 - 3.0 * 2.0) / (10.0f64 * 9.0 * 11.0 * 10.0).sqrt();
        assert!((c.mcc() - mcc).abs() < 1e-15);
    }

    #[test]
    fn aggregation() {
        let a = Confusion { tp: 3, fp: 1, fn_: 0, tn: 5 };
        let b = Confusion { tp: 1, fp: 0, fn_: 2, tn: 7 };
        assert_eq!(micro_aggregate(&[a]), a);
        assert_eq!(micro_aggregate(&[a, b]), a.add(b));
        assert!((macro_aggregate(&[0.8, 0.6]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(macro_aggregate(&[]), None);
    }
}
