//! Binary confusion counts and the Matthews correlation coefficient.

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    /// Tallies `(predicted, actual)` pairs with `true` as the positive class.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Confusion::default();
        for (pred, actual) in pairs {
            match (pred, actual) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn mcc<F: Float>(&self) -> Mcc<F> {
        mcc(self.tp, self.tn, self.fp, self.fn_)
    }
}

/// MCC value; `defined` is false when a marginal is empty, in which case
/// `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mcc<F> {
    pub value: F,
    pub defined: bool,
}

pub fn mcc<F: Float>(tp: u64, tn: u64, fp: u64, fn_: u64) -> Mcc<F> {
    let f = |v: u64| F::from(v).expect("count representable as float");
    let (tp, tn, fp, fn_) = (f(tp), f(tn), f(fp), f(fn_));
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.iter().any(|x| x.is_zero()) {
        return Mcc {
            value: F::zero(),
            defined: false,
        };
    }
    let denom = (factors[0] * factors[1] * factors[2] * factors[3]).sqrt();
    Mcc {
        value: (tp * tn - fp * fn_) / denom,
        defined: true,
    }
}
