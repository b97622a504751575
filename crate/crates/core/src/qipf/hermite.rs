//! Physicists' Hermite polynomials and their first two derivatives.

use crate::error::{Error, Result};

/// Orders above this overflow-guard are rejected.
pub const MAX_HERMITE_ORDER: usize = 32;

/// `h_k(x)` together with `h_k'(x)` and `h_k''(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteValue {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

pub fn hermite_eval(order: usize, x: f64) -> Result<HermiteValue> {
    let basis = HermiteBasis::new(order.max(1))?;
    let mut out = [HermiteValue {
        value: 0.0,
        first: 0.0,
        second: 0.0,
    }; MAX_HERMITE_ORDER + 1];
    basis.eval_into(x, &mut out[..=basis.max_order()]);
    Ok(out[order])
}

/// Hermite polynomials `h_0 ..= h_m` evaluated together through
///
/// ```text
/// h_0 = 1, h_1 = 2x, h_{k+1} = 2x h_k - 2k h_{k-1}
/// h_k' = 2k h_{k-1},  h_k'' = 4k(k-1) h_{k-2}
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermiteBasis {
    max_order: usize,
}

impl HermiteBasis {
    pub fn new(max_order: usize) -> Result<Self> {
        if max_order > MAX_HERMITE_ORDER {
            return Err(Error::OrderTooLarge {
                order: max_order,
                max: MAX_HERMITE_ORDER,
            });
        }
        Ok(Self { max_order })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Fills `out[k]` for `k = 0..out.len()`; `out` must not be longer than
    /// `max_order + 1`.
    pub fn eval_into(&self, x: f64, out: &mut [HermiteValue]) {
        debug_assert!(out.len() <= self.max_order + 1);
        let mut prev = 0.0; // h_{k-1}
        let mut prev2 = 0.0; // h_{k-2}
        let mut cur = 1.0; // h_k
        for (k, slot) in out.iter_mut().enumerate() {
            let kf = k as f64;
            *slot = HermiteValue {
                value: cur,
                first: 2.0 * kf * prev,
                second: 4.0 * kf * (kf - 1.0) * prev2,
            };
            let next = 2.0 * x * cur - 2.0 * kf * prev;
            prev2 = prev;
            prev = cur;
            cur = next;
        }
    }

    pub fn eval(&self, x: f64) -> Vec<HermiteValue> {
        let mut out = vec![
            HermiteValue {
                value: 0.0,
                first: 0.0,
                second: 0.0
            };
            self.max_order + 1
        ];
        self.eval_into(x, &mut out);
        out
    }
}
