//! Forecast accuracy measures.
//!
//! All three are computed over paired truth/prediction tensors of identical
//! shape. MAPE excludes positions whose true magnitude is at or below a mask
//! threshold, since relative error against a near-zero truth is meaningless;
//! when everything is masked the value is absent rather than zero.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Positions with `|truth| <= MAPE_MASK` do not contribute to MAPE.
pub const MAPE_MASK: f64 = 1e-3;

/// Mean absolute error, root mean squared error, and mean absolute
/// percentage error (in percent; `None` when every truth value is masked).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
}

/// Evaluate all three measures over every element.
pub fn evaluate(truth: &DenseTensor, prediction: &DenseTensor) -> Result<Metrics> {
    if truth.shape() != prediction.shape() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            expected: truth.shape().to_vec(),
            got: prediction.shape().to_vec(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate" });
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_count = 0usize;
    for (y, p) in truth.data().iter().zip(prediction.data()) {
        let err = p - y;
        abs_sum += err.abs();
        sq_sum += err * err;
        if y.abs() > MAPE_MASK {
            pct_sum += (err / y).abs();
            pct_count += 1;
        }
    }
    let count = truth.len() as f64;
    Ok(Metrics {
        mae: abs_sum / count,
        rmse: (sq_sum / count).sqrt(),
        mape: if pct_count > 0 {
            Some(100.0 * pct_sum / pct_count as f64)
        } else {
            None
        },
    })
}
