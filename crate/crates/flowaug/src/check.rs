//! Built-in gradient verification.
//!
//! [`finite_difference_check`] compares the analytic gradient of a scalar
//! program against central finite differences computed through the forward
//! evaluator alone. It reports every coordinate of every tracked input, so a
//! failing model can be localized to a single parameter entry. The training
//! loop uses a one-coordinate spot version of the same comparison.

use crate::error::{Error, Result};
use crate::graph::{evaluate, evaluate_with_gradients, Program};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One analytic-vs-numeric comparison at a single input coordinate.
#[derive(Clone, Debug)]
pub struct CheckEntry {
    /// Which input tensor (index into the `point` slice).
    pub input: usize,
    /// Flat coordinate within that tensor.
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
    pub rel_error: f64,
}

/// Result of a full finite-difference sweep.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// True when every coordinate is within tolerance.
    pub passed: bool,
}

impl CheckReport {
    /// Entries exceeding the tolerance, worst first.
    pub fn failures(&self) -> Vec<&CheckEntry> {
        let mut out: Vec<&CheckEntry> =
            self.entries.iter().filter(|e| e.rel_error > self.tolerance).collect();
        out.sort_by(|a, b| b.rel_error.partial_cmp(&a.rel_error).expect("rel errors are finite"));
        out
    }
}

/// Relative disagreement with the guard floor used throughout the crate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Central-difference derivative of `program` w.r.t. one input coordinate,
/// using only forward evaluation.
pub fn central_difference<T: Scalar>(
    program: impl Program<T>,
    point: &[Tensor<T>],
    input: usize,
    coord: usize,
    step: f64,
) -> Result<f64> {
    let h = T::narrow(step);
    let mut plus = point.to_vec();
    plus[input].data_mut()[coord] = plus[input].data()[coord] + h;
    let mut minus = point.to_vec();
    minus[input].data_mut()[coord] = minus[input].data()[coord] - h;
    let fp = evaluate(&plus, &program)?.item()?.widen();
    let fm = evaluate(&minus, &program)?.item()?.widen();
    let numeric = (fp - fm) / (2.0 * step);
    if !numeric.is_finite() {
        return Err(Error::numerical(
            "finite difference",
            format!("non-finite numeric derivative at input {input}, coordinate {coord}"),
        ));
    }
    Ok(numeric)
}

/// Sweeps every coordinate of every gradient-tracked input in `point`,
/// comparing the analytic gradient against central differences of size
/// `step`, and grades the result against `tolerance`.
///
/// Disagreement does not error — it is reported (`passed == false`) so
/// callers can inspect which coordinates moved; only a non-finite numeric
/// derivative is an error. `program` must produce a scalar.
pub fn finite_difference_check<T: Scalar>(
    program: impl Program<T>,
    point: &[Tensor<T>],
    step: f64,
    tolerance: f64,
) -> Result<CheckReport> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid("step", format!("{step} (need a positive finite value)")));
    }
    let (_, grads) = evaluate_with_gradients(point, &program)?;
    let mut entries = Vec::new();
    let mut max_rel = 0.0f64;
    for (input, tensor) in point.iter().enumerate() {
        let Some(analytic) = grads[input].as_ref() else { continue };
        for coord in 0..tensor.numel() {
            let numeric = central_difference(&program, point, input, coord, step)?;
            let a = analytic.data()[coord].widen();
            let rel_error = relative_error(a, numeric);
            max_rel = max_rel.max(rel_error);
            entries.push(CheckEntry { input, coord, analytic: a, numeric, rel_error });
        }
    }
    Ok(CheckReport { entries, max_rel_error: max_rel, tolerance, passed: max_rel <= tolerance })
}
