//! Central finite differences for checking analytic gradients.
//!
//! Relative error is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`; the floor keeps
//! entries whose true gradient is essentially zero from being judged on
//! round-off alone.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Numeric gradient of `f` at `x`: `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps`.
pub fn central_difference(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Outcome of comparing one analytic gradient tensor with its numeric estimate.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Comparison {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: max rel error {:.3e} at index {} (analytic {:.9e}, numeric {:.9e}, {} entries)",
            self.name, self.max_rel_error, self.worst_index, self.analytic, self.numeric, self.len
        )
    }
}

pub fn compare(name: impl Into<String>, analytic: &Tensor, numeric: &Tensor) -> Result<Comparison> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape("gradcheck::compare", analytic.shape(), numeric.shape()));
    }
    let mut worst = (0, 0.0);
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(a, n);
        // NaN compares false, so force it to be reported.
        if e > worst.1 || e.is_nan() {
            worst = (i, e);
            if e.is_nan() {
                break;
            }
        }
    }
    Ok(Comparison {
        name: name.into(),
        len: analytic.len(),
        max_rel_error: worst.1,
        worst_index: worst.0,
        analytic: analytic.data()[worst.0],
        numeric: numeric.data()[worst.0],
    })
}

/// A set of comparisons judged against one tolerance.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub comparisons: Vec<Comparison>,
}

impl GradcheckReport {
    pub fn new(tolerance: f64) -> Self {
        GradcheckReport {
            tolerance,
            comparisons: Vec::new(),
        }
    }

    pub fn push(&mut self, c: Comparison) {
        self.comparisons.push(c);
    }

    pub fn extend(&mut self, other: GradcheckReport) {
        self.comparisons.extend(other.comparisons);
    }

    pub fn passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.passed(self.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.comparisons
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Comparison> {
        self.comparisons
            .iter()
            .filter(move |c| !c.passed(self.tolerance))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.comparisons {
            let tag = if c.passed(self.tolerance) { "ok  " } else { "FAIL" };
            writeln!(f, "{tag} {c}")?;
        }
        write!(
            f,
            "max relative error {:.3e} (tolerance {:.1e}): {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_cubic() {
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        let g = central_difference(&x, DEFAULT_EPS, |t| t.data().iter().map(|v| v * v * v).sum());
        let exact = x.map(|v| 3.0 * v * v);
        let c = compare("cubic", &exact, &g).unwrap();
        assert!(c.passed(DEFAULT_TOLERANCE), "{c}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let x = Tensor::vector(vec![0.3, 0.7]).unwrap();
        let g = central_difference(&x, DEFAULT_EPS, |t| t.squared_norm());
        let mut wrong = x.scale(2.0);
        wrong.data_mut()[1] *= 1.01;
        let c = compare("corrupted", &wrong, &g).unwrap();
        assert!(!c.passed(DEFAULT_TOLERANCE));
        assert_eq!(c.worst_index, 1);
        let mut report = GradcheckReport::new(DEFAULT_TOLERANCE);
        report.push(c);
        assert!(!report.passed());
        assert!(report.to_string().contains("FAIL corrupted"));
    }

    #[test]
    fn nan_gradient_fails() {
        let a = Tensor::vector(vec![1.0, f64::NAN]).unwrap();
        let n = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let c = compare("nan", &a, &n).unwrap();
        assert!(!c.passed(DEFAULT_TOLERANCE));
        assert_eq!(c.worst_index, 1);
    }
}
