//! Central-difference verification of reverse-mode gradients.

use super::tape::{Primitive, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Relative error used when comparing an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradChecker {
    pub step: f64,
    fault: Option<(Primitive, f64)>,
}

impl GradChecker {
    pub fn new(step: f64) -> Self {
        Self { step, fault: None }
    }

    /// Perturbs one backward rule on the analytic pass (detector sensitivity tests).
    #[doc(hidden)]
    pub fn with_fault(mut self, primitive: Primitive, factor: f64) -> Self {
        self.fault = Some((primitive, factor));
        self
    }

    /// Max relative error over every coordinate of every input, reported per input.
    pub fn check_all<F>(&self, f: F, points: &[Tensor]) -> Result<Vec<f64>>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        if let Some((p, factor)) = self.fault {
            tape.inject_backward_fault(p, factor);
        }
        let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(points)
            .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();

        let eval = |pts: &[Tensor]| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = pts.iter().map(|p| t.constant(p.clone())).collect();
            let o = f(&mut t, &vs)?;
            Ok(t.value(o).item())
        };

        let mut worst = vec![0.0f64; points.len()];
        let mut work = points.to_vec();
        for (which, grad) in analytic.iter().enumerate() {
            for coord in 0..points[which].len() {
                let base = points[which].data()[coord];
                work[which].data_mut()[coord] = base + self.step;
                let plus = eval(&work)?;
                work[which].data_mut()[coord] = base - self.step;
                let minus = eval(&work)?;
                work[which].data_mut()[coord] = base;
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = relative_error(grad.data()[coord], numeric);
                // NaN must register as a failure.
                if err.is_nan() || err > worst[which] {
                    worst[which] = if err.is_nan() { f64::INFINITY } else { err };
                }
            }
        }
        Ok(worst)
    }

    pub fn check<F>(&self, f: F, point: &Tensor) -> Result<f64>
    where
        F: Fn(&mut Tape, Var) -> Result<Var>,
    {
        Ok(self.check_all(|t, vs| f(t, vs[0]), std::slice::from_ref(point))?[0])
    }
}

/// Max relative error between the reverse-mode gradient of `f` at `point` and
/// central differences with step `step`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    GradChecker::new(step).check(f, point)
}
