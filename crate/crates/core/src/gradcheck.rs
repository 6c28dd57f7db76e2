//! Central finite-difference verification of tape gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Fault, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference half-step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Lower bound on the denominator of the relative error, so coordinates
    /// whose true gradient is zero are judged by absolute error instead.
    pub floor: f64,
    /// Planted fault applied to the analytic pass only.
    pub fault: Option<Fault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-3,
            fault: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckOptions {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|numeric|, floor)` over all coordinates.
    pub max_rel_err: f64,
    /// (input index, flat coordinate) where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
    pub passed: bool,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x0: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|t, vs| f(t, vs[0]), core::slice::from_ref(x0), opts)
}

/// Checks the gradient of a scalar function of several tensors at once.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor], fault: Option<Fault>| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::with_fault(fault);
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::invalid("grad_check: function must be scalar-valued"));
        }
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(inputs, opts.fault)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check: value at the base point".into(),
        });
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        })
        .collect();
    drop(tape);

    let mut point: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coordinates: 0,
        passed: true,
    };
    for (k, x) in inputs.iter().enumerate() {
        for c in 0..x.len() {
            let base = x.data()[c];
            point[k].data_mut()[c] = base + opts.step;
            let (t, _, o) = eval(&point, None)?;
            let plus = t.value(o).item();
            point[k].data_mut()[c] = base - opts.step;
            let (t, _, o) = eval(&point, None)?;
            let minus = t.value(o).item();
            point[k].data_mut()[c] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check: input {k}, coordinate {c}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[k].data()[c];
            let rel = (a - numeric).abs() / numeric.abs().max(opts.floor);
            if rel > report.max_rel_err || !rel.is_finite() {
                report.max_rel_err = rel;
                report.worst = (k, c);
            }
            report.coordinates += 1;
        }
    }
    report.passed = report.max_rel_err <= opts.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::OpKind;

    #[test]
    fn exact_for_linear_function() {
        let x0 = Tensor::vector(alloc::vec![0.5, -2.0, 3.25]);
        let r = grad_check(|t, x| Ok(t.sum(x)), &x0, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err < 1e-9);
        assert!(r.passed);
    }

    #[test]
    fn planted_factor_two_is_detected() {
        let x0 = Tensor::vector(alloc::vec![0.5, -2.0, 3.25]);
        let opts = GradCheckOptions {
            fault: Some(Fault {
                op: OpKind::Sum,
                factor: 2.0,
            }),
            ..GradCheckOptions::default()
        };
        let r = grad_check(|t, x| Ok(t.sum(x)), &x0, &opts).unwrap();
        assert!((r.max_rel_err - 1.0).abs() < 1e-6);
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_evaluation_names_coordinate() {
        // finite at x0, infinite anywhere else
        let x0 = Tensor::vector(alloc::vec![1.0, 0.0]);
        let err = grad_check(
            |t, x| {
                let s = t.square(x);
                let s = t.sum(s);
                let v = t.value(s).item();
                if v != 1.0 {
                    let bad = t.constant(Tensor::scalar(f64::INFINITY));
                    return t.add(s, bad);
                }
                Ok(s)
            },
            &x0,
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref context } if context.contains("coordinate 0")));
    }
}
