//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::param::Module;
use crate::tensor::ops::sum_all;
use crate::tensor::{backward, kink, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
    /// Smallest distance to a relu/max/bilinear kink seen in the analytic
    /// pass; central differences with `h` near or above it are unreliable.
    pub kink_margin: f64,
    /// Perturbed evaluations whose branch pattern differs from the analytic
    /// pass, i.e. whose stencil straddles a kink.
    pub stencil_crossings: usize,
}

impl GradCheckReport {
    /// No finite-difference stencil crossed a kink.
    pub fn kink_free(&self) -> bool {
        self.stencil_crossings == 0
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_terms<F>(f: &mut F, inputs: &[Tensor<f64>], at: (usize, usize)) -> Result<(Vec<f64>, u64)>
where
    F: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let (out, seen) = kink::watch(|| f(inputs));
    let terms = out?.to_vec();
    if let Some(v) = terms.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite function value {v} while perturbing input {} coordinate {}",
            at.0, at.1
        )));
    }
    Ok((terms, seen.pattern))
}

/// Compares the gradients of `Σ f` w.r.t. every coordinate of every input
/// against `(Σ f(x+h) - Σ f(x-h)) / 2h`.
///
/// The elements of `f`'s output are differenced before they are summed, so
/// terms that a coordinate does not touch cancel exactly instead of adding
/// roundoff to small derivatives.
///
/// `f` receives trainable leaves for the analytic pass and plain constants for
/// the perturbed passes.
pub fn finite_diff_gradcheck<F>(mut f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let vars: Vec<Tensor<f64>> = inputs.iter().map(Tensor::to_variable).collect();
    let (terms, seen) = kink::watch(|| f(&vars));
    let grads = backward(&sum_all(&terms?))?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords_checked: 0,
        kink_margin: seen.margin,
        stencil_crossings: 0,
    };
    let mut consts: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();

    for (i, var) in vars.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(var) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; var.numel()];
                &zeros
            }
        };
        let base = inputs[i].to_vec();
        for k in 0..base.len() {
            let a = analytic[k];
            if !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite analytic gradient {a} at input {i} coordinate {k}"
                )));
            }
            let mut plus = base.clone();
            plus[k] += h;
            consts[i] = Tensor::from_vec(plus, inputs[i].shape())?;
            let (fp, pp) = eval_terms(&mut f, &consts, (i, k))?;
            let mut minus = base.clone();
            minus[k] -= h;
            consts[i] = Tensor::from_vec(minus, inputs[i].shape())?;
            let (fm, pm) = eval_terms(&mut f, &consts, (i, k))?;
            report.stencil_crossings += usize::from(pp != seen.pattern) + usize::from(pm != seen.pattern);
            let n = fp.iter().zip(&fm).map(|(p, m)| p - m).sum::<f64>() / (2.0 * h);
            let e = relative_error(a, n);
            report.coords_checked += 1;
            if e > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = e;
                report.worst = Some((i, k));
                report.analytic_at_worst = a;
                report.numeric_at_worst = n;
            }
        }
        consts[i] = inputs[i].detach();
    }
    Ok(report)
}

/// Gradcheck over a module's parameters followed by `extra` inputs.
/// `f` receives the module with parameters bound and the extra tensors.
pub fn gradcheck_module<M, F>(module: &M, extra: &[Tensor<f64>], h: f64, mut f: F) -> Result<GradCheckReport>
where
    M: Module<f64> + Clone,
    F: FnMut(&M, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let params = module.param_tensors();
    let n_params = params.len();
    let mut inputs = params;
    inputs.extend_from_slice(extra);
    let mut scratch = module.clone();
    finite_diff_gradcheck(
        |ts| {
            scratch.bind_params(&ts[..n_params])?;
            f(&scratch, &ts[n_params..])
        },
        &inputs,
        h,
    )
}

/// Evaluation points closer than `KINK_CLEARANCE * h` to a relu, max or
/// bilinear kink, or whose report shows stencil crossings, are rejected and
/// resampled by the callers of the checkers.
pub const KINK_CLEARANCE: f64 = 3.0;

/// Smallest distance to a kink during one evaluation of `f` on trainable
/// copies of `inputs`, without running the finite-difference sweep.
pub fn kink_margin<F>(mut f: F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: FnMut(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let vars: Vec<Tensor<f64>> = inputs.iter().map(Tensor::to_variable).collect();
    let (r, seen) = kink::watch(|| f(&vars));
    r?;
    Ok(seen.margin)
}

/// [`kink_margin`] for a module evaluation, parameters included.
pub fn module_kink_margin<M, F>(module: &M, extra: &[Tensor<f64>], mut f: F) -> Result<f64>
where
    M: Module<f64> + Clone,
    F: FnMut(&M, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut scratch = module.clone();
    let n_params = scratch.params().len();
    let mut inputs = scratch.param_tensors();
    inputs.extend_from_slice(extra);
    kink_margin(
        |ts| {
            scratch.bind_params(&ts[..n_params])?;
            f(&scratch, &ts[n_params..])
        },
        &inputs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn square_sum_closed_form() {
        let x = Tensor::from_vec(vec![1.0, 2.0], &[2]).unwrap();
        let vars = [x.to_variable()];
        let g = backward(&ops::sum_all(&ops::mul(&vars[0], &vars[0]).unwrap())).unwrap();
        assert_eq!(g.get(&vars[0]).unwrap(), &[2.0, 4.0]);
        let r = finite_diff_gradcheck(
            |ts| Ok(ops::sum_all(&ops::mul(&ts[0], &ts[0])?)),
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::zeros(&[3]).unwrap();
        let r = finite_diff_gradcheck(|ts| Ok(ops::sum_all(&ops::sigmoid(&ts[0]))), &[x], 1e-6).unwrap();
        assert!(r.max_rel_err < 1e-7);
        assert!((r.analytic_at_worst - 0.25).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu evaluated exactly at the kink: analytic 0, numeric 0.5.
        let x = Tensor::zeros(&[1]).unwrap();
        let r = finite_diff_gradcheck(|ts| Ok(ops::sum_all(&ops::relu(&ts[0]))), &[x], 1e-6).unwrap();
        assert!(r.max_rel_err > 0.5);
        assert_eq!(r.stencil_crossings, 1);
        assert!(!r.kink_free());
    }

    #[test]
    fn nan_is_reported_with_coordinate() {
        let x = Tensor::from_vec(vec![1.0, 0.0], &[2]).unwrap();
        let err = finite_diff_gradcheck(|ts| Ok(ops::sum_all(&ops::sqrt(&ts[0])?)), &[x], 1e-6).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("coordinate 1") || msg.contains("index 1"), "{msg}");
    }
}
