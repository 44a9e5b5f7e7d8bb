//! Central-difference gradient checking.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Skip coordinates where the one-sided slopes disagree, i.e. where the
    /// `[x - h, x + h]` interval straddles a kink (ReLU, abs, max/min tie).
    pub skip_kinks: bool,
    /// Relative disagreement between one-sided slopes that marks a kink.
    pub kink_tol: f64,
    /// Denominator floor of the relative error, so gradients that are zero
    /// analytically are compared in absolute terms.
    pub floor: f64,
    /// Restrict the check to these flat coordinates (all when `None`).
    pub coords: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            skip_kinks: true,
            kink_tol: 1e-3,
            floor: 1e-6,
            coords: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
}

fn eval_scalar<F>(f: &F, shape: &[usize], data: Vec<f64>) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let out = f(&Tensor::new(shape, data)?)?;
    out.item()
}

/// Max relative error between the backward-pass gradient of `f` at `input`
/// and central differences with step `h`, skipping kink coordinates.
pub fn grad_check<F>(f: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let opts = GradCheckOptions {
        h,
        ..GradCheckOptions::default()
    };
    Ok(grad_check_with(f, input, &opts)?.max_rel_err)
}

pub fn grad_check_with<F>(f: F, input: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = input.to_parameter();
    let y = f(&x)?;
    if y.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            y.shape()
        )));
    }
    y.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    compare_gradient(f, input, &analytic, opts)
}

/// Compare a supplied gradient against central differences of `f`.
pub fn compare_gradient<F>(
    f: F,
    input: &Tensor,
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if analytic.len() != input.numel() {
        return Err(Error::dim(
            "grad_check",
            format!(
                "gradient has {} entries for {} inputs",
                analytic.len(),
                input.numel()
            ),
        ));
    }
    let shape = input.shape().to_vec();
    let base = input.data().to_vec();
    let f0 = if opts.skip_kinks {
        eval_scalar(&f, &shape, base.clone())?
    } else {
        0.0
    };
    let coords: Vec<usize> = match &opts.coords {
        Some(c) => c.clone(),
        None => (0..base.len()).collect(),
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for i in coords {
        let mut plus = base.clone();
        plus[i] += opts.h;
        let mut minus = base.clone();
        minus[i] -= opts.h;
        let fp = eval_scalar(&f, &shape, plus)?;
        let fm = eval_scalar(&f, &shape, minus)?;
        if opts.skip_kinks {
            let right = (fp - f0) / opts.h;
            let left = (f0 - fm) / opts.h;
            let scale = right.abs().max(left.abs()).max(opts.floor);
            if (right - left).abs() > opts.kink_tol * scale {
                report.skipped += 1;
                continue;
            }
        }
        let numeric = (fp - fm) / (2.0 * opts.h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some(i);
        }
    }
    Ok(report)
}
