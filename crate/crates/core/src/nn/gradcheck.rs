//! Central finite-difference checks of autograd gradients.

use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

pub struct GradTarget {
    pub name: String,
    pub var: Var,
}

impl GradTarget {
    pub fn new(name: &str, var: &Var) -> Self {
        Self {
            name: name.to_string(),
            var: var.clone(),
        }
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Compares the autograd gradient of the scalar `f()` with central differences
/// of step `h`, on up to `samples` evenly spaced coordinates of every target.
///
/// Returns `‖g_auto − g_fd‖ / max(‖g_fd‖, ‖g_auto‖)` per target.
pub fn finite_difference_check<F>(
    f: F,
    targets: &[GradTarget],
    h: f64,
    samples: usize,
) -> Result<Vec<(String, f64)>>
where
    F: Fn() -> Result<Tensor>,
{
    let loss = f()?;
    let grads = loss.backward()?;
    let mut report = Vec::new();
    for target in targets {
        let var = &target.var;
        let shape = var.shape().clone();
        let base: Vec<f64> = var.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let auto: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?,
            None => vec![0.0; base.len()],
        };
        let n = base.len();
        if n == 0 {
            return Err(Error::InvalidInput(format!("{} is empty", target.name)));
        }
        let count = samples.min(n).max(1);
        let (mut num, mut den_fd, mut den_auto) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..count {
            let i = s * n / count;
            let mut probe = base.clone();
            probe[i] = base[i] + h;
            var.set(
                &Tensor::from_vec(probe.clone(), &shape, var.device())?.to_dtype(var.dtype())?,
            )?;
            let plus = scalar(&f()?)?;
            probe[i] = base[i] - h;
            var.set(&Tensor::from_vec(probe, &shape, var.device())?.to_dtype(var.dtype())?)?;
            let minus = scalar(&f()?)?;
            let fd = (plus - minus) / (2.0 * h);
            num += (auto[i] - fd).powi(2);
            den_fd += fd * fd;
            den_auto += auto[i] * auto[i];
        }
        var.set(&Tensor::from_vec(base, &shape, var.device())?.to_dtype(var.dtype())?)?;
        let den = den_fd.max(den_auto).sqrt();
        let rel = if den < 1e-12 {
            num.sqrt()
        } else {
            num.sqrt() / den
        };
        report.push((target.name.clone(), rel));
    }
    Ok(report)
}
