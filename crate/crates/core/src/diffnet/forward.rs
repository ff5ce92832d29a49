//! Forward pass, log-variance bounding, and losses.

use super::{HeadKind, LossKind, NetworkParams};
use crate::fastmath;
use crate::{Error, Result};
use ndarray::{s, Array2, ArrayView1, ArrayView2};

/// Squashes a raw log-variance between learnable bounds:
///
/// ```text
/// v1 = max - softplus(max - raw)
/// v2 = min + softplus(v1 - min)
/// ```
///
/// The result lies in `(min, max + ln 2)`, approaches the bounds smoothly,
/// and is differentiable in `raw` and in both bounds.
pub fn bound_logvar(
    raw: &ArrayView2<f64>,
    max_logvar: &ArrayView1<f64>,
    min_logvar: &ArrayView1<f64>,
) -> Result<Array2<f64>> {
    let d = raw.ncols();
    if max_logvar.len() != d || min_logvar.len() != d {
        return Err(Error::Shape(format!(
            "bound vectors of length {}/{} against {d} columns",
            max_logvar.len(),
            min_logvar.len()
        )));
    }
    for i in 0..d {
        if !(max_logvar[i] > min_logvar[i]) {
            return Err(Error::Config(format!(
                "max_logvar must exceed min_logvar per dimension, violated at {i}"
            )));
        }
    }
    let mut out = raw.to_owned();
    for mut row in out.rows_mut() {
        for i in 0..d {
            let v1 = max_logvar[i] - fastmath::softplus(max_logvar[i] - row[i]);
            row[i] = min_logvar[i] + fastmath::softplus(v1 - min_logvar[i]);
        }
    }
    Ok(out)
}

/// Batched forward pass.
///
/// Hidden layers apply swish; the output layer is affine. A probabilistic
/// head returns `(mean, Some(bounded_logvar))`; a deterministic head returns
/// `(mean, None)`.
pub fn forward(
    params: &NetworkParams,
    inputs: &ArrayView2<f64>,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut x = inputs.to_owned();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = x.dot(&layer.weights) + &layer.biases;
        if k + 1 < n_layers {
            fastmath::swish_in_place(z.as_slice_mut().expect("contiguous"));
        }
        x = z;
    }
    match params.head {
        HeadKind::Deterministic => Ok((x, None)),
        HeadKind::Probabilistic => {
            let d = params.output_dim();
            let mean = x.slice(s![.., ..d]).to_owned();
            let raw = x.slice(s![.., d..]);
            let bounded = bound_logvar(&raw, &params.max_logvar.view(), &params.min_logvar.view())?;
            Ok((mean, Some(bounded)))
        }
    }
}

/// Sum over examples of the squared Euclidean residual norm.
pub fn mse_loss(mean: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> Result<f64> {
    if mean.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "mean {:?} vs targets {:?}",
            mean.dim(),
            targets.dim()
        )));
    }
    let mut total = 0.0;
    for (m, t) in mean.iter().zip(targets.iter()) {
        let r = m - t;
        total += r * r;
    }
    Ok(total)
}

/// Gaussian negative log-likelihood with diagonal covariance
/// `Sigma = exp(bounded_logvar)`, summed over examples:
///
/// ```text
/// sum_n (mu_n - s_n)^T Sigma_n^-1 (mu_n - s_n) + log det Sigma_n
/// ```
///
/// The additive Gaussian constant is omitted. The bound regularizer is not
/// part of this term; see [`loss`].
pub fn gaussian_nll(
    mean: &ArrayView2<f64>,
    bounded_logvar: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
) -> Result<f64> {
    if mean.dim() != targets.dim() || mean.dim() != bounded_logvar.dim() {
        return Err(Error::Shape(format!(
            "mean {:?}, logvar {:?}, targets {:?}",
            mean.dim(),
            bounded_logvar.dim(),
            targets.dim()
        )));
    }
    let mut total = 0.0;
    for ((m, lv), t) in mean.iter().zip(bounded_logvar.iter()).zip(targets.iter()) {
        if !m.is_finite() || !lv.is_finite() || !t.is_finite() {
            return Err(Error::NonFinite("gaussian_nll input".into()));
        }
        let r = m - t;
        total += r * r * fastmath::exp(-lv) + lv;
    }
    Ok(total)
}

/// Scalar training loss for `params` on `batch` under `kind`, including the
/// bound regularizer for the Gaussian loss. This is the function the
/// finite-difference oracle probes.
pub fn loss(params: &NetworkParams, inputs: &ArrayView2<f64>, targets: &ArrayView2<f64>, kind: LossKind) -> Result<f64> {
    let (mean, logvar) = forward(params, inputs)?;
    match kind {
        LossKind::SquaredError => mse_loss(&mean.view(), targets),
        LossKind::GaussianNll { bound_penalty } => {
            let lv = logvar.ok_or_else(|| {
                Error::Config("gaussian loss requires a probabilistic head".into())
            })?;
            let nll = gaussian_nll(&mean.view(), &lv.view(), targets)?;
            let span: f64 = params
                .max_logvar
                .iter()
                .zip(params.min_logvar.iter())
                .map(|(hi, lo)| hi - lo)
                .sum();
            Ok(nll + bound_penalty * span)
        }
    }
}
