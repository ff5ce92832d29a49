//! Minimal differentiable multilayer perceptron.
//!
//! Fixed topology: swish hidden layers, affine output. A probabilistic head
//! emits `2 * d_out` values per row (mean and raw log-variance); the raw
//! log-variance is squashed between two learnable per-dimension bounds before
//! use. Gradients are exact reverse-mode, hand-derived for this topology, and
//! checked against central finite differences in the test suite.

mod adam;
mod backprop;
mod checkpoint;
mod forward;

pub use adam::{adam_step, adam_step_in_place, AdamConfig, AdamState};
pub use backprop::{gradient, loss_and_gradient};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{bound_logvar, forward, gaussian_nll, loss, mse_loss};

use crate::{Error, Result};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::fastmath::swish;

/// Output head of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Point predictions: the final layer has `d_out` outputs.
    Deterministic,
    /// Diagonal Gaussian: the final layer has `2 * d_out` outputs
    /// (mean, raw log-variance).
    Probabilistic,
}

/// One dense layer. Weights are stored `(fan_in, fan_out)` so a batch of row
/// vectors forwards as `x.dot(w) + b`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Full parameter set of one network, including the learnable log-variance
/// bounds. The bounds are carried for both head kinds so that gradients and
/// optimizer state stay shape-congruent; deterministic heads never read them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub head: HeadKind,
    /// Upper log-variance bound, one entry per output dimension.
    pub max_logvar: Array1<f64>,
    /// Lower log-variance bound, one entry per output dimension.
    pub min_logvar: Array1<f64>,
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    /// Logical output dimension (`d_out`, not the raw final-layer width).
    pub fn output_dim(&self) -> usize {
        let last = self.layers.last().expect("at least one layer").weights.ncols();
        match self.head {
            HeadKind::Deterministic => last,
            HeadKind::Probabilistic => last / 2,
        }
    }

    /// Logical layer widths `[d_in, hidden.., d_out]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.weights.nrows()).collect();
        w.push(self.output_dim());
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum::<usize>()
            + self.max_logvar.len()
            + self.min_logvar.len()
    }
}

/// A training batch: rows are examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "batch rows differ: {} inputs vs {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch contains non-finite entries".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss selector for training and gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Sum of squared residual norms over the batch.
    SquaredError,
    /// Gaussian negative log-likelihood (quadratic + log-det terms) plus
    /// `bound_penalty * sum(max_logvar - min_logvar)`.
    GaussianNll { bound_penalty: f64 },
}

/// Gradient (or any parameter-shaped accumulator) for a [`NetworkParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gradient {
    pub layers: Vec<LayerParams>,
    pub max_logvar: Array1<f64>,
    pub min_logvar: Array1<f64>,
}

impl Gradient {
    /// Zero gradient with shapes matching `params`.
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradient {
            layers: params
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.raw_dim()),
                })
                .collect(),
            max_logvar: Array1::zeros(params.max_logvar.raw_dim()),
            min_logvar: Array1::zeros(params.min_logvar.raw_dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite()))
            && self.max_logvar.iter().all(|v| v.is_finite())
            && self.min_logvar.iter().all(|v| v.is_finite())
    }
}

/// Weight draws come from a Gaussian inflated by this factor and are rejected
/// outside two target standard deviations, so the kept draws have variance
/// `1/fan_in` while never exceeding `2/sqrt(fan_in)` in magnitude.
const TRUNC_SIGMA_INFLATION: f64 = 1.377_902_124_118_482_6;

/// Initial upper log-variance bound per output dimension.
pub const INIT_MAX_LOGVAR: f64 = 0.5;
/// Initial lower log-variance bound per output dimension.
pub const INIT_MIN_LOGVAR: f64 = -10.0;

/// Builds a network with truncated-Gaussian weights (variance `1/fan_in`,
/// rejected beyond two standard deviations), zero biases, and log-variance
/// bounds at `(+0.5, -10)`.
///
/// `widths` are logical: `[d_in, hidden.., d_out]`. For a probabilistic head
/// the final layer is widened internally to `2 * d_out`.
pub fn init_params(widths: &[usize], head: HeadKind, rng: &mut ChaCha8Rng) -> Result<NetworkParams> {
    if widths.len() < 2 {
        return Err(Error::Config(format!(
            "need at least two layer widths, got {}",
            widths.len()
        )));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Config("layer widths must be positive".into()));
    }

    let d_out = *widths.last().unwrap();
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for k in 0..widths.len() - 1 {
        let fan_in = widths[k];
        let fan_out = if k == widths.len() - 2 && head == HeadKind::Probabilistic {
            2 * d_out
        } else {
            widths[k + 1]
        };
        let sigma = (1.0 / fan_in as f64).sqrt();
        let cutoff = 2.0 * sigma;
        let draw_sigma = TRUNC_SIGMA_INFLATION * sigma;
        let mut weights = Array2::zeros((fan_in, fan_out));
        for w in weights.iter_mut() {
            // Rejection sampling keeps every draw strictly inside the cutoff.
            loop {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                let candidate = draw_sigma * z;
                if candidate.abs() <= cutoff {
                    *w = candidate;
                    break;
                }
            }
        }
        layers.push(LayerParams {
            weights,
            biases: Array1::zeros(fan_out),
        });
    }

    Ok(NetworkParams {
        layers,
        head,
        max_logvar: Array1::from_elem(d_out, INIT_MAX_LOGVAR),
        min_logvar: Array1::from_elem(d_out, INIT_MIN_LOGVAR),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_rejects_bad_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_params(&[], HeadKind::Deterministic, &mut rng).is_err());
        assert!(init_params(&[4], HeadKind::Deterministic, &mut rng).is_err());
        assert!(init_params(&[4, 0, 2], HeadKind::Deterministic, &mut rng).is_err());
    }

    #[test]
    fn init_shapes_and_weight_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = init_params(&[4, 500, 500, 500, 8], HeadKind::Probabilistic, &mut rng).unwrap();
        assert_eq!(p.layers.len(), 4);
        assert_eq!(p.layers[0].weights.dim(), (4, 500));
        assert_eq!(p.layers[3].weights.dim(), (500, 16));
        assert_eq!(p.output_dim(), 8);
        assert_eq!(p.max_logvar.len(), 8);

        let w = &p.layers[0].weights;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = 1.0 / 4.0;
        assert!(
            (var - target).abs() / target < 0.20,
            "layer-1 weight variance {var} not within 20% of {target}"
        );
    }

    #[test]
    fn init_truncation_bound_holds() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = init_params(&[1, 1], HeadKind::Deterministic, &mut rng).unwrap();
            let w = p.layers[0].weights[[0, 0]];
            assert!(w.abs() <= 2.0, "weight {w} escaped the truncation bound");
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        let pa = init_params(&[3, 8, 2], HeadKind::Probabilistic, &mut a).unwrap();
        let pb = init_params(&[3, 8, 2], HeadKind::Probabilistic, &mut b).unwrap();
        for (la, lb) in pa.layers.iter().zip(&pb.layers) {
            assert_eq!(la.weights, lb.weights);
            assert_eq!(la.biases, lb.biases);
        }
        assert_eq!(pa.max_logvar, pb.max_logvar);
        assert_eq!(pa.min_logvar, pb.min_logvar);
    }

    #[test]
    fn bounds_initialized_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_params(&[2, 4, 3], HeadKind::Probabilistic, &mut rng).unwrap();
        for d in 0..3 {
            assert!(p.max_logvar[d] > p.min_logvar[d]);
        }
        assert_eq!(p.max_logvar[0], 0.5);
        assert_eq!(p.min_logvar[0], -10.0);
    }
}
