//! Differentiable layers sharing one forward/backward contract.
//!
//! Every layer caches what it needs from its last forward pass; `backward`
//! consumes the upstream gradient and returns the gradient with respect to
//! the layer input. Parameterized layers also record their parameter
//! gradients until the next backward.

mod conv;
mod dense;
mod pool;
mod relu;
mod stochastic;

use rand::RngCore;

pub use conv::ConvLayer;
pub use dense::DenseLayer;
pub use pool::{maxpool2x2, maxpool_backward, PoolSwitches};
pub use relu::{relu, relu_backward};
pub use stochastic::{dropout, dropout_with_mask, gaussian_noise, Dropout};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Training mode carries the run's random generator; evaluation mode is
/// deterministic.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Gradients produced by one backward call.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_weights: Option<Tensor>,
    pub d_bias: Option<Tensor>,
    pub d_input: Tensor,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Relu { cached_input: Option<Tensor> },
    Conv(ConvLayer),
    MaxPool { switches: Option<PoolSwitches> },
    Dropout(Dropout),
    /// `[N, ...] → [N, prod(...)]`.
    Flatten { input_shape: Option<Vec<usize>> },
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu { cached_input: None }
    }

    pub fn max_pool() -> Self {
        Layer::MaxPool { switches: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu { .. } => "relu",
            Layer::Conv(_) => "conv",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten { .. } => "flatten",
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Relu { cached_input } => {
                *cached_input = Some(x.clone());
                Ok(relu(x))
            }
            Layer::Conv(c) => c.forward(x),
            Layer::MaxPool { switches } => {
                let (y, s) = maxpool2x2(x)?;
                *switches = Some(s);
                Ok(y)
            }
            Layer::Dropout(d) => d.forward(x, mode),
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                x.clone().reshape(&[x.rows(), x.row_len()])
            }
        }
    }

    /// Returns the full gradient set; parameter entries are `None` for
    /// parameter-free layers.
    pub fn backward(&mut self, d_out: &Tensor) -> Result<LayerGradients> {
        let input_only = |d_input| LayerGradients {
            d_weights: None,
            d_bias: None,
            d_input,
        };
        match self {
            Layer::Dense(d) => d.backward(d_out),
            Layer::Conv(c) => c.backward(d_out),
            Layer::Relu { cached_input } => {
                let x = cached_input
                    .as_ref()
                    .ok_or(Error::BackwardBeforeForward { op: "relu_backward" })?;
                relu_backward(d_out, x).map(input_only)
            }
            Layer::MaxPool { switches } => {
                let s = switches
                    .as_ref()
                    .ok_or(Error::BackwardBeforeForward { op: "maxpool_backward" })?;
                maxpool_backward(d_out, s).map(input_only)
            }
            Layer::Dropout(d) => d.backward(d_out).map(input_only),
            Layer::Flatten { input_shape } => {
                let shape = input_shape
                    .as_ref()
                    .ok_or(Error::BackwardBeforeForward { op: "flatten_backward" })?;
                d_out.clone().reshape(shape).map(input_only)
            }
        }
    }

    /// Trainable tensors as `(name, tensor)`, weights before bias.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Dense(d) => vec![("weights", d.weights()), ("bias", d.bias())],
            Layer::Conv(c) => vec![("filters", c.filters()), ("bias", c.bias())],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => d.params_mut().into_iter().collect(),
            Layer::Conv(c) => c.params_mut().into_iter().collect(),
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, compare, DEFAULT_EPS, DEFAULT_TOLERANCE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    pub(crate) fn random_away_from_zero<R: Rng>(shape: &[usize], margin: f64, rng: &mut R) -> Tensor {
        let mut t = random_tensor(shape, rng);
        for v in t.data_mut() {
            while v.abs() < margin {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        t
    }

    /// Random linear functional used as the downstream scalar loss.
    pub(crate) fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    fn stack_forward(stack: &mut [Layer], x: &Tensor) -> Tensor {
        stack
            .iter_mut()
            .fold(x.clone(), |h, l| l.forward(&h, &mut Mode::Eval).unwrap())
    }

    #[test]
    fn dense_relu_dense_stack_backprops_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_tensor(&[4, 3], &mut rng);
        let base = vec![
            Layer::Dense(DenseLayer::new(3, 5, 1.0, &mut rng).unwrap()),
            Layer::relu(),
            Layer::Dense(DenseLayer::new(5, 2, 1.0, &mut rng).unwrap()),
        ];
        let r = random_tensor(&[4, 2], &mut rng);

        let mut stack = base.clone();
        let pre = stack[..1].iter_mut().fold(x.clone(), |h, l| l.forward(&h, &mut Mode::Eval).unwrap());
        assert!(pre.data().iter().all(|v| v.abs() > 1e-4), "hidden unit too close to the kink");
        stack_forward(&mut stack, &x);
        let mut d = r.clone();
        let mut grads = Vec::new();
        for layer in stack.iter_mut().rev() {
            let g = layer.backward(&d).unwrap();
            d = g.d_input.clone();
            grads.push(g);
        }
        grads.reverse();

        let loss = |layers: &[Layer], x: &Tensor| {
            let mut s = layers.to_vec();
            weighted_sum(&stack_forward(&mut s, x), &r)
        };
        let nx = central_difference(&x, DEFAULT_EPS, |x| loss(&base, x));
        let c = compare("input", &d, &nx).unwrap();
        assert!(c.passed(DEFAULT_TOLERANCE), "{c}");

        for li in [0, 2] {
            for (pi, name) in ["weights", "bias"].into_iter().enumerate() {
                let p = base[li].params()[pi].1.clone();
                let numeric = central_difference(&p, DEFAULT_EPS, |p| {
                    let mut s = base.clone();
                    *s[li].params_mut()[pi] = p.clone();
                    loss(&s, &x)
                });
                let analytic = if pi == 0 {
                    grads[li].d_weights.as_ref().unwrap()
                } else {
                    grads[li].d_bias.as_ref().unwrap()
                };
                let c = compare(format!("layer{li}.{name}"), analytic, &numeric).unwrap();
                assert!(c.passed(DEFAULT_TOLERANCE), "{c}");
            }
        }
    }

    #[test]
    fn flatten_round_trips_shape() {
        let mut l = Layer::flatten();
        let x = Tensor::zeros(&[2, 3, 4, 4]);
        let y = l.forward(&x, &mut Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 48]);
        let d = l.backward(&y).unwrap().d_input;
        assert_eq!(d.shape(), x.shape());
    }

    #[test]
    fn parameter_free_layers_require_forward_first() {
        for mut l in [Layer::relu(), Layer::max_pool(), Layer::flatten()] {
            assert!(matches!(
                l.backward(&Tensor::zeros(&[1, 1])),
                Err(Error::BackwardBeforeForward { .. })
            ));
        }
    }
}
