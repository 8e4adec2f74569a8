use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::LayerGradients;
use crate::tensor::Tensor;

/// Fully connected layer, `y = x·W + b` with `W: [in × out]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    cached_input: Option<Tensor>,
}

impl DenseLayer {
    /// Gaussian weights with the given std, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, init_std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::domain("DenseLayer::new", format!("init std {init_std}: {e}")))?;
        let w: Vec<f64> = (0..inputs * outputs).map(|_| normal.sample(rng)).collect();
        Self::from_parts(Tensor::new(&[inputs, outputs], w)?, Tensor::zeros(&[outputs]))
    }

    pub fn from_parts(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || bias.shape() != [weights.shape()[1]] {
            return Err(Error::shape("DenseLayer::from_parts", weights.shape(), bias.shape()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            cached_input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.bias]
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.inputs() {
            return Err(Error::shape("dense_forward", x.shape(), self.weights.shape()));
        }
        let mut y = x.matmul(&self.weights)?;
        let b = self.bias.data();
        for i in 0..y.rows() {
            for (v, &bj) in y.row_mut(i).iter_mut().zip(b) {
                *v += bj;
            }
        }
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&self, d_out: &Tensor) -> Result<LayerGradients> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "dense_backward" })?;
        if d_out.shape() != [x.rows(), self.outputs()] {
            return Err(Error::shape(
                "dense_backward",
                d_out.shape(),
                &[x.rows(), self.outputs()],
            ));
        }
        Ok(LayerGradients {
            d_weights: Some(x.matmul_tn(d_out)?),
            d_bias: Some(column_sums(d_out)),
            d_input: d_out.matmul_nt(&self.weights)?,
        })
    }
}

pub(crate) fn column_sums(t: &Tensor) -> Tensor {
    let cols = t.row_len();
    let mut out = vec![0.0; cols];
    for i in 0..t.rows() {
        for (o, &v) in out.iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    Tensor::new(&[cols], out).expect("column count is positive")
}
