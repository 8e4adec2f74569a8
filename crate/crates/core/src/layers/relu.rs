use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.max_scalar(0.0)
}

/// Passes `d_out` where the forward input was strictly positive. The
/// subgradient at exactly zero is taken to be zero.
pub fn relu_backward(d_out: &Tensor, cached_x: &Tensor) -> Result<Tensor> {
    if d_out.shape() != cached_x.shape() {
        return Err(Error::shape("relu_backward", d_out.shape(), cached_x.shape()));
    }
    let mut d = d_out.clone();
    for (g, &x) in d.data_mut().iter_mut().zip(cached_x.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(d)
}
