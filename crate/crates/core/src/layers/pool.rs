use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat input offsets of the selected maximum of each pooling window, in
/// output order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSwitches {
    input_shape: Vec<usize>,
    indices: Vec<usize>,
}

impl PoolSwitches {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// 2×2 max pooling with stride 2 over `[N × C × H × W]`. Windows are scanned
/// row-major and the first maximum wins ties.
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, PoolSwitches)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::invalid_shape(
            "maxpool2x2",
            format!("expected [N, C, H, W], got {:?}", x.shape()),
        ));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid_shape(
            "maxpool2x2",
            format!("spatial dims must be even, got {h}×{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut indices = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                indices.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[n, c, ho, wo], out)?,
        PoolSwitches {
            input_shape: x.shape().to_vec(),
            indices,
        },
    ))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool_backward(d_out: &Tensor, switches: &PoolSwitches) -> Result<Tensor> {
    if d_out.len() != switches.indices.len() {
        return Err(Error::shape(
            "maxpool_backward",
            d_out.shape(),
            &switches.input_shape,
        ));
    }
    let mut d_in = Tensor::zeros(&switches.input_shape);
    let dst = d_in.data_mut();
    for (&g, &idx) in d_out.data().iter().zip(&switches.indices) {
        dst[idx] += g;
    }
    Ok(d_in)
}
