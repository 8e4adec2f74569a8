use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::LayerGradients;
use crate::tensor::Tensor;

/// 2-D cross-correlation (no kernel flip) with zero padding and a
/// per-output-channel bias. Filters are `[out × in × kh × kw]`.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    filters: Tensor,
    bias: Tensor,
    padding: usize,
    stride: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    input_shape: Vec<usize>,
    // One unfolded [C·kh·kw × Ho·Wo] patch matrix per image.
    columns: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    padding: usize,
    stride: usize,
}

impl ConvLayer {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, init_std)
            .map_err(|e| Error::domain("ConvLayer::new", format!("init std {init_std}: {e}")))?;
        let n = out_channels * in_channels * kernel * kernel;
        let f: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        Self::from_parts(
            Tensor::new(&[out_channels, in_channels, kernel, kernel], f)?,
            Tensor::zeros(&[out_channels]),
            padding,
            1,
        )
    }

    pub fn from_parts(filters: Tensor, bias: Tensor, padding: usize, stride: usize) -> Result<Self> {
        if filters.rank() != 4 || bias.shape() != [filters.shape()[0]] {
            return Err(Error::shape("ConvLayer::from_parts", filters.shape(), bias.shape()));
        }
        if stride == 0 {
            return Err(Error::domain("ConvLayer::from_parts", "stride must be positive"));
        }
        Ok(ConvLayer {
            filters,
            bias,
            padding,
            stride,
            cache: None,
        })
    }

    pub fn filters(&self) -> &Tensor {
        &self.filters
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.filters, &mut self.bias]
    }

    /// Output shape for an `[N, C, H, W]` input.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        Ok(vec![input[0], self.out_channels(), g.out_h, g.out_w])
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        let &[_, c, h, w] = input else {
            return Err(Error::invalid_shape(
                "conv2d_forward",
                format!("expected [N, C, H, W], got {input:?}"),
            ));
        };
        let fs = self.filters.shape();
        if c != fs[1] {
            return Err(Error::shape("conv2d_forward", input, fs));
        }
        let (kh, kw) = (fs[2], fs[3]);
        let out = |size: usize, k: usize| -> Result<usize> {
            let padded = size + 2 * self.padding;
            if padded < k {
                return Err(Error::invalid_shape(
                    "conv2d_forward",
                    format!("kernel {k} larger than padded input {padded}"),
                ));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok(Geometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            out_h: out(h, kh)?,
            out_w: out(w, kw)?,
            padding: self.padding,
            stride: self.stride,
        })
    }

    fn flat_filters(&self) -> Tensor {
        let f = self.out_channels();
        self.filters
            .clone()
            .reshape(&[f, self.filters.len() / f])
            .expect("filter volume is positive")
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x.shape())?;
        let n = x.rows();
        let f = self.out_channels();
        let plane = g.out_h * g.out_w;
        let kernel = self.flat_filters();
        let mut out = Vec::with_capacity(n * f * plane);
        let mut columns = Vec::with_capacity(n);
        for i in 0..n {
            let cols = im2col(x.row(i), &g);
            let y = kernel.matmul(&cols)?;
            for (oc, chunk) in y.data().chunks(plane).enumerate() {
                let b = self.bias.data()[oc];
                out.extend(chunk.iter().map(|v| v + b));
            }
            columns.push(cols);
        }
        self.cache = Some(ConvCache {
            input_shape: x.shape().to_vec(),
            columns,
        });
        Tensor::new(&[n, f, g.out_h, g.out_w], out)
    }

    pub fn backward(&self, d_out: &Tensor) -> Result<LayerGradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "conv2d_backward" })?;
        let g = self.geometry(&cache.input_shape)?;
        let n = cache.input_shape[0];
        let f = self.out_channels();
        let expected = [n, f, g.out_h, g.out_w];
        if d_out.shape() != expected {
            return Err(Error::shape("conv2d_backward", d_out.shape(), &expected));
        }
        let plane = g.out_h * g.out_w;
        let kernel = self.flat_filters();
        let mut d_filters = Tensor::zeros(kernel.shape());
        let mut d_bias = vec![0.0; f];
        let mut d_input = Tensor::zeros(&cache.input_shape);
        for (i, cols) in cache.columns.iter().enumerate() {
            let d_y = Tensor::new(&[f, plane], d_out.row(i).to_vec())?;
            d_filters.add_scaled_inplace(1.0, &d_y.matmul_nt(cols)?)?;
            for (oc, chunk) in d_y.data().chunks(plane).enumerate() {
                d_bias[oc] += chunk.iter().sum::<f64>();
            }
            let d_cols = kernel.matmul_tn(&d_y)?;
            col2im_accumulate(&d_cols, &g, d_input.row_mut(i));
        }
        Ok(LayerGradients {
            d_weights: Some(d_filters.reshape(self.filters.shape())?),
            d_bias: Some(Tensor::new(&[f], d_bias)?),
            d_input,
        })
    }
}

fn im2col(image: &[f64], g: &Geometry) -> Tensor {
    let rows = g.channels * g.kh * g.kw;
    let cols = g.out_h * g.out_w;
    let mut out = vec![0.0; rows * cols];
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[r * cols..(r + 1) * cols];
                for oi in 0..g.out_h {
                    let Some(y) = (oi * g.stride + ki).checked_sub(g.padding) else { continue };
                    if y >= g.height {
                        continue;
                    }
                    for oj in 0..g.out_w {
                        let Some(x) = (oj * g.stride + kj).checked_sub(g.padding) else { continue };
                        if x < g.width {
                            dst[oi * g.out_w + oj] = image[(c * g.height + y) * g.width + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[rows, cols], out).expect("patch matrix dims are positive")
}

fn col2im_accumulate(d_cols: &Tensor, g: &Geometry, d_image: &mut [f64]) {
    let cols = g.out_h * g.out_w;
    let src = d_cols.data();
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &src[r * cols..(r + 1) * cols];
                for oi in 0..g.out_h {
                    let Some(y) = (oi * g.stride + ki).checked_sub(g.padding) else { continue };
                    if y >= g.height {
                        continue;
                    }
                    for oj in 0..g.out_w {
                        let Some(x) = (oj * g.stride + kj).checked_sub(g.padding) else { continue };
                        if x < g.width {
                            d_image[(c * g.height + y) * g.width + x] += row[oi * g.out_w + oj];
                        }
                    }
                }
            }
        }
    }
}
