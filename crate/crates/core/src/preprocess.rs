//! PCA projection, per-image and per-pixel normalization, and mirror/jitter
//! augmentation for image batches.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Principal subspace fit on a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `[D]`
    pub mean: Tensor,
    /// `[D × d]`, orthonormal columns.
    pub components: Tensor,
    /// Non-increasing, one per component (population convention, `/N`).
    pub explained_variances: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.components.shape()[1]
    }
}

fn column_means(x: &Tensor) -> Vec<f64> {
    let d = x.row_len();
    let mut mean = vec![0.0; d];
    for i in 0..x.rows() {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let n = x.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn centered(x: &Tensor, mean: &[f64]) -> Tensor {
    let mut c = x.clone();
    for i in 0..c.rows() {
        for (v, &m) in c.row_mut(i).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    c
}

/// Eigendecomposition of the `D × D` covariance of `x`, keeping the top `d`
/// directions. Each component is signed so its largest-magnitude entry is
/// positive (the first such entry on ties).
pub fn pca_fit(x: &Tensor, d: usize) -> Result<PcaModel> {
    if x.rank() != 2 {
        return Err(Error::invalid_shape("pca_fit", format!("expected [N × D], got {:?}", x.shape())));
    }
    let (n, dim) = (x.rows(), x.row_len());
    if d == 0 || d > dim {
        return Err(Error::domain("pca_fit", format!("target dimension {d} outside 1..={dim}")));
    }
    if n <= d {
        return Err(Error::domain("pca_fit", format!("need more rows than components ({n} <= {d})")));
    }
    // Canonical row order makes the fit independent of the input permutation.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let x = x.select_rows(&order)?;

    let mean = column_means(&x);
    let xc = centered(&x, &mean);
    let cov = xc.matmul_tn(&xc)?.scale(1.0 / n as f64);
    // Symmetrize exactly so the eigensolver sees a symmetric matrix.
    let cov = DMatrix::from_fn(dim, dim, |i, j| {
        0.5 * (cov.data()[i * dim + j] + cov.data()[j * dim + i])
    });
    let eig = SymmetricEigen::new(cov);

    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let keep = &idx[..d];

    let mut components = Tensor::zeros(&[dim, d]);
    let mut variances = Vec::with_capacity(d);
    for (col, &e) in keep.iter().enumerate() {
        let v = eig.eigenvectors.column(e);
        let mut lead = 0;
        for r in 1..dim {
            if v[r].abs() > v[lead].abs() {
                lead = r;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            components.data_mut()[r * d + col] = sign * v[r];
        }
        // Round-off can leave tiny negatives for null directions.
        variances.push(eig.eigenvalues[e].max(0.0));
    }
    Ok(PcaModel {
        mean: Tensor::vector(mean)?,
        components,
        explained_variances: variances,
    })
}

/// `(X − mean) · components`.
pub fn pca_transform(model: &PcaModel, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || x.row_len() != model.input_dim() {
        return Err(Error::shape("pca_transform", x.shape(), model.components.shape()));
    }
    centered(x, model.mean.data()).matmul(&model.components)
}

/// `Z · componentsᵀ + mean`; exact inverse only when `d == D`.
pub fn pca_inverse_transform(model: &PcaModel, z: &Tensor) -> Result<Tensor> {
    if z.rank() != 2 || z.row_len() != model.output_dim() {
        return Err(Error::shape("pca_inverse_transform", z.shape(), model.components.shape()));
    }
    let mut x = z.matmul_nt(&model.components)?;
    for i in 0..x.rows() {
        for (v, &m) in x.row_mut(i).iter_mut().zip(model.mean.data()) {
            *v += m;
        }
    }
    Ok(x)
}

/// Centre an image, then rescale it to Euclidean norm 100.
pub fn face_normalize(image: &Tensor) -> Result<Tensor> {
    let n = image.len() as f64;
    let mean = image.sum_all() / n;
    let c = image.map(|v| v - mean);
    let norm = c.squared_norm().sqrt();
    if norm.is_nan() || norm <= 0.0 {
        return Err(Error::Degenerate {
            op: "face_normalize",
            detail: "image is constant after mean removal".into(),
        });
    }
    Ok(c.scale(100.0 / norm))
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-column standardization fit on a training matrix. Uses the population
/// standard deviation, floored at [`STD_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStandardizer {
    pub mean: Tensor,
    pub std: Tensor,
}

impl PixelStandardizer {
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() < 2 {
            return Err(Error::invalid_shape("PixelStandardizer::fit", format!("{:?}", x.shape())));
        }
        let mean = column_means(x);
        let n = x.rows() as f64;
        let mut var = vec![0.0; mean.len()];
        for i in 0..x.rows() {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(PixelStandardizer {
            mean: Tensor::vector(mean)?,
            std: Tensor::vector(std)?,
        })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 || x.row_len() != self.mean.len() {
            return Err(Error::shape("PixelStandardizer::apply", x.shape(), self.mean.shape()));
        }
        let mut y = x.clone();
        for i in 0..y.rows() {
            for ((v, &m), &s) in y.row_mut(i).iter_mut().zip(self.mean.data()).zip(self.std.data()) {
                *v = (*v - m) / s;
            }
        }
        Ok(y)
    }
}

/// Random horizontal mirroring and integer translation of image batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub mirror_prob: f64,
    pub max_jitter: usize,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            mirror_prob: 0.5,
            max_jitter: 2,
        }
    }
}

/// Horizontally mirrors each `H × W` plane of one image in place.
pub fn mirror_image(image: &mut [f64], width: usize) {
    for row in image.chunks_mut(width) {
        row.reverse();
    }
}

/// Shifts each plane by `(dy, dx)` pixels (positive = down/right), zero
/// filling the exposed border.
pub fn shift_image(image: &[f64], channels: usize, height: usize, width: usize, dy: isize, dx: isize) -> Vec<f64> {
    let mut out = vec![0.0; image.len()];
    for c in 0..channels {
        let plane = c * height * width;
        for y in 0..height {
            let sy = y as isize - dy;
            if sy < 0 || sy >= height as isize {
                continue;
            }
            for x in 0..width {
                let sx = x as isize - dx;
                if sx < 0 || sx >= width as isize {
                    continue;
                }
                out[plane + y * width + x] = image[plane + sy as usize * width + sx as usize];
            }
        }
    }
    out
}

/// Applies mirror (with `mirror_prob`) and a uniform jitter in
/// `[−max_jitter, max_jitter]²` to every image of an `[N × C × H × W]` batch.
pub fn augment<R: Rng + ?Sized>(batch: &Tensor, opts: &Augment, rng: &mut R) -> Result<Tensor> {
    let &[n, c, h, w] = batch.shape() else {
        return Err(Error::invalid_shape("augment", format!("expected [N, C, H, W], got {:?}", batch.shape())));
    };
    if opts.max_jitter >= h.min(w) {
        return Err(Error::domain("augment", format!("jitter {} too large for {h}×{w}", opts.max_jitter)));
    }
    if !(0.0..=1.0).contains(&opts.mirror_prob) {
        return Err(Error::domain("augment", format!("mirror probability {}", opts.mirror_prob)));
    }
    let j = opts.max_jitter as i64;
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..n {
        let mut img = batch.row(i).to_vec();
        if opts.mirror_prob > 0.0 && rng.random::<f64>() < opts.mirror_prob {
            mirror_image(&mut img, w);
        }
        if j > 0 {
            let dy = rng.random_range(-j..=j) as isize;
            let dx = rng.random_range(-j..=j) as isize;
            img = shift_image(&img, c, h, w, dy, dx);
        }
        out.extend(img);
    }
    Tensor::new(batch.shape(), out)
}
