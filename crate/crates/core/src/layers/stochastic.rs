//! Dropout and additive Gaussian input noise.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::Tensor;

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain("dropout", format!("rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and the multiplicative mask that was
/// applied (`None` when the call was an identity).
pub fn dropout_with_mask(x: &Tensor, rate: f64, mode: &mut Mode<'_>) -> Result<(Tensor, Option<Vec<f64>>)> {
    check_rate(rate)?;
    let rng = match mode {
        Mode::Train(rng) if rate > 0.0 => rng,
        _ => return Ok((x.clone(), None)),
    };
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

pub fn dropout(x: &Tensor, rate: f64, mode: &mut Mode<'_>) -> Result<Tensor> {
    dropout_with_mask(x, rate, mode).map(|(y, _)| y)
}

/// `x + ε`, `ε ~ N(0, std²)` per element. `std == 0` returns `x` unchanged
/// without drawing.
pub fn gaussian_noise<R: RngCore + ?Sized>(x: &Tensor, std: f64, rng: &mut R) -> Result<Tensor> {
    if !std.is_finite() || std < 0.0 {
        return Err(Error::domain("gaussian_noise", format!("std must be finite and >= 0, got {std}")));
    }
    if std == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, std).expect("std validated above");
    let mut y = x.clone();
    for v in y.data_mut() {
        *v += normal.sample(rng);
    }
    Ok(y)
}

/// Dropout layer state: the rate and the mask of the last training forward.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    mask: Option<Option<Vec<f64>>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn forward(&mut self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        let (y, mask) = dropout_with_mask(x, self.rate, mode)?;
        self.mask = Some(mask);
        Ok(y)
    }

    pub fn backward(&self, d_out: &Tensor) -> Result<Tensor> {
        match &self.mask {
            None => Err(Error::BackwardBeforeForward { op: "dropout_backward" }),
            Some(None) => Ok(d_out.clone()),
            Some(Some(mask)) => {
                if mask.len() != d_out.len() {
                    return Err(Error::domain(
                        "dropout_backward",
                        format!("gradient has {} entries, mask {}", d_out.len(), mask.len()),
                    ));
                }
                let mut d = d_out.clone();
                for (v, &m) in d.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                Ok(d)
            }
        }
    }
}
