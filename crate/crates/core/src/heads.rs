//! Output objectives over a shared linear map from penultimate activations.
//!
//! All three heads score with the same `(D+1) × K` matrix `W`, whose last row
//! is the bias (the activations are implicitly augmented with a constant 1).
//! They differ only in the loss placed on those scores:
//!
//! * softmax: mean cross-entropy plus `weight_decay · ½‖W‖²`;
//! * L1-SVM: `½‖W‖² + C · Σₙₖ max(1 − sₙₖ tₙₖ, 0)`, one binary machine per class;
//! * L2-SVM: as L1 but with the hinge squared, which makes the loss smooth.
//!
//! `‖W‖²` always excludes the bias row. Hinge terms are summed over the batch
//! and over the `K` one-vs-rest machines, with targets `tₙₖ = +1` for the true
//! class and `−1` otherwise. Each head returns its loss and the gradients with
//! respect to the penultimate activations `h` and to `W`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{argmax_slice, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Softmax,
    L1Svm,
    L2Svm,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Softmax, HeadKind::L1Svm, HeadKind::L2Svm];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Softmax => "softmax",
            HeadKind::L1Svm => "l1svm",
            HeadKind::L2Svm => "l2svm",
        }
    }

    pub fn is_svm(self) -> bool {
        !matches!(self, HeadKind::Softmax)
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "softmax" => Ok(HeadKind::Softmax),
            "l1svm" | "l1-svm" => Ok(HeadKind::L1Svm),
            "l2svm" | "l2-svm" => Ok(HeadKind::L2Svm),
            other => Err(Error::domain(
                "HeadKind::from_str",
                format!("unknown head kind {other:?} (expected softmax, l1svm or l2svm)"),
            )),
        }
    }
}

/// Which objective tops the network, with its constants. `c` is used by the
/// SVM heads and `weight_decay` by softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub num_classes: usize,
    pub input_dim: usize,
    pub c: f64,
    pub weight_decay: f64,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::domain("HeadSpec", format!("need K >= 2 classes, got {}", self.num_classes)));
        }
        if self.input_dim == 0 {
            return Err(Error::domain("HeadSpec", "penultimate dimension must be positive"));
        }
        if self.kind.is_svm() {
            check_c(self.c)?;
        } else if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::domain(
                "HeadSpec",
                format!("weight decay must be finite and >= 0, got {}", self.weight_decay),
            ));
        }
        Ok(())
    }
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::domain("svm head", format!("C must be finite and > 0, got {c}")));
    }
    Ok(())
}

/// `(D+1) × K` head matrix; column `k` is the weight vector of class `k`
/// and the last row holds the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    w: Tensor,
}

impl HeadWeights {
    pub fn new(w: Tensor) -> Result<Self> {
        if w.rank() != 2 || w.shape()[0] < 2 {
            return Err(Error::invalid_shape(
                "HeadWeights::new",
                format!("expected [(D+1) × K] with D >= 1, got {:?}", w.shape()),
            ));
        }
        Ok(HeadWeights { w })
    }

    pub fn zeros(input_dim: usize, num_classes: usize) -> Self {
        HeadWeights {
            w: Tensor::zeros(&[input_dim + 1, num_classes]),
        }
    }

    /// Gaussian weights, zero bias row.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, num_classes: usize, std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::domain("HeadWeights::random", format!("init std {std}: {e}")))?;
        let mut w = Tensor::zeros(&[input_dim + 1, num_classes]);
        for v in &mut w.data_mut()[..input_dim * num_classes] {
            *v = normal.sample(rng);
        }
        Ok(HeadWeights { w })
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0] - 1
    }

    pub fn num_classes(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn into_tensor(self) -> Tensor {
        self.w
    }

    fn weight_rows(&self) -> &[f64] {
        &self.w.data()[..self.input_dim() * self.num_classes()]
    }

    fn bias_row(&self) -> &[f64] {
        &self.w.data()[self.input_dim() * self.num_classes()..]
    }

    /// `W` without its bias row, `[D × K]`.
    pub fn weights_only(&self) -> Tensor {
        Tensor::new(&[self.input_dim(), self.num_classes()], self.weight_rows().to_vec())
            .expect("D and K are positive")
    }

    /// `½‖W‖²` over the non-bias rows.
    pub fn half_sq_norm(&self) -> f64 {
        0.5 * self.weight_rows().iter().map(|v| v * v).sum::<f64>()
    }
}

/// `[N × K]` matrix with `+1` at each row's label and `−1` elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SignTargets(Tensor);

impl SignTargets {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::invalid_shape("SignTargets", format!("expected [N × K], got {:?}", t.shape())));
        }
        for i in 0..t.rows() {
            let row = t.row(i);
            let pos = row.iter().filter(|&&v| v == 1.0).count();
            let neg = row.iter().filter(|&&v| v == -1.0).count();
            if pos != 1 || pos + neg != row.len() {
                return Err(Error::domain(
                    "SignTargets",
                    format!("row {i} must hold exactly one +1 and -1 elsewhere, got {row:?}"),
                ));
            }
        }
        Ok(SignTargets(t))
    }

    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        Ok(SignTargets(encode_targets(labels, num_classes, TargetEncoding::Sign)?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetEncoding {
    OneHot,
    Sign,
}

pub fn encode_targets(labels: &[usize], num_classes: usize, encoding: TargetEncoding) -> Result<Tensor> {
    if labels.is_empty() || num_classes == 0 {
        return Err(Error::domain("encode_targets", "need at least one label and one class"));
    }
    let off = match encoding {
        TargetEncoding::OneHot => 0.0,
        TargetEncoding::Sign => -1.0,
    };
    let mut t = Tensor::full(&[labels.len(), num_classes], off);
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::domain(
                "encode_targets",
                format!("label {y} at row {i} out of range for {num_classes} classes"),
            ));
        }
        t.row_mut(i)[y] = 1.0;
    }
    Ok(t)
}

fn one_hot_labels(y: &Tensor, n: usize, k: usize) -> Result<Vec<usize>> {
    if y.shape() != [n, k] {
        return Err(Error::shape("softmax_head", y.shape(), &[n, k]));
    }
    (0..n)
        .map(|i| {
            let row = y.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones == 1 && ones + zeros == k {
                Ok(row.iter().position(|&v| v == 1.0).expect("one entry is 1"))
            } else {
                Err(Error::domain("softmax_head", format!("label row {i} is not one-hot: {row:?}")))
            }
        })
        .collect()
}

/// Result of one head evaluation.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub loss: f64,
    /// Gradient w.r.t. the (non-augmented) penultimate activations, `[N × D]`.
    pub d_h: Tensor,
    /// Gradient w.r.t. the head matrix, `[(D+1) × K]`.
    pub d_w: Tensor,
    pub scores: Tensor,
}

/// `[h, 1] · W`.
pub fn head_scores(weights: &HeadWeights, h: &Tensor) -> Result<Tensor> {
    let d = weights.input_dim();
    if h.rank() != 2 || h.shape()[1] != d {
        return Err(Error::shape("head_scores", h.shape(), weights.tensor().shape()));
    }
    let mut s = h.matmul(&weights.weights_only())?;
    let b = weights.bias_row();
    for i in 0..s.rows() {
        for (v, &bk) in s.row_mut(i).iter_mut().zip(b) {
            *v += bk;
        }
    }
    Ok(s)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_probs(scores: &Tensor) -> Tensor {
    let mut p = scores.clone();
    if p.rank() != 2 {
        let n = p.len();
        p = p.reshape(&[1, n]).expect("positive length");
    }
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    p.reshape(scores.shape()).expect("shape unchanged")
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over rows of `−log softmax(s)[label]`, without weight cost.
pub fn mean_cross_entropy(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    if scores.rank() != 2 || scores.rows() != labels.len() {
        return Err(Error::shape("mean_cross_entropy", scores.shape(), &[labels.len()]));
    }
    let k = scores.shape()[1];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::domain("mean_cross_entropy", format!("label {y} out of range")));
        }
        let row = scores.row(i);
        total += log_sum_exp(row) - row[y];
    }
    Ok(total / labels.len() as f64)
}

fn margin_violations(scores: &Tensor, targets: &SignTargets) -> Result<Vec<f64>> {
    if scores.shape() != targets.tensor().shape() {
        return Err(Error::shape("svm head", scores.shape(), targets.tensor().shape()));
    }
    Ok(scores
        .data()
        .iter()
        .zip(targets.tensor().data())
        .map(|(s, t)| (1.0 - s * t).max(0.0))
        .collect())
}

/// `Σₙₖ max(1 − sₙₖ tₙₖ, 0)`.
pub fn hinge_sum(scores: &Tensor, targets: &SignTargets) -> Result<f64> {
    Ok(margin_violations(scores, targets)?.iter().sum())
}

/// `Σₙₖ max(1 − sₙₖ tₙₖ, 0)²`.
pub fn squared_hinge_sum(scores: &Tensor, targets: &SignTargets) -> Result<f64> {
    Ok(margin_violations(scores, targets)?.iter().map(|v| v * v).sum())
}

/// Chains `d_scores` back through the shared linear map and adds
/// `reg · W` (non-bias rows) to the weight gradient.
fn backprop_through_scores(
    weights: &HeadWeights,
    h: &Tensor,
    d_scores: &Tensor,
    reg: f64,
) -> Result<(Tensor, Tensor)> {
    let (d, k) = (weights.input_dim(), weights.num_classes());
    let w = weights.weights_only();
    let d_h = d_scores.matmul_nt(&w)?;
    let d_top = h.matmul_tn(d_scores)?;
    let mut d_w = Vec::with_capacity((d + 1) * k);
    d_w.extend(d_top.data().iter().zip(w.data()).map(|(g, wv)| g + reg * wv));
    let mut bias = vec![0.0; k];
    for i in 0..d_scores.rows() {
        for (b, &g) in bias.iter_mut().zip(d_scores.row(i)) {
            *b += g;
        }
    }
    d_w.extend(bias);
    Ok((d_h, Tensor::new(&[d + 1, k], d_w)?))
}

/// Mean cross-entropy plus `weight_decay · ½‖W‖²`; `labels` is one-hot.
pub fn softmax_head(weights: &HeadWeights, h: &Tensor, labels: &Tensor, weight_decay: f64) -> Result<HeadOutput> {
    let scores = head_scores(weights, h)?;
    let (n, k) = (scores.rows(), weights.num_classes());
    let classes = one_hot_labels(labels, n, k)?;
    let data_loss = mean_cross_entropy(&scores, &classes)?;
    let mut d_scores = softmax_probs(&scores);
    for (i, &y) in classes.iter().enumerate() {
        d_scores.row_mut(i)[y] -= 1.0;
    }
    let d_scores = d_scores.scale(1.0 / n as f64);
    let (d_h, d_w) = backprop_through_scores(weights, h, &d_scores, weight_decay)?;
    Ok(HeadOutput {
        loss: data_loss + weight_decay * weights.half_sq_norm(),
        d_h,
        d_w,
        scores,
    })
}

/// `½‖W‖² + C · Σ hinge`. The hinge is not differentiable at margin 1; the
/// indicator `1{1 > s·t}` picks the zero subgradient there.
pub fn l1svm_head(weights: &HeadWeights, h: &Tensor, targets: &SignTargets, c: f64) -> Result<HeadOutput> {
    check_c(c)?;
    let scores = head_scores(weights, h)?;
    let t = targets.tensor();
    let viol = margin_violations(&scores, targets)?;
    let d_scores: Vec<f64> = t
        .data()
        .iter()
        .zip(&viol)
        .map(|(&tv, &v)| if v > 0.0 { -c * tv } else { 0.0 })
        .collect();
    let d_scores = Tensor::new(scores.shape(), d_scores)?;
    let (d_h, d_w) = backprop_through_scores(weights, h, &d_scores, 1.0)?;
    Ok(HeadOutput {
        loss: weights.half_sq_norm() + c * viol.iter().sum::<f64>(),
        d_h,
        d_w,
        scores,
    })
}

/// `½‖W‖² + C · Σ hinge²`; `∂/∂s = −2C·t·max(1 − s·t, 0)`.
pub fn l2svm_head(weights: &HeadWeights, h: &Tensor, targets: &SignTargets, c: f64) -> Result<HeadOutput> {
    check_c(c)?;
    let scores = head_scores(weights, h)?;
    let t = targets.tensor();
    let viol = margin_violations(&scores, targets)?;
    let d_scores: Vec<f64> = t
        .data()
        .iter()
        .zip(&viol)
        .map(|(&tv, &v)| -2.0 * c * tv * v)
        .collect();
    let d_scores = Tensor::new(scores.shape(), d_scores)?;
    let (d_h, d_w) = backprop_through_scores(weights, h, &d_scores, 1.0)?;
    Ok(HeadOutput {
        loss: weights.half_sq_norm() + c * viol.iter().map(|v| v * v).sum::<f64>(),
        d_h,
        d_w,
        scores,
    })
}

/// Per-row argmax of the scores, lowest index on ties. The same rule serves
/// every head: softmax is monotone, so its argmax equals the score argmax.
pub fn predict(scores: &Tensor) -> Vec<usize> {
    let k = scores.shape().last().copied().unwrap_or(1);
    scores.data().chunks(k).map(argmax_slice).collect()
}

/// A head spec bound to its weights.
#[derive(Debug, Clone)]
pub struct Head {
    pub spec: HeadSpec,
    pub weights: HeadWeights,
}

impl Head {
    pub fn new(spec: HeadSpec, weights: HeadWeights) -> Result<Self> {
        spec.validate()?;
        if weights.input_dim() != spec.input_dim || weights.num_classes() != spec.num_classes {
            return Err(Error::shape(
                "Head::new",
                weights.tensor().shape(),
                &[spec.input_dim + 1, spec.num_classes],
            ));
        }
        Ok(Head { spec, weights })
    }

    pub fn scores(&self, h: &Tensor) -> Result<Tensor> {
        head_scores(&self.weights, h)
    }

    /// Loss and gradients of this head's own objective for integer labels.
    pub fn loss_and_grad(&self, h: &Tensor, labels: &[usize]) -> Result<HeadOutput> {
        let k = self.spec.num_classes;
        match self.spec.kind {
            HeadKind::Softmax => {
                let y = encode_targets(labels, k, TargetEncoding::OneHot)?;
                softmax_head(&self.weights, h, &y, self.spec.weight_decay)
            }
            HeadKind::L1Svm => l1svm_head(&self.weights, h, &SignTargets::from_labels(labels, k)?, self.spec.c),
            HeadKind::L2Svm => l2svm_head(&self.weights, h, &SignTargets::from_labels(labels, k)?, self.spec.c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, compare, DEFAULT_EPS, DEFAULT_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn hw(rows: &[&[f64]]) -> HeadWeights {
        HeadWeights::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let s = head_scores(&HeadWeights::zeros(3, 4), &Tensor::ones(&[2, 3])).unwrap();
        assert_eq!(s, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn scores_hand_dot_product() {
        let w = hw(&[&[1.0, -1.0], &[0.0, 0.0]]);
        let s = head_scores(&w, &Tensor::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[2.0, -2.0]);
    }

    #[test]
    fn scores_match_explicit_augmented_column_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d, k) = (6, 5, 4);
        let h = random(&[n, d], &mut rng);
        let w = HeadWeights::new(random(&[d + 1, k], &mut rng)).unwrap();
        let s = head_scores(&w, &h).unwrap();
        for i in 0..n {
            let aug: Vec<f64> = h.row(i).iter().copied().chain([1.0]).collect();
            for kk in 0..k {
                let expected: f64 = (0..=d).map(|j| aug[j] * w.tensor().data()[j * k + kk]).sum();
                assert!((s.row(i)[kk] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_scores_rejects_wrong_dim() {
        assert!(matches!(
            head_scores(&HeadWeights::zeros(3, 2), &Tensor::zeros(&[1, 4])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let p = softmax_probs(&Tensor::zeros(&[1, 4]));
        assert_eq!(p.data(), &[0.25; 4]);
        let s = Tensor::from_rows(&[[0.3, -1.2, 2.0, 0.0]]).unwrap();
        let shifted = s.map(|v| v + 100.0);
        for (a, b) in softmax_probs(&s).data().iter().zip(softmax_probs(&shifted).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_reference_values() {
        // exp(k) / (e + e² + e³), k = 1, 2, 3
        let z: f64 = (1..=3).map(|k| f64::from(k).exp()).sum();
        let oracle: Vec<f64> = (1..=3).map(|k| f64::from(k).exp() / z).collect();
        let p = softmax_probs(&Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        for ((a, o), r) in p.data().iter().zip(&oracle).zip([0.09003, 0.24473, 0.66524]) {
            assert!((a - o).abs() < 1e-12);
            assert!((a - r).abs() < 5e-6);
        }
        assert!((p.sum_all() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let p = softmax_probs(&Tensor::from_rows(&[[1000.0, 0.0, -1000.0]]).unwrap());
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_confident_rows_have_zero_data_loss() {
        // Scores so large that p = 1 to machine precision.
        let w = hw(&[&[1000.0, -1000.0], &[0.0, 0.0]]);
        let h = Tensor::from_rows(&[[1.0], [-1.0]]).unwrap();
        let y = encode_targets(&[0, 1], 2, TargetEncoding::OneHot).unwrap();
        let out = softmax_head(&w, &h, &y, 0.0).unwrap();
        assert!(out.loss.abs() < 1e-300);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn softmax_zero_weights_give_log_k() {
        let h = Tensor::ones(&[3, 5]);
        let y = encode_targets(&[0, 4, 9], 10, TargetEncoding::OneHot).unwrap();
        let out = softmax_head(&HeadWeights::zeros(5, 10), &h, &y, 0.001).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_non_one_hot_rows() {
        let y = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let r = softmax_head(&HeadWeights::zeros(1, 2), &Tensor::ones(&[1, 1]), &y, 0.0);
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn svm_heads_reject_nonpositive_c() {
        let t = SignTargets::from_labels(&[0], 2).unwrap();
        let (w, h) = (HeadWeights::zeros(1, 2), Tensor::ones(&[1, 1]));
        for c in [0.0, -1.0, f64::NAN] {
            assert!(matches!(l1svm_head(&w, &h, &t, c), Err(Error::Domain { .. })));
            assert!(matches!(l2svm_head(&w, &h, &t, c), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn l1_inactive_hinge_gives_zero_data_loss_and_gradient() {
        let w = hw(&[&[2.0, -2.0], &[0.0, 0.0]]);
        let h = Tensor::from_rows(&[[1.0], [-1.0]]).unwrap();
        let t = SignTargets::from_labels(&[0, 1], 2).unwrap();
        let out = l1svm_head(&w, &h, &t, 1.0).unwrap();
        assert_eq!(out.loss, w.half_sq_norm());
        assert!(out.d_h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_single_machine_half_margin() {
        // one machine, K = 1: s·t = 0.5 → hinge 0.5; ½‖w‖² = 0.125
        let w = hw(&[&[0.5], &[0.0]]);
        let t = SignTargets::new(Tensor::from_rows(&[[1.0]]).unwrap()).unwrap();
        let out = l1svm_head(&w, &Tensor::ones(&[1, 1]), &t, 1.0).unwrap();
        assert!((out.loss - (0.125 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn l2_margin_exactly_one_contributes_nothing() {
        let w = hw(&[&[1.0], &[0.0]]);
        let t = SignTargets::new(Tensor::from_rows(&[[1.0]]).unwrap()).unwrap();
        let out = l2svm_head(&w, &Tensor::ones(&[1, 1]), &t, 3.0).unwrap();
        assert_eq!(out.loss, 0.5);
        assert_eq!(out.d_h.data(), &[0.0]);
    }

    #[test]
    fn l2_hand_example_matches_formula_and_finite_differences() {
        // w = [1, -1], h = [0.2, 0.1]: wᵀh = 0.1, violation 0.9,
        // d_h = -2 · 0.9 · [1, -1]; loss = ½·2 + 0.81.
        let w = hw(&[&[1.0], &[-1.0], &[0.0]]);
        let h = Tensor::from_rows(&[[0.2, 0.1]]).unwrap();
        let t = SignTargets::new(Tensor::from_rows(&[[1.0]]).unwrap()).unwrap();
        let out = l2svm_head(&w, &h, &t, 1.0).unwrap();
        assert!((out.loss - 1.81).abs() < 1e-12);
        assert!((out.d_h.data()[0] + 1.8).abs() < 1e-12);
        assert!((out.d_h.data()[1] - 1.8).abs() < 1e-12);
        let numeric = central_difference(&h, DEFAULT_EPS, |h| l2svm_head(&w, h, &t, 1.0).unwrap().loss);
        let c = compare("d_h", &out.d_h, &numeric).unwrap();
        assert!(c.passed(DEFAULT_TOLERANCE), "{c}");
    }

    fn check_head_gradients(
        kind: HeadKind,
        weights: &HeadWeights,
        h: &Tensor,
        labels: &[usize],
        c: f64,
        wd: f64,
    ) {
        let spec = HeadSpec {
            kind,
            num_classes: weights.num_classes(),
            input_dim: weights.input_dim(),
            c,
            weight_decay: wd,
        };
        let head = Head::new(spec, weights.clone()).unwrap();
        let out = head.loss_and_grad(h, labels).unwrap();
        let loss_w = |w: &Tensor| {
            Head::new(spec, HeadWeights::new(w.clone()).unwrap())
                .unwrap()
                .loss_and_grad(h, labels)
                .unwrap()
                .loss
        };
        let nw = central_difference(weights.tensor(), DEFAULT_EPS, loss_w);
        let nh = central_difference(h, DEFAULT_EPS, |h| head.loss_and_grad(h, labels).unwrap().loss);
        for cmp in [
            compare("d_w", &out.d_w, &nw).unwrap(),
            compare("d_h", &out.d_h, &nh).unwrap(),
        ] {
            assert!(cmp.passed(DEFAULT_TOLERANCE), "{kind}: {cmp}");
        }
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = HeadWeights::new(random(&[4, 5], &mut rng)).unwrap();
        let h = random(&[4, 3], &mut rng);
        check_head_gradients(HeadKind::Softmax, &w, &h, &[0, 3, 4, 1], 1.0, 0.01);
    }

    #[test]
    fn l2_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = HeadWeights::new(random(&[5, 4], &mut rng)).unwrap();
        let h = random(&[5, 4], &mut rng);
        check_head_gradients(HeadKind::L2Svm, &w, &h, &[0, 1, 2, 3, 1], 0.7, 0.0);
    }

    #[test]
    fn l1_gradients_match_finite_differences_off_the_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let labels = [0, 2, 1, 2];
        let (w, h) = loop {
            let w = HeadWeights::new(random(&[4, 3], &mut rng).scale(2.0)).unwrap();
            let h = random(&[4, 3], &mut rng);
            let s = head_scores(&w, &h).unwrap();
            let t = SignTargets::from_labels(&labels, 3).unwrap();
            let clear = s
                .data()
                .iter()
                .zip(t.tensor().data())
                .all(|(s, t)| (s * t - 1.0).abs() >= 1e-3);
            if clear {
                break (w, h);
            }
        };
        check_head_gradients(HeadKind::L1Svm, &w, &h, &labels, 1.3, 0.0);
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict(&Tensor::from_rows(&[[0.1, 0.9, 0.2]]).unwrap()), vec![1]);
        assert_eq!(predict(&Tensor::from_rows(&[[0.5, 0.5]]).unwrap()), vec![0]);
    }

    #[test]
    fn encode_targets_examples() {
        let s = encode_targets(&[2], 4, TargetEncoding::Sign).unwrap();
        assert_eq!(s.data(), &[-1.0, -1.0, 1.0, -1.0]);
        let o = encode_targets(&[0], 2, TargetEncoding::OneHot).unwrap();
        assert_eq!(o.data(), &[1.0, 0.0]);
        assert!(matches!(
            encode_targets(&[4], 4, TargetEncoding::OneHot),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn sign_targets_validation() {
        assert!(SignTargets::new(Tensor::from_rows(&[[1.0, 1.0]]).unwrap()).is_err());
        assert!(SignTargets::new(Tensor::from_rows(&[[1.0, 0.0]]).unwrap()).is_err());
        assert!(SignTargets::new(Tensor::from_rows(&[[-1.0, 1.0]]).unwrap()).is_ok());
    }

    #[test]
    fn head_spec_validation() {
        let base = HeadSpec {
            kind: HeadKind::L2Svm,
            num_classes: 2,
            input_dim: 3,
            c: 1.0,
            weight_decay: 0.0,
        };
        assert!(base.validate().is_ok());
        assert!(HeadSpec { num_classes: 1, ..base }.validate().is_err());
        assert!(HeadSpec { c: 0.0, ..base }.validate().is_err());
        assert!(HeadSpec { kind: HeadKind::Softmax, c: 0.0, ..base }.validate().is_ok());
        assert!(HeadSpec { kind: HeadKind::Softmax, weight_decay: -1.0, ..base }.validate().is_err());
    }

    #[test]
    fn head_kind_parses() {
        for k in HeadKind::ALL {
            assert_eq!(k.as_str().parse::<HeadKind>().unwrap(), k);
        }
        assert!("svm".parse::<HeadKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn scores() -> impl Strategy<Value = Tensor> {
            (1usize..6, 2usize..12).prop_flat_map(|(n, k)| {
                proptest::collection::vec(-50.0f64..50.0, n * k)
                    .prop_map(move |d| Tensor::new(&[n, k], d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn argmax_of_probs_equals_argmax_of_scores(s in scores()) {
                prop_assert_eq!(predict(&softmax_probs(&s)), predict(&s));
            }

            #[test]
            fn probabilities_sum_to_one(s in scores()) {
                let p = softmax_probs(&s);
                for i in 0..p.rows() {
                    prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn round_trip_labels(labels in proptest::collection::vec(0usize..7, 1..20)) {
                for enc in [TargetEncoding::OneHot, TargetEncoding::Sign] {
                    let t = encode_targets(&labels, 7, enc).unwrap();
                    prop_assert_eq!(predict(&t), labels.clone());
                }
            }

            #[test]
            fn squared_penalty_below_linear_inside_unit_violation(v in 1e-9f64..1.0) {
                let s = 1.0 - v;
                let t = SignTargets::new(Tensor::from_rows(&[[1.0, -1.0]]).unwrap()).unwrap();
                let st = Tensor::from_rows(&[[s, -1.0]]).unwrap();
                prop_assert!(squared_hinge_sum(&st, &t).unwrap() < hinge_sum(&st, &t).unwrap());
            }

            #[test]
            fn squared_penalty_above_linear_beyond_unit_violation(v in 1.0f64 + 1e-9..50.0) {
                let t = SignTargets::new(Tensor::from_rows(&[[1.0, -1.0]]).unwrap()).unwrap();
                let st = Tensor::from_rows(&[[1.0, v - 1.0]]).unwrap();
                prop_assert!(squared_hinge_sum(&st, &t).unwrap() > hinge_sum(&st, &t).unwrap());
            }

            #[test]
            fn loss_decomposes_into_norm_and_hinge(seed in 0u64..1000, c in 1e-3f64..10.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w = HeadWeights::new(random(&[4, 3], &mut rng)).unwrap();
                let h = random(&[5, 3], &mut rng);
                let t = SignTargets::from_labels(&[0, 1, 2, 0, 1], 3).unwrap();
                let s = head_scores(&w, &h).unwrap();
                let l2 = l2svm_head(&w, &h, &t, c).unwrap().loss;
                let expected = w.half_sq_norm() + c * squared_hinge_sum(&s, &t).unwrap();
                prop_assert!((l2 - expected).abs() <= 1e-12 * expected.abs().max(1.0));
                let tiny = l2svm_head(&w, &h, &t, 1e-300).unwrap().loss;
                prop_assert!((tiny - w.half_sq_norm()).abs() < 1e-15);
            }
        }
    }
}
