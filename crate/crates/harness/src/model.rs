//! A network: preprocessing, a stack of layers and an objective head.

use hingenet_core::layers::{ConvLayer, DenseLayer, Dropout};
use hingenet_core::preprocess::{face_normalize, pca_transform, PcaModel, PixelStandardizer};
use hingenet_core::{Head, HeadKind, HeadOutput, HeadSpec, HeadWeights, Layer, Mode, Tensor};
use rand::Rng;

use crate::config::LayerSpec;
use crate::error::{HarnessError, Result};

/// Rows evaluated per forward pass when scoring a whole dataset.
const EVAL_CHUNK: usize = 500;

/// Transformations fit on the training split and replayed on any input:
/// per-image centring to norm 100, per-pixel standardization, then PCA.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preprocessing {
    pub face_normalize: bool,
    pub standardizer: Option<PixelStandardizer>,
    pub pca: Option<PcaModel>,
}

impl Preprocessing {
    pub fn is_identity(&self) -> bool {
        !self.face_normalize && self.standardizer.is_none() && self.pca.is_none()
    }

    /// Applies every configured step to `[N × D]` rows.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        if self.face_normalize {
            let mut out = Vec::with_capacity(x.len());
            for i in 0..x.rows() {
                out.extend(face_normalize(&Tensor::vector(x.row(i).to_vec())?)?.into_data());
            }
            x = Tensor::new(x.shape(), out)?;
        }
        if let Some(s) = &self.standardizer {
            x = s.apply(&x)?;
        }
        if let Some(p) = &self.pca {
            x = pca_transform(p, &x)?;
        }
        Ok(x)
    }
}

/// Per-example output shape after each layer.
pub fn infer_shapes(specs: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let arch = |i: usize, s: &LayerSpec, msg: String| HarnessError::Architecture(format!("layer {i} ({s}): {msg}"));
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = input_shape.to_vec();
    for (i, s) in specs.iter().enumerate() {
        cur = match *s {
            LayerSpec::Dense(n) => {
                if cur.len() != 1 {
                    return Err(arch(i, s, format!("needs flat input, got {cur:?}; add `flatten`")));
                }
                vec![n]
            }
            LayerSpec::Conv { filters, kernel, padding } => {
                if cur.len() != 3 {
                    return Err(arch(i, s, format!("needs C×H×W input, got {cur:?}")));
                }
                let (h, w) = (cur[1] + 2 * padding, cur[2] + 2 * padding);
                if h < kernel || w < kernel {
                    return Err(arch(i, s, format!("kernel larger than padded input {cur:?}")));
                }
                vec![filters, h - kernel + 1, w - kernel + 1]
            }
            LayerSpec::Pool => {
                if cur.len() != 3 || !cur[1].is_multiple_of(2) || !cur[2].is_multiple_of(2) {
                    return Err(arch(i, s, format!("needs C×H×W input with even H and W, got {cur:?}")));
                }
                vec![cur[0], cur[1] / 2, cur[2] / 2]
            }
            LayerSpec::Flatten => vec![cur.iter().product()],
            LayerSpec::Relu | LayerSpec::Dropout(_) => cur,
        };
        shapes.push(cur.clone());
    }
    if cur.len() != 1 {
        return Err(HarnessError::Architecture(format!(
            "the last layer must produce a flat vector for the head, got {cur:?}"
        )));
    }
    Ok(shapes)
}

#[derive(Debug, Clone)]
pub struct Model {
    /// Per-example shape fed to the first layer.
    pub input_shape: Vec<usize>,
    pub layer_specs: Vec<LayerSpec>,
    pub layers: Vec<Layer>,
    pub head: Head,
    pub preprocessing: Preprocessing,
}

/// Objective settings for a head: kind plus its constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub kind: HeadKind,
    pub c: f64,
    pub weight_decay: f64,
}

impl Model {
    /// Fresh Gaussian weights (std `init_std`) and zero biases.
    pub fn build<R: Rng + ?Sized>(
        specs: &[LayerSpec],
        input_shape: &[usize],
        num_classes: usize,
        objective: Objective,
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let shapes = infer_shapes(specs, input_shape)?;
        let mut layers = Vec::with_capacity(specs.len());
        let mut cur = input_shape.to_vec();
        for (s, out) in specs.iter().zip(&shapes) {
            layers.push(match *s {
                LayerSpec::Dense(n) => Layer::Dense(DenseLayer::new(cur[0], n, init_std, rng)?),
                LayerSpec::Conv { filters, kernel, padding } => {
                    Layer::Conv(ConvLayer::new(cur[0], filters, kernel, padding, init_std, rng)?)
                }
                LayerSpec::Relu => Layer::relu(),
                LayerSpec::Pool => Layer::max_pool(),
                LayerSpec::Flatten => Layer::flatten(),
                LayerSpec::Dropout(r) => Layer::Dropout(Dropout::new(r)?),
            });
            cur = out.clone();
        }
        let d = cur[0];
        let head = Head::new(
            HeadSpec {
                kind: objective.kind,
                num_classes,
                input_dim: d,
                c: objective.c,
                weight_decay: objective.weight_decay,
            },
            HeadWeights::random(d, num_classes, init_std, rng)?,
        )?;
        Ok(Model {
            input_shape: input_shape.to_vec(),
            layer_specs: specs.to_vec(),
            layers,
            head,
            preprocessing: Preprocessing::default(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.spec.num_classes
    }

    pub fn objective(&self) -> Objective {
        Objective {
            kind: self.head.spec.kind,
            c: self.head.spec.c,
            weight_decay: self.head.spec.weight_decay,
        }
    }

    /// Same weights under a different objective.
    pub fn with_objective(&self, objective: Objective) -> Result<Self> {
        let mut m = self.clone();
        let spec = HeadSpec {
            kind: objective.kind,
            c: objective.c,
            weight_decay: objective.weight_decay,
            ..m.head.spec
        };
        spec.validate()?;
        m.head.spec = spec;
        Ok(m)
    }

    fn shaped(&self, x: &Tensor) -> Result<Tensor> {
        let mut shape = vec![x.rows()];
        shape.extend(&self.input_shape);
        if x.row_len() != self.input_shape.iter().product::<usize>() {
            return Err(HarnessError::Architecture(format!(
                "input rows have {} values, the network expects {:?}",
                x.row_len(),
                self.input_shape
            )));
        }
        Ok(x.clone().reshape(&shape)?)
    }

    /// Penultimate activations for an already preprocessed batch.
    pub fn features(&mut self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        let mut h = self.shaped(x)?;
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Head scores for preprocessed rows, evaluated in chunks without noise
    /// or dropout.
    pub fn scores(&mut self, x: &Tensor) -> Result<Tensor> {
        let n = x.rows();
        let k = self.num_classes();
        let mut out = Vec::with_capacity(n * k);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let h = self.features(&x.select_rows(&idx)?, &mut Mode::Eval)?;
            out.extend(self.head.scores(&h)?.into_data());
            start = end;
        }
        Ok(Tensor::new(&[n, k], out)?)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(hingenet_core::heads::predict(&self.scores(x)?))
    }

    /// Preprocesses raw rows, then predicts.
    pub fn predict_raw(&mut self, raw: &Tensor) -> Result<Vec<usize>> {
        let n = raw.rows();
        let flat = raw.clone().reshape(&[n, raw.row_len()])?;
        let x = self.preprocessing.apply(&flat)?;
        self.predict(&x)
    }

    /// Own-objective loss of one batch and the gradient of every parameter,
    /// ordered as [`Model::param_names`].
    pub fn loss_and_grads(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(HeadOutput, Vec<Tensor>)> {
        let (out, grads, _) = self.full_backward(x, labels, mode)?;
        Ok((out, grads))
    }

    /// As [`Model::loss_and_grads`], plus the gradient with respect to the
    /// input rows (shaped like `x`).
    pub fn full_backward(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(HeadOutput, Vec<Tensor>, Tensor)> {
        let h = self.features(x, mode)?;
        let out = self.head.loss_and_grad(&h, labels)?;
        let mut d = out.d_h.clone();
        let mut rev = Vec::new();
        for layer in self.layers.iter_mut().rev() {
            let g = layer.backward(&d)?;
            if let Some(b) = g.d_bias {
                rev.push(b);
            }
            if let Some(w) = g.d_weights {
                rev.push(w);
            }
            d = g.d_input;
        }
        rev.reverse();
        rev.push(out.d_w.clone());
        let d_x = d.reshape(x.shape())?;
        Ok((out, rev, d_x))
    }

    /// Own-objective loss of one batch.
    pub fn loss(&mut self, x: &Tensor, labels: &[usize], mode: &mut Mode<'_>) -> Result<f64> {
        let h = self.features(x, mode)?;
        Ok(self.head.loss_and_grad(&h, labels)?.loss)
    }

    /// Names of the trainable tensors: layer weights and biases in forward
    /// order, then the head matrix.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (p, _) in l.params() {
                names.push(format!("layer{i}.{}.{p}", l.kind()));
            }
        }
        names.push("head.w".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.layers.iter().flat_map(|l| l.params().into_iter().map(|(_, t)| t)).collect();
        v.push(self.head.weights.tensor());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(Layer::params_mut).collect();
        v.push(self.head.weights.tensor_mut());
        v
    }

    /// Indices (into [`Model::params`]) of lower-layer weight tensors, which
    /// take the optional lower-layer weight decay. Biases are excluded.
    pub fn lower_weight_indices(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        let mut at = 0;
        for l in &self.layers {
            for (name, _) in l.params() {
                if name != "bias" {
                    idx.push(at);
                }
                at += 1;
            }
        }
        idx
    }

    /// Checks that `other` has the same layer stack, input shape and head
    /// dimensions, so weights can move between the two.
    pub fn check_compatible(&self, other: &Model) -> Result<()> {
        if self.layer_specs != other.layer_specs || self.input_shape != other.input_shape {
            return Err(HarnessError::Architecture(format!(
                "layers {:?} on input {:?} versus {:?} on input {:?}",
                crate::config::format_layers(&self.layer_specs),
                self.input_shape,
                crate::config::format_layers(&other.layer_specs),
                other.input_shape
            )));
        }
        if self.head.weights.tensor().shape() != other.head.weights.tensor().shape() {
            return Err(HarnessError::Architecture(format!(
                "head shapes {:?} and {:?}",
                self.head.weights.tensor().shape(),
                other.head.weights.tensor().shape()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_layers;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(kind: HeadKind) -> Objective {
        Objective {
            kind,
            c: 0.1,
            weight_decay: 0.001,
        }
    }

    #[test]
    fn shape_inference_for_the_cifar_topology() {
        let specs = parse_layers("conv:32:5,relu,pool,conv:64:5,relu,pool,flatten,dense:3072,relu,dropout:0.2").unwrap();
        let shapes = infer_shapes(&specs, &[3, 32, 32]).unwrap();
        assert_eq!(shapes[2], vec![32, 16, 16]);
        assert_eq!(shapes[5], vec![64, 8, 8]);
        assert_eq!(shapes[6], vec![4096]);
        assert_eq!(shapes.last().unwrap(), &vec![3072]);
    }

    #[test]
    fn shape_inference_rejects_bad_stacks() {
        for (layers, input) in [
            ("dense:4", vec![3, 8, 8]),
            ("conv:2:3", vec![8]),
            ("conv:2:3,pool", vec![1, 5, 5]),
            ("conv:2:3", vec![1, 6, 6]),
            ("conv:2:9:0,flatten", vec![1, 4, 4]),
        ] {
            let specs = parse_layers(layers).unwrap();
            assert!(
                matches!(infer_shapes(&specs, &input), Err(HarnessError::Architecture(_))),
                "{layers} on {input:?}"
            );
        }
    }

    #[test]
    fn param_names_match_param_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = parse_layers("dense:4,relu,dense:3,relu").unwrap();
        let m = Model::build(&specs, &[5], 3, obj(HeadKind::L2Svm), 0.1, &mut rng).unwrap();
        let names = m.param_names();
        assert_eq!(
            names,
            ["layer0.dense.weights", "layer0.dense.bias", "layer2.dense.weights", "layer2.dense.bias", "head.w"]
        );
        let shapes: Vec<_> = m.params().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![5, 4], vec![4], vec![4, 3], vec![3], vec![4, 3]]);
        assert_eq!(m.lower_weight_indices(), vec![0, 2]);
    }

    #[test]
    fn gradients_come_back_in_param_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let specs = parse_layers("conv:2:3,relu,pool,flatten,dense:4").unwrap();
        let mut m = Model::build(&specs, &[1, 4, 4], 3, obj(HeadKind::Softmax), 0.1, &mut rng).unwrap();
        let x = Tensor::new(&[2, 16], (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        let (_, grads) = m.loss_and_grads(&x, &[0, 2], &mut Mode::Eval).unwrap();
        let shapes: Vec<_> = grads.iter().map(|t| t.shape().to_vec()).collect();
        let expected: Vec<_> = m.params().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, expected);
    }

    #[test]
    fn objective_swap_keeps_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let specs = parse_layers("dense:6,relu").unwrap();
        let mut m = Model::build(&specs, &[4], 3, obj(HeadKind::L2Svm), 0.5, &mut rng).unwrap();
        let x = Tensor::new(&[7, 4], (0..28).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let before = m.predict(&x).unwrap();
        let mut s = m.with_objective(obj(HeadKind::Softmax)).unwrap();
        assert_eq!(s.predict(&x).unwrap(), before);
        assert!(m.with_objective(Objective { c: 0.0, ..obj(HeadKind::L1Svm) }).is_err());
    }
}
