//! End-to-end use of the core pieces without the harness: layers, heads and
//! the optimizer wired by hand, plus on-disk data round trips.

use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;
use hingenet_core::dataio::{load_idx, make_blobs, minibatches, write_idx_images, write_idx_labels, Split};
use hingenet_core::heads::{predict, HeadSpec, HeadWeights};
use hingenet_core::layers::DenseLayer;
use hingenet_core::preprocess::{pca_fit, pca_transform};
use hingenet_core::{sgd_momentum_step, Head, HeadKind, Layer, Mode, RunRng, Schedule, SgdState, Tensor};
use rand::{Rng, SeedableRng};

struct Net {
    layers: Vec<Layer>,
    head: Head,
}

impl Net {
    fn new(kind: HeadKind, dim: usize, k: usize, rng: &mut RunRng) -> Net {
        let layers = vec![
            Layer::Dense(DenseLayer::new(dim, 16, 0.1, rng).unwrap()),
            Layer::relu(),
        ];
        let spec = HeadSpec {
            kind,
            num_classes: k,
            input_dim: 16,
            c: 0.05,
            weight_decay: 0.001,
        };
        let head = Head::new(spec, HeadWeights::random(16, k, 0.1, rng).unwrap()).unwrap();
        Net { layers, head }
    }

    fn features(&mut self, x: &Tensor, mode: &mut Mode<'_>) -> Tensor {
        self.layers.iter_mut().fold(x.clone(), |h, l| l.forward(&h, mode).unwrap())
    }

    fn step(&mut self, x: &Tensor, labels: &[usize], state: &mut SgdState, lr: f64) -> f64 {
        let h = self.features(x, &mut Mode::Eval);
        let out = self.head.loss_and_grad(&h, labels).unwrap();
        let mut per_layer = Vec::new();
        let mut d = out.d_h;
        for layer in self.layers.iter_mut().rev() {
            let g = layer.backward(&d).unwrap();
            per_layer.push(g.d_weights.into_iter().chain(g.d_bias).collect::<Vec<_>>());
            d = g.d_input;
        }
        let mut ordered: Vec<Tensor> = per_layer.into_iter().rev().flatten().collect();
        ordered.push(out.d_w);
        let mut params: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        params.push(self.head.weights.tensor_mut());
        let refs: Vec<&Tensor> = ordered.iter().collect();
        sgd_momentum_step(&mut params, &refs, state, lr).unwrap();
        out.loss
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.layers.iter().flat_map(|l| l.params().into_iter().map(|(_, t)| t)).collect();
        p.push(self.head.weights.tensor());
        p
    }
}

#[test]
fn hand_wired_network_separates_blobs_under_every_head() {
    for kind in HeadKind::ALL {
        let mut rng = RunRng::seed_from_u64(21);
        let data = make_blobs(120, 3, 4, 10.0, &mut rng).unwrap();
        let mut net = Net::new(kind, 4, 3, &mut rng);
        let mut state = SgdState::new(0.9, net.params()).unwrap();
        let epochs = 40;
        let lr = Schedule::new(0.01, 0.0, epochs * 6).unwrap();
        let mut step = 0;
        for _ in 0..epochs {
            let plan = minibatches(data.len(), 20, &mut rng).unwrap();
            for idx in plan.batches() {
                let x = data.inputs.select_rows(idx).unwrap();
                let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
                let loss = net.step(&x, &y, &mut state, lr.at(step));
                assert!(loss.is_finite(), "{kind}");
                step += 1;
            }
        }
        let h = net.features(&data.inputs, &mut Mode::Eval);
        let pred = predict(&net.head.scores(&h).unwrap());
        assert_eq!(pred, data.labels, "{kind}");
    }
}

#[test]
fn gzipped_and_plain_idx_load_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RunRng::seed_from_u64(22);
    let pixels: Vec<u8> = (0..4 * 6 * 6).map(|_| rng.random()).collect();
    let labels = [3u8, 0, 9, 1];
    let (img, lbl) = (dir.path().join("img"), dir.path().join("lbl"));
    write_idx_images(&img, 6, 6, &pixels).unwrap();
    write_idx_labels(&lbl, &labels).unwrap();

    let gz = dir.path().join("img.gz");
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&std::fs::read(&img).unwrap()).unwrap();
    std::fs::write(&gz, enc.finish().unwrap()).unwrap();

    let plain = load_idx(&img, &lbl, Split::Train).unwrap();
    let zipped = load_idx(&gz, &lbl, Split::Train).unwrap();
    assert_eq!(plain.inputs, zipped.inputs);
    assert_eq!(plain.labels, vec![3, 0, 9, 1]);
    assert_eq!(plain.num_classes, 10);
}

#[test]
fn pca_keeps_blob_classes_apart() {
    let mut rng = RunRng::seed_from_u64(23);
    let data = make_blobs(200, 2, 10, 12.0, &mut rng).unwrap();
    let pca = pca_fit(&data.inputs, 1).unwrap();
    let z = pca_transform(&pca, &data.inputs).unwrap();
    // One direction carries the class split: a threshold at 0 separates.
    let side: Vec<bool> = z.data().iter().map(|&v| v > 0.0).collect();
    let agree = side.iter().zip(&data.labels).filter(|(&s, &y)| s == (y == 0)).count();
    assert!(agree == 200 || agree == 0, "{agree}");
}
