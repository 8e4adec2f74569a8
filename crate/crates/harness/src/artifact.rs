//! Model files: `<name>.json` manifest next to `<name>.bin`, a flat blob of
//! little-endian `f64` tensors in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use hingenet_core::layers::{ConvLayer, DenseLayer};
use hingenet_core::preprocess::{PcaModel, PixelStandardizer};
use hingenet_core::{Head, HeadKind, HeadSpec, HeadWeights, Layer, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{format_layers, parse_layers, LayerSpec};
use crate::error::{HarnessError, Result};
use crate::model::{Model, Preprocessing};

pub const FORMAT: &str = "hingenet-model-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEntry {
    pub kind: String,
    pub num_classes: usize,
    pub input_dim: usize,
    pub c: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub input_shape: Vec<usize>,
    pub layers: String,
    pub head: HeadEntry,
    pub face_normalize: bool,
    pub tensors: Vec<TensorEntry>,
    /// Manifest of the model this one was warm-started from, if any.
    #[serde(default)]
    pub warm_started_from: Option<String>,
    /// The run config as echoed at training time.
    #[serde(default)]
    pub config_echo: String,
}

fn artifact_err(path: &Path, msg: impl Into<String>) -> HarnessError {
    HarnessError::Artifact {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn named_tensors(model: &Model) -> Vec<(String, &Tensor)> {
    let mut v: Vec<(String, &Tensor)> = model.param_names().into_iter().zip(model.params()).collect();
    let pre = &model.preprocessing;
    if let Some(s) = &pre.standardizer {
        v.push(("standardizer.mean".into(), &s.mean));
        v.push(("standardizer.std".into(), &s.std));
    }
    if let Some(p) = &pre.pca {
        v.push(("pca.mean".into(), &p.mean));
        v.push(("pca.components".into(), &p.components));
    }
    v
}

/// Writes `manifest_path` and its blob (same stem, `.bin`).
pub fn save_model(
    model: &Model,
    manifest_path: impl AsRef<Path>,
    config_echo: &str,
    warm_started_from: Option<&Path>,
) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let blob_path = manifest_path.with_extension("bin");
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in named_tensors(model) {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(p) = &model.preprocessing.pca {
        let vars = Tensor::vector(p.explained_variances.clone())?;
        tensors.push(TensorEntry {
            name: "pca.variances".into(),
            shape: vars.shape().to_vec(),
            offset,
        });
        for v in vars.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let spec = model.head.spec;
    let manifest = Manifest {
        format: FORMAT.into(),
        blob: blob_path
            .file_name()
            .expect("manifest path has a file name")
            .to_string_lossy()
            .into_owned(),
        input_shape: model.input_shape.clone(),
        layers: format_layers(&model.layer_specs),
        head: HeadEntry {
            kind: spec.kind.to_string(),
            num_classes: spec.num_classes,
            input_dim: spec.input_dim,
            c: spec.c,
            weight_decay: spec.weight_decay,
        },
        face_normalize: model.preprocessing.face_normalize,
        tensors,
        warm_started_from: warm_started_from.map(|p| p.display().to_string()),
        config_echo: config_echo.to_string(),
    };
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Json {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    fs::write(manifest_path, json).map_err(|e| HarnessError::io(manifest_path, e))?;
    fs::write(&blob_path, blob).map_err(|e| HarnessError::io(&blob_path, e))?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    if m.format != FORMAT {
        return Err(artifact_err(path, format!("unsupported format {:?}", m.format)));
    }
    Ok(m)
}

pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Model> {
    let path = manifest_path.as_ref();
    let m = read_manifest(path)?;
    let blob_path: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
    let bytes = fs::read(&blob_path).map_err(|e| HarnessError::io(&blob_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(artifact_err(&blob_path, "blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let take = |name: &str| -> Result<Tensor> {
        let e = m
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| artifact_err(path, format!("missing tensor {name}")))?;
        let len: usize = e.shape.iter().product();
        let slice = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| artifact_err(&blob_path, format!("tensor {name} runs past the end of the blob")))?;
        Ok(Tensor::new(&e.shape, slice.to_vec())?)
    };

    let specs = parse_layers(&m.layers).map_err(|e| artifact_err(path, e))?;
    let mut layers = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        layers.push(match *s {
            LayerSpec::Dense(_) => Layer::Dense(DenseLayer::from_parts(
                take(&format!("layer{i}.dense.weights"))?,
                take(&format!("layer{i}.dense.bias"))?,
            )?),
            LayerSpec::Conv { padding, .. } => Layer::Conv(ConvLayer::from_parts(
                take(&format!("layer{i}.conv.filters"))?,
                take(&format!("layer{i}.conv.bias"))?,
                padding,
                1,
            )?),
            LayerSpec::Relu => Layer::relu(),
            LayerSpec::Pool => Layer::max_pool(),
            LayerSpec::Flatten => Layer::flatten(),
            LayerSpec::Dropout(r) => Layer::Dropout(hingenet_core::layers::Dropout::new(r)?),
        });
    }
    crate::model::infer_shapes(&specs, &m.input_shape)?;
    let kind: HeadKind = m.head.kind.parse()?;
    let head = Head::new(
        HeadSpec {
            kind,
            num_classes: m.head.num_classes,
            input_dim: m.head.input_dim,
            c: m.head.c,
            weight_decay: m.head.weight_decay,
        },
        HeadWeights::new(take("head.w")?)?,
    )?;
    let has = |n: &str| m.tensors.iter().any(|t| t.name == n);
    let standardizer = if has("standardizer.mean") {
        Some(PixelStandardizer {
            mean: take("standardizer.mean")?,
            std: take("standardizer.std")?,
        })
    } else {
        None
    };
    let pca = if has("pca.mean") {
        Some(PcaModel {
            mean: take("pca.mean")?,
            components: take("pca.components")?,
            explained_variances: take("pca.variances")?.into_data(),
        })
    } else {
        None
    };
    Ok(Model {
        input_shape: m.input_shape,
        layer_specs: specs,
        layers,
        head,
        preprocessing: Preprocessing {
            face_normalize: m.face_normalize,
            standardizer,
            pca,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Objective;
    use hingenet_core::preprocess::pca_fit;
    use hingenet_core::RunRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RunRng::seed_from_u64(3);
        let specs = parse_layers("conv:2:3,relu,pool,flatten,dense:5,relu,dropout:0.1").unwrap();
        let obj = Objective {
            kind: HeadKind::L2Svm,
            c: 0.25,
            weight_decay: 0.0,
        };
        let mut m = Model::build(&specs, &[1, 4, 4], 3, obj, 0.3, &mut rng).unwrap();
        let raw = Tensor::new(&[20, 16], (0..320).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        m.preprocessing.standardizer = Some(PixelStandardizer::fit(&raw).unwrap());
        let path = dir.path().join("nested/model.json");
        save_model(&m, &path, "seed = 3\n", None).unwrap();
        let mut back = load_model(&path).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.head.spec, m.head.spec);
        assert_eq!(back.layer_specs, m.layer_specs);
        assert_eq!(back.preprocessing, m.preprocessing);
        assert_eq!(back.predict_raw(&raw).unwrap(), m.predict_raw(&raw).unwrap());
        assert_eq!(read_manifest(&path).unwrap().config_echo, "seed = 3\n");
    }

    #[test]
    fn pca_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RunRng::seed_from_u64(4);
        let raw = Tensor::new(&[30, 6], (0..180).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let obj = Objective {
            kind: HeadKind::Softmax,
            c: 1.0,
            weight_decay: 0.001,
        };
        let mut m = Model::build(&parse_layers("dense:4,relu").unwrap(), &[3], 2, obj, 0.1, &mut rng).unwrap();
        m.preprocessing.pca = Some(pca_fit(&raw, 3).unwrap());
        let path = dir.path().join("m.json");
        save_model(&m, &path, "", Some(Path::new("source.json"))).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.preprocessing, m.preprocessing);
        assert_eq!(read_manifest(&path).unwrap().warm_started_from.as_deref(), Some("source.json"));
    }

    #[test]
    fn corrupt_artifacts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RunRng::seed_from_u64(5);
        let obj = Objective {
            kind: HeadKind::Softmax,
            c: 1.0,
            weight_decay: 0.0,
        };
        let m = Model::build(&parse_layers("dense:2").unwrap(), &[2], 2, obj, 0.1, &mut rng).unwrap();
        let path = dir.path().join("m.json");
        save_model(&m, &path, "", None).unwrap();
        let blob = dir.path().join("m.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model(&path), Err(HarnessError::Artifact { .. })));
        fs::write(&path, "{}").unwrap();
        assert!(matches!(load_model(&path), Err(HarnessError::Json { .. })));
    }
}
