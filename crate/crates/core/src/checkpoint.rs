//! Checkpoint persistence: one SSND container per tensor (f64 payload so the
//! training state round-trips exactly) plus a TOML manifest carrying tensor
//! shapes, optimizer counters, and the full run configuration.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, DenseLayer, Mlp};
use crate::ssnd;
use crate::trainer::TrainState;

const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.toml";
const TENSOR_DIR: &str = "tensors";

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    global_step: u64,
    epochs_done: usize,
    adam_student_t: u64,
    adam_head_t: u64,
    config_hash: String,
    config: TrainConfig,
    tensors: Vec<TensorMeta>,
}

fn tensor_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(TENSOR_DIR).join(format!("{name}.ssnd"))
}

fn row_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

fn net_tensors(prefix: &str, net: &Mlp, adam: &AdamState) -> Vec<(String, Array2<f64>)> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        out.push((format!("{prefix}.layer{i}.w"), layer.w.clone()));
        out.push((
            format!("{prefix}.layer{i}.b"),
            layer.b.clone().insert_axis(ndarray::Axis(0)),
        ));
        let (mw, mb) = &adam.m[i];
        let (vw, vb) = &adam.v[i];
        out.push((format!("adam.{prefix}.layer{i}.mw"), mw.clone()));
        out.push((
            format!("adam.{prefix}.layer{i}.mb"),
            mb.clone().insert_axis(ndarray::Axis(0)),
        ));
        out.push((format!("adam.{prefix}.layer{i}.vw"), vw.clone()));
        out.push((
            format!("adam.{prefix}.layer{i}.vb"),
            vb.clone().insert_axis(ndarray::Axis(0)),
        ));
    }
    out
}

pub fn save_checkpoint(dir: &Path, state: &TrainState, config: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir.join(TENSOR_DIR))?;
    let mut tensors = net_tensors("student", &state.student, &state.adam_student);
    tensors.extend(net_tensors("head", &state.head, &state.adam_head));

    let mut metas = Vec::with_capacity(tensors.len());
    for (name, data) in &tensors {
        ssnd::write_f64(&tensor_path(dir, name), &row_ids(data.nrows()), data)?;
        metas.push(TensorMeta {
            name: name.clone(),
            rows: data.nrows(),
            cols: data.ncols(),
        });
    }

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        global_step: state.global_step,
        epochs_done: state.epochs_done,
        adam_student_t: state.adam_student.t,
        adam_head_t: state.adam_head.t,
        config_hash: config.hash()?,
        config: config.clone(),
        tensors: metas,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn load_tensor(dir: &Path, manifest: &Manifest, name: &str) -> Result<Array2<f64>> {
    let meta = manifest
        .tensors
        .iter()
        .find(|m| m.name == name)
        .ok_or_else(|| Error::format(format!("manifest is missing tensor {name:?}")))?;
    let (_, data) = ssnd::read_f64(&tensor_path(dir, name))?;
    if data.nrows() != meta.rows || data.ncols() != meta.cols {
        return Err(Error::format(format!(
            "tensor {name:?} is {}x{}, manifest says {}x{}",
            data.nrows(),
            data.ncols(),
            meta.rows,
            meta.cols
        )));
    }
    Ok(data)
}

fn vector(data: Array2<f64>, name: &str) -> Result<Array1<f64>> {
    if data.nrows() != 1 {
        return Err(Error::format(format!(
            "tensor {name:?} should be a single-row vector"
        )));
    }
    Ok(data.row(0).to_owned())
}

fn load_net(
    dir: &Path,
    manifest: &Manifest,
    prefix: &str,
    n_layers: usize,
    t: u64,
) -> Result<(Mlp, AdamState)> {
    let config = &manifest.config;
    let mut layers = Vec::with_capacity(n_layers);
    let mut m = Vec::with_capacity(n_layers);
    let mut v = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let w = load_tensor(dir, manifest, &format!("{prefix}.layer{i}.w"))?;
        let b = vector(
            load_tensor(dir, manifest, &format!("{prefix}.layer{i}.b"))?,
            &format!("{prefix}.layer{i}.b"),
        )?;
        let mw = load_tensor(dir, manifest, &format!("adam.{prefix}.layer{i}.mw"))?;
        let mb = vector(
            load_tensor(dir, manifest, &format!("adam.{prefix}.layer{i}.mb"))?,
            &format!("adam.{prefix}.layer{i}.mb"),
        )?;
        let vw = load_tensor(dir, manifest, &format!("adam.{prefix}.layer{i}.vw"))?;
        let vb = vector(
            load_tensor(dir, manifest, &format!("adam.{prefix}.layer{i}.vb"))?,
            &format!("adam.{prefix}.layer{i}.vb"),
        )?;
        if mw.dim() != w.dim() || vw.dim() != w.dim() || mb.len() != b.len() || vb.len() != b.len()
        {
            return Err(Error::format(format!(
                "{prefix} layer {i}: optimizer tensors do not match parameter shapes"
            )));
        }
        layers.push(DenseLayer { w, b });
        m.push((mw, mb));
        v.push((vw, vb));
    }
    let net = Mlp::new(layers, config.activation)?;
    let adam = AdamState {
        m,
        v,
        t,
        beta1: config.adam.beta1,
        beta2: config.adam.beta2,
        eps: config.adam.eps,
    };
    Ok((net, adam))
}

pub fn load_checkpoint(dir: &Path) -> Result<(TrainState, TrainConfig)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
        Error::format(format!("{}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {}",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    if manifest.config.hash()? != manifest.config_hash {
        return Err(Error::format(
            "checkpoint config does not match its recorded hash",
        ));
    }

    let student_layers = manifest.config.student_dims.len() - 1;
    let (student, adam_student) =
        load_net(dir, &manifest, "student", student_layers, manifest.adam_student_t)?;
    let (head, adam_head) = load_net(dir, &manifest, "head", 2, manifest.adam_head_t)?;
    if student.dims() != manifest.config.student_dims {
        return Err(Error::format(
            "student tensor shapes do not match the configured dims",
        ));
    }
    if head.in_dim() != manifest.config.student_out_dim() {
        return Err(Error::format("head input does not chain to student output"));
    }

    Ok((
        TrainState {
            student,
            head,
            adam_student,
            adam_head,
            global_step: manifest.global_step,
            epochs_done: manifest.epochs_done,
        },
        manifest.config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::PairedDataset;
    use crate::trainer::distill;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained_state() -> (TrainState, TrainConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = Array2::from_shape_fn((24, 4), |_| rng.random_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((24, 3), |_| rng.random_range(-1.0..1.0));
        let data = PairedDataset {
            ids: (0..24).map(|i| format!("s{i}")).collect(),
            inputs,
            targets,
        };
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            epoch_sample_size: 24,
            k_clusters: 3,
            student_dims: vec![4, 6, 5],
            head_hidden_dim: 7,
            ..TrainConfig::default()
        };
        let (state, _) = distill(&data, &config).unwrap();
        (state, config)
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let (state, config) = trained_state();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &state, &config).unwrap();
        let (loaded, loaded_config) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded_config, config);
        assert_eq!(loaded, state);
    }

    #[test]
    fn corrupted_manifest_gives_structured_error() {
        let (state, config) = trained_state();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &state, &config).unwrap();
        std::fs::write(dir.path().join("manifest.toml"), "not [valid toml").unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn tampered_config_hash_detected() {
        let (state, config) = trained_state();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &state, &config).unwrap();
        let path = dir.path().join("manifest.toml");
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replace("epochs = 2", "epochs = 3");
        std::fs::write(&path, tampered).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn missing_tensor_detected() {
        let (state, config) = trained_state();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &state, &config).unwrap();
        std::fs::remove_file(dir.path().join("tensors/student.layer0.w.ssnd")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
