//! The distillation training loop: sample an epoch (balanced or uniform),
//! forward student and mapping head, align against frozen teacher embeddings,
//! backpropagate through both networks, update with Adam under the
//! warmup-cosine schedule.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::bds::{bds_weights, kmeans_with_trace, sample_epoch, KmeansOptions, SamplerWeights};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::{loss_clap_with, loss_eval, LossKind, LossOutput};
use crate::nn::{adam_step, AdamState, LrSchedule, Mlp};
use crate::store::{EmbeddingSet, PairedDataset};

// Deterministic seed streams derived from the run seed.
const STREAM_STUDENT: u64 = 1;
const STREAM_HEAD: u64 = 2;
const STREAM_KMEANS: u64 = 3;
const STREAM_EPOCH_BASE: u64 = 0x1000;

pub(crate) fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to continue a run: both networks, both optimizers, and
/// the position in the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub student: Mlp,
    pub head: Mlp,
    pub adam_student: AdamState,
    pub adam_head: AdamState,
    pub global_step: u64,
    pub epochs_done: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean loss of each epoch executed by this invocation.
    pub epoch_mean_loss: Vec<f64>,
    pub final_loss: Option<f64>,
    pub wall_ms: u128,
    pub checkpoint_path: Option<PathBuf>,
    pub config_hash: String,
    /// True when epoch_sample_size exceeded the dataset and was clamped.
    pub clamped_epoch_sample: bool,
}

#[derive(Debug, Default)]
pub struct DistillOptions {
    /// Stop after this many total epochs (for checkpoint-and-resume runs);
    /// the LR schedule still spans the configured epoch count.
    pub halt_after_epochs: Option<usize>,
    /// Continue from a previous state instead of initializing.
    pub resume: Option<TrainState>,
    /// Write a per-step CSV log (epoch, step, lr, loss, wall_ms).
    pub log_path: Option<PathBuf>,
}

fn eval_configured_loss(
    config: &TrainConfig,
    zs: ArrayView2<'_, f64>,
    zt: ArrayView2<'_, f64>,
) -> Result<LossOutput> {
    match config.loss {
        LossKind::Clap => loss_clap_with(zs, zt, config.clap_variant, config.clap_temperature),
        kind => loss_eval(kind, zs, zt),
    }
}

fn gather_rows(matrix: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), matrix.ncols()));
    for (row, &i) in indices.iter().enumerate() {
        out.row_mut(row).assign(&matrix.row(i));
    }
    out
}

/// Initialize a fresh student and head for this config and data shape.
pub fn init_state(config: &TrainConfig, teacher_dim: usize) -> Result<TrainState> {
    let student = Mlp::init(
        &config.student_dims,
        config.activation,
        mix_seed(config.seed, STREAM_STUDENT),
    )?;
    let head_dims = [config.student_out_dim(), config.head_hidden_dim, teacher_dim];
    let head = Mlp::init(&head_dims, config.activation, mix_seed(config.seed, STREAM_HEAD))?;
    let adam_student =
        AdamState::with_params(&student, config.adam.beta1, config.adam.beta2, config.adam.eps);
    let adam_head =
        AdamState::with_params(&head, config.adam.beta1, config.adam.beta2, config.adam.eps);
    Ok(TrainState {
        student,
        head,
        adam_student,
        adam_head,
        global_step: 0,
        epochs_done: 0,
    })
}

/// Epoch sampling weights: inverse cluster frequency when balanced sampling
/// is enabled, uniform otherwise. Both paths feed the same sampler, so the
/// uniform case is exactly the random-sampling baseline.
pub fn epoch_weights(data: &PairedDataset, config: &TrainConfig) -> Result<SamplerWeights> {
    if !config.bds_enabled {
        return Ok(SamplerWeights::uniform(data.len()));
    }
    let options = KmeansOptions {
        max_iter: config.kmeans_max_iter,
        tol: config.kmeans_tol,
        l2_normalize: config.bds_normalize,
    };
    let (model, _) = kmeans_with_trace(
        data.targets.view(),
        config.k_clusters,
        mix_seed(config.seed, STREAM_KMEANS),
        &options,
    )?;
    bds_weights(&model.assignments, config.bds_offset)
}

pub fn distill(data: &PairedDataset, config: &TrainConfig) -> Result<(TrainState, TrainReport)> {
    distill_with_options(data, config, DistillOptions::default())
}

pub fn distill_with_options(
    data: &PairedDataset,
    config: &TrainConfig,
    options: DistillOptions,
) -> Result<(TrainState, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::invalid_data("empty training dataset"));
    }
    if data.inputs.ncols() != config.student_dims[0] {
        return Err(Error::invalid_argument(format!(
            "input dim {} does not match student input {}",
            data.inputs.ncols(),
            config.student_dims[0]
        )));
    }
    let teacher_dim = data.targets.ncols();
    let started = Instant::now();

    let n = data.len();
    let clamped = config.epoch_sample_size > n;
    let per_epoch = config.epoch_sample_size.min(n);
    let steps_per_epoch = per_epoch.div_ceil(config.batch_size) as u64;
    let end_epoch = options
        .halt_after_epochs
        .map_or(config.epochs, |h| h.min(config.epochs));

    let mut state = match options.resume {
        Some(state) => {
            if state.student.dims() != config.student_dims {
                return Err(Error::invalid_argument(
                    "resume state student dims do not match config",
                ));
            }
            if state.head.out_dim() != teacher_dim {
                return Err(Error::invalid_argument(
                    "resume state head output does not match teacher dim",
                ));
            }
            state
        }
        None => init_state(config, teacher_dim)?,
    };
    if state.epochs_done > end_epoch {
        return Err(Error::invalid_argument(format!(
            "checkpoint already has {} epochs, target is {end_epoch}",
            state.epochs_done
        )));
    }

    let mut log = match &options.log_path {
        Some(path) => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["epoch", "step", "lr", "loss", "wall_ms"])
                .map_err(|e| Error::format(format!("log write: {e}")))?;
            Some(w)
        }
        None => None,
    };

    let mut report = TrainReport {
        epoch_mean_loss: Vec::new(),
        final_loss: None,
        wall_ms: 0,
        checkpoint_path: None,
        config_hash: config.hash()?,
        clamped_epoch_sample: clamped,
    };

    if state.epochs_done == end_epoch {
        report.wall_ms = started.elapsed().as_millis();
        return Ok((state, report));
    }

    // The schedule spans the full configured run even when this invocation
    // halts early, so halted-and-resumed runs match uninterrupted ones.
    let schedule = LrSchedule::new(
        config.base_lr,
        (config.epochs as u64 * steps_per_epoch).max(1),
        config.warmup_frac,
    )?;
    let weights = epoch_weights(data, config)?;

    for epoch in state.epochs_done..end_epoch {
        let indices = sample_epoch(
            &weights,
            per_epoch,
            mix_seed(config.seed, STREAM_EPOCH_BASE + epoch as u64),
        )?;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            let x = gather_rows(&data.inputs, chunk);
            let t = gather_rows(&data.targets, chunk);
            let (zs, student_cache) = state.student.forward(x.view())?;
            let (zp, head_cache) = state.head.forward(zs.view())?;
            let loss = eval_configured_loss(config, zp.view(), t.view())?;
            if !loss.value.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite loss at step {} (epoch {epoch})",
                    state.global_step
                )));
            }
            let (head_grads, d_zs) = state.head.backward(&head_cache, loss.grad.view())?;
            let (student_grads, _) = state.student.backward(&student_cache, d_zs.view())?;
            // lr_at(0) = lr_at(total) = 0, so steps sample the curve at
            // their midpoint; otherwise the first and last updates would be
            // no-ops.
            let lr = schedule.lr_mid_step(state.global_step)?;
            adam_step(&mut state.head, &head_grads, &mut state.adam_head, lr)?;
            adam_step(&mut state.student, &student_grads, &mut state.adam_student, lr)?;
            if let Some(w) = log.as_mut() {
                w.write_record([
                    epoch.to_string(),
                    state.global_step.to_string(),
                    format!("{lr:.10e}"),
                    format!("{:.10e}", loss.value),
                    started.elapsed().as_millis().to_string(),
                ])
                .map_err(|e| Error::format(format!("log write: {e}")))?;
            }
            state.global_step += 1;
            loss_sum += loss.value;
            batches += 1;
        }
        state.epochs_done = epoch + 1;
        report.epoch_mean_loss.push(loss_sum / batches as f64);
    }
    if let Some(mut w) = log {
        w.flush()?;
    }

    report.final_loss = report.epoch_mean_loss.last().copied();
    report.wall_ms = started.elapsed().as_millis();
    Ok((state, report))
}

/// Forward rows through a network one at a time, so the result is bit-wise
/// independent of how callers batch their inputs.
pub fn forward_rows(net: &Mlp, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((inputs.nrows(), net.out_dim()));
    for (i, row) in inputs.rows().into_iter().enumerate() {
        let x = row.insert_axis(ndarray::Axis(0));
        let (y, _) = net.forward(x)?;
        out.row_mut(i).assign(&y.row(0));
    }
    Ok(out)
}

/// Run the student over an embedding set, producing the student's own
/// latent-space embeddings (no mapping head).
pub fn export_student_embeddings(student: &Mlp, inputs: &EmbeddingSet) -> Result<EmbeddingSet> {
    let x = inputs.to_f64();
    let z = forward_rows(student, x.view())?;
    EmbeddingSet::new(inputs.ids().to_vec(), z.mapv(|v| v as f32))
}

/// Run the student and the mapping head, producing teacher-space embeddings.
pub fn export_projected_embeddings(
    student: &Mlp,
    head: &Mlp,
    inputs: &EmbeddingSet,
) -> Result<EmbeddingSet> {
    let x = inputs.to_f64();
    let zs = forward_rows(student, x.view())?;
    let zp = forward_rows(head, zs.view())?;
    EmbeddingSet::new(inputs.ids().to_vec(), zp.mapv(|v| v as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset(n: usize, p: usize, dt: usize, seed: u64) -> PairedDataset {
        // targets are a fixed random linear map of the inputs
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let map = Array2::from_shape_fn((p, dt), |_| rng.random_range(-1.0..1.0));
        let targets = inputs.dot(&map);
        PairedDataset {
            ids: (0..n).map(|i| format!("s{i}")).collect(),
            inputs,
            targets,
        }
    }

    fn toy_config(p: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            epoch_sample_size: 1_000_000,
            k_clusters: 4,
            student_dims: vec![p, 12, 8],
            head_hidden_dim: 24,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_params() {
        let data = toy_dataset(30, 5, 6, 1);
        let config = toy_config(5, 0);
        let (state, report) = distill(&data, &config).unwrap();
        let fresh = init_state(&config, 6).unwrap();
        assert_eq!(state.student, fresh.student);
        assert_eq!(state.head, fresh.head);
        assert_eq!(state.global_step, 0);
        assert!(report.epoch_mean_loss.is_empty());
        assert!(report.final_loss.is_none());
    }

    #[test]
    fn one_step_changes_both_networks() {
        let data = toy_dataset(8, 5, 6, 2);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..toy_config(5, 1)
        };
        let fresh = init_state(&config, 6).unwrap();
        let (state, _) = distill(&data, &config).unwrap();
        assert_ne!(state.student, fresh.student, "student did not move");
        assert_ne!(state.head, fresh.head, "head did not move");
    }

    #[test]
    fn same_seed_gives_bit_identical_states() {
        let data = toy_dataset(40, 5, 6, 3);
        let config = toy_config(5, 3);
        let (a, _) = distill(&data, &config).unwrap();
        let (b, _) = distill(&data, &config).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig {
            seed: 8,
            ..config
        };
        let (c, _) = distill(&data, &other).unwrap();
        assert_ne!(a.student, c.student);
    }

    #[test]
    fn partial_last_batch_is_processed() {
        // 10 samples, batch 4 -> batches of 4, 4, 2
        let data = toy_dataset(10, 3, 4, 4);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 4,
            student_dims: vec![3, 6, 4],
            head_hidden_dim: 8,
            k_clusters: 2,
            epoch_sample_size: 1_000_000,
            ..TrainConfig::default()
        };
        let (state, report) = distill(&data, &config).unwrap();
        assert_eq!(state.global_step, 3);
        assert_eq!(report.epoch_mean_loss.len(), 1);
        assert!(report.clamped_epoch_sample);
    }

    #[test]
    fn loss_decreases_on_realizable_toy_for_every_kind() {
        let data = toy_dataset(120, 6, 5, 5);
        for kind in [
            LossKind::Mse,
            LossKind::L1,
            LossKind::Cosine,
            LossKind::Clap,
            LossKind::Kl,
        ] {
            let config = TrainConfig {
                epochs: 10,
                loss: kind,
                ..toy_config(6, 10)
            };
            let (_, report) = distill(&data, &config).unwrap();
            assert!(
                report.epoch_mean_loss[9] < report.epoch_mean_loss[0],
                "{kind}: {:?}",
                report.epoch_mean_loss
            );
        }
    }

    #[test]
    fn bds_disabled_matches_uniform_weights_stream() {
        let data = toy_dataset(50, 4, 3, 6);
        let config = TrainConfig {
            bds_enabled: false,
            ..toy_config(4, 1)
        };
        let w = epoch_weights(&data, &config).unwrap();
        assert_eq!(w, SamplerWeights::uniform(50));
        // identical index stream to sampling with explicit uniform weights
        let a = sample_epoch(&w, 50, mix_seed(config.seed, STREAM_EPOCH_BASE)).unwrap();
        let b = sample_epoch(
            &SamplerWeights::uniform(50),
            50,
            mix_seed(config.seed, STREAM_EPOCH_BASE),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn export_is_batch_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let student = Mlp::init(&[6, 10, 4], Activation::Relu, 11).unwrap();
        let data = Array2::from_shape_fn((64, 6), |_| rng.random_range(-1.0..1.0) as f64);
        let ids: Vec<String> = (0..64).map(|i| format!("e{i}")).collect();
        let set = EmbeddingSet::new(ids.clone(), data.mapv(|v| v as f32)).unwrap();
        let full = export_student_embeddings(&student, &set).unwrap();
        // export one row at a time and compare bitwise
        for i in 0..64 {
            let single = EmbeddingSet::new(
                vec![ids[i].clone()],
                set.data().row(i).insert_axis(ndarray::Axis(0)).to_owned(),
            )
            .unwrap();
            let out = export_student_embeddings(&student, &single).unwrap();
            for (a, b) in out.data().row(0).iter().zip(full.data().row(i).iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn export_identity_student_returns_input() {
        let student = Mlp::new(
            vec![crate::nn::DenseLayer {
                w: Array2::eye(3),
                b: ndarray::Array1::zeros(3),
            }],
            Activation::Relu,
        )
        .unwrap();
        let set = EmbeddingSet::new(
            vec!["a".into(), "b".into()],
            ndarray::array![[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]],
        )
        .unwrap();
        let out = export_student_embeddings(&student, &set).unwrap();
        assert_eq!(out.data(), set.data());
        assert_eq!(out.dim(), 3);
    }

    #[test]
    fn non_finite_loss_aborts_with_step_index() {
        // blow up the loss by feeding gigantic target values through MSE with
        // a huge base_lr to force divergence
        let mut data = toy_dataset(16, 3, 2, 7);
        data.targets.mapv_inplace(|v| v * 1e160);
        let config = TrainConfig {
            epochs: 3,
            loss: LossKind::Mse,
            base_lr: 1e30,
            batch_size: 4,
            student_dims: vec![3, 4, 2],
            head_hidden_dim: 4,
            k_clusters: 2,
            epoch_sample_size: 16,
            ..TrainConfig::default()
        };
        let err = distill(&data, &config).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("step"), "{msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }
}
