//! Synthetic desk-scale datasets: clustered Gaussian inputs pushed through a
//! frozen random MLP standing in for a teacher. Lets the whole pipeline run
//! end to end without any external data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ndarray::Array2;

use crate::error::Result;
use crate::eval::LabelValue;
use crate::nn::{Activation, Mlp};
use crate::store::EmbeddingSet;
use crate::trainer::forward_rows;

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub input_dim: usize,
    pub teacher_dim: usize,
    pub n_classes: usize,
    /// Class centers are drawn from N(0, center_scale^2 I).
    pub center_scale: f64,
    /// Per-sample isotropic noise around the class center.
    pub noise: f64,
    pub teacher_hidden: usize,
    /// Leading fraction of samples used as the probe train split.
    pub train_frac: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            input_dim: 20,
            teacher_dim: 64,
            n_classes: 10,
            center_scale: 3.0,
            noise: 1.0,
            teacher_hidden: 48,
            train_frac: 0.8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Student input features, N x input_dim.
    pub inputs: EmbeddingSet,
    /// Frozen-teacher embeddings of the same clips, N x teacher_dim.
    pub teacher: EmbeddingSet,
    /// Class labels for the probe train split.
    pub train_labels: Vec<(String, LabelValue)>,
    /// Class labels for the probe test split.
    pub test_labels: Vec<(String, LabelValue)>,
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_samples;

    let centers = Array2::from_shape_fn((spec.n_classes, spec.input_dim), |_| {
        spec.center_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..spec.n_classes)).collect();
    let inputs = Array2::from_shape_fn((n, spec.input_dim), |(i, j)| {
        centers[[classes[i], j]] + spec.noise * rng.sample::<f64, _>(StandardNormal)
    });

    let teacher_net = Mlp::init(
        &[spec.input_dim, spec.teacher_hidden, spec.teacher_dim],
        Activation::Relu,
        rng.random(),
    )?;
    let teacher_emb = forward_rows(&teacher_net, inputs.view())?;

    let ids: Vec<String> = (0..n).map(|i| format!("clip{i:05}")).collect();
    let n_train = ((n as f64) * spec.train_frac).round() as usize;
    let labels = |range: std::ops::Range<usize>| {
        range
            .map(|i| (ids[i].clone(), LabelValue::Class(classes[i])))
            .collect()
    };

    Ok(SynthDataset {
        inputs: EmbeddingSet::new(ids.clone(), inputs.mapv(|v| v as f32))?,
        teacher: EmbeddingSet::new(ids.clone(), teacher_emb.mapv(|v| v as f32))?,
        train_labels: labels(0..n_train),
        test_labels: labels(n_train..n),
    })
}
