//! Id-keyed embedding datasets and their on-disk persistence.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ssnd;

/// An id-keyed N x d matrix of f32 embeddings. Row `i` belongs to `ids()[i]`.
///
/// Invariants (enforced at construction): ids are unique, non-empty UTF-8
/// strings, one per row, and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    data: Array2<f32>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, data: Array2<f32>) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::invalid_data(format!(
                "{} ids for {} rows",
                ids.len(),
                data.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if id.is_empty() {
                return Err(Error::invalid_data("empty sample id"));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid_data(format!("duplicate sample id {id:?}")));
            }
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid_data(format!("non-finite embedding value {v}")));
        }
        Ok(Self { ids, data })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    /// Number of samples N.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Embedding dimensionality d.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// The data widened to f64 for training arithmetic.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    pub fn into_parts(self) -> (Vec<String>, Array2<f32>) {
        (self.ids, self.data)
    }
}

/// Student inputs paired row-for-row with teacher targets under a shared id
/// list. Matrices are widened to f64, the training-side arithmetic type.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub ids: Vec<String>,
    /// N x p student input features.
    pub inputs: Array2<f64>,
    /// N x d_t teacher embeddings.
    pub targets: Array2<f64>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Result of [`align_pairs`]: the joined dataset plus how many ids each side lost.
#[derive(Debug, Clone)]
pub struct Aligned {
    pub dataset: PairedDataset,
    pub dropped_inputs: usize,
    pub dropped_targets: usize,
}

/// Write an [`EmbeddingSet`] to `path` in the SSND v1 format.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    ssnd::write_f32(path, &set.ids, &set.data)
}

/// Read an [`EmbeddingSet`] written by [`write_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let (ids, data) = ssnd::read_f32(path)?;
    EmbeddingSet::new(ids, data)
}

/// Inner-join two embedding sets on id. Output rows follow the `inputs` id
/// order restricted to the intersection, so pairing does not depend on the
/// targets file ordering.
pub fn align_pairs(inputs: &EmbeddingSet, targets: &EmbeddingSet) -> Result<Aligned> {
    let target_index: HashMap<&str, usize> = targets
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut ids = Vec::new();
    let mut input_rows = Vec::new();
    let mut target_rows = Vec::new();
    for (i, id) in inputs.ids.iter().enumerate() {
        if let Some(&j) = target_index.get(id.as_str()) {
            ids.push(id.clone());
            input_rows.push(i);
            target_rows.push(j);
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid_data(
            "no common ids between inputs and targets",
        ));
    }

    let n = ids.len();
    let p = inputs.dim();
    let dt = targets.dim();
    let mut in_mat = Array2::<f64>::zeros((n, p));
    let mut tg_mat = Array2::<f64>::zeros((n, dt));
    for (row, (&i, &j)) in input_rows.iter().zip(&target_rows).enumerate() {
        for c in 0..p {
            in_mat[[row, c]] = f64::from(inputs.data[[i, c]]);
        }
        for c in 0..dt {
            tg_mat[[row, c]] = f64::from(targets.data[[j, c]]);
        }
    }

    Ok(Aligned {
        dropped_inputs: inputs.len() - n,
        dropped_targets: targets.len() - n,
        dataset: PairedDataset {
            ids,
            inputs: in_mat,
            targets: tg_mat,
        },
    })
}
