//! Distillation objectives aligning projected student embeddings with frozen
//! teacher embeddings. Each returns the scalar loss and its exact gradient
//! with respect to the student side; the teacher side is always a constant.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row norms below this are treated as zero for the cosine loss.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    L1,
    Cosine,
    Clap,
    Kl,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Cosine
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "l1" => Ok(LossKind::L1),
            "cosine" => Ok(LossKind::Cosine),
            "clap" => Ok(LossKind::Clap),
            "kl" => Ok(LossKind::Kl),
            other => Err(Error::invalid_argument(format!(
                "unknown loss {other:?}; expected one of mse, l1, cosine, clap, kl"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
            LossKind::Cosine => "cosine",
            LossKind::Clap => "clap",
            LossKind::Kl => "kl",
        };
        f.write_str(s)
    }
}

/// Which form of the bidirectional contrastive loss to use.
///
/// `SumInsideLog` scores matched pairs as `-log(l_fwd + l_bwd)` and is the
/// default; `SumOfLogs` is the conventional contrastive form
/// `-(log l_fwd + log l_bwd)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClapVariant {
    SumInsideLog,
    SumOfLogs,
}

impl Default for ClapVariant {
    fn default() -> Self {
        ClapVariant::SumInsideLog
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// d(loss)/d(student embeddings), same shape as the student matrix.
    pub grad: Array2<f64>,
}

fn check_shapes(zs: &ArrayView2<'_, f64>, zt: &ArrayView2<'_, f64>) -> Result<usize> {
    if zs.dim() != zt.dim() {
        return Err(Error::invalid_argument(format!(
            "student {}x{} vs teacher {}x{}",
            zs.nrows(),
            zs.ncols(),
            zt.nrows(),
            zt.ncols()
        )));
    }
    if zs.nrows() == 0 {
        return Err(Error::invalid_argument("empty batch"));
    }
    if zs.iter().chain(zt.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid_data("non-finite embedding"));
    }
    Ok(zs.nrows())
}

/// Mean squared L2 distance per row: `(1/N) sum_i ||zs_i - zt_i||^2`.
pub fn loss_mse(zs: ArrayView2<'_, f64>, zt: ArrayView2<'_, f64>) -> Result<LossOutput> {
    let n = check_shapes(&zs, &zt)? as f64;
    let diff = &zs - &zt;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.mapv(|d| 2.0 * d / n);
    Ok(LossOutput { value, grad })
}

/// Mean L1 distance per row, subgradient at zero defined as zero.
pub fn loss_l1(zs: ArrayView2<'_, f64>, zt: ArrayView2<'_, f64>) -> Result<LossOutput> {
    let n = check_shapes(&zs, &zt)? as f64;
    let diff = &zs - &zt;
    let value = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    Ok(LossOutput { value, grad })
}

/// Mean cosine distance per row: `(1/N) sum_i (1 - cos(zs_i, zt_i))`.
pub fn loss_cosine(zs: ArrayView2<'_, f64>, zt: ArrayView2<'_, f64>) -> Result<LossOutput> {
    let n_rows = check_shapes(&zs, &zt)?;
    let n = n_rows as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(zs.dim());
    for i in 0..n_rows {
        let s = zs.row(i);
        let t = zt.row(i);
        let ns = s.dot(&s).sqrt();
        let nt = t.dot(&t).sqrt();
        if ns <= NORM_EPS {
            return Err(Error::invalid_data(format!("zero-norm student row {i}")));
        }
        if nt <= NORM_EPS {
            return Err(Error::invalid_data(format!("zero-norm teacher row {i}")));
        }
        let cos = s.dot(&t) / (ns * nt);
        value += 1.0 - cos;
        // d/ds (-cos) = cos * s / ||s||^2 - t / (||s|| ||t||)
        for j in 0..zs.ncols() {
            grad[[i, j]] = (cos * s[j] / (ns * ns) - t[j] / (ns * nt)) / n;
        }
    }
    Ok(LossOutput {
        value: value / n,
        grad,
    })
}

fn row_softmax(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Bidirectional contrastive loss over the in-batch similarity matrix
/// `S = zs zt^T / temperature`, scoring each sample by the diagonal of the
/// row-wise softmax in both directions.
pub fn loss_clap_with(
    zs: ArrayView2<'_, f64>,
    zt: ArrayView2<'_, f64>,
    variant: ClapVariant,
    temperature: f64,
) -> Result<LossOutput> {
    let n_rows = check_shapes(&zs, &zt)?;
    if !(temperature > 0.0) {
        return Err(Error::invalid_argument("temperature must be positive"));
    }
    let n = n_rows as f64;
    let sim = zs.dot(&zt.t()) / temperature;
    let fwd = row_softmax(&sim); // student -> teacher, rows of S
    let bwd = row_softmax(&sim.t().to_owned()); // teacher -> student, columns of S
    let a: Array1<f64> = (0..n_rows).map(|i| fwd[[i, i]]).collect();
    let b: Array1<f64> = (0..n_rows).map(|i| bwd[[i, i]]).collect();

    let value = match variant {
        ClapVariant::SumInsideLog => -(0.5 / n) * (0..n_rows).map(|i| (a[i] + b[i]).ln()).sum::<f64>(),
        ClapVariant::SumOfLogs => {
            -(0.5 / n) * (0..n_rows).map(|i| a[i].ln() + b[i].ln()).sum::<f64>()
        }
    };

    // dL/dS, then dL/dZs = (dL/dS) Zt / temperature.
    let mut d_sim = Array2::<f64>::zeros((n_rows, n_rows));
    for p in 0..n_rows {
        for q in 0..n_rows {
            let delta = if p == q { 1.0 } else { 0.0 };
            let (wa, wb) = match variant {
                ClapVariant::SumInsideLog => (a[p] / (a[p] + b[p]), b[q] / (a[q] + b[q])),
                ClapVariant::SumOfLogs => (1.0, 1.0),
            };
            d_sim[[p, q]] = -(0.5 / n)
                * (wa * (delta - fwd[[p, q]]) + wb * (delta - bwd[[q, p]]));
        }
    }
    let grad = d_sim.dot(&zt) / temperature;
    Ok(LossOutput { value, grad })
}

pub fn loss_clap(zs: ArrayView2<'_, f64>, zt: ArrayView2<'_, f64>) -> Result<LossOutput> {
    loss_clap_with(zs, zt, ClapVariant::default(), 1.0)
}

/// Mean row-wise KL divergence between teacher and student softmax
/// distributions over the embedding dimension; the gradient flows only
/// through the student side.
pub fn loss_kl(zs: ArrayView2<'_, f64>, zt: ArrayView2<'_, f64>) -> Result<LossOutput> {
    let n_rows = check_shapes(&zs, &zt)?;
    let n = n_rows as f64;
    let p_s = row_softmax(&zs.to_owned());
    let p_t = row_softmax(&zt.to_owned());
    let mut value = 0.0;
    for i in 0..n_rows {
        for j in 0..zs.ncols() {
            value += p_t[[i, j]] * (p_t[[i, j]].ln() - p_s[[i, j]].ln());
        }
    }
    let grad = (&p_s - &p_t) / n;
    Ok(LossOutput {
        value: value / n,
        grad,
    })
}

/// Dispatch to one of the five losses with default settings.
pub fn loss_eval(
    kind: LossKind,
    zs: ArrayView2<'_, f64>,
    zt: ArrayView2<'_, f64>,
) -> Result<LossOutput> {
    match kind {
        LossKind::Mse => loss_mse(zs, zt),
        LossKind::L1 => loss_l1(zs, zt),
        LossKind::Cosine => loss_cosine(zs, zt),
        LossKind::Clap => loss_clap(zs, zt),
        LossKind::Kl => loss_kl(zs, zt),
    }
}
