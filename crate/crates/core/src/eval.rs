//! Downstream evaluation of frozen embeddings: linear probe and kNN
//! classifiers, accuracy and non-interpolated mAP, and the retention
//! percentage of a student report against its teacher's.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::config::ProbeConfig;
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, DenseLayer, Mlp, MlpGrads};
use crate::store::EmbeddingSet;

/// Task labels: one class index per row, or an M x C multi-hot matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    Multi(Array2<u8>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frozen embeddings with labels for one split of one task.
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub ids: Vec<String>,
    pub embeddings: Array2<f64>,
    pub labels: Labels,
}

impl LabeledSplit {
    pub fn new(ids: Vec<String>, embeddings: Array2<f64>, labels: Labels) -> Result<Self> {
        if ids.len() != embeddings.nrows() || labels.len() != embeddings.nrows() {
            return Err(Error::invalid_data(format!(
                "split sizes disagree: {} ids, {} rows, {} labels",
                ids.len(),
                embeddings.nrows(),
                labels.len()
            )));
        }
        if let Labels::Multi(hot) = &labels {
            if hot.iter().any(|&v| v > 1) {
                return Err(Error::invalid_data("multi-hot entries must be 0 or 1"));
            }
        }
        Ok(Self {
            ids,
            embeddings,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn n_classes(train: &LabeledSplit, test: &LabeledSplit) -> Result<usize> {
    match (&train.labels, &test.labels) {
        (Labels::Single(a), Labels::Single(b)) => {
            let c = a.iter().chain(b.iter()).max().map_or(0, |&m| m + 1);
            if c == 0 {
                return Err(Error::invalid_data("no labels"));
            }
            Ok(c)
        }
        (Labels::Multi(a), Labels::Multi(b)) => {
            if a.ncols() != b.ncols() {
                return Err(Error::invalid_data(format!(
                    "train has {} classes, test has {}",
                    a.ncols(),
                    b.ncols()
                )));
            }
            Ok(a.ncols())
        }
        _ => Err(Error::invalid_data(
            "train and test label kinds differ (single vs multi-label)",
        )),
    }
}

fn one_hot(classes: &[usize], c: usize) -> Array2<f64> {
    let mut out = Array2::zeros((classes.len(), c));
    for (i, &y) in classes.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}

fn row_softmax_in_place(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Train a linear probe on the train split and score the test split.
///
/// Single-label tasks use multinomial logistic regression, multi-label tasks
/// C independent logistic regressions; both are full-batch Adam to a train
/// loss plateau, with an L2 penalty on the weights. Returns class scores
/// (probabilities) for every test row.
pub fn linear_probe(
    train: &LabeledSplit,
    test: &LabeledSplit,
    config: &ProbeConfig,
) -> Result<Array2<f64>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid_data("empty split"));
    }
    if train.embeddings.ncols() != test.embeddings.ncols() {
        return Err(Error::invalid_data("train/test embedding dims differ"));
    }
    let c = n_classes(train, test)?;
    let m_train = train.len() as f64;

    let (targets, multi) = match &train.labels {
        Labels::Single(classes) => {
            let mut present = vec![false; c];
            for &y in classes {
                present[y] = true;
            }
            let missing: Vec<usize> = (0..c).filter(|&i| !present[i]).collect();
            if !missing.is_empty() {
                return Err(Error::invalid_data(format!(
                    "classes absent from train split: {missing:?}"
                )));
            }
            (one_hot(classes, c), false)
        }
        Labels::Multi(hot) => (hot.mapv(f64::from), true),
    };

    // the probe is a single affine layer driven by the shared optimizer
    let d = train.embeddings.ncols();
    let mut probe = Mlp::new(
        vec![DenseLayer {
            w: Array2::zeros((c, d)),
            b: Array1::zeros(c),
        }],
        Activation::Relu,
    )?;
    let mut adam = AdamState::new(&probe);
    let mut prev_loss = f64::INFINITY;
    for _ in 0..config.max_epochs {
        let (logits, cache) = probe.forward(train.embeddings.view())?;
        let (loss, d_logits) = if multi {
            let probs = logits.mapv(|z| 1.0 / (1.0 + (-z).exp()));
            let eps = 1e-12;
            let data_loss = -(&targets * &probs.mapv(|p| (p + eps).ln())
                + (1.0 - &targets) * &probs.mapv(|p| (1.0 - p + eps).ln()))
                .sum()
                / (m_train * c as f64);
            let grad = (&probs - &targets) / (m_train * c as f64);
            (data_loss, grad)
        } else {
            let mut probs = logits.clone();
            row_softmax_in_place(&mut probs);
            let eps = 1e-300;
            let data_loss = -(&targets * &probs.mapv(|p| (p + eps).ln())).sum() / m_train;
            let grad = (&probs - &targets) / m_train;
            (data_loss, grad)
        };
        let (mut grads, _) = probe.backward(&cache, d_logits.view())?;
        // L2 on weights only
        grads.layers[0].0.zip_mut_with(&probe.layers()[0].w, |g, &w| {
            *g += config.l2 * w;
        });
        let l2_term = 0.5 * config.l2 * probe.layers()[0].w.iter().map(|w| w * w).sum::<f64>();
        let total = loss + l2_term;
        adam_step(&mut probe, &grads, &mut adam, config.lr)?;
        if (prev_loss - total).abs() < config.plateau_tol {
            break;
        }
        prev_loss = total;
    }

    let (logits, _) = probe.forward(test.embeddings.view())?;
    let scores = if multi {
        logits.mapv(|z| 1.0 / (1.0 + (-z).exp()))
    } else {
        let mut probs = logits;
        row_softmax_in_place(&mut probs);
        probs
    };
    Ok(scores)
}

/// Grad of nothing: helper so MlpGrads stays constructible here if needed.
#[allow(dead_code)]
fn zero_grads(net: &Mlp) -> MlpGrads {
    MlpGrads {
        layers: net
            .layers()
            .iter()
            .map(|l| {
                (
                    Array2::zeros((l.out_dim(), l.in_dim())),
                    Array1::zeros(l.out_dim()),
                )
            })
            .collect(),
    }
}

fn cosine_sim(a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Array2<f64> {
    let eps = 1e-12;
    let norm = |m: &ArrayView2<'_, f64>| -> Array1<f64> {
        m.rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt().max(eps))
            .collect()
    };
    let na = norm(a);
    let nb = norm(b);
    let mut sims = a.dot(&b.t());
    for (i, mut row) in sims.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v /= na[i] * nb[j];
        }
    }
    sims
}

/// Cosine-similarity kNN vote; scores are vote fractions (single-label) or
/// mean neighbor hot vectors (multi-label).
pub fn knn_classify(
    train: &LabeledSplit,
    test: &LabeledSplit,
    k: usize,
) -> Result<Array2<f64>> {
    if k == 0 || k > train.len() {
        return Err(Error::invalid_argument(format!(
            "k = {k} with {} train points",
            train.len()
        )));
    }
    let c = n_classes(train, test)?;
    let sims = cosine_sim(&test.embeddings.view(), &train.embeddings.view());
    let mut scores = Array2::zeros((test.len(), c));
    for (i, row) in sims.rows().into_iter().enumerate() {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            match &train.labels {
                Labels::Single(classes) => scores[[i, classes[j]]] += 1.0 / k as f64,
                Labels::Multi(hot) => {
                    for cls in 0..c {
                        scores[[i, cls]] += f64::from(hot[[j, cls]]) / k as f64;
                    }
                }
            }
        }
    }
    Ok(scores)
}

/// Argmax accuracy as a percentage; score ties break to the lowest class.
pub fn accuracy(scores: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() {
        return Err(Error::invalid_argument(format!(
            "{} score rows vs {} labels",
            scores.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid_argument("no rows to score"));
    }
    let mut correct = 0usize;
    for (row, &y) in scores.rows().into_iter().zip(labels) {
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone)]
pub struct MapOutcome {
    pub map: f64,
    /// Classes with no positive test example, skipped from the mean.
    pub skipped_classes: Vec<usize>,
}

/// Non-interpolated mean average precision over classes. Items are ranked by
/// descending score with ties broken by original index.
pub fn mean_average_precision(
    scores: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, u8>,
) -> Result<MapOutcome> {
    if scores.dim() != (labels.nrows(), labels.ncols()) {
        return Err(Error::invalid_argument(format!(
            "scores {}x{} vs labels {}x{}",
            scores.nrows(),
            scores.ncols(),
            labels.nrows(),
            labels.ncols()
        )));
    }
    let (m, c) = scores.dim();
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut skipped = Vec::new();
    for cls in 0..c {
        let n_pos: usize = (0..m).map(|i| labels[[i, cls]] as usize).sum();
        if n_pos == 0 {
            skipped.push(cls);
            continue;
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            scores[[b, cls]]
                .partial_cmp(&scores[[a, cls]])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &i) in order.iter().enumerate() {
            if labels[[i, cls]] == 1 {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        sum += ap / n_pos as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::invalid_data("no class has a positive example"));
    }
    Ok(MapOutcome {
        map: sum / counted as f64,
        skipped_classes: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    AccuracyPct,
    Map,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::AccuracyPct => f.write_str("accuracy_pct"),
            MetricKind::Map => f.write_str("map"),
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy_pct" => Ok(MetricKind::AccuracyPct),
            "map" => Ok(MetricKind::Map),
            other => Err(Error::format(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub name: String,
    pub metric: MetricKind,
    pub value: f64,
}

/// Per-task metrics with their macro average, and optionally that average as
/// a percentage of a reference (teacher) report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    pub macro_avg: f64,
    pub retention_pct: Option<f64>,
}

impl EvalReport {
    pub fn new(tasks: Vec<TaskResult>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid_argument("report needs at least one task"));
        }
        let macro_avg = tasks.iter().map(|t| t.value).sum::<f64>() / tasks.len() as f64;
        Ok(Self {
            tasks,
            macro_avg,
            retention_pct: None,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["task", "metric", "value"])
            .map_err(|e| Error::format(e.to_string()))?;
        for t in &self.tasks {
            w.write_record([t.name.as_str(), &t.metric.to_string(), &format!("{:.6}", t.value)])
                .map_err(|e| Error::format(e.to_string()))?;
        }
        w.write_record(["macro_avg", "summary", &format!("{:.6}", self.macro_avg)])
            .map_err(|e| Error::format(e.to_string()))?;
        if let Some(r) = self.retention_pct {
            w.write_record(["retention_pct", "summary", &format!("{r:.6}")])
                .map_err(|e| Error::format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let mut tasks = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
            if record.len() != 3 {
                return Err(Error::format(format!(
                    "{}: expected 3 columns, found {}",
                    path.display(),
                    record.len()
                )));
            }
            if &record[1] == "summary" {
                continue;
            }
            tasks.push(TaskResult {
                name: record[0].to_string(),
                metric: record[1].parse()?,
                value: record[2]
                    .parse()
                    .map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
            });
        }
        Self::new(tasks)
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<20} {:<14} {:>10}", "task", "metric", "value")?;
        for t in &self.tasks {
            writeln!(f, "{:<20} {:<14} {:>10.3}", t.name, t.metric.to_string(), t.value)?;
        }
        writeln!(f, "{:<20} {:<14} {:>10.3}", "macro_avg", "", self.macro_avg)?;
        if let Some(r) = self.retention_pct {
            writeln!(f, "{:<20} {:<14} {:>9.1}%", "retention", "", r)?;
        }
        Ok(())
    }
}

/// Student macro average as a percentage of the teacher's. Task sets must
/// match by name and order.
pub fn retention(student: &EvalReport, teacher: &EvalReport) -> Result<f64> {
    if student.tasks.len() != teacher.tasks.len()
        || student
            .tasks
            .iter()
            .zip(&teacher.tasks)
            .any(|(s, t)| s.name != t.name)
    {
        return Err(Error::invalid_argument(
            "student and teacher reports cover different task sets",
        ));
    }
    if teacher.macro_avg <= 0.0 {
        return Err(Error::invalid_argument(
            "teacher macro average must be positive",
        ));
    }
    Ok(100.0 * student.macro_avg / teacher.macro_avg)
}

/// A label value read from a sidecar CSV: a class index or a multi-hot bitstring.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelValue {
    Class(usize),
    Multi(Vec<u8>),
}

/// Read an `(id, label)` CSV. A label field of two or more `0`/`1` characters
/// is a multi-hot bitstring, anything else parses as a class index.
pub fn read_labels(path: &Path) -> Result<Vec<(String, LabelValue)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        if record.len() != 2 {
            return Err(Error::format(format!(
                "{}: expected 2 columns (id,label), found {}",
                path.display(),
                record.len()
            )));
        }
        let id = record[0].to_string();
        if id == "id" && out.is_empty() {
            continue; // optional header row
        }
        let field = record[1].trim();
        let value = if field.len() >= 2 && field.bytes().all(|b| b == b'0' || b == b'1') {
            LabelValue::Multi(field.bytes().map(|b| b - b'0').collect())
        } else {
            LabelValue::Class(field.parse().map_err(|e| {
                Error::format(format!("{}: label {field:?}: {e}", path.display()))
            })?)
        };
        out.push((id, value));
    }
    if out.is_empty() {
        return Err(Error::format(format!("{}: no label rows", path.display())));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[(String, LabelValue)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, value) in labels {
        let field = match value {
            LabelValue::Class(c) => c.to_string(),
            LabelValue::Multi(bits) => bits.iter().map(|b| (b + b'0') as char).collect(),
        };
        w.write_record([id.as_str(), &field])
            .map_err(|e| Error::format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Join an embedding set with sidecar labels into a [`LabeledSplit`]. Rows
/// follow the embedding set's id order restricted to labelled ids.
pub fn labeled_split(embeddings: &EmbeddingSet, labels: &[(String, LabelValue)]) -> Result<LabeledSplit> {
    labeled_split_from_f64(embeddings.ids(), &embeddings.to_f64(), labels)
}

/// Same join, but over an f64 matrix that never went through f32 storage
/// (freshly exported student embeddings).
pub fn labeled_split_from_f64(
    emb_ids: &[String],
    embeddings: &Array2<f64>,
    labels: &[(String, LabelValue)],
) -> Result<LabeledSplit> {
    if emb_ids.len() != embeddings.nrows() {
        return Err(Error::invalid_data("id count does not match embedding rows"));
    }
    let by_id: HashMap<&str, &LabelValue> =
        labels.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (i, id) in emb_ids.iter().enumerate() {
        if let Some(&v) = by_id.get(id.as_str()) {
            ids.push(id.clone());
            rows.push(i);
            values.push(v.clone());
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid_data("no labelled ids in the embedding set"));
    }
    let mut emb = Array2::zeros((ids.len(), embeddings.ncols()));
    for (row, &i) in rows.iter().enumerate() {
        emb.row_mut(row).assign(&embeddings.row(i));
    }
    let labels = match &values[0] {
        LabelValue::Class(_) => {
            let classes = values
                .iter()
                .map(|v| match v {
                    LabelValue::Class(c) => Ok(*c),
                    LabelValue::Multi(_) => {
                        Err(Error::invalid_data("mixed single and multi-hot labels"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Labels::Single(classes)
        }
        LabelValue::Multi(first) => {
            let c = first.len();
            let mut hot = Array2::zeros((values.len(), c));
            for (i, v) in values.iter().enumerate() {
                match v {
                    LabelValue::Multi(bits) if bits.len() == c => {
                        for (j, &b) in bits.iter().enumerate() {
                            hot[[i, j]] = b;
                        }
                    }
                    LabelValue::Multi(bits) => {
                        return Err(Error::invalid_data(format!(
                            "multi-hot width {} differs from {}",
                            bits.len(),
                            c
                        )))
                    }
                    LabelValue::Class(_) => {
                        return Err(Error::invalid_data("mixed single and multi-hot labels"))
                    }
                }
            }
            Labels::Multi(hot)
        }
    };
    LabeledSplit::new(ids, emb, labels)
}
