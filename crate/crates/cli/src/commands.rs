//! Implementations behind the subcommands. All heavy lifting is in the core
//! crate; this layer wires files to library calls and reports results.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ndarray::{Array2, Axis};
use sskd_core::bds::{bds_weights, kmeans_with_trace, KmeansOptions};
use sskd_core::checkpoint::{load_checkpoint, save_checkpoint};
use sskd_core::error::Error;
use sskd_core::eval::{
    accuracy, knn_classify, labeled_split, linear_probe, mean_average_precision, read_labels,
    retention, write_labels, EvalReport, Labels, MetricKind, TaskResult,
};
use sskd_core::features::{log_mel_with, read_wav};
use sskd_core::store::{align_pairs, read_embeddings, write_embeddings, EmbeddingSet};
use sskd_core::sweep::{cluster_sweep, write_sweep_csv};
use sskd_core::synth::{generate, SynthSpec};
use sskd_core::trainer::{
    distill_with_options, export_projected_embeddings, export_student_embeddings, DistillOptions,
};
use sskd_core::TrainConfig;

use crate::cli_config::{echo_config, load_config, resolve, CliConfig};
use crate::TrainOverrides;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

pub fn extract(
    wav_dir: &Path,
    out: &Path,
    mode: &str,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => CliConfig::default(),
    };
    let features = cfg.train.features;

    let mut wavs: Vec<PathBuf> = std::fs::read_dir(wav_dir)
        .with_context(|| format!("reading {}", wav_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        bail!(Error::InvalidData(format!(
            "no .wav files in {}",
            wav_dir.display()
        )));
    }

    let mut ids = Vec::with_capacity(wavs.len());
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(wavs.len());
    let mut seen = HashSet::new();
    for path in &wavs {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidData(format!("bad file name {}", path.display())))?
            .to_string();
        if !seen.insert(id.clone()) {
            bail!(Error::InvalidData(format!("duplicate clip id {id:?}")));
        }
        let clip = read_wav(path, features.sample_rate)?;
        let spec = log_mel_with(&clip, &features)?;
        let row: Vec<f32> = match mode {
            "mean" => spec
                .frames
                .mean_axis(Axis(0))
                .expect("at least one frame")
                .iter()
                .map(|&v| v as f32)
                .collect(),
            "windows" => spec.frames.iter().map(|&v| v as f32).collect(),
            other => return Err(usage(format!("unknown --mode {other:?} (mean or windows)"))),
        };
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!(Error::InvalidData(format!(
                    "{id:?} yields {} values but earlier clips yield {} \
                     (windows mode needs equal-length clips)",
                    row.len(),
                    first.len()
                )));
            }
        }
        ids.push(id);
        rows.push(row);
    }

    let dim = rows[0].len();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((ids.len(), dim), flat).expect("row-major construction");
    let set = EmbeddingSet::new(ids, data)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_embeddings(out, &set)?;
    let echo_dir = out.parent().unwrap_or_else(|| Path::new("."));
    echo_config(&CliConfig { train: TrainConfig { features, ..cfg.train.clone() }, ..cfg.clone() }, echo_dir)?;
    println!(
        "extracted {} clips -> {} ({}-dim, mode {mode})",
        set.len(),
        out.display(),
        set.dim()
    );
    Ok(())
}

pub fn cluster(
    embeddings: &Path,
    out_dir: &Path,
    k_clusters: Option<usize>,
    seed: Option<u64>,
    normalize: bool,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => CliConfig::default(),
    };
    if let Some(k) = k_clusters {
        cfg.train.k_clusters = k;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if normalize {
        cfg.train.bds_normalize = true;
    }

    let set = read_embeddings(embeddings)?;
    let emb = set.to_f64();
    let options = KmeansOptions {
        max_iter: cfg.train.kmeans_max_iter,
        tol: cfg.train.kmeans_tol,
        l2_normalize: cfg.train.bds_normalize,
    };
    let (model, trace) =
        kmeans_with_trace(emb.view(), cfg.train.k_clusters, cfg.train.seed, &options)?;
    let weights = bds_weights(&model.assignments, cfg.train.bds_offset)?;

    std::fs::create_dir_all(out_dir)?;
    let centroid_ids: Vec<String> = (0..model.k()).map(|c| format!("c{c}")).collect();
    let centroids = EmbeddingSet::new(centroid_ids, model.centroids.mapv(|v| v as f32))?;
    write_embeddings(&out_dir.join("centroids.ssnd"), &centroids)?;

    let mut w = csv::Writer::from_path(out_dir.join("assignments.csv"))?;
    for (id, &a) in set.ids().iter().zip(&model.assignments) {
        w.write_record([id.as_str(), &a.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out_dir.join("weights.csv"))?;
    for (id, &wt) in set.ids().iter().zip(weights.as_slice()) {
        w.write_record([id.as_str(), &format!("{wt:.12e}")])?;
    }
    w.flush()?;
    echo_config(&cfg, out_dir)?;
    println!(
        "clustered {} embeddings into k={} (inertia {:.4}, {} Lloyd iterations) -> {}",
        set.len(),
        model.k(),
        model.inertia,
        trace.len(),
        out_dir.display()
    );
    Ok(())
}

fn require<'a>(
    flag: Option<&'a Path>,
    from_config: &'a Option<PathBuf>,
    name: &str,
) -> anyhow::Result<&'a Path> {
    flag.or(from_config.as_deref())
        .ok_or_else(|| usage(format!("--{name} is required (flag or [paths] in the config)")))
}

pub fn distill(
    features: Option<&Path>,
    teacher: Option<&Path>,
    out_dir: Option<&Path>,
    halt_after: Option<usize>,
    resume: Option<&Path>,
    overrides: &TrainOverrides,
) -> anyhow::Result<()> {
    let mut cfg = resolve(overrides)?;
    let features_path = require(features, &cfg.paths.features, "features")?.to_path_buf();
    let teacher_path = require(teacher, &cfg.paths.teacher, "teacher")?.to_path_buf();
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.output_dir.clone())
        .ok_or_else(|| usage("--out-dir is required (flag or [paths] in the config)"))?;
    cfg.paths.features = Some(features_path.clone());
    cfg.paths.teacher = Some(teacher_path.clone());
    cfg.paths.output_dir = Some(out_dir.clone());

    let inputs = read_embeddings(&features_path)?;
    let targets = read_embeddings(&teacher_path)?;
    let aligned = align_pairs(&inputs, &targets)?;
    if aligned.dropped_inputs + aligned.dropped_targets > 0 {
        eprintln!(
            "warning: dropped {} feature ids and {} teacher ids without a partner",
            aligned.dropped_inputs, aligned.dropped_targets
        );
    }
    // the student input width comes from the data unless explicitly set
    if overrides.student_dims.is_none() && cfg.train.student_dims[0] != aligned.dataset.inputs.ncols()
    {
        let mut dims = cfg.train.student_dims.clone();
        dims[0] = aligned.dataset.inputs.ncols();
        cfg.train.student_dims = dims;
    }

    let resume_state = match resume {
        Some(dir) => {
            let (state, ckpt_config) = load_checkpoint(dir)?;
            if ckpt_config.hash()? != cfg.train.hash()? {
                bail!(usage(
                    "resume checkpoint was trained with a different config; \
                     pass the same config/flags or start fresh"
                ));
            }
            Some(state)
        }
        None => None,
    };

    std::fs::create_dir_all(&out_dir)?;
    let options = DistillOptions {
        halt_after_epochs: halt_after,
        resume: resume_state,
        log_path: Some(out_dir.join("train_log.csv")),
    };
    let (state, report) = distill_with_options(&aligned.dataset, &cfg.train, options)?;
    if report.clamped_epoch_sample {
        eprintln!(
            "warning: epoch_sample_size clamped to the {} available samples",
            aligned.dataset.len()
        );
    }

    let ckpt_dir = out_dir.join("checkpoint");
    save_checkpoint(&ckpt_dir, &state, &cfg.train)?;

    let mut w = csv::Writer::from_path(out_dir.join("epoch_loss.csv"))?;
    w.write_record(["epoch", "mean_loss"])?;
    let first_epoch = state.epochs_done - report.epoch_mean_loss.len();
    for (i, loss) in report.epoch_mean_loss.iter().enumerate() {
        w.write_record([(first_epoch + i).to_string(), format!("{loss:.10e}")])?;
    }
    w.flush()?;
    echo_config(&cfg, &out_dir)?;

    println!(
        "trained {} epochs ({} steps) in {:.1}s; final epoch loss {}; checkpoint at {}",
        state.epochs_done,
        state.global_step,
        report.wall_ms as f64 / 1000.0,
        report
            .final_loss
            .map_or("n/a".to_string(), |l| format!("{l:.6}")),
        ckpt_dir.display()
    );
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub tasks: Vec<String>,
    pub out_dir: PathBuf,
    pub probe: String,
    pub knn_k: usize,
    pub export_projected: bool,
    pub teacher_report: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => CliConfig::default(),
    };
    if args.export_projected {
        cfg.train.export_projected = true;
    }

    let set = match (&args.checkpoint, &args.embeddings) {
        (Some(ckpt_dir), None) => {
            let features_path = args
                .features
                .as_deref()
                .ok_or_else(|| usage("--checkpoint needs --features to embed"))?;
            let (state, ckpt_config) = load_checkpoint(ckpt_dir)?;
            let inputs = read_embeddings(features_path)?;
            if cfg.train.export_projected || ckpt_config.export_projected {
                export_projected_embeddings(&state.student, &state.head, &inputs)?
            } else {
                export_student_embeddings(&state.student, &inputs)?
            }
        }
        (None, Some(emb_path)) => read_embeddings(emb_path)?,
        _ => return Err(usage("pass exactly one of --checkpoint or --embeddings")),
    };

    let mut results = Vec::new();
    for task in &args.tasks {
        let parts: Vec<&str> = task.split(':').collect();
        if parts.len() != 3 {
            return Err(usage(format!(
                "task {task:?} should be NAME:TRAIN_CSV:TEST_CSV"
            )));
        }
        let (name, train_csv, test_csv) = (parts[0], parts[1], parts[2]);
        let train = labeled_split(&set, &read_labels(Path::new(train_csv))?)?;
        let test = labeled_split(&set, &read_labels(Path::new(test_csv))?)?;
        let scores = match args.probe.as_str() {
            "linear" => linear_probe(&train, &test, &cfg.train.probe)?,
            "knn" => knn_classify(&train, &test, args.knn_k)?,
            other => return Err(usage(format!("unknown --probe {other:?} (linear or knn)"))),
        };
        let (metric, value) = match &test.labels {
            Labels::Single(classes) => (MetricKind::AccuracyPct, accuracy(scores.view(), classes)?),
            Labels::Multi(hot) => {
                let out = mean_average_precision(scores.view(), hot.view())?;
                if !out.skipped_classes.is_empty() {
                    eprintln!(
                        "warning: task {name}: classes {:?} have no positives and were skipped",
                        out.skipped_classes
                    );
                }
                // scaled by 100 so accuracy and mAP average on one scale
                (MetricKind::Map, 100.0 * out.map)
            }
        };
        results.push(TaskResult {
            name: name.to_string(),
            metric,
            value,
        });
    }

    let mut report = EvalReport::new(results)?;
    if let Some(teacher_path) = &args.teacher_report {
        let teacher = EvalReport::read_csv(teacher_path)?;
        report.retention_pct = Some(retention(&report, &teacher)?);
    }

    std::fs::create_dir_all(&args.out_dir)?;
    report.write_csv(&args.out_dir.join("report.csv"))?;
    echo_config(&cfg, &args.out_dir)?;
    print!("{report}");
    Ok(())
}

pub fn ablate_clusters(
    features: Option<&Path>,
    teacher: Option<&Path>,
    train_labels: Option<&Path>,
    test_labels: Option<&Path>,
    k_list: &[usize],
    out_dir: Option<&Path>,
    overrides: &TrainOverrides,
) -> anyhow::Result<()> {
    let mut cfg = resolve(overrides)?;
    let features_path = require(features, &cfg.paths.features, "features")?.to_path_buf();
    let teacher_path = require(teacher, &cfg.paths.teacher, "teacher")?.to_path_buf();
    let train_labels_path =
        require(train_labels, &cfg.paths.train_labels, "train-labels")?.to_path_buf();
    let test_labels_path =
        require(test_labels, &cfg.paths.test_labels, "test-labels")?.to_path_buf();
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.output_dir.clone())
        .ok_or_else(|| usage("--out-dir is required (flag or [paths] in the config)"))?;
    cfg.paths = crate::cli_config::Paths {
        features: Some(features_path.clone()),
        teacher: Some(teacher_path.clone()),
        train_labels: Some(train_labels_path.clone()),
        test_labels: Some(test_labels_path.clone()),
        output_dir: Some(out_dir.clone()),
    };

    let inputs = read_embeddings(&features_path)?;
    let targets = read_embeddings(&teacher_path)?;
    let aligned = align_pairs(&inputs, &targets)?;
    if overrides.student_dims.is_none() && cfg.train.student_dims[0] != aligned.dataset.inputs.ncols()
    {
        cfg.train.student_dims[0] = aligned.dataset.inputs.ncols();
    }
    let train = read_labels(&train_labels_path)?;
    let test = read_labels(&test_labels_path)?;

    let rows = cluster_sweep(&aligned.dataset, &train, &test, k_list, &cfg.train)?;
    std::fs::create_dir_all(&out_dir)?;
    let csv_path = out_dir.join("cluster_sweep.csv");
    write_sweep_csv(&csv_path, &rows)?;
    echo_config(&cfg, &out_dir)?;
    for row in &rows {
        let label = match row.sampling {
            sskd_core::sweep::SweepSampling::Bds { k } => format!("bds k={k}"),
            sskd_core::sweep::SweepSampling::Random => "random".to_string(),
        };
        println!(
            "{label:<12} final_loss {:.5}  metric {:.2}",
            row.final_loss, row.metric
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn gen_synth(out_dir: &Path, n_samples: usize, seed: u64) -> anyhow::Result<()> {
    let spec = SynthSpec {
        n_samples,
        ..SynthSpec::default()
    };
    let data = generate(&spec, seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_embeddings(&out_dir.join("features.ssnd"), &data.inputs)?;
    write_embeddings(&out_dir.join("teacher.ssnd"), &data.teacher)?;
    write_labels(&out_dir.join("train_labels.csv"), &data.train_labels)?;
    write_labels(&out_dir.join("test_labels.csv"), &data.test_labels)?;
    let cfg = CliConfig {
        train: TrainConfig {
            seed,
            student_dims: vec![spec.input_dim, 32, 16],
            ..TrainConfig::default()
        },
        ..CliConfig::default()
    };
    echo_config(&cfg, out_dir)?;
    println!(
        "wrote {n_samples} samples ({}-dim inputs, {}-dim teacher embeddings) to {}",
        spec.input_dim,
        spec.teacher_dim,
        out_dir.display()
    );
    Ok(())
}
