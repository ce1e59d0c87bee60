//! Command-line pipeline: extract features, cluster teacher embeddings,
//! distill, evaluate, and ablate the cluster count.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure.

mod cli_config;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sskd", version, about = "Embedding distillation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct TrainOverrides {
    /// Config file (TOML or JSON), mirroring the training config plus a
    /// [paths] table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Distillation loss: mse, l1, cosine, clap, kl.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    epoch_sample_size: Option<usize>,
    #[arg(long)]
    k_clusters: Option<usize>,
    /// Disable balanced sampling (uniform random baseline).
    #[arg(long)]
    no_bds: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Student layer widths, comma separated, e.g. 20,32,16.
    #[arg(long, value_delimiter = ',')]
    student_dims: Option<Vec<usize>>,
    #[arg(long)]
    head_hidden_dim: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a directory of 32 kHz mono WAV clips into an SSND feature file.
    Extract {
        #[arg(long)]
        wav_dir: PathBuf,
        /// Output SSND path; the resolved config is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// "mean" pools log-mel frames to one 128-dim vector per clip;
        /// "windows" flattens all frames (clips must share a frame count).
        #[arg(long, default_value = "mean")]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cluster teacher embeddings and write centroids, assignments, weights.
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        k_clusters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// L2-normalize embeddings before clustering.
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a student against precomputed teacher embeddings.
    Distill {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Stop after this many epochs (checkpoint still targets the
        /// configured total, so the run can be resumed).
        #[arg(long)]
        halt_after: Option<usize>,
        /// Resume from a checkpoint directory written by a halted run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Export embeddings from a checkpoint (or take them precomputed) and
    /// score them with a probe on labelled splits.
    Eval {
        #[arg(long, conflicts_with = "embeddings", requires = "features")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Precomputed embeddings to evaluate directly (e.g. the teacher's).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Task spec NAME:TRAIN_LABELS_CSV:TEST_LABELS_CSV, repeatable.
        #[arg(long = "task", required = true)]
        tasks: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Probe kind: linear or knn.
        #[arg(long, default_value = "linear")]
        probe: String,
        #[arg(long, default_value_t = 5)]
        knn_k: usize,
        /// Export head-projected (teacher-space) embeddings instead of the
        /// student's own latent space.
        #[arg(long)]
        export_projected: bool,
        /// Teacher report CSV; adds a retention percentage to the report.
        #[arg(long)]
        teacher_report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the distill+eval pipeline once per cluster count plus a uniform
    /// random-sampling baseline, and emit one CSV row per run.
    AblateClusters {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        train_labels: Option<PathBuf>,
        #[arg(long)]
        test_labels: Option<PathBuf>,
        /// Cluster counts, comma separated, e.g. 5,20,50.
        #[arg(long, value_delimiter = ',', required = true)]
        k_list: Vec<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Write a synthetic demo dataset (features, teacher embeddings, labels).
    GenSynth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5000)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sskd_core::Error>() {
        Some(sskd_core::Error::InvalidArgument(_)) => 1,
        Some(sskd_core::Error::Numerical(_)) => 3,
        Some(_) => 2,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Extract {
            wav_dir,
            out,
            mode,
            config,
        } => commands::extract(&wav_dir, &out, &mode, config.as_deref()),
        Command::Cluster {
            embeddings,
            out_dir,
            k_clusters,
            seed,
            normalize,
            config,
        } => commands::cluster(
            &embeddings,
            &out_dir,
            k_clusters,
            seed,
            normalize,
            config.as_deref(),
        ),
        Command::Distill {
            features,
            teacher,
            out_dir,
            halt_after,
            resume,
            overrides,
        } => commands::distill(
            features.as_deref(),
            teacher.as_deref(),
            out_dir.as_deref(),
            halt_after,
            resume.as_deref(),
            &overrides,
        ),
        Command::Eval {
            checkpoint,
            features,
            embeddings,
            tasks,
            out_dir,
            probe,
            knn_k,
            export_projected,
            teacher_report,
            config,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            features,
            embeddings,
            tasks,
            out_dir,
            probe,
            knn_k,
            export_projected,
            teacher_report,
            config,
        }),
        Command::AblateClusters {
            features,
            teacher,
            train_labels,
            test_labels,
            k_list,
            out_dir,
            overrides,
        } => commands::ablate_clusters(
            features.as_deref(),
            teacher.as_deref(),
            train_labels.as_deref(),
            test_labels.as_deref(),
            &k_list,
            out_dir.as_deref(),
            &overrides,
        ),
        Command::GenSynth {
            out_dir,
            n_samples,
            seed,
        } => commands::gen_synth(&out_dir, n_samples, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
