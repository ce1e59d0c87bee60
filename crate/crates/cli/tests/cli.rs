//! End-to-end behavior of the binary: exit codes, reproducibility, and the
//! documented per-command edge cases.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn sskd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sskd"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn sskd");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_data(dir: &Path, n: usize, seed: u64) {
    run_ok(sskd()
        .arg("gen-synth")
        .arg("--out-dir")
        .arg(dir)
        .args(["--n-samples", &n.to_string(), "--seed", &seed.to_string()]));
}

#[test]
fn exit_codes_follow_the_contract() {
    // usage errors -> 1
    let out = sskd().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // help -> 0
    let out = sskd().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    // data errors -> 2
    let out = sskd()
        .args(["distill", "--features", "/nonexistent.ssnd", "--teacher", "/nope.ssnd"])
        .args(["--out-dir", "/tmp/sskd-never"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distill_toy_run_is_reproducible_and_fast() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 500, 7);

    let distill = |out: &Path| {
        run_ok(sskd()
            .arg("distill")
            .arg("--features")
            .arg(data.join("features.ssnd"))
            .arg("--teacher")
            .arg(data.join("teacher.ssnd"))
            .arg("--out-dir")
            .arg(out)
            .args([
                "--epochs",
                "4",
                "--student-dims",
                "20,16,8",
                "--seed",
                "99",
                "--loss",
                "cosine",
            ]))
    };
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    distill(&run_a);
    distill(&run_b);

    // same seed -> byte-identical checkpoints
    let manifest_a = std::fs::read(run_a.join("checkpoint/manifest.toml")).unwrap();
    let manifest_b = std::fs::read(run_b.join("checkpoint/manifest.toml")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    for entry in std::fs::read_dir(run_a.join("checkpoint/tensors")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(run_a.join("checkpoint/tensors").join(&name)).unwrap();
        let b = std::fs::read(run_b.join("checkpoint/tensors").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between identical runs");
    }

    // training log has the documented columns
    let log = std::fs::read_to_string(run_a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,step,lr,loss,wall_ms");

    // rerunning from the echoed config reproduces the checkpoint
    let run_c = dir.path().join("c");
    run_ok(sskd()
        .arg("distill")
        .arg("--features")
        .arg(data.join("features.ssnd"))
        .arg("--teacher")
        .arg(data.join("teacher.ssnd"))
        .arg("--out-dir")
        .arg(&run_c)
        .arg("--config")
        .arg(run_a.join("resolved_config.toml")));
    let manifest_c = std::fs::read(run_c.join("checkpoint/manifest.toml")).unwrap();
    assert_eq!(manifest_a, manifest_c);

    assert!(start.elapsed().as_secs() < 60, "toy distill run too slow");
}

#[test]
fn no_bds_flag_is_recorded_and_changes_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 300, 3);
    let run = |out: &Path, extra: &[&str]| {
        run_ok(sskd()
            .arg("distill")
            .arg("--features")
            .arg(data.join("features.ssnd"))
            .arg("--teacher")
            .arg(data.join("teacher.ssnd"))
            .arg("--out-dir")
            .arg(out)
            .args(["--epochs", "2", "--student-dims", "20,8,4", "--seed", "5"])
            .args(extra));
    };
    let with_bds = dir.path().join("bds");
    let without = dir.path().join("nobds");
    run(&with_bds, &[]);
    run(&without, &["--no-bds"]);
    let cfg = std::fs::read_to_string(without.join("resolved_config.toml")).unwrap();
    assert!(cfg.contains("bds_enabled = false"));
    let a = std::fs::read(with_bds.join("checkpoint/tensors/student.layer0.w.ssnd")).unwrap();
    let b = std::fs::read(without.join("checkpoint/tensors/student.layer0.w.ssnd")).unwrap();
    assert_ne!(a, b, "balanced and uniform sampling should differ");
}

#[test]
fn cluster_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 250, 11);
    let cluster = |out: &Path| {
        run_ok(sskd()
            .arg("cluster")
            .arg("--embeddings")
            .arg(data.join("teacher.ssnd"))
            .arg("--out-dir")
            .arg(out)
            .args(["--k-clusters", "8", "--seed", "21"]));
    };
    let a = dir.path().join("c1");
    let b = dir.path().join("c2");
    cluster(&a);
    cluster(&b);
    for file in ["centroids.ssnd", "assignments.csv", "weights.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs across identical runs"
        );
    }
    // k larger than the dataset is a usage error
    let out = sskd()
        .arg("cluster")
        .arg("--embeddings")
        .arg(data.join("teacher.ssnd"))
        .arg("--out-dir")
        .arg(dir.path().join("c3"))
        .args(["--k-clusters", "100000"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_reports_tasks_in_order_and_retention_only_with_reference() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 400, 13);

    let task_b = format!(
        "second:{}:{}",
        data.join("train_labels.csv").display(),
        data.join("test_labels.csv").display()
    );
    let task_a = format!(
        "first:{}:{}",
        data.join("train_labels.csv").display(),
        data.join("test_labels.csv").display()
    );

    // teacher evaluated against itself: plain report, no retention row
    let teacher_dir = dir.path().join("teacher_eval");
    run_ok(sskd()
        .arg("eval")
        .arg("--embeddings")
        .arg(data.join("teacher.ssnd"))
        .args(["--task", &task_a, "--task", &task_b])
        .arg("--out-dir")
        .arg(&teacher_dir));
    let report = std::fs::read_to_string(teacher_dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "task,metric,value");
    assert!(lines[1].starts_with("first,"), "task order must be preserved");
    assert!(lines[2].starts_with("second,"));
    assert!(!report.contains("retention"), "no reference, no retention row");

    // the same embeddings against their own report give 100% retention
    let self_dir = dir.path().join("self_eval");
    run_ok(sskd()
        .arg("eval")
        .arg("--embeddings")
        .arg(data.join("teacher.ssnd"))
        .args(["--task", &task_a, "--task", &task_b])
        .arg("--teacher-report")
        .arg(teacher_dir.join("report.csv"))
        .arg("--out-dir")
        .arg(&self_dir));
    let report = std::fs::read_to_string(self_dir.join("report.csv")).unwrap();
    let retention_row = report
        .lines()
        .find(|l| l.starts_with("retention_pct"))
        .expect("retention row present");
    let value: f64 = retention_row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((value - 100.0).abs() < 1e-9);
}

#[test]
fn extract_errors_on_empty_dir_and_silence_hits_floor() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = sskd()
        .arg("extract")
        .arg("--wav-dir")
        .arg(&empty)
        .arg("--out")
        .arg(dir.path().join("x.ssnd"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // one silent clip: every pooled value is ln(1e-5)
    let wavs = dir.path().join("wavs");
    std::fs::create_dir_all(&wavs).unwrap();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 32_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(wavs.join("silent.wav"), spec).unwrap();
    for _ in 0..4096 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let out_path = dir.path().join("feat.ssnd");
    run_ok(sskd()
        .arg("extract")
        .arg("--wav-dir")
        .arg(&wavs)
        .arg("--out")
        .arg(&out_path));
    let set = sskd_core::store::read_embeddings(&out_path).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(set.ids()[0], "silent");
    let floor = (1e-5f32).ln();
    for &v in set.data().iter() {
        assert!((v - floor).abs() < 1e-4, "pooled value {v} vs floor {floor}");
    }
}
