use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedrc::experiment::read_metrics;
use fedrc::partition::Partition;

fn fedrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedrc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("run.cfg");
    fs::write(
        &cfg,
        format!("units = 30\ninput_scaling = 2\nrounds = 3\nn_clients = 3\nfraction = 1.0\nscheme = iid\nseed = 4\n{extra}"),
    )
    .unwrap();
    cfg
}

#[test]
fn generate_partition_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");

    let out = fedrc(&["generate", "--out", path(&data), "--per-class", "3", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 18);

    let tsv = dir.path().join("parts.tsv");
    let out = fedrc(&["partition", "--data", path(&data), "--scheme", "dirichlet", "--alpha", "0.5", "--clients", "4", "--out", path(&tsv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let parts = Partition::read_tsv(&tsv).unwrap();
    assert_eq!(parts.len(), 4);
    let mut held: Vec<usize> = parts.into_iter().flatten().collect();
    held.sort_unstable();
    assert_eq!(held, (0..18).collect::<Vec<_>>());

    let cfg = write_config(dir.path(), &format!("data_dir = {}\n", path(&data)));
    let metrics = dir.path().join("metrics.csv");
    let model = dir.path().join("model.frcm");
    let out = fedrc(&["train", "--config", path(&cfg), "--metrics", path(&metrics), "--model", path(&model)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics(&metrics).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let out = fedrc(&["evaluate", "--model", path(&model), "--data", path(&data), "--config", path(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("records 18"), "{stdout}");

    // Without the training config the default 500-unit reservoir does not match the model.
    let out = fedrc(&["evaluate", "--model", path(&model), "--data", path(&data)]);
    assert_eq!(code(&out), 2);

    let image = dir.path().join("rec.pgm");
    let out = fedrc(&["spectrogram", "--data", path(&data), "--record", "7", "--out", path(&image), "--resized"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(&image).unwrap();
    assert!(bytes.starts_with(b"P5\n256 256\n255\n"));
    assert_eq!(bytes.len(), b"P5\n256 256\n255\n".len() + 256 * 256);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");

    let cfg = write_config(dir.path(), "bogus_key = 1\n");
    assert_eq!(code(&fedrc(&["train", "--config", path(&cfg), "--metrics", path(&metrics)])), 2);

    let cfg = write_config(dir.path(), "beta = 0\n");
    assert_eq!(code(&fedrc(&["train", "--config", path(&cfg), "--metrics", path(&metrics)])), 2);

    let missing = dir.path().join("absent.cfg");
    assert_eq!(code(&fedrc(&["train", "--config", path(&missing), "--metrics", path(&metrics)])), 2);

    assert_eq!(code(&fedrc(&["partition", "--scheme", "random"])), 2);
    assert!(!metrics.exists());
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.frcm");
    fs::write(&junk, b"not a model").unwrap();
    fs::write(dir.path().join("manifest.tsv"), "garbage\n").unwrap();
    let out = fedrc(&["evaluate", "--model", path(&junk), "--data", path(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = fedrc(&["partition", "--data", path(dir.path()), "--scheme", "iid", "--clients", "2", "--out", path(&dir.path().join("p.tsv"))]);
    assert_eq!(code(&out), 3);
}
