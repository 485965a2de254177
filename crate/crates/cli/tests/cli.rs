use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hrtf_field::data::{save_archive, Direction};
use hrtf_field::synth::{synthetic_archive, SyntheticDataset};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hrtf-field"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, name: &str, grid: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("{name}.hrdf"));
    let o = run(
        &["synth", "--out", out.to_str().unwrap(), "--name", name, "--grid", grid, "--seed", seed],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

const TINY: [&str; 8] = ["--epochs", "2", "--hidden", "16", "--latent-dim", "4", "--batch-size", "2"];

#[test]
fn train_is_bitwise_reproducible_and_writes_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", "ring:30:-30:60:30", "1");
    let b = synth(tmp.path(), "b", "ring:45:-45:45:45", "2");
    let mut models = Vec::new();
    for out in ["r1", "r2"] {
        let mut args = vec!["train", "--data", a.to_str().unwrap(), b.to_str().unwrap(), "--precision", "f64", "--out", out];
        args.extend(TINY);
        let o = run(&args, tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
        models.push(fs::read(tmp.path().join(out).join("model.hfnf")).unwrap());
    }
    assert_eq!(models[0], models[1]);
    let manifest = fs::read_to_string(tmp.path().join("r1/manifest.txt")).unwrap();
    for key in ["command = train", "precision = f64", "seed = 0", "data_sha256 = ", "config_sha256 = "] {
        assert!(manifest.contains(key), "missing {key:?} in\n{manifest}");
    }
    let log = fs::read_to_string(tmp.path().join("r1/train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,lr,mean_loss,wall_seconds"));
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["train"], tmp.path()).status.code(), Some(1));
    let a = synth(tmp.path(), "a", "ring:30:-30:60:30", "1");
    let o = run(&["baseline", "--data", a.to_str().unwrap(), "--method", "cubic"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cubic"));
    let o = run(&["train", "--data", a.to_str().unwrap(), "--epochs", "0"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_archive_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["baseline", "--data", "absent.hrdf", "--method", "vbap"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bilinear_on_a_scattered_grid_names_the_offending_directions() {
    let tmp = TempDir::new().unwrap();
    let mut dirs: Vec<Direction> = (0..8).map(|a| Direction::new(45.0 * a as f64, 0.0)).collect();
    for i in 0..12 {
        dirs.push(Direction::new(29.0 * i as f64 + 5.0, -40.0 + 9.5 * i as f64 + 1.0));
    }
    let ds = SyntheticDataset::generate("scattered", dirs, 1, 3);
    let path = tmp.path().join("s.hrdf");
    save_archive(&synthetic_archive(&ds, 44100.0, 0).unwrap(), &path).unwrap();
    let o = run(&["baseline", "--data", path.to_str().unwrap(), "--method", "bilinear"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("ring"), "{err}");
    assert!(err.contains('#'), "{err}");
}

#[test]
fn vbap_with_everything_observed_is_exact() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", "ring:30:-30:60:30", "1");
    let o = run(&["baseline", "--data", a.to_str().unwrap(), "--method", "vbap", "--split", "all", "--out", "v"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(tmp.path().join("v/manifest.txt")).unwrap();
    let lsd: f64 = manifest
        .lines()
        .find_map(|l| l.strip_prefix("overall_lsd_db = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(lsd.abs() < 1e-9);
    assert!(tmp.path().join("v/predictions.csv").exists());
}

#[test]
fn experiments_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", "ring:30:-30:60:30", "1");
    let b = synth(tmp.path(), "b", "ring:20:-40:80:20", "2");
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());

    let mut args = vec!["train", "--data", a, "--out", "m"];
    args.extend(TINY);
    assert!(run(&args, tmp.path()).status.success());
    let model = tmp.path().join("m/model.hfnf");
    let model = model.to_str().unwrap();

    let mut args = vec!["experiment", "interp-t", "--target", b, "--others", a, "--out", "it"];
    args.extend(TINY);
    let o = run(&args, tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let curves = fs::read_to_string(tmp.path().join("it/interpolation.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("freq_hz,field,vbap,bilinear"));
    assert_eq!(curves.lines().count(), 93);
    assert!(tmp.path().join("it/reconstruction.csv").exists());

    let o = run(&["experiment", "cond-gen", "--model-file", model, "--target", b, "--seeds", "0,1", "--out", "cg"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("cg/conditional_generation.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 5 * 3);

    let o = run(&["experiment", "latent-morph", "--model-file", model, "--data", a, "--points", "37", "--out", "lm"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csvs: Vec<_> = fs::read_dir(tmp.path().join("lm"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), 6);
    let first = fs::read_to_string(tmp.path().join("lm/morph_t0.000.csv")).unwrap();
    assert_eq!(first.lines().count(), 38);
}
