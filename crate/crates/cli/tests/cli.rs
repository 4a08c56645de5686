use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
generate.n_per_class = 40
pipeline.train.epochs = 8
pipeline.fine_tune.max_epochs = 4
pipeline.ensemble.n_members = 3
pipeline.ladder.replicates = 2
pipeline.ladder.sigmas = [1.0, 4.0]
pipeline.ladder.dp.epochs = 3
test.n_per_class = 20
";

fn protoscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .current_dir(dir)
        .env_remove("PROTOSCOPE_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn score_all_is_repeatable_and_replays_from_its_manifest() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(&protoscope(dir.path(), &["score", "all", "--config", cfg, "--seed", "4", "--out", "a"]));
    ok(&protoscope(dir.path(), &["score", "all", "--config", cfg, "--seed", "4", "--out", "b", "--jobs", "2"]));
    let a = std::fs::read(dir.path().join("a/scores.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/scores.csv")).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/score_all.manifest.json")).unwrap()).unwrap();
    let mut replay: Vec<String> = manifest["command"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    replay.extend(["--config".into(), "a/score_all.manifest.json".into(), "--out".into(), "c".into()]);
    let replay: Vec<&str> = replay.iter().map(String::as_str).collect();
    ok(&protoscope(dir.path(), &replay));
    assert_eq!(a, std::fs::read(dir.path().join("c/scores.csv")).unwrap());
    assert_eq!(manifest["inputs"][0]["role"], "dataset");
}

#[test]
fn extract_writes_default_thresholds_into_the_header() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(&protoscope(dir.path(), &["score", "all", "--config", cfg, "--out", "o"]));
    ok(&protoscope(dir.path(), &["extract", "memorized_exceptions", "--config", cfg, "--out", "o"]));
    let text = std::fs::read_to_string(dir.path().join("o/memorized_exceptions.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "# set=memorized_exceptions ens_top=25 bnd_bottom=50 priv_bottom=50");
    assert_eq!(text.lines().nth(1).unwrap(), "id,label,planted");
}

#[test]
fn correlate_needs_two_metrics() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(&protoscope(dir.path(), &["score", "conf", "--config", cfg, "--out", "o"]));
    let o = protoscope(dir.path(), &["correlate", "--table", "o/scores_conf.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("need ≥ 2 metrics"));
    assert!(!dir.path().join("o/correlate.manifest.json").exists());
}

#[test]
fn exit_codes_separate_config_from_input_problems() {
    let (dir, _) = setup();
    let bad_key = protoscope(dir.path(), &["train", "--set", "pipeline.nonsense=1", "--out", "o"]);
    assert_eq!(bad_key.status.code(), Some(1));
    let bad_value = protoscope(dir.path(), &["train", "--set", "generate.num_classes=1", "--out", "o"]);
    assert_eq!(bad_value.status.code(), Some(1));
    let usage = protoscope(dir.path(), &["score", "nonsense"]);
    assert_eq!(usage.status.code(), Some(1));

    std::fs::write(dir.path().join("broken.csv"), "id,label\n1,2\n").unwrap();
    let bad_input = protoscope(dir.path(), &["train", "--dataset", "broken.csv", "--out", "o"]);
    assert_eq!(bad_input.status.code(), Some(2));
    let missing = protoscope(dir.path(), &["extract", "canonical_prototypes", "--table", "nope.csv", "--out", "o"]);
    assert_eq!(missing.status.code(), Some(2));
    // Failed runs leave nothing behind.
    assert!(!dir.path().join("o").exists());
}

#[test]
fn generated_csv_feeds_later_commands() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    ok(&protoscope(dir.path(), &["generate", "--config", cfg, "--out", "g"]));
    ok(&protoscope(dir.path(), &["train", "--config", cfg, "--dataset", "g/dataset.csv", "--out", "t"]));
    assert!(dir.path().join("t/baseline.ckpt").exists());
    let synthetic = protoscope(dir.path(), &["train", "--config", cfg, "--out", "s"]);
    ok(&synthetic);
    assert_eq!(
        std::fs::read(dir.path().join("t/baseline.ckpt")).unwrap(),
        std::fs::read(dir.path().join("s/baseline.ckpt")).unwrap()
    );
    let curriculum = protoscope(dir.path(), &["curriculum", "window", "--config", cfg, "--dataset", "g/dataset.csv", "--out", "t"]);
    assert_eq!(curriculum.status.code(), Some(1), "non-synthetic data needs an explicit test set");
    let with_test = protoscope(
        dir.path(),
        &["curriculum", "window", "--config", cfg, "--dataset", "g/dataset.csv", "--set", "test_dataset=g/test.csv", "--out", "t"],
    );
    ok(&with_test);
    let curve = std::fs::read_to_string(dir.path().join("t/curriculum_window_full.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "axis,accuracy");
    assert_eq!(curve.lines().count(), 11);
}

#[test]
fn output_root_defaults_to_the_environment() {
    let (dir, cfg) = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .current_dir(dir.path())
        .env("PROTOSCOPE_OUT", "from_env")
        .args(["generate", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("from_env/dataset.csv").exists());
}
