use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cloudformer"));
    c.env_remove("CF_DATA_DIR").env("COLUMNS", "100");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth_small(dir: &Path) {
    ok(dir, &["synth", "--runs-per-app", "3", "--t-min", "6", "--t-max", "10", "--out", "ds"]);
}

fn manifest_argv(path: PathBuf) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["argv"].as_array().unwrap().iter().map(|a| a.as_str().unwrap().to_string()).collect()
}

const HELP_TARGETS: [&str; 10] = ["", "synth", "validate", "split", "train", "baselines", "ablate", "eval", "report", "rerun"];

#[test]
fn help_output_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for cmd in HELP_TARGETS {
        let mut args: Vec<&str> = cmd.split_whitespace().collect();
        args.push("--help");
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let file = golden.join(format!("{}.txt", if cmd.is_empty() { "main" } else { cmd }));
        if update {
            fs::write(&file, &text).unwrap();
        } else {
            let expect = fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing golden {}", file.display()));
            assert_eq!(text, expect, "help for `{cmd}` changed; rerun with UPDATE_GOLDEN=1");
        }
    }
}

#[test]
fn usage_errors_exit_two_and_runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["eval", "--data", "x", "--out", "y", "--seeds", "5..1"]).status.code(), Some(2));
    let out = run(dir.path(), &["validate", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    fs::write(dir.path().join("bad.toml"), "no_such_key = 3\n").unwrap();
    assert_eq!(run(dir.path(), &["--config", "bad.toml", "validate", "--data", "x"]).status.code(), Some(2));
}

#[test]
fn synthesized_dataset_validates_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    assert!(ok(dir.path(), &["validate", "--data", "ds"]).contains("0 violations"));
    assert_eq!(run(dir.path(), &["synth", "--runs-per-app", "3", "--out", "ds"]).status.code(), Some(1));

    // A corrupted label is reported and fails validation.
    let meta = dir.path().join("ds/runs/redis/run_0000/meta.json");
    let text = fs::read_to_string(&meta).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["label_P"] = serde_json::json!(0.123456);
    fs::write(&meta, v.to_string()).unwrap();
    let out = run(dir.path(), &["validate", "--data", "ds"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("redis"));
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let out = run(dir.path(), &["train", "--data", "ds", "--epochs", "0", "--preset", "tiny", "--out", "ck.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
    assert!(dir.path().join("ck.json").exists());
    assert!(dir.path().join("ck.json.manifest.json").exists());
}

#[test]
fn flags_beat_config_file_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    fs::write(dir.path().join("cf.toml"), "seed = 4\n\n[split]\nseed = 7\n").unwrap();

    // Environment supplies --data; the command table overrides the top-level seed.
    bin().current_dir(dir.path()).env("CF_DATA_DIR", "ds").args(["--config", "cf.toml", "split", "--out", "a.json"]).status().unwrap();
    let argv = manifest_argv(dir.path().join("a.json.manifest.json"));
    assert!(argv.windows(2).any(|w| w == ["--seed", "7"]), "{argv:?}");
    assert!(argv.windows(2).any(|w| w == ["--data", "ds"]), "{argv:?}");
    assert!(!argv.iter().any(|a| a == "--config"));

    // A flag on the command line wins over the file.
    ok(dir.path(), &["--config", "cf.toml", "split", "--data", "ds", "--seed", "1", "--out", "b.json"]);
    let argv = manifest_argv(dir.path().join("b.json.manifest.json"));
    assert!(argv.windows(2).any(|w| w == ["--seed", "1"]));
    assert!(!argv.windows(2).any(|w| w == ["--seed", "7"]));

    // A flag also wins over the environment.
    fs::rename(dir.path().join("ds"), dir.path().join("ds2")).unwrap();
    let out = bin().current_dir(dir.path()).env("CF_DATA_DIR", "nope").args(["split", "--data", "ds2", "--out", "c.json"]).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn rerun_reproduces_split_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    ok(dir.path(), &["train", "--data", "ds", "--epochs", "2", "--preset", "tiny", "--out", "ck.json", "--log", "log.json"]);
    ok(dir.path(), &["rerun", "--manifest", "ck.json.manifest.json", "--out", "ck2.json"]);
    assert_eq!(fs::read(dir.path().join("ck.json")).unwrap(), fs::read(dir.path().join("ck2.json")).unwrap());
    assert!(!dir.path().join("ck2.json.manifest.json").exists() || manifest_argv(dir.path().join("ck2.json.manifest.json")).iter().all(|a| a != "--log"));
}
