mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use romforge::config::RunConfig;

struct Workspace {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        Self::with_config(&serde_json::to_string(&common::tiny_config()).unwrap())
    }

    fn with_config(text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("config.json");
        std::fs::write(&config, text).unwrap();
        Workspace { dir, config }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_romforge"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(self.out())
            .args(["--threads", "1"])
            .args(args)
            .env_remove("ROMFORGE_OUT")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

/// History rows without the wall-clock column.
fn history_without_timing(p: &Path) -> Vec<String> {
    read(p)
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            format!("{},{},{},{},{}", f[0], f[1], f[2], f[3], f[5])
        })
        .collect()
}

#[test]
fn dumped_defaults_are_the_built_in_config() {
    let o = Command::new(env!("CARGO_BIN_EXE_romforge"))
        .args(["config", "--dump-defaults"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg = RunConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, RunConfig::default());
}

#[test]
fn invalid_domain_is_a_config_error_naming_the_field() {
    let ws = Workspace::with_config(r#"{"sampling": {"domain": {"px": [100.0, -100.0], "py": [0.0, 1.0]}}}"#);
    let o = ws.run(&["generate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampling.domain.px"));
}

#[test]
fn residual_training_requires_a_parent() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["train", "--mode", "rloss"])), 2);
}

#[test]
fn missing_bundle_is_an_io_error() {
    let ws = Workspace::new();
    let o = ws.run(&["rom", "--bundle", "/nonexistent/bundle", "--load", "1", "2"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn mesh_listing_counts() {
    let ws = Workspace::new();
    ws.ok(&["mesh"]);
    let text = read(ws.out().join("mesh/mesh.txt"));
    assert!(text.starts_with("# nodes 27\n"));
    assert!(text.contains("# triangles 32\n"));
}

#[test]
fn full_pipeline() {
    let ws = Workspace::new();
    let out = ws.out();

    ws.ok(&["generate"]);
    for name in ["train", "validation", "test", "extrapolation"] {
        assert!(out.join(format!("data/{name}.romf")).exists());
    }
    assert_eq!(read(out.join("data/test_params.csv")).lines().count(), 7);
    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("data/manifest.json"))).unwrap();
    assert_eq!(manifest["dataset_hash"], common::tiny_config().dataset_hash());
    let train_bytes = std::fs::read(out.join("data/train.romf")).unwrap();

    let again = ws.run(&["generate"]);
    assert_eq!(code(&again), 4);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ws.ok(&["generate", "--force"]);
    assert_eq!(std::fs::read(out.join("data/train.romf")).unwrap(), train_bytes);

    ws.ok(&["svd"]);
    assert_eq!(read(out.join("pod/singular_values.csv")).lines().count(), 25);

    let stdout = ws.ok(&["train", "--mode", "sloss"]);
    let bundle = out.join("bundles/s_loss_n2_nb4_h8-8_b4_m24");
    assert!(stdout.contains(&bundle.display().to_string()), "{stdout}");
    let history = history_without_timing(&bundle.join("history.csv"));
    assert_eq!(history.len(), 7);
    let weights = read(bundle.join("weights.json"));
    assert_eq!(code(&ws.run(&["train", "--mode", "sloss"])), 4);
    ws.ok(&["train", "--mode", "sloss", "--force"]);
    assert_eq!(history_without_timing(&bundle.join("history.csv")), history);
    assert_eq!(read(bundle.join("weights.json")), weights);

    let from = bundle.display().to_string();
    let stdout = ws.ok(&["train", "--mode", "rloss", "--from", &from, "--epochs", "1"]);
    assert!(stdout.contains("s_loss -> r_loss"), "{stdout}");

    ws.ok(&["rom", "--bundle", &from, "--load", "0", "0"]);
    let u = read(out.join("rom/u.csv"));
    assert!(u.starts_with("node,x,y,ux,uy\n"));
    assert_eq!(u.lines().count(), 28);
    for line in u.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!((f[3], f[4]), (0.0, 0.0));
    }
    assert!(read(out.join("rom/trace.csv")).starts_with("step,iter,reduced_residual_norm,wall_ms"));

    let params = read(out.join("data/test_params.csv"));
    let first: Vec<&str> = params.lines().nth(1).unwrap().split(',').collect();
    let stdout = ws.ok(&["rom", "--bundle", &from, "--load", first[1], first[2]]);
    assert!(stdout.contains("e_u ") && stdout.contains("(test sample 0)"), "{stdout}");

    // The fine-tuned bundle was trained for fewer epochs than configured.
    let stale = ws.run(&["eval"]);
    assert_eq!(code(&stale), 4);
    assert!(String::from_utf8_lossy(&stale.stderr).contains("r_loss_n2_nb4"));
    ws.ok(&["eval", "--appendix", "a,b,c", "--force"]);
    assert_eq!(read(out.join("eval/report.csv")).lines().count(), 17);
    for x in ["a", "b", "c"] {
        assert!(out.join(format!("eval/appendix_{x}.csv")).exists());
    }
    let report = read(out.join("eval/report.csv"));
    ws.ok(&["eval", "--no-train"]);
    assert_eq!(read(out.join("eval/report.csv")), report);

    ws.ok(&["bench"]);
    assert_eq!(read(out.join("bench/solve_times.csv")).lines().count(), 6);
    assert_eq!(read(out.join("bench/training_times.csv")).lines().count(), 4);
}

#[test]
fn changed_sampling_invalidates_the_dataset() {
    let ws = Workspace::new();
    ws.ok(&["generate"]);
    let mut cfg = common::tiny_config();
    cfg.sampling.mu_res.px = 1.0;
    std::fs::write(&ws.config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let o = ws.run(&["svd"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash mismatch"));
}
