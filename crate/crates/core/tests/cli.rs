use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irs_sim::rate::achievable_rate;
use irs_sim::scenario::{sidecar_path, ScenarioMeta};
use irs_sim::{ArrayGeometry, Codebook, QNetwork, RateConfig, Scenario, ScenarioConfig};
use serde_json::Value;

const TINY: &str = r#"
seed = 5
episodes = 200
eval_every = 50

[scenario]
grid_rows = 2
grid_cols = 4
num_active = 2
noise_variance = 1e-3
geometry = { dims = [1, 4, 2] }
channel = { num_subcarriers = 4, num_taps = 2, symbol_period = 1e-8, path_loss = 1.0, num_paths = 2 }

[codebook]
size = 8

[network]
layers = [16, 32, 8]

[agent]
batch_size = 16
replay_capacity = 256
learning_rate = 0.02
"#;

fn irs_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irs-sim"))
        .args(args)
        .env("IRS_SIM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_tiny(dir: &Path, name: &str) -> PathBuf {
    let cfg = write_config(dir, TINY);
    let out = dir.join(name);
    let o = irs_sim(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn tiny_run_writes_curve_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_tiny(dir.path(), "run");
    let csv = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 201);
    assert_eq!(
        lines[0],
        "episode,epsilon,train_rate,oracle_rate,reward,loss,eval_mean_rate,eval_oracle_mean_rate"
    );
    // evaluation columns are filled every 50 episodes
    let eval_rows = lines[1..].iter().filter(|l| !l.ends_with(",,")).count();
    assert_eq!(eval_rows, 4);
    assert!(lines[1].contains(",,,"), "first row has no loss: {}", lines[1]);

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["version"], "v0.1.0");
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["overhead"]["training_beams"], 200);
    assert_eq!(manifest["overhead"]["ratio"], 0.125);
    for f in ["checkpoint.bin", "scenario.bin", "scenario.json", "codebook.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn same_seed_same_bytes_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_tiny(dir.path(), "a");
    let b = run_tiny(dir.path(), "b");
    let curve = |p: &Path| fs::read(p.join("learning_curve.csv")).unwrap();
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(
        fs::read(a.join("checkpoint.bin")).unwrap(),
        fs::read(b.join("checkpoint.bin")).unwrap()
    );

    let cfg = dir.path().join("run.toml");
    let c = dir.path().join("c");
    let o = irs_sim(&["run", "--config", cfg.to_str().unwrap(), "--seed", "6", "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(curve(&a), curve(&c));
    assert_eq!(read_json(&c.join("manifest.json"))["config"]["seed"], 6);
}

#[test]
fn manifest_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_tiny(dir.path(), "a");
    let manifest = read_json(&a.join("manifest.json"));
    let mut config: irs_sim::config::RunConfig =
        serde_json::from_value(manifest["config"].clone()).unwrap();
    let replay = dir.path().join("replay");
    config.output_dir = replay.clone();
    let cfg_path = dir.path().join("replay.toml");
    fs::write(&cfg_path, config.to_toml()).unwrap();
    let o = irs_sim(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read(a.join("learning_curve.csv")).unwrap(),
        fs::read(replay.join("learning_curve.csv")).unwrap()
    );
}

#[test]
fn shape_mismatch_is_config_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("layers = [16, 32, 8]", "layers = [17, 32, 8]"));
    let out = dir.path().join("never");
    let o = irs_sim(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("network input"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(irs_sim(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(4));

    let bad = write_config(dir.path(), "episodes = \"many\"");
    assert_eq!(irs_sim(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(irs_sim(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(irs_sim(&["--help"]).status.code(), Some(0));

    let wild = write_config(
        dir.path(),
        &TINY.replace("learning_rate = 0.02", "learning_rate = 1e12"),
    );
    let out = dir.path().join("wild");
    let o = irs_sim(&["run", "--config", wild.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

fn eval_records(out: &Path, k: usize) -> Vec<Value> {
    read_json(&out.join(format!("eval_k{k}.json")))["records"]
        .as_array()
        .unwrap()
        .clone()
}

#[test]
fn eval_refinement_contract() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_tiny(dir.path(), "run");
    let ckpt = run.join("checkpoint.bin");
    let scen = run.join("scenario.bin");
    for k in ["1", "3", "8"] {
        let o = irs_sim(&[
            "eval", "--checkpoint", ckpt.to_str().unwrap(), "--scenario", scen.to_str().unwrap(),
            "--k-b", k, "--split", "all",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (one, three, all) = (eval_records(&run, 1), eval_records(&run, 3), eval_records(&run, 8));
    assert_eq!(one.len(), 8);
    for ((a, b), c) in one.iter().zip(&three).zip(&all) {
        assert!(b["rate"].as_f64().unwrap() >= a["rate"].as_f64().unwrap());
        assert!((c["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(b["predicted"].as_array().unwrap().len(), 3);
        for key in ["refined", "oracle_rate", "oracle_index"] {
            assert!(a.get(key).is_some(), "{key}");
        }
    }

    // untrained checkpoint with an explicit config
    let untrained = dir.path().join("untrained.bin");
    QNetwork::init(&[16, 32, 8], 99).unwrap().save(&untrained).unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("untrained");
    let o = irs_sim(&[
        "eval", "--checkpoint", untrained.to_str().unwrap(), "--scenario", scen.to_str().unwrap(),
        "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for r in eval_records(&out, 1) {
        assert!(r["ratio"].as_f64().unwrap() <= 1.0 + 1e-12);
    }

    // checkpoint whose input does not match the scenario
    let wrong = dir.path().join("wrong.bin");
    QNetwork::init(&[12, 8], 1).unwrap().save(&wrong).unwrap();
    let o = irs_sim(&[
        "eval", "--checkpoint", wrong.to_str().unwrap(), "--scenario", scen.to_str().unwrap(),
        "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn single_position_scenario(dir: &Path) -> (PathBuf, PathBuf, ScenarioConfig) {
    let scfg = ScenarioConfig {
        grid_rows: 1,
        grid_cols: 1,
        geometry: ArrayGeometry::half_wavelength([1, 2, 2]).unwrap(),
        num_active: 2,
        ..ScenarioConfig::default()
    };
    let path = dir.join("one.bin");
    Scenario::generate(&scfg, 12).unwrap().save(&path).unwrap();
    let toml = format!(
        "[scenario]\nnum_active = 2\ngeometry = {{ dims = [1, 2, 2] }}\n[codebook]\nsize = 4\n[network]\nlayers = [{}, 4]\n",
        scfg.state_dim()
    );
    let cfg = dir.join("oracle.toml");
    fs::write(&cfg, toml).unwrap();
    (path, cfg, scfg)
}

#[test]
fn oracle_single_position() {
    let dir = tempfile::tempdir().unwrap();
    let (scen, cfg, scfg) = single_position_scenario(dir.path());
    let o = irs_sim(&["oracle", "--scenario", scen.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("oracle.json"));
    let rows = report["positions"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(fs::read_to_string(dir.path().join("oracle.csv")).unwrap().lines().count(), 2);

    // manual 4-beam sweep
    let scenario = Scenario::load(&scen).unwrap();
    let book = Codebook::build(&scfg.geometry, 4, 3).unwrap();
    let rate = RateConfig {
        snr: 1e-3,
        ..RateConfig::default()
    };
    let rates: Vec<f64> = book
        .vectors()
        .iter()
        .map(|psi| achievable_rate(&scenario.position(0).channels, psi, &rate).unwrap())
        .collect();
    let best = (0..4).fold(0, |b, i| if rates[i] > rates[b] { i } else { b });
    assert_eq!(rows[0]["best_index"], best);
    assert_eq!(rows[0]["oracle_rate"].as_f64().unwrap(), rates[best]);
    assert_eq!(report["rate_threshold"].as_f64().unwrap(), rates[best]);
}

#[test]
fn oracle_threshold_is_train_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_tiny(dir.path(), "run");
    let cfg = dir.path().join("run.toml");
    let o = irs_sim(&["oracle", "--scenario", run.join("scenario.bin").to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&run.join("oracle.json"));
    let min_train = report["positions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["split"] == "train")
        .map(|r| r["oracle_rate"].as_f64().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report["rate_threshold"].as_f64().unwrap(), min_train);
    let manifest = read_json(&run.join("manifest.json"));
    assert_eq!(manifest["rate_threshold"].as_f64().unwrap(), min_train);
}

#[test]
fn oracle_empty_training_split_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (scen, cfg, _) = single_position_scenario(dir.path());
    let side = sidecar_path(&scen);
    let mut meta: ScenarioMeta = serde_json::from_str(&fs::read_to_string(&side).unwrap()).unwrap();
    meta.test.append(&mut meta.train);
    fs::write(&side, serde_json::to_string(&meta).unwrap()).unwrap();
    let o = irs_sim(&["oracle", "--scenario", scen.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn truncated_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (scen, cfg, _) = single_position_scenario(dir.path());
    let bytes = fs::read(&scen).unwrap();
    fs::write(&scen, &bytes[..bytes.len() - 8]).unwrap();
    let o = irs_sim(&["oracle", "--scenario", scen.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bytes"));
}

#[test]
fn shipped_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.toml", "tiny.toml"] {
        irs_sim::config::RunConfig::load(&root.join(name)).unwrap();
    }
    let desk = irs_sim::config::RunConfig::load(&root.join("desk.toml")).unwrap();
    assert_eq!(desk.scenario.state_dim(), 128);
    assert_eq!(desk.codebook.size, 32);
}
