use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use dynae::datagen::{GeneratorDescriptor, GroundTruthDataset};
use dynae::langevin::PriorModel;
use dynae::ndmath::{Activation, FeedForwardNet, Mat, Rng};
use dynae::trainer::{ModelBundle, TrainConfig};
use dynae::trajectory::Trajectory;

fn dynae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynae"))
        .args(args)
        .env_remove("DYNAE_OUT_DIR")
        .env_remove("DYNAE_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, recipe: &str, frames: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("{recipe}-{seed}"));
    ok(&dynae(&[
        "generate",
        "--recipe",
        recipe,
        "--frames",
        &frames.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]));
    out
}

/// Small, fast training settings.
fn write_config(dir: &Path, dataset: &Path, output: &Path, model: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{model}.json"));
    let text = format!(
        r#"{{
  "version": 1,
  "recipe": "three-well",
  "dataset": {dataset:?},
  "output_dir": {output:?},
  "model": "{model}",
  "train": {{
    "epochs": 6,
    "batch_size": 128,
    "encoder_hidden": [16],
    "decoder_hidden": [16],
    "prior_hidden": [8, 8],
    "n_projections": 10{extra}
  }}
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn metrics(dir: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn generate_writes_two_trajectories_and_a_descriptor() {
    let tmp = TempDir::new().unwrap();
    let out = generate(tmp.path(), "three-well", 500, 7);
    for f in ["observations.traj", "factors.traj", "dataset.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let ds = GroundTruthDataset::read(&out).unwrap();
    assert_eq!(ds.observations.num_frames(), 500);
    assert_eq!(ds.descriptor.seed, 7);
}

#[test]
fn generate_is_byte_identical_for_the_same_seed() {
    let tmp = TempDir::new().unwrap();
    for recipe in ["three-well", "sprite2", "sprite3"] {
        let a = generate(&tmp.path().join("a"), recipe, 300, 3);
        let b = generate(&tmp.path().join("b"), recipe, 300, 3);
        for f in ["observations.traj", "factors.traj", "dataset.json"] {
            assert_eq!(
                fs::read(a.join(f)).unwrap(),
                fs::read(b.join(f)).unwrap(),
                "{recipe}/{f}"
            );
        }
    }
}

#[test]
fn generate_honours_the_output_environment_variable() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_dynae"))
        .args(["generate", "--recipe", "sprite2", "--frames", "50"])
        .env("DYNAE_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("observations.traj").is_file());
    let none = dynae(&["generate", "--recipe", "sprite2", "--frames", "50"]);
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn unknown_recipe_exits_2_and_lists_the_valid_ones() {
    let out = dynae(&["generate", "--recipe", "four-well", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for r in ["three-well", "sprite2", "sprite3"] {
        assert!(err.contains(r), "{err}");
    }
}

#[test]
fn zero_threads_is_a_usage_error() {
    let out = dynae(&[
        "--threads",
        "0",
        "generate",
        "--recipe",
        "sprite2",
        "--out",
        "/tmp/unused",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_dynae_writes_artifacts_and_rec_loss_decreases() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), "three-well", 3000, 1);
    let run = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &data, &run, "dynae", "");
    ok(&dynae(&["train", "--config", s(&cfg), "--model", "dynae"]));
    for f in [
        "config.json",
        "metrics.jsonl",
        "partition.json",
        "checkpoint/model.json",
        "checkpoint/force.json",
    ] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let m = metrics(&run);
    assert_eq!(m.len(), 6);
    let rec = |i: usize| m[i]["rec"].as_f64().unwrap();
    assert!(rec(5) < rec(0), "rec {} -> {}", rec(0), rec(5));
    assert!(m[5]["K"].as_u64().unwrap() >= 1);
}

#[test]
fn train_is_reproducible_apart_from_wall_clock() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), "three-well", 1500, 2);
    let runs: Vec<PathBuf> = ["r1", "r2"].iter().map(|r| tmp.path().join(r)).collect();
    let cfg = write_config(tmp.path(), &data, &runs[0], "dynae", "");
    for r in &runs {
        ok(&dynae(&["train", "--config", s(&cfg), "--out", s(r)]));
    }
    let strip = |dir: &Path| {
        metrics(dir)
            .into_iter()
            .map(|mut v| {
                v.as_object_mut().unwrap().remove("wall_ms");
                v
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&runs[0]), strip(&runs[1]));
    for f in ["encoder.bin", "decoder.bin", "force.bin", "diffusion.bin"] {
        let p = Path::new("checkpoint").join(f);
        assert_eq!(
            fs::read(runs[0].join(&p)).unwrap(),
            fs::read(runs[1].join(&p)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_betavae_writes_baseline_artifacts() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), "sprite2", 600, 1);
    let run = tmp.path().join("vae");
    let cfg = write_config(tmp.path(), &data, &run, "dynae", "");
    ok(&dynae(&["train", "--config", s(&cfg), "--model", "betavae"]));
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("checkpoint/model.json")).unwrap()).unwrap();
    assert_eq!(info["model"], "betavae");
    let m = metrics(&run);
    assert_eq!(m.len(), 6);
    assert!(m[0].get("kl").is_some());
    ok(&dynae(&[
        "evaluate",
        "--checkpoint",
        s(&run),
        "--dataset",
        s(&data),
        "--out",
        s(&tmp.path().join("eval")),
    ]));
    assert!(tmp.path().join("eval/recovery.json").is_file());
    assert!(!tmp.path().join("eval/fields.csv").exists(), "β-VAE has no force field");
}

#[test]
fn missing_dataset_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        &tmp.path().join("nope"),
        &tmp.path().join("run"),
        "dynae",
        "",
    );
    let out = dynae(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn misspelled_config_key_exits_2_before_training() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), "three-well", 200, 1);
    let run = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &data, &run, "dynae", r#", "betta": 2.0"#);
    let out = dynae(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("betta"));
    assert!(!run.exists(), "nothing may be written for an invalid config");
}

fn write_dataset(dir: &Path, observations: Mat, factors: Mat) -> PathBuf {
    let descriptor = GeneratorDescriptor {
        name: "handmade".into(),
        params: serde_json::Map::new(),
        seed: 0,
    };
    let ds = GroundTruthDataset::new(
        Trajectory::new(observations, 1.0).unwrap(),
        Trajectory::new(factors, 1.0).unwrap(),
        descriptor,
    )
    .unwrap();
    let out = dir.join("handmade");
    ds.write(&out).unwrap();
    out
}

#[test]
fn numerical_failure_exits_3_and_keeps_a_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let mut rng = Rng::new(1);
    let huge = Mat::from_vec(400, 3, rng.normal_vec(1200).into_iter().map(|v| v * 1e200).collect()).unwrap();
    let factors = Mat::zeros(400, 2);
    let data = write_dataset(tmp.path(), huge, factors);
    let run = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &data, &run, "dynae", "");
    let out = dynae(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint/encoder.json").is_file());
}

fn identity_net(d: usize) -> FeedForwardNet {
    let mut p = vec![0.0; d * d + d];
    for i in 0..d {
        p[i * d + i] = 1.0;
    }
    FeedForwardNet::from_params(&[d, d], Activation::Relu, p, 0).unwrap()
}

#[test]
fn evaluate_identity_encoder_on_its_own_factors_gives_r2_one() {
    let tmp = TempDir::new().unwrap();
    let mut rng = Rng::new(5);
    let truth = Mat::from_vec(500, 2, rng.normal_vec(1000)).unwrap();
    let data = write_dataset(tmp.path(), truth.clone(), truth);
    let prior = PriorModel::new(2, &[4], 0).unwrap();
    let ckpt = tmp.path().join("ckpt");
    ModelBundle::from_parts(identity_net(2), identity_net(2), prior, 1e-3)
        .unwrap()
        .save(&ckpt)
        .unwrap();
    let eval = tmp.path().join("eval");
    ok(&dynae(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&data),
        "--out",
        s(&eval),
        "--grid",
        "5",
        "--bins",
        "8",
    ]));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("recovery.json")).unwrap()).unwrap();
    assert!((rec["affine_r2"].as_f64().unwrap() - 1.0).abs() < 1e-12, "{rec}");
    assert!(rec["procrustes_error"].as_f64().unwrap() < 1e-12);

    let shape: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("shape.json")).unwrap()).unwrap();
    assert_eq!(shape.as_array().unwrap().len(), 2);
    let fields = fs::read_to_string(eval.join("fields.csv")).unwrap();
    let mut lines = fields.lines();
    assert_eq!(lines.next().unwrap(), "z1,z2,f1,f2,M11,M22");
    assert_eq!(
        lines.filter(|l| l.split(',').all(|v| v.parse::<f64>().is_ok())).count(),
        25
    );
    let fe = fs::read_to_string(eval.join("free_energy.csv")).unwrap();
    let rows: Vec<Vec<f64>> = fe
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 64);
    assert_eq!(rows.iter().map(|r| r[3]).fold(f64::INFINITY, f64::min), 0.0);
}

#[test]
fn evaluate_untrained_model_recovers_almost_nothing() {
    let tmp = TempDir::new().unwrap();
    let data = generate(tmp.path(), "sprite2", 2000, 4);
    let ckpt = tmp.path().join("random");
    ModelBundle::new(256, &TrainConfig::default())
        .unwrap()
        .save(&ckpt)
        .unwrap();
    let eval = tmp.path().join("eval");
    ok(&dynae(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&data),
        "--out",
        s(&eval),
    ]));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval.join("recovery.json")).unwrap()).unwrap();
    // random ReLU projections of sprite images keep a little positional
    // signal: over 8 seeds the untrained R² lies in 0.03–0.22
    let r2 = rec["affine_r2"].as_f64().unwrap();
    assert!(r2 < 0.3, "random encoder R² {r2}");
}

#[test]
fn export_latent_writes_a_readable_trajectory() {
    let tmp = TempDir::new().unwrap();
    let mut rng = Rng::new(6);
    let truth = Mat::from_vec(50, 2, rng.normal_vec(100)).unwrap();
    let data = write_dataset(tmp.path(), truth.clone(), truth.clone());
    let ckpt = tmp.path().join("ckpt");
    let prior = PriorModel::new(2, &[4], 0).unwrap();
    ModelBundle::from_parts(identity_net(2), identity_net(2), prior, 1e-3)
        .unwrap()
        .save(&ckpt)
        .unwrap();
    let out = tmp.path().join("latent/z.traj");
    ok(&dynae(&[
        "export-latent",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--csv",
    ]));
    let z = Trajectory::read(&out).unwrap();
    assert_eq!(z.frames(), &truth);
    assert_eq!(
        fs::read_to_string(out.with_extension("csv")).unwrap().lines().count(),
        51
    );
}
