//! Subcommand implementations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dynae::datagen::{gen_sprite_walk, gen_three_well, GroundTruthDataset, SpriteFactor};
use dynae::eval::{
    affine_recovery, distribution_shape, export_fields, free_energy_histogram, GridSpec, MIN_SHAPE_FRAMES,
};
use dynae::ndmath::Mat;
use dynae::trainer::{betavae_train, metrics_jsonl, run_training, BetaVae, ModelBundle};
use dynae::trajectory::Trajectory;

use crate::config::{ExperimentConfig, ModelKind};
use crate::{Recipe, ENV_OUT_DIR, ENV_THREADS};

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dynae::Error> for CliError {
    fn from(e: dynae::Error) -> Self {
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::usage(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Thread count from the flag, then `DYNAE_THREADS`, then 1.
pub fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(ENV_THREADS) {
            Ok(v) => v
                .parse()
                .map_err(|_| CliError::usage(format!("{ENV_THREADS} must be a positive integer, got {v:?}")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(CliError::usage("thread count must be at least 1"));
    }
    Ok(n)
}

/// Output directory from the flag, then `DYNAE_OUT_DIR`, then `fallback`.
fn resolve_out(flag: Option<PathBuf>, fallback: Option<PathBuf>) -> CliResult<PathBuf> {
    flag.or_else(|| std::env::var_os(ENV_OUT_DIR).map(PathBuf::from))
        .or(fallback)
        .ok_or_else(|| CliError::usage(format!("no output directory: pass --out or set {ENV_OUT_DIR}")))
}

fn read_dataset(dir: &Path) -> CliResult<GroundTruthDataset> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    GroundTruthDataset::read(dir).map_err(|e| CliError::usage(format!("cannot read dataset {}: {e}", dir.display())))
}

pub struct GenerateArgs {
    pub recipe: Recipe,
    pub frames: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dt_sim: f64,
    pub stride: usize,
    pub step_sigma: f64,
    pub image_size: usize,
}

pub fn generate(args: &GenerateArgs) -> CliResult {
    let out = resolve_out(args.out.clone(), None)?;
    let ds = match args.recipe {
        Recipe::ThreeWell => gen_three_well(args.frames, args.dt_sim, args.stride, args.seed),
        Recipe::Sprite2 => gen_sprite_walk(
            &[SpriteFactor::XPos, SpriteFactor::YPos],
            args.frames,
            args.step_sigma,
            args.image_size,
            args.seed,
        ),
        Recipe::Sprite3 => gen_sprite_walk(
            &[SpriteFactor::Scale, SpriteFactor::XPos, SpriteFactor::YPos],
            args.frames,
            args.step_sigma,
            args.image_size,
            args.seed,
        ),
    }?;
    ds.write(&out)?;
    log::info!(
        "wrote {} frames ({} observed dims, {} factors) to {}",
        ds.observations.num_frames(),
        ds.observations.dims(),
        ds.factors.dims(),
        out.display()
    );
    Ok(())
}

/// Written next to the network checkpoints so later commands know what
/// kind of model they hold.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelInfo {
    model: ModelKind,
    latent_dim: usize,
    input_dim: usize,
}

const MODEL_INFO: &str = "model.json";
const CHECKPOINT_DIR: &str = "checkpoint";

pub fn train(config: &Path, model: Option<ModelKind>, out: Option<PathBuf>) -> CliResult {
    let mut cfg = ExperimentConfig::load(config).map_err(CliError::usage)?;
    if let Some(m) = model {
        cfg.model = m;
    }
    let out = resolve_out(out, Some(cfg.output_dir.clone()))?;
    let ds = read_dataset(&cfg.dataset)?;
    let frames = ds.observations.frames();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let info = ModelInfo {
        model: cfg.model,
        latent_dim: cfg.train.latent_dim,
        input_dim: frames.cols(),
    };
    let aborted = match cfg.model {
        ModelKind::Dynae => {
            let run = run_training(frames, &cfg.train)?;
            run.bundle.save(&ckpt)?;
            fs::write(out.join("metrics.jsonl"), metrics_jsonl(&run.metrics)?)?;
            if let Some(p) = &run.partition {
                fs::write(out.join("partition.json"), p.to_json()?)?;
            }
            run.aborted
        }
        ModelKind::Betavae => {
            let run = betavae_train(frames, &cfg.train)?;
            run.model.save(&ckpt)?;
            let mut text = String::new();
            for m in &run.metrics {
                text.push_str(&serde_json::to_string(m)?);
                text.push('\n');
            }
            fs::write(out.join("metrics.jsonl"), text)?;
            run.aborted
        }
    };
    fs::write(ckpt.join(MODEL_INFO), serde_json::to_string_pretty(&info)?)?;
    if let Some(reason) = aborted {
        return Err(CliError::numerical(format!(
            "training aborted ({reason}); last good checkpoint kept in {}",
            ckpt.display()
        )));
    }
    log::info!("trained {} model written to {}", cfg.model.name(), out.display());
    Ok(())
}

enum Loaded {
    Dynae(Box<ModelBundle>),
    Betavae(Box<BetaVae>),
}

impl Loaded {
    fn encode(&self, x: &Mat) -> dynae::Result<Mat> {
        match self {
            Loaded::Dynae(b) => b.encode(x),
            Loaded::Betavae(v) => v.encode_mean(x),
        }
    }
}

fn load_model(dir: &Path) -> CliResult<Loaded> {
    let info_path = dir.join(MODEL_INFO);
    let kind = if info_path.exists() {
        let info: ModelInfo = serde_json::from_str(&fs::read_to_string(&info_path)?)?;
        info.model
    } else if dir.join("force.json").exists() {
        ModelKind::Dynae
    } else {
        ModelKind::Betavae
    };
    let lr = dynae::trainer::TrainConfig::default().learning_rate;
    let loaded = match kind {
        ModelKind::Dynae => ModelBundle::load(dir, lr).map(|b| Loaded::Dynae(Box::new(b))),
        ModelKind::Betavae => BetaVae::load(dir, lr).map(|v| Loaded::Betavae(Box::new(v))),
    };
    loaded.map_err(|e| CliError::usage(format!("cannot load checkpoint {}: {e}", dir.display())))
}

/// Accepts either a checkpoint directory or a training output directory.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

pub fn evaluate(checkpoint: &Path, dataset: &Path, out: Option<PathBuf>, grid: usize, bins: usize) -> CliResult {
    let out = resolve_out(out, None)?;
    let model = load_model(&checkpoint_dir(checkpoint))?;
    let ds = read_dataset(dataset)?;
    let z = model.encode(ds.observations.frames())?;
    fs::create_dir_all(&out)?;
    if z.cols() == ds.factors.dims() {
        let rec = affine_recovery(&z, ds.factors.frames())?;
        log::info!(
            "affine R² {:.4}, Procrustes error {:.4}",
            rec.affine_r2,
            rec.procrustes_error
        );
        fs::write(out.join("recovery.json"), serde_json::to_string_pretty(&rec)?)?;
    } else {
        log::warn!(
            "latent dimension {} differs from factor dimension {}; skipping recovery",
            z.cols(),
            ds.factors.dims()
        );
    }
    if z.rows() >= MIN_SHAPE_FRAMES {
        fs::write(
            out.join("shape.json"),
            serde_json::to_string_pretty(&distribution_shape(&z)?)?,
        )?;
    }
    if z.cols() == 2 {
        if let Loaded::Dynae(b) = &model {
            export_fields(&b.prior, &GridSpec::covering(&z, grid)?)?.write_csv(&out.join("fields.csv"))?;
        }
        if z.rows() >= bins {
            free_energy_histogram(&z, bins)?.write_csv(&out.join("free_energy.csv"))?;
        }
    }
    log::info!("reports written to {}", out.display());
    Ok(())
}

pub fn export_latent(checkpoint: &Path, dataset: &Path, out: &Path, csv: bool) -> CliResult {
    let out = match std::env::var_os(ENV_OUT_DIR) {
        Some(dir) if out.is_relative() => PathBuf::from(dir).join(out),
        _ => out.to_path_buf(),
    };
    let model = load_model(&checkpoint_dir(checkpoint))?;
    let ds = read_dataset(dataset)?;
    let z = model.encode(ds.observations.frames())?;
    let traj = Trajectory::new(z, ds.observations.lag())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    traj.write(&out)?;
    if csv {
        traj.write_csv(&out.with_extension("csv"))?;
    }
    log::info!("latent trajectory written to {}", out.display());
    Ok(())
}
