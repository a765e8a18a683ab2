//! Trains the dynamics-constrained autoencoder and the β-VAE baseline on the
//! two-factor sprite walk and compares the shapes of their latent marginals.
//!
//! `cargo run --release -p dynae-core --example sprites -- [dynae-beta] [vae-beta] [epochs] [step] [width]`
//!
//! A negative beta skips that model.

use dynae::datagen::{gen_sprite_walk, SpriteFactor};
use dynae::eval::{affine_recovery, distribution_shape};
use dynae::trainer::{betavae_train, run_training, TrainConfig};

fn main() -> dynae::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let epochs = arg(2, 80.0) as usize;
    let ds = gen_sprite_walk(&[SpriteFactor::XPos, SpriteFactor::YPos], 50_000, arg(3, 0.1), 16, 11)?;
    let x = ds.observations.frames();
    let truth = ds.factors.frames();

    let w = arg(4, 256.0) as usize;
    let cfg = TrainConfig {
        beta: arg(0, 30.0),
        epochs,
        encoder_hidden: vec![w, w],
        decoder_hidden: vec![w, w],
        ..TrainConfig::default()
    };
    if cfg.beta >= 0.0 {
        let run = run_training(x, &cfg)?;
        let z = run.bundle.encode(x)?;
        let shape: Vec<f64> = distribution_shape(&z)?.iter().map(|s| s.kurtosis).collect();
        println!(
            "dynae kurtosis {shape:?} R² {:.4}",
            affine_recovery(&z, truth)?.affine_r2
        );
    }

    if arg(1, 4.0) < 0.0 {
        return Ok(());
    }
    let vcfg = TrainConfig {
        beta: arg(1, 4.0),
        ..cfg.clone()
    };
    let vae = betavae_train(x, &vcfg)?;
    let mu = vae.model.encode_mean(x)?;
    let shape: Vec<f64> = distribution_shape(&mu)?.iter().map(|s| s.kurtosis).collect();
    println!(
        "beta-vae kurtosis {shape:?} R² {:.4}",
        affine_recovery(&mu, truth)?.affine_r2
    );
    Ok(())
}
