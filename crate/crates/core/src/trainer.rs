//! Training loops: the dynamics-constrained autoencoder (encoder, decoder and
//! a Langevin prior optimized in alternation) and a β-VAE baseline.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{prior_loss_and_grad, sample_prior_displacements, PriorModel};
use crate::ndmath::{load_checkpoint, save_checkpoint, Activation, AdamState, FeedForwardNet, Mat, Rng};
use crate::partition::{choose_d_min, resample_dataset, BinPartition};
use crate::swdist::{binned_sw_regularizer, sample_directions, DirectionSet};

/// Bin-count window targeted when `d_min` is chosen automatically.
pub const AUTO_BINS: (usize, usize, usize) = (20, 100, 50);

/// Hyper-parameters shared by both training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub latent_dim: usize,
    /// Weight of the dynamics regularizer (or of the KL term for the β-VAE).
    pub beta: f64,
    /// Well-tempered resampling exponent.
    pub gamma: f64,
    /// Projection directions per batch.
    pub n_projections: usize,
    /// Clustering radius; chosen from the first clustered encoding when absent.
    pub d_min: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub prior_hidden: Vec<usize>,
    /// Epochs trained with the regularizer switched off.
    pub warmup_epochs: usize,
    /// Epochs over which the regularizer weight ramps linearly up to `beta`.
    pub beta_ramp_epochs: usize,
    /// Train the diffusion network during the prior steps. When false the
    /// prior keeps `M ≡ 1`, the same identity diffusion the regularizer's
    /// samples use, so the fitted force is the conditional mean displacement.
    pub learn_diffusion: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            beta: 1.0,
            gamma: 2.0,
            n_projections: 50,
            d_min: None,
            batch_size: 256,
            epochs: 80,
            learning_rate: 1e-3,
            seed: 0,
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            prior_hidden: vec![32, 32, 32],
            warmup_epochs: 5,
            beta_ramp_epochs: 5,
            learn_diffusion: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("n_projections", self.n_projections),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.gamma >= 1.0) {
            return Err(Error::invalid(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(d) = self.d_min {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::invalid(format!("d_min must be positive, got {d}")));
            }
        }
        for (name, widths) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("decoder_hidden", &self.decoder_hidden),
            ("prior_hidden", &self.prior_hidden),
        ] {
            if widths.contains(&0) {
                return Err(Error::invalid(format!("{name} has a zero-width layer")));
            }
        }
        Ok(())
    }

    /// Regularizer weight in effect during `epoch` (0-based).
    pub fn beta_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 0.0;
        }
        if self.beta_ramp_epochs == 0 {
            return self.beta;
        }
        let frac = (epoch - self.warmup_epochs + 1) as f64 / self.beta_ramp_epochs as f64;
        self.beta * frac.min(1.0)
    }
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

/// Encoder, decoder, prior and their two optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
    pub prior: PriorModel,
    /// Optimizer over encoder then decoder parameters.
    pub rep_adam: AdamState,
    /// Optimizer over force then diffusion parameters.
    pub prior_adam: AdamState,
    /// Whether prior steps update the diffusion network.
    pub learn_diffusion: bool,
}

const ENCODER_FILE: &str = "encoder";
const DECODER_FILE: &str = "decoder";
const FORCE_FILE: &str = "force";
const DIFFUSION_FILE: &str = "diffusion";

impl ModelBundle {
    pub fn new(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut seeds = Rng::new(cfg.seed).fork(1);
        let mut next = || seeds.below(u32::MAX as usize) as u64;
        let d = cfg.latent_dim;
        let encoder = FeedForwardNet::new(&layer_dims(input_dim, &cfg.encoder_hidden, d), Activation::Relu, next())?;
        let decoder = FeedForwardNet::new(&layer_dims(d, &cfg.decoder_hidden, input_dim), Activation::Relu, next())?;
        let mut prior = PriorModel::new(d, &cfg.prior_hidden, next())?;
        if !cfg.learn_diffusion {
            prior.set_constant_diffusion(1.0)?;
        }
        let mut bundle = Self::from_parts(encoder, decoder, prior, cfg.learning_rate)?;
        bundle.learn_diffusion = cfg.learn_diffusion;
        Ok(bundle)
    }

    pub fn from_parts(encoder: FeedForwardNet, decoder: FeedForwardNet, prior: PriorModel, lr: f64) -> Result<Self> {
        let d = encoder.output_dim();
        if decoder.input_dim() != d || prior.dim() != d {
            return Err(Error::invalid(format!(
                "latent dims disagree: encoder {d}, decoder {}, prior {}",
                decoder.input_dim(),
                prior.dim()
            )));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::dims("decoder output", encoder.input_dim(), decoder.output_dim()));
        }
        let rep_adam = AdamState::new(encoder.num_params() + decoder.num_params(), lr);
        let prior_adam = AdamState::new(prior.num_params(), lr);
        Ok(Self {
            encoder,
            decoder,
            prior,
            rep_adam,
            prior_adam,
            learn_diffusion: true,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode(&self, x: &Mat) -> Result<Mat> {
        self.encoder.predict(x)
    }

    /// Writes one checkpoint per network into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.encoder, dir, ENCODER_FILE)?;
        save_checkpoint(&self.decoder, dir, DECODER_FILE)?;
        save_checkpoint(&self.prior.force_net, dir, FORCE_FILE)?;
        save_checkpoint(&self.prior.diffusion_net, dir, DIFFUSION_FILE)?;
        Ok(())
    }

    /// Loads networks written by [`ModelBundle::save`]; optimizer state
    /// starts fresh.
    pub fn load(dir: &Path, lr: f64) -> Result<Self> {
        let prior = PriorModel::from_nets(load_checkpoint(dir, FORCE_FILE)?, load_checkpoint(dir, DIFFUSION_FILE)?)?;
        Self::from_parts(
            load_checkpoint(dir, ENCODER_FILE)?,
            load_checkpoint(dir, DECODER_FILE)?,
            prior,
            lr,
        )
    }
}

/// Components of the representation objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepLoss {
    pub total: f64,
    pub rec: f64,
    pub reg: f64,
}

/// Gradients of the representation objective.
#[derive(Debug, Clone, PartialEq)]
pub struct RepGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

fn stack(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols() != b.cols() {
        return Err(Error::dims("stacked columns", a.cols(), b.cols()));
    }
    let mut data = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Mat::from_vec(a.rows() + b.rows(), a.cols(), data)
}

fn check_bins(bundle: &ModelBundle, bins: &[(Mat, Mat)]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::invalid("at least one bin is required"));
    }
    for (x0, x1) in bins {
        if x0.rows() == 0 || x0.rows() != x1.rows() {
            return Err(Error::invalid(
                "each bin needs equally many X_t and X_t+1 rows, at least one",
            ));
        }
        for x in [x0, x1] {
            if x.cols() != bundle.input_dim() {
                return Err(Error::dims("observation dimension", bundle.input_dim(), x.cols()));
            }
        }
    }
    Ok(())
}

/// Mean over bins of the within-bin mean of
/// `‖ψ(φ(X_t)) − X_t‖² + ‖ψ(φ(X_t+1)) − X_t+1‖²`.
pub fn rec_loss(bundle: &ModelBundle, bins: &[(Mat, Mat)]) -> Result<f64> {
    check_bins(bundle, bins)?;
    let mut total = 0.0;
    for (x0, x1) in bins {
        let x = stack(x0, x1)?;
        let r = bundle.decoder.predict(&bundle.encoder.predict(&x)?)?;
        total += r.sub(&x)?.as_slice().iter().map(|v| v * v).sum::<f64>() / x0.rows() as f64;
    }
    Ok(total / bins.len() as f64)
}

/// Reconstruction plus `beta` times the binned sliced distance between the
/// encoded displacements `φ(X_t+1) − φ(X_t)` and `prior_samples` (one row per
/// pair, treated as constants).
pub fn rep_loss(
    bundle: &ModelBundle,
    bins: &[(Mat, Mat)],
    prior_samples: &[Mat],
    dirs: &DirectionSet,
    beta: f64,
) -> Result<RepLoss> {
    rep_loss_inner(bundle, bins, prior_samples, dirs, beta, false).map(|(l, _)| l)
}

/// [`rep_loss`] with gradients over encoder and decoder parameters.
pub fn rep_loss_and_grad(
    bundle: &ModelBundle,
    bins: &[(Mat, Mat)],
    prior_samples: &[Mat],
    dirs: &DirectionSet,
    beta: f64,
) -> Result<(RepLoss, RepGrads)> {
    let (l, g) = rep_loss_inner(bundle, bins, prior_samples, dirs, beta, true)?;
    Ok((l, g.expect("gradients requested")))
}

fn rep_loss_inner(
    bundle: &ModelBundle,
    bins: &[(Mat, Mat)],
    prior_samples: &[Mat],
    dirs: &DirectionSet,
    beta: f64,
    want_grad: bool,
) -> Result<(RepLoss, Option<RepGrads>)> {
    check_bins(bundle, bins)?;
    if prior_samples.len() != bins.len() {
        return Err(Error::dims("prior sample bins", bins.len(), prior_samples.len()));
    }
    let d = bundle.latent_dim();
    let k = bins.len() as f64;
    let mut grads = RepGrads {
        encoder: vec![0.0; bundle.encoder.num_params()],
        decoder: vec![0.0; bundle.decoder.num_params()],
    };
    let mut rec = 0.0;
    let mut caches = Vec::with_capacity(bins.len());
    let mut displacements = Vec::with_capacity(bins.len());
    for ((x0, x1), p) in bins.iter().zip(prior_samples) {
        let n = x0.rows();
        if p.rows() != n || p.cols() != d {
            return Err(Error::dims("prior samples per bin", n * d, p.rows() * p.cols()));
        }
        let x = stack(x0, x1)?;
        let enc = bundle.encoder.forward_batch(&x)?;
        let dec = bundle.decoder.forward_batch(enc.output())?;
        let resid = dec.output().sub(&x)?;
        rec += resid.as_slice().iter().map(|v| v * v).sum::<f64>() / (n as f64 * k);
        let z = enc.output();
        let mut dz = Mat::zeros(n, d);
        for r in 0..n {
            for (c, out) in dz.row_mut(r).iter_mut().enumerate() {
                *out = z.get(n + r, c) - z.get(r, c);
            }
        }
        displacements.push(dz);
        caches.push((enc, dec, resid));
    }
    let sw = binned_sw_regularizer(&displacements, prior_samples, dirs)?;
    let loss = RepLoss {
        total: rec + beta * sw.value,
        rec,
        reg: sw.value,
    };
    if !want_grad {
        return Ok((loss, None));
    }
    for ((enc, dec, resid), g_dz) in caches.iter().zip(&sw.grads) {
        let n = resid.rows() / 2;
        let mut up = resid.clone();
        up.scale(2.0 / (n as f64 * k));
        let mut g_z = bundle.decoder.backward_batch(dec, &up, &mut grads.decoder)?;
        if beta != 0.0 {
            for r in 0..n {
                for c in 0..d {
                    let g = beta * g_dz.get(r, c);
                    g_z.set(n + r, c, g_z.get(n + r, c) + g);
                    g_z.set(r, c, g_z.get(r, c) - g);
                }
            }
        }
        bundle.encoder.backward_batch(enc, &g_z, &mut grads.encoder)?;
    }
    Ok((loss, Some(grads)))
}

/// One Adam step on the encoder and decoder.
pub fn rep_step(
    bundle: &mut ModelBundle,
    bins: &[(Mat, Mat)],
    prior_samples: &[Mat],
    dirs: &DirectionSet,
    beta: f64,
) -> Result<RepLoss> {
    let (loss, g) = rep_loss_and_grad(bundle, bins, prior_samples, dirs, beta)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!("representation loss {}", loss.total)));
    }
    let ModelBundle {
        encoder,
        decoder,
        rep_adam,
        ..
    } = bundle;
    rep_adam.step_groups(&mut [(encoder.params_mut(), &g.encoder), (decoder.params_mut(), &g.decoder)])?;
    Ok(loss)
}

/// Encoded `(z_t, Δz)` for each bin of observation pairs.
pub fn encode_transitions(bundle: &ModelBundle, bins: &[(Mat, Mat)]) -> Result<Vec<(Mat, Mat)>> {
    bins.iter()
        .map(|(x0, x1)| {
            let z0 = bundle.encode(x0)?;
            let dz = bundle.encode(x1)?.sub(&z0)?;
            Ok((z0, dz))
        })
        .collect()
}

/// One Adam step on the prior, with the encoder held fixed. Returns the
/// prior loss before the step. The diffusion network is left unchanged
/// unless `bundle.learn_diffusion` is set.
pub fn prior_step(bundle: &mut ModelBundle, bins: &[(Mat, Mat)]) -> Result<f64> {
    check_bins(bundle, bins)?;
    let groups = encode_transitions(bundle, bins)?;
    let (loss, mut g) = prior_loss_and_grad(&bundle.prior, &groups)?;
    if !bundle.learn_diffusion {
        g.diffusion.iter_mut().for_each(|v| *v = 0.0);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("prior loss {loss}")));
    }
    bundle.prior.apply_adam(&g, &mut bundle.prior_adam)?;
    Ok(loss)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean reconstruction loss over the epoch's batches.
    pub rec: f64,
    /// Mean regularizer value (unweighted).
    pub reg: f64,
    /// Mean prior loss.
    pub prior: f64,
    /// Number of bins used.
    #[serde(rename = "K")]
    pub k: usize,
    pub wall_ms: u64,
}

/// One JSON object per line.
pub fn metrics_jsonl(metrics: &[EpochMetrics]) -> Result<String> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

/// Result of a training run. On a numerical failure `aborted` holds the
/// reason and `bundle` is the state at the start of the failing epoch.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub bundle: ModelBundle,
    pub metrics: Vec<EpochMetrics>,
    pub partition: Option<BinPartition>,
    pub aborted: Option<String>,
}

/// Consecutive-frame pairs `(t, t+1)` as indices of their first frame.
fn pair_count(frames: &Mat) -> Result<usize> {
    if frames.rows() < 2 {
        return Err(Error::invalid("training needs at least two frames"));
    }
    Ok(frames.rows() - 1)
}

fn pair_batch(frames: &Mat, idx: &[usize]) -> (Mat, Mat) {
    let next: Vec<usize> = idx.iter().map(|i| i + 1).collect();
    (frames.select_rows(idx), frames.select_rows(&next))
}

/// Trains the dynamics-constrained autoencoder on a time-ordered sequence of
/// observations (rows of `frames`, unit lag between rows).
///
/// Each epoch after the second encodes all data, re-clusters the encoded
/// `z_t` and resamples the pairs well-tempered over the bins; earlier epochs
/// treat the whole dataset as one bin. Each minibatch comes from one bin
/// picked uniformly at random and drives one encoder/decoder step followed by
/// one prior step.
pub fn run_training(frames: &Mat, cfg: &TrainConfig) -> Result<TrainRun> {
    let bundle = ModelBundle::new(frames.cols(), cfg)?;
    run_training_from(bundle, frames, cfg)
}

/// [`run_training`] starting from an existing model.
pub fn run_training_from(mut bundle: ModelBundle, frames: &Mat, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let n_pairs = pair_count(frames)?;
    if frames.cols() != bundle.input_dim() || cfg.latent_dim != bundle.latent_dim() {
        return Err(Error::invalid("model shape does not match data or config"));
    }
    let mut rng = Rng::new(cfg.seed).fork(2);
    let mut d_min = cfg.d_min;
    let mut partition = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let batches_per_epoch = n_pairs.div_ceil(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let last_good = bundle.clone();
        let bins: Vec<Vec<usize>> = if epoch > 1 {
            let z = bundle.encode(&frames.select_rows(&(0..n_pairs).collect::<Vec<_>>()))?;
            let dm = match d_min {
                Some(v) => v,
                None => {
                    let v = choose_d_min(&z, AUTO_BINS.0, AUTO_BINS.1, AUTO_BINS.2)?;
                    log::info!("chose d_min = {v:.4}");
                    d_min = Some(v);
                    v
                }
            };
            let part = BinPartition::build(&z, dm, cfg.gamma)?;
            let resampled = resample_dataset(&part.assignment, &part.resampled_counts, &mut rng)?;
            partition = Some(part);
            resampled.per_bin.into_iter().filter(|b| !b.is_empty()).collect()
        } else {
            vec![(0..n_pairs).collect()]
        };
        let beta = cfg.beta_at(epoch);
        let (mut rec, mut reg, mut prior) = (0.0, 0.0, 0.0);
        let outcome = (|| -> Result<()> {
            for _ in 0..batches_per_epoch {
                let bin = &bins[rng.below(bins.len())];
                let b = cfg.batch_size.min(bin.len());
                let mut pick = bin.clone();
                rng.shuffle(&mut pick);
                pick.truncate(b);
                let batch = [pair_batch(frames, &pick)];
                let z0 = bundle.encode(&batch[0].0)?;
                let samples = [sample_prior_displacements(&bundle.prior, &z0, &mut rng)?];
                let dirs = sample_directions(cfg.latent_dim, cfg.n_projections, &mut rng)?;
                let l = rep_step(&mut bundle, &batch, &samples, &dirs, beta)?;
                let p = prior_step(&mut bundle, &batch)?;
                rec += l.rec;
                reg += l.reg;
                prior += p;
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            if !e.is_numerical() {
                return Err(e);
            }
            log::error!("epoch {epoch}: numerical failure ({e}); keeping the state from the epoch start");
            return Ok(TrainRun {
                bundle: last_good,
                metrics,
                partition,
                aborted: Some(format!("epoch {epoch}: {e}")),
            });
        }
        let nb = batches_per_epoch as f64;
        let m = EpochMetrics {
            epoch,
            rec: rec / nb,
            reg: reg / nb,
            prior: prior / nb,
            k: bins.len(),
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: rec {:.5} reg {:.5} prior {:.5} K {} beta {beta:.3}",
            m.rec,
            m.reg,
            m.prior,
            m.k
        );
        metrics.push(m);
    }
    Ok(TrainRun {
        bundle,
        metrics,
        partition,
        aborted: None,
    })
}

/// KL divergence of `N(μ, e^{logvar})` from `N(0, 1)`, per coordinate summed.
pub fn gaussian_kl(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// β-VAE: an encoder with mean and log-variance heads (one network whose
/// output is `[mean, logvar]`) and a decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVae {
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
    pub adam: AdamState,
}

/// Components of the β-VAE objective (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeLoss {
    pub total: f64,
    pub rec: f64,
    pub kl: f64,
}

impl BetaVae {
    pub fn new(input_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut seeds = Rng::new(cfg.seed).fork(3);
        let mut next = || seeds.below(u32::MAX as usize) as u64;
        let d = cfg.latent_dim;
        let encoder = FeedForwardNet::new(
            &layer_dims(input_dim, &cfg.encoder_hidden, 2 * d),
            Activation::Relu,
            next(),
        )?;
        let decoder = FeedForwardNet::new(&layer_dims(d, &cfg.decoder_hidden, input_dim), Activation::Relu, next())?;
        let adam = AdamState::new(encoder.num_params() + decoder.num_params(), cfg.learning_rate);
        Ok(Self { encoder, decoder, adam })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Posterior means.
    pub fn encode_mean(&self, x: &Mat) -> Result<Mat> {
        let out = self.encoder.predict(x)?;
        let d = self.latent_dim();
        let mut mu = Mat::zeros(x.rows(), d);
        for r in 0..x.rows() {
            mu.row_mut(r).copy_from_slice(&out.row(r)[..d]);
        }
        Ok(mu)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.encoder, dir, ENCODER_FILE)?;
        save_checkpoint(&self.decoder, dir, DECODER_FILE)?;
        Ok(())
    }

    pub fn load(dir: &Path, lr: f64) -> Result<Self> {
        let encoder = load_checkpoint(dir, ENCODER_FILE)?;
        let decoder = load_checkpoint(dir, DECODER_FILE)?;
        if encoder.output_dim() != 2 * decoder.input_dim() || decoder.output_dim() != encoder.input_dim() {
            return Err(Error::invalid("checkpoint is not a β-VAE encoder/decoder pair"));
        }
        let adam = AdamState::new(encoder.num_params() + decoder.num_params(), lr);
        Ok(Self { encoder, decoder, adam })
    }
}

/// Batch-mean `‖ψ(μ + e^{logvar/2}·ε) − x‖² + β·KL` with the reparameterized
/// noise `noise` (one row per sample) and its gradients (encoder, decoder).
pub fn betavae_loss_and_grad(vae: &BetaVae, x: &Mat, noise: &Mat, beta: f64) -> Result<(VaeLoss, RepGrads)> {
    let d = vae.latent_dim();
    let n = x.rows();
    if n == 0 || noise.rows() != n || noise.cols() != d {
        return Err(Error::invalid(
            "β-VAE batch needs one noise row of latent width per sample",
        ));
    }
    let enc = vae.encoder.forward_batch(x)?;
    let out = enc.output();
    let mut z = Mat::zeros(n, d);
    let mut kl = 0.0;
    for r in 0..n {
        let (mu, lv) = out.row(r).split_at(d);
        kl += gaussian_kl(mu, lv);
        for c in 0..d {
            z.set(r, c, mu[c] + (0.5 * lv[c]).exp() * noise.get(r, c));
        }
    }
    let dec = vae.decoder.forward_batch(&z)?;
    let mut resid = dec.output().sub(x)?;
    let rec = resid.as_slice().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let kl = kl / n as f64;
    let mut grads = RepGrads {
        encoder: vec![0.0; vae.encoder.num_params()],
        decoder: vec![0.0; vae.decoder.num_params()],
    };
    resid.scale(2.0 / n as f64);
    let g_z = vae.decoder.backward_batch(&dec, &resid, &mut grads.decoder)?;
    let mut g_out = Mat::zeros(n, 2 * d);
    for r in 0..n {
        for c in 0..d {
            let (mu, lv) = (out.get(r, c), out.get(r, d + c));
            let s = (0.5 * lv).exp();
            let gz = g_z.get(r, c);
            g_out.set(r, c, gz + beta * mu / n as f64);
            g_out.set(
                r,
                d + c,
                gz * noise.get(r, c) * 0.5 * s + beta * 0.5 * (lv.exp() - 1.0) / n as f64,
            );
        }
    }
    vae.encoder.backward_batch(&enc, &g_out, &mut grads.encoder)?;
    Ok((
        VaeLoss {
            total: rec + beta * kl,
            rec,
            kl,
        },
        grads,
    ))
}

/// Per-epoch β-VAE record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeEpochMetrics {
    pub epoch: usize,
    pub rec: f64,
    pub kl: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct VaeRun {
    pub model: BetaVae,
    pub metrics: Vec<VaeEpochMetrics>,
    pub aborted: Option<String>,
}

/// Trains the β-VAE baseline on individual frames (rows of `frames`) with
/// shuffled minibatches; `cfg.beta` weights the KL term.
pub fn betavae_train(frames: &Mat, cfg: &TrainConfig) -> Result<VaeRun> {
    let mut vae = BetaVae::new(frames.cols(), cfg)?;
    if frames.rows() == 0 {
        return Err(Error::invalid("β-VAE training needs at least one frame"));
    }
    let mut rng = Rng::new(cfg.seed).fork(4);
    let d = cfg.latent_dim;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..frames.rows()).collect();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let last_good = vae.clone();
        rng.shuffle(&mut order);
        let (mut rec, mut kl, mut nb) = (0.0, 0.0, 0usize);
        let outcome = (|| -> Result<()> {
            for chunk in order.chunks(cfg.batch_size) {
                let x = frames.select_rows(chunk);
                let noise = Mat::from_vec(chunk.len(), d, rng.normal_vec(chunk.len() * d))?;
                let (l, g) = betavae_loss_and_grad(&vae, &x, &noise, cfg.beta)?;
                if !l.total.is_finite() {
                    return Err(Error::NonFinite(format!("β-VAE loss {}", l.total)));
                }
                let BetaVae { encoder, decoder, adam } = &mut vae;
                adam.step_groups(&mut [(encoder.params_mut(), &g.encoder), (decoder.params_mut(), &g.decoder)])?;
                rec += l.rec;
                kl += l.kl;
                nb += 1;
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            if !e.is_numerical() {
                return Err(e);
            }
            log::error!("β-VAE epoch {epoch}: numerical failure ({e})");
            return Ok(VaeRun {
                model: last_good,
                metrics,
                aborted: Some(format!("epoch {epoch}: {e}")),
            });
        }
        let m = VaeEpochMetrics {
            epoch,
            rec: rec / nb as f64,
            kl: kl / nb as f64,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        log::info!("β-VAE epoch {epoch}: rec {:.5} kl {:.5}", m.rec, m.kl);
        metrics.push(m);
    }
    Ok(VaeRun {
        model: vae,
        metrics,
        aborted: None,
    })
}
