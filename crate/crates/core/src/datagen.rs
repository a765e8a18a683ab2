//! Synthetic datasets with known generative factors: a warped 2D three-well
//! Langevin system and random-walk square sprites.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::{simulate, ConstantDiffusion, SimulationOptions};
use crate::ndmath::{Mat, Rng};
use crate::trajectory::Trajectory;

/// Well centers of the three-well potential.
pub const WELL_CENTERS: [[f64; 2]; 3] = [[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]];
/// Width of each Gaussian well.
pub const WELL_SIGMA: f64 = 0.35;
/// Coefficient of the quartic confinement term.
pub const CONFINEMENT: f64 = 0.1;

/// `F(x, y) = −log Σ_c exp(−‖z − μ_c‖² / 2σ²) + 0.1 (x⁴ + y⁴)`.
pub fn three_well_potential(z: &[f64; 2]) -> f64 {
    let (lse, _) = well_mixture(z);
    -lse + CONFINEMENT * (z[0].powi(4) + z[1].powi(4))
}

/// `log Σ exp(−‖z − μ_c‖² / 2σ²)` and the softmax weights of each well.
fn well_mixture(z: &[f64; 2]) -> (f64, [f64; 3]) {
    let s2 = WELL_SIGMA * WELL_SIGMA;
    let e: Vec<f64> = WELL_CENTERS
        .iter()
        .map(|mu| -((z[0] - mu[0]).powi(2) + (z[1] - mu[1]).powi(2)) / (2.0 * s2))
        .collect();
    let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - top).exp()).collect();
    let sum: f64 = ex.iter().sum();
    (top + sum.ln(), [ex[0] / sum, ex[1] / sum, ex[2] / sum])
}

/// Force of the well mixture alone, without the confinement term.
pub fn three_well_mixture_force(z: &[f64; 2]) -> [f64; 2] {
    let (_, w) = well_mixture(z);
    let s2 = WELL_SIGMA * WELL_SIGMA;
    let mut f = [0.0; 2];
    for (wc, mu) in w.iter().zip(&WELL_CENTERS) {
        f[0] -= wc * (z[0] - mu[0]) / s2;
        f[1] -= wc * (z[1] - mu[1]) / s2;
    }
    f
}

/// `f = −∇F` of [`three_well_potential`].
pub fn three_well_force(z: &[f64; 2]) -> [f64; 2] {
    let [fx, fy] = three_well_mixture_force(z);
    [
        fx - 4.0 * CONFINEMENT * z[0].powi(3),
        fy - 4.0 * CONFINEMENT * z[1].powi(3),
    ]
}

/// `(x, y) ↦ (x + 0.4x³, y + 0.5 sin 2x)`; strictly monotone in `x`.
pub fn warp(z: &[f64; 2]) -> [f64; 2] {
    [z[0] + 0.4 * z[0].powi(3), z[1] + 0.5 * (2.0 * z[0]).sin()]
}

/// Inverse of [`warp`]: the real root of the cubic in `x`, then `y`.
pub fn unwarp(w: &[f64; 2]) -> [f64; 2] {
    let x = solve_monotone_cubic(w[0]);
    [x, w[1] - 0.5 * (2.0 * x).sin()]
}

/// Real root of `0.4x³ + x = c` (Cardano, then Newton polish).
fn solve_monotone_cubic(c: f64) -> f64 {
    // x³ + p x + q = 0 with p = 2.5, q = −2.5c; discriminant is always positive
    let p = 2.5;
    let q = -2.5 * c;
    let disc = (q * q / 4.0 + p * p * p / 27.0).sqrt();
    let mut x = (-q / 2.0 + disc).cbrt() + (-q / 2.0 - disc).cbrt();
    for _ in 0..3 {
        let g = 0.4 * x * x * x + x - c;
        x -= g / (1.2 * x * x + 1.0);
    }
    x
}

/// Name, parameters and seed of the generator that produced a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDescriptor {
    pub name: String,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub seed: u64,
}

/// Observations paired with the hidden factors that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthDataset {
    pub observations: Trajectory,
    pub factors: Trajectory,
    pub descriptor: GeneratorDescriptor,
}

pub const OBSERVATIONS_FILE: &str = "observations.traj";
pub const FACTORS_FILE: &str = "factors.traj";
pub const DESCRIPTOR_FILE: &str = "dataset.json";

impl GroundTruthDataset {
    pub fn new(observations: Trajectory, factors: Trajectory, descriptor: GeneratorDescriptor) -> Result<Self> {
        if observations.num_frames() != factors.num_frames() {
            return Err(Error::dims(
                "factor frame count",
                observations.num_frames(),
                factors.num_frames(),
            ));
        }
        Ok(Self {
            observations,
            factors,
            descriptor,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.observations.write(&dir.join(OBSERVATIONS_FILE))?;
        self.factors.write(&dir.join(FACTORS_FILE))?;
        fs::write(
            dir.join(DESCRIPTOR_FILE),
            serde_json::to_string_pretty(&self.descriptor)?,
        )?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let observations = Trajectory::read(&dir.join(OBSERVATIONS_FILE))?;
        let factors = Trajectory::read(&dir.join(FACTORS_FILE))?;
        let descriptor = serde_json::from_str(&fs::read_to_string(dir.join(DESCRIPTOR_FILE))?)?;
        Self::new(observations, factors, descriptor)
    }
}

fn params(pairs: &[(&str, serde_json::Value)]) -> serde_json::Map<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Simulates the three-well system with unit diffusion from the first well,
/// and observes it through [`warp`].
pub fn gen_three_well(n_frames: usize, dt_sim: f64, stride: usize, seed: u64) -> Result<GroundTruthDataset> {
    let field = ConstantDiffusion {
        force: |z: &[f64], out: &mut [f64]| {
            let f = three_well_force(&[z[0], z[1]]);
            out.copy_from_slice(&f);
        },
        diffusion: vec![1.0, 1.0],
    };
    let opts = SimulationOptions {
        dt_sim,
        stride,
        n_frames,
        ..SimulationOptions::default()
    };
    let truth = simulate(&WELL_CENTERS[0], &field, &opts, &mut Rng::new(seed))?;
    let mut obs = Mat::zeros(n_frames, 2);
    for (i, z) in truth.frames().iter_rows().enumerate() {
        obs.row_mut(i).copy_from_slice(&warp(&[z[0], z[1]]));
    }
    let observations = Trajectory::new(obs, truth.lag())?;
    let descriptor = GeneratorDescriptor {
        name: "three-well".into(),
        params: params(&[
            ("n_frames", n_frames.into()),
            ("dt_sim", dt_sim.into()),
            ("stride", stride.into()),
        ]),
        seed,
    };
    GroundTruthDataset::new(observations, truth, descriptor)
}

/// A latent factor of the sprite renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteFactor {
    Scale,
    XPos,
    YPos,
}

/// Smallest and largest sprite side, as fractions of the image size.
pub const SPRITE_SIDE_RANGE: (f64, f64) = (0.15, 0.3);
/// Scale used when the scale factor is not walked.
pub const DEFAULT_SPRITE_SCALE: f64 = 0.5;

/// Folds `v` back into `[0, 1]` by mirror reflection.
pub fn reflect_unit(v: f64) -> f64 {
    let m = v.rem_euclid(2.0);
    if m > 1.0 {
        2.0 - m
    } else {
        m
    }
}

/// Renders a filled square on an `size × size` grid (row-major, `y` down the
/// rows). Edge pixels hold the fraction of their area the square covers.
pub fn render_sprite(scale: f64, x_pos: f64, y_pos: f64, size: usize) -> Vec<f64> {
    let n = size as f64;
    let (lo, hi) = SPRITE_SIDE_RANGE;
    let half = 0.5 * n * (lo + scale * (hi - lo));
    let margin = 0.5 * n * hi;
    let cx = margin + x_pos * (n - 2.0 * margin);
    let cy = margin + y_pos * (n - 2.0 * margin);
    let overlap = |i: usize, c: f64| {
        let a = i as f64;
        ((a + 1.0).min(c + half) - a.max(c - half)).max(0.0)
    };
    let cols: Vec<f64> = (0..size).map(|i| overlap(i, cx)).collect();
    let mut img = Vec::with_capacity(size * size);
    for r in 0..size {
        let wy = overlap(r, cy);
        img.extend(cols.iter().map(|wx| wx * wy));
    }
    img
}

/// Renders one image per frame of `factors`, whose columns follow `which`.
pub fn render_factors(which: &[SpriteFactor], factors: &Mat, size: usize) -> Mat {
    let mut out = Mat::zeros(factors.rows(), size * size);
    for (i, f) in factors.iter_rows().enumerate() {
        let get = |kind, default| which.iter().position(|w| *w == kind).map_or(default, |j| f[j]);
        let img = render_sprite(
            get(SpriteFactor::Scale, DEFAULT_SPRITE_SCALE),
            get(SpriteFactor::XPos, 0.5),
            get(SpriteFactor::YPos, 0.5),
            size,
        );
        out.row_mut(i).copy_from_slice(&img);
    }
    out
}

/// Walks the chosen factors by reflected Gaussian steps on `[0, 1]`,
/// starting from uniform draws, and renders each frame.
pub fn gen_sprite_walk(
    which: &[SpriteFactor],
    n_frames: usize,
    step_sigma: f64,
    image_size: usize,
    seed: u64,
) -> Result<GroundTruthDataset> {
    if image_size < 16 {
        return Err(Error::invalid(format!("image_size must be >= 16, got {image_size}")));
    }
    if !(step_sigma > 0.0) || !step_sigma.is_finite() {
        return Err(Error::invalid(format!("step_sigma must be positive, got {step_sigma}")));
    }
    if which.is_empty() || n_frames < 2 {
        return Err(Error::invalid("sprite walk needs at least one factor and two frames"));
    }
    for (i, w) in which.iter().enumerate() {
        if which[..i].contains(w) {
            return Err(Error::invalid(format!("factor {w:?} listed twice")));
        }
    }
    let k = which.len();
    let mut rng = Rng::new(seed);
    let mut factors = Mat::zeros(n_frames, k);
    let mut cur: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
    for t in 0..n_frames {
        if t > 0 {
            for v in cur.iter_mut() {
                *v = reflect_unit(*v + step_sigma * rng.normal());
            }
        }
        factors.row_mut(t).copy_from_slice(&cur);
    }
    let observations = Trajectory::new(render_factors(which, &factors, image_size), 1.0)?;
    let names: Vec<serde_json::Value> = which
        .iter()
        .map(|w| serde_json::to_value(w).expect("enum serializes"))
        .collect();
    let descriptor = GeneratorDescriptor {
        name: "sprite-walk".into(),
        params: params(&[
            ("factors", names.into()),
            ("n_frames", n_frames.into()),
            ("step_sigma", step_sigma.into()),
            ("image_size", image_size.into()),
        ]),
        seed,
    };
    GroundTruthDataset::new(observations, Trajectory::new(factors, 1.0)?, descriptor)
}
