//! Overdamped Langevin dynamics with diagonal diffusion.
//!
//! A step of length `dt` moves coordinate `i` by
//! `[M_ii f_i + ∂M_ii/∂z_i]·dt + sqrt(2 M_ii dt)·ε_i`. The learned
//! [`PriorModel`] scores observed latent displacements with the matching
//! Gaussian transition density at unit lag and is fitted by minimizing the
//! binned negative log-likelihood ([`prior_loss`]).

use crate::error::{Error, Result};
use crate::ndmath::{Activation, AdamState, FeedForwardNet, Mat, Rng};
use crate::trajectory::Trajectory;

/// Lower bound added to the softplus output of the diffusion network.
pub const DIFFUSION_FLOOR: f64 = 1e-6;

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Force field and diagonal diffusion over `R^d`.
pub trait LangevinField {
    fn dim(&self) -> usize;
    fn force(&self, z: &[f64], out: &mut [f64]);
    /// Writes `M_ii(z)` into `m` and `∂M_ii/∂z_i` into `dm`.
    fn diffusion(&self, z: &[f64], m: &mut [f64], dm: &mut [f64]);
}

/// Analytic force with a position-independent diagonal diffusion.
pub struct ConstantDiffusion<F> {
    pub force: F,
    pub diffusion: Vec<f64>,
}

impl<F: Fn(&[f64], &mut [f64])> LangevinField for ConstantDiffusion<F> {
    fn dim(&self) -> usize {
        self.diffusion.len()
    }

    fn force(&self, z: &[f64], out: &mut [f64]) {
        (self.force)(z, out)
    }

    fn diffusion(&self, _z: &[f64], m: &mut [f64], dm: &mut [f64]) {
        m.copy_from_slice(&self.diffusion);
        dm.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Displacement of one Euler–Maruyama step from already evaluated fields.
pub fn em_increment(force: &[f64], diff: &[f64], diff_grad: &[f64], dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    let d = force.len();
    for (name, len) in [
        ("diffusion", diff.len()),
        ("diffusion gradient", diff_grad.len()),
        ("noise", noise.len()),
    ] {
        if len != d {
            return Err(Error::DimensionMismatch {
                context: name,
                expected: d,
                got: len,
            });
        }
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if let Some(i) = diff.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::invalid(format!(
            "diffusion M_{i}{i} = {} is not positive",
            diff[i]
        )));
    }
    Ok((0..d)
        .map(|i| (diff[i] * force[i] + diff_grad[i]) * dt + (2.0 * diff[i] * dt).sqrt() * noise[i])
        .collect())
}

/// One Euler–Maruyama step from `z`; returns the displacement `Δz`.
pub fn em_step<L: LangevinField + ?Sized>(z: &[f64], field: &L, dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    let d = field.dim();
    if z.len() != d {
        return Err(Error::dims("em_step position", d, z.len()));
    }
    let mut f = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut dm = vec![0.0; d];
    field.force(z, &mut f);
    field.diffusion(z, &mut m, &mut dm);
    em_increment(&f, &m, &dm, dt, noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    /// Integrator step.
    pub dt_sim: f64,
    /// Integrator steps per recorded frame.
    pub stride: usize,
    pub n_frames: usize,
    /// Abort once any coordinate exceeds this magnitude.
    pub bound: Option<f64>,
    /// Multiplies the Gaussian noise; 0 gives the deterministic flow.
    pub noise_scale: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            dt_sim: 0.01,
            stride: 10,
            n_frames: 1000,
            bound: Some(1e3),
            noise_scale: 1.0,
        }
    }
}

/// Integrates the dynamics and records every `stride`-th state. The recorded
/// lag is `stride · dt_sim`.
pub fn simulate<L: LangevinField + ?Sized>(
    initial: &[f64],
    field: &L,
    opts: &SimulationOptions,
    rng: &mut Rng,
) -> Result<Trajectory> {
    let d = field.dim();
    if initial.len() != d {
        return Err(Error::dims("initial state", d, initial.len()));
    }
    if opts.stride < 1 || opts.n_frames < 2 {
        return Err(Error::invalid("simulation needs stride >= 1 and at least 2 frames"));
    }
    let mut out = Mat::zeros(opts.n_frames, d);
    let mut z = initial.to_vec();
    let mut noise = vec![0.0; d];
    let (mut f, mut m, mut dm) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    out.row_mut(0).copy_from_slice(&z);
    for frame in 1..opts.n_frames {
        for _ in 0..opts.stride {
            rng.fill_normal(&mut noise);
            noise.iter_mut().for_each(|e| *e *= opts.noise_scale);
            field.force(&z, &mut f);
            field.diffusion(&z, &mut m, &mut dm);
            let dz = em_increment(&f, &m, &dm, opts.dt_sim, &noise)?;
            for (a, b) in z.iter_mut().zip(&dz) {
                *a += b;
            }
        }
        let escaped = z
            .iter()
            .any(|v| !v.is_finite() || opts.bound.is_some_and(|b| v.abs() > b));
        if escaped {
            return Err(Error::EscapedBox { frame });
        }
        out.row_mut(frame).copy_from_slice(&z);
    }
    Trajectory::new(out, opts.dt_sim * opts.stride as f64)
}

/// `(z_t, Δz)` at unit lag.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
}

/// Log transition density as a function of already evaluated fields:
/// `-½ Σ_i [ log M_ii + (Δz_i − M_ii f_i − ∂M_ii/∂z_i)² / (2 M_ii) ]`.
/// The Gaussian normalization constant is not included.
pub fn transition_log_density(dz: &[f64], f: &[f64], m: &[f64], dm: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..dz.len() {
        let r = dz[i] - m[i] * f[i] - dm[i];
        s += m[i].ln() + r * r / (2.0 * m[i]);
    }
    -0.5 * s
}

/// Force and diffusion networks over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub force_net: FeedForwardNet,
    /// Raw outputs go through softplus (plus [`DIFFUSION_FLOOR`]).
    pub diffusion_net: FeedForwardNet,
}

/// Fields evaluated on a batch of latent points.
#[derive(Debug, Clone)]
pub struct PriorFields {
    pub force: Mat,
    pub diffusion: Mat,
    /// `∂M_ii/∂z_i` per sample.
    pub diffusion_grad: Mat,
}

#[derive(Debug, Clone)]
pub struct PriorGrads {
    pub force: Vec<f64>,
    pub diffusion: Vec<f64>,
}

impl PriorGrads {
    pub fn zeros(prior: &PriorModel) -> Self {
        Self {
            force: vec![0.0; prior.force_net.num_params()],
            diffusion: vec![0.0; prior.diffusion_net.num_params()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.force.iter().chain(&self.diffusion)
    }
}

impl PriorModel {
    /// Two tanh networks `d → hidden… → d`.
    pub fn new(d: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(d)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(d))
            .collect();
        let mut seeds = Rng::new(seed);
        let force_net = FeedForwardNet::new(&dims, Activation::Tanh, seeds.below(u32::MAX as usize) as u64)?;
        let diffusion_net = FeedForwardNet::new(&dims, Activation::Tanh, seeds.below(u32::MAX as usize) as u64)?;
        Self::from_nets(force_net, diffusion_net)
    }

    pub fn from_nets(force_net: FeedForwardNet, diffusion_net: FeedForwardNet) -> Result<Self> {
        let d = force_net.input_dim();
        for (name, net) in [("force", &force_net), ("diffusion", &diffusion_net)] {
            if net.input_dim() != d || net.output_dim() != d {
                return Err(Error::invalid(format!(
                    "{name} net must map R^{d} to R^{d}, got {:?}",
                    net.dims()
                )));
            }
        }
        Ok(Self {
            force_net,
            diffusion_net,
        })
    }

    pub fn dim(&self) -> usize {
        self.force_net.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.force_net.num_params() + self.diffusion_net.num_params()
    }

    pub fn force_batch(&self, z: &Mat) -> Result<Mat> {
        self.force_net.predict(z)
    }

    pub fn fields(&self, z: &Mat) -> Result<PriorFields> {
        let force = self.force_net.predict(z)?;
        let tc = self.diffusion_net.forward_tangent(z)?;
        let (diffusion, diffusion_grad) = diffusion_from_raw(&tc);
        Ok(PriorFields {
            force,
            diffusion,
            diffusion_grad,
        })
    }

    /// Makes the diffusion network output the constant `m` everywhere
    /// (zero weights, output bias at the softplus preimage).
    pub fn set_constant_diffusion(&mut self, m: f64) -> Result<()> {
        let target = m - DIFFUSION_FLOOR;
        if !(target > 0.0) || !target.is_finite() {
            return Err(Error::invalid(format!(
                "constant diffusion must exceed {DIFFUSION_FLOOR}, got {m}"
            )));
        }
        let net = &mut self.diffusion_net;
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let last = net.num_layers() - 1;
        // softplus⁻¹(t) = t + log(1 − e^{−t})
        let raw = target + (-(-target).exp_m1()).ln();
        net.layer_mut(last).1.iter_mut().for_each(|b| *b = raw);
        Ok(())
    }

    /// Adam update over both networks; `state` must cover force then diffusion.
    pub fn apply_adam(&mut self, grads: &PriorGrads, state: &mut AdamState) -> Result<()> {
        state.step_groups(&mut [
            (self.force_net.params_mut(), &grads.force),
            (self.diffusion_net.params_mut(), &grads.diffusion),
        ])
    }
}

fn diffusion_from_raw(tc: &crate::ndmath::TangentCache) -> (Mat, Mat) {
    let raw = tc.output();
    let (n, d) = (raw.rows(), raw.cols());
    let mut m = Mat::zeros(n, d);
    let mut dm = Mat::zeros(n, d);
    for r in 0..n {
        for i in 0..d {
            let a = raw.get(r, i);
            m.set(r, i, softplus(a) + DIFFUSION_FLOOR);
            dm.set(r, i, sigmoid(a) * tc.output_tangent(i).get(r, i));
        }
    }
    (m, dm)
}

impl LangevinField for PriorModel {
    fn dim(&self) -> usize {
        PriorModel::dim(self)
    }

    fn force(&self, z: &[f64], out: &mut [f64]) {
        let f = self
            .force_net
            .predict(&Mat::row_vector(z))
            .expect("dimension checked by caller");
        out.copy_from_slice(f.as_slice());
    }

    fn diffusion(&self, z: &[f64], m: &mut [f64], dm: &mut [f64]) {
        let fields = self.fields(&Mat::row_vector(z)).expect("dimension checked by caller");
        m.copy_from_slice(fields.diffusion.as_slice());
        dm.copy_from_slice(fields.diffusion_grad.as_slice());
    }
}

/// Log prior transition density of one sample.
pub fn prior_log_density(prior: &PriorModel, s: &TransitionSample) -> Result<f64> {
    let d = prior.dim();
    if s.z.len() != d || s.dz.len() != d {
        return Err(Error::dims("transition sample", d, s.z.len().max(s.dz.len())));
    }
    let fields = prior.fields(&Mat::row_vector(&s.z))?;
    let v = transition_log_density(
        &s.dz,
        fields.force.as_slice(),
        fields.diffusion.as_slice(),
        fields.diffusion_grad.as_slice(),
    );
    if !v.is_finite() {
        return Err(Error::NonFinite(format!(
            "log density {v} at z={:?}, dz={:?}",
            s.z, s.dz
        )));
    }
    Ok(v)
}

/// Mean negative log density over one group, scaled by `weight`, with
/// gradients (also scaled) added into `grads` when given.
pub fn group_prior_loss(
    prior: &PriorModel,
    z: &Mat,
    dz: &Mat,
    weight: f64,
    grads: Option<&mut PriorGrads>,
) -> Result<f64> {
    let d = prior.dim();
    if z.cols() != d || dz.cols() != d {
        return Err(Error::dims("prior loss batch", d, z.cols().max(dz.cols())));
    }
    if z.rows() != dz.rows() {
        return Err(Error::dims("prior loss rows", z.rows(), dz.rows()));
    }
    let n = z.rows();
    if n == 0 {
        return Err(Error::invalid("prior loss group is empty"));
    }
    let f_cache = prior.force_net.forward_batch(z)?;
    let tc = prior.diffusion_net.forward_tangent(z)?;
    let force = f_cache.output();
    let raw = tc.output();
    let w = weight / n as f64;

    let mut total = 0.0;
    let mut g_force = Mat::zeros(n, d);
    let mut g_raw = Mat::zeros(n, d);
    let mut g_tan: Vec<Mat> = (0..d).map(|_| Mat::zeros(n, d)).collect();
    for r in 0..n {
        let mut neg_log = 0.0;
        // `i` indexes a coordinate across several matrices at once
        #[allow(clippy::needless_range_loop)]
        for i in 0..d {
            let a = raw.get(r, i);
            let s = sigmoid(a);
            let t = tc.output_tangent(i).get(r, i);
            let m = softplus(a) + DIFFUSION_FLOOR;
            let dm = s * t;
            let f = force.get(r, i);
            let res = dz.get(r, i) - m * f - dm;
            neg_log += 0.5 * (m.ln() + res * res / (2.0 * m));

            let g_f = -0.5 * res;
            let g_m = 0.5 * (1.0 / m - res * f / m - res * res / (2.0 * m * m));
            let g_dm = -res / (2.0 * m);
            g_force.set(r, i, w * g_f);
            g_raw.set(r, i, w * (g_m * s + g_dm * s * (1.0 - s) * t));
            g_tan[i].set(r, i, w * g_dm * s);
        }
        if !neg_log.is_finite() {
            return Err(Error::NonFinite(format!(
                "prior log density {} at z={:?}, dz={:?}",
                -neg_log,
                z.row(r),
                dz.row(r)
            )));
        }
        total += neg_log;
    }
    if let Some(g) = grads {
        prior.force_net.backward_batch(&f_cache, &g_force, &mut g.force)?;
        prior
            .diffusion_net
            .backward_tangent(&tc, &g_raw, &g_tan, &mut g.diffusion)?;
    }
    Ok(weight * total / n as f64)
}

/// Binned negative log-likelihood: the mean over groups of the within-group
/// mean of `-log r(Δz | z)`. Each group is `(z_t, Δz)`.
pub fn prior_loss(prior: &PriorModel, groups: &[(Mat, Mat)]) -> Result<f64> {
    prior_loss_inner(prior, groups, None)
}

/// [`prior_loss`] together with its gradient over both networks.
pub fn prior_loss_and_grad(prior: &PriorModel, groups: &[(Mat, Mat)]) -> Result<(f64, PriorGrads)> {
    let mut g = PriorGrads::zeros(prior);
    let loss = prior_loss_inner(prior, groups, Some(&mut g))?;
    Ok((loss, g))
}

fn prior_loss_inner(prior: &PriorModel, groups: &[(Mat, Mat)], mut grads: Option<&mut PriorGrads>) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::invalid("prior loss needs at least one bin"));
    }
    let k = groups.len() as f64;
    let mut total = 0.0;
    for (z, dz) in groups {
        total += group_prior_loss(prior, z, dz, 1.0 / k, grads.as_deref_mut())?;
    }
    Ok(total)
}

/// Prior displacement with identity diffusion: `f_ω(z) + noise`.
pub fn prior_displacement_with_noise(prior: &PriorModel, z: &Mat, noise: &Mat) -> Result<Mat> {
    let mut f = prior.force_batch(z)?;
    f.add_assign(noise)?;
    Ok(f)
}

/// Draws `Δz̃ = f_ω(z) + ε`, `ε ~ N(0, I)`, one row per row of `z`.
pub fn sample_prior_displacements(prior: &PriorModel, z: &Mat, rng: &mut Rng) -> Result<Mat> {
    let noise = Mat::from_vec(z.rows(), z.cols(), rng.normal_vec(z.rows() * z.cols()))?;
    prior_displacement_with_noise(prior, z, &noise)
}

pub fn sample_prior_displacement(prior: &PriorModel, z: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    Ok(sample_prior_displacements(prior, &Mat::row_vector(z), rng)?.into_vec())
}

#[derive(Debug, Clone)]
pub struct PriorFitOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Maximum-likelihood fit of the prior to one pool of transitions by
/// minibatch Adam. Returns the per-step losses.
pub fn fit_prior(prior: &mut PriorModel, z: &Mat, dz: &Mat, opts: &PriorFitOptions) -> Result<Vec<f64>> {
    if z.rows() == 0 || z.rows() != dz.rows() {
        return Err(Error::invalid(
            "fit_prior needs equally many (z, dz) rows, at least one",
        ));
    }
    let mut rng = Rng::new(opts.seed);
    let mut adam = AdamState::new(prior.num_params(), opts.learning_rate);
    let mut losses = Vec::with_capacity(opts.steps);
    let b = opts.batch_size.min(z.rows()).max(1);
    let mut idx = vec![0usize; b];
    for _ in 0..opts.steps {
        idx.iter_mut().for_each(|i| *i = rng.below(z.rows()));
        let group = [(z.select_rows(&idx), dz.select_rows(&idx))];
        let (loss, g) = prior_loss_and_grad(prior, &group)?;
        prior.apply_adam(&g, &mut adam)?;
        losses.push(loss);
    }
    Ok(losses)
}
