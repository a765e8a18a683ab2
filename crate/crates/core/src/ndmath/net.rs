//! Fully connected networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat buffer, layer by layer, each layer's weight
//! matrix (row-major, `out × in`) followed by its bias vector. The same layout
//! is used by the optimizer and by checkpoints.
//!
//! Besides the ordinary backward pass the network supports a forward-tangent
//! pass: alongside the activations it propagates the input Jacobian columns
//! `∂h/∂x_j`, and [`FeedForwardNet::backward_tangent`] differentiates losses
//! that depend on those Jacobian entries. This is what makes a loss containing
//! `∂M_ii/∂z_i` exactly differentiable with respect to the parameters.

use serde::{Deserialize, Serialize};

use super::linalg::{matmul_gth_acc, matmul_gw, matmul_xwt, Mat};
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
            Activation::Identity => a,
        }
    }

    /// σ'(a), given the pre-activation `a` and output `y = σ(a)`.
    #[inline]
    fn d1(self, a: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    /// σ''(a).
    #[inline]
    fn d2(self, _a: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
            Activation::Relu | Activation::Identity => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    dims: Vec<usize>,
    hidden: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
    seed: u64,
}

/// Activations recorded by a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Mat>,
    pre: Vec<Mat>,
}

impl ForwardCache {
    pub fn output(&self) -> &Mat {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Mat {
        &self.acts[0]
    }

    /// Sign pattern of every hidden pre-activation. Two inputs with equal
    /// patterns lie in the same linear piece of a ReLU network.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|m| m.as_slice().iter().map(|&a| a > 0.0))
            .collect()
    }
}

/// Forward pass that also carries `∂(activation)/∂x_j` for every input
/// coordinate `j`.
#[derive(Debug, Clone)]
pub struct TangentCache {
    base: ForwardCache,
    /// `tan[j][l]` is the tangent of `acts[l]` along input direction `j`.
    tan: Vec<Vec<Mat>>,
    /// `pre_tan[j][l]` is the tangent of `pre[l]` along direction `j`.
    pre_tan: Vec<Vec<Mat>>,
}

impl TangentCache {
    pub fn output(&self) -> &Mat {
        self.base.output()
    }

    /// Jacobian column `∂y/∂x_j` for every sample (`batch × out`).
    pub fn output_tangent(&self, j: usize) -> &Mat {
        self.tan[j].last().expect("non-empty")
    }
}

impl FeedForwardNet {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden)?;
        net.seed = seed;
        let mut rng = Rng::new(seed);
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = rng.uniform_range(-limit, limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("a network needs at least input and output dims"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("layer dims must be positive: {dims:?}")));
        }
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut total = 0;
        for w in dims.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            hidden,
            params: vec![0.0; total],
            offsets,
            seed: 0,
        })
    }

    /// Rebuilds a network from an existing parameter buffer.
    pub fn from_params(dims: &[usize], hidden: Activation, params: Vec<f64>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden)?;
        if params.len() != net.params.len() {
            return Err(Error::dims(
                "FeedForwardNet::from_params",
                net.params.len(),
                params.len(),
            ));
        }
        net.params = params;
        net.seed = seed;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated in constructor")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Identity
        } else {
            self.hidden
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.offsets[layer];
        &self.params[off..off + self.dims[layer] * self.dims[layer + 1]]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let off = self.offsets[layer] + self.dims[layer] * self.dims[layer + 1];
        &self.params[off..off + self.dims[layer + 1]]
    }

    /// Mutable `(weights, bias)` for one layer.
    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.offsets[layer];
        let nw = self.dims[layer] * self.dims[layer + 1];
        let nb = self.dims[layer + 1];
        let (w, b) = self.params[off..off + nw + nb].split_at_mut(nw);
        (w, b)
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    fn affine(&self, layer: usize, h: &Mat) -> Mat {
        let n_out = self.dims[layer + 1];
        let mut a = Mat::zeros(h.rows(), n_out);
        matmul_xwt(h, self.weights(layer), n_out, &mut a);
        let b = self.bias(layer);
        for r in 0..a.rows() {
            for (v, bb) in a.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        a
    }

    pub fn forward_batch(&self, x: &Mat) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.dims.len());
        let mut pre = Vec::with_capacity(self.num_layers());
        acts.push(x.clone());
        for l in 0..self.num_layers() {
            let a = self.affine(l, &acts[l]);
            let act = self.activation(l);
            acts.push(a.map(|v| act.apply(v)));
            pre.push(a);
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Batch forward pass without keeping intermediate activations.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let act = self.activation(l);
            let mut a = self.affine(l, &h);
            if act != Activation::Identity {
                a.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = a;
        }
        Ok(h)
    }

    /// Back-propagates `upstream = ∂loss/∂output` through a cached forward
    /// pass. Parameter gradients are added into `grads`; the input gradient
    /// is returned.
    pub fn backward_batch(&self, cache: &ForwardCache, upstream: &Mat, grads: &mut [f64]) -> Result<Mat> {
        if grads.len() != self.num_params() {
            return Err(Error::dims("gradient buffer", self.num_params(), grads.len()));
        }
        let out = cache.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::dims("upstream gradient", out.cols(), upstream.cols()));
        }
        let mut g = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation(l);
            if act != Activation::Identity {
                let (a, y) = (&cache.pre[l], &cache.acts[l + 1]);
                for ((gv, &av), &yv) in g.as_mut_slice().iter_mut().zip(a.as_slice()).zip(y.as_slice()) {
                    *gv *= act.d1(av, yv);
                }
            }
            self.accumulate_layer_grads(l, &g, &cache.acts[l], grads);
            g = matmul_gw(&g, self.weights(l), self.dims[l]);
        }
        Ok(g)
    }

    fn accumulate_layer_grads(&self, layer: usize, g: &Mat, h: &Mat, grads: &mut [f64]) {
        let off = self.offsets[layer];
        let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
        let (gw, rest) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
        matmul_gth_acc(g, h, gw);
        for row in g.iter_rows() {
            for (b, v) in rest.iter_mut().zip(row) {
                *b += v;
            }
        }
    }

    /// Forward pass carrying the full input Jacobian, one tangent per input
    /// coordinate.
    pub fn forward_tangent(&self, x: &Mat) -> Result<TangentCache> {
        let base = self.forward_batch(x)?;
        let n = x.rows();
        let d_in = self.input_dim();
        let mut tan = Vec::with_capacity(d_in);
        let mut pre_tan = Vec::with_capacity(d_in);
        for j in 0..d_in {
            let mut seed = Mat::zeros(n, d_in);
            for r in 0..n {
                seed.set(r, j, 1.0);
            }
            let mut t_layers = vec![seed];
            let mut p_layers = Vec::with_capacity(self.num_layers());
            for l in 0..self.num_layers() {
                let n_out = self.dims[l + 1];
                let mut at = Mat::zeros(n, n_out);
                matmul_xwt(&t_layers[l], self.weights(l), n_out, &mut at);
                let act = self.activation(l);
                let mut ht = at.clone();
                if act != Activation::Identity {
                    let (a, y) = (&base.pre[l], &base.acts[l + 1]);
                    for ((tv, &av), &yv) in ht.as_mut_slice().iter_mut().zip(a.as_slice()).zip(y.as_slice()) {
                        *tv *= act.d1(av, yv);
                    }
                }
                p_layers.push(at);
                t_layers.push(ht);
            }
            tan.push(t_layers);
            pre_tan.push(p_layers);
        }
        Ok(TangentCache { base, tan, pre_tan })
    }

    /// Reverse pass for a loss depending on the outputs and on the output
    /// tangents. `upstream_tan[j]` is `∂loss/∂(∂y/∂x_j)`; pass an empty slice
    /// when the loss ignores tangents. Parameter gradients are added into
    /// `grads`; returns the gradient with respect to the input.
    pub fn backward_tangent(
        &self,
        cache: &TangentCache,
        upstream: &Mat,
        upstream_tan: &[Mat],
        grads: &mut [f64],
    ) -> Result<Mat> {
        if grads.len() != self.num_params() {
            return Err(Error::dims("gradient buffer", self.num_params(), grads.len()));
        }
        let d_in = self.input_dim();
        if !upstream_tan.is_empty() && upstream_tan.len() != d_in {
            return Err(Error::dims("tangent upstream count", d_in, upstream_tan.len()));
        }
        let out = cache.output();
        for m in std::iter::once(upstream).chain(upstream_tan) {
            if m.rows() != out.rows() || m.cols() != out.cols() {
                return Err(Error::dims("upstream gradient", out.cols(), m.cols()));
            }
        }
        let base = &cache.base;
        let mut g = upstream.clone();
        let mut gt: Vec<Mat> = upstream_tan.to_vec();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation(l);
            if act != Activation::Identity {
                let (a, y) = (base.pre[l].as_slice(), base.acts[l + 1].as_slice());
                // g_a = g_y σ'(a) + Σ_j g_ẏj σ''(a) ȧ_j  and  g_ȧj = g_ẏj σ'(a)
                let gs = g.as_mut_slice();
                for i in 0..gs.len() {
                    let d1 = act.d1(a[i], y[i]);
                    let d2 = act.d2(a[i], y[i]);
                    let mut ga = gs[i] * d1;
                    for (j, gtj) in gt.iter_mut().enumerate() {
                        let gtv = &mut gtj.as_mut_slice()[i];
                        ga += *gtv * d2 * cache.pre_tan[j][l].as_slice()[i];
                        *gtv *= d1;
                    }
                    gs[i] = ga;
                }
            }
            self.accumulate_layer_grads(l, &g, &base.acts[l], grads);
            let off = self.offsets[l];
            let n_w = self.dims[l] * self.dims[l + 1];
            for (j, gtj) in gt.iter().enumerate() {
                matmul_gth_acc(gtj, &cache.tan[j][l], &mut grads[off..off + n_w]);
            }
            let w = self.weights(l);
            g = matmul_gw(&g, w, self.dims[l]);
            for gtj in &mut gt {
                *gtj = matmul_gw(gtj, w, self.dims[l]);
            }
        }
        Ok(g)
    }
}

/// Single-sample forward pass.
pub fn mlp_forward(net: &FeedForwardNet, x: &[f64]) -> Result<Vec<f64>> {
    Ok(net.predict(&Mat::row_vector(x))?.into_vec())
}

/// Gradients of `upstream · net(x)` with respect to the parameters and to `x`.
pub fn mlp_backward(net: &FeedForwardNet, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if upstream.len() != net.output_dim() {
        return Err(Error::dims("upstream gradient", net.output_dim(), upstream.len()));
    }
    let cache = net.forward_batch(&Mat::row_vector(x))?;
    let mut grads = vec![0.0; net.num_params()];
    let gx = net.backward_batch(&cache, &Mat::row_vector(upstream), &mut grads)?;
    Ok((grads, gx.into_vec()))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn random_input(rng: &mut Rng, n: usize, d: usize) -> Mat {
        Mat::from_vec(n, d, rng.normal_vec(n * d)).unwrap()
    }

    /// Straight-line forward pass written independently of the batch code.
    fn reference_forward(net: &FeedForwardNet, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (net.dims()[l], net.dims()[l + 1]);
            let w = net.weights(l);
            let b = net.bias(l);
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let mut s = b[o];
                for i in 0..n_in {
                    s += w[o * n_in + i] * h[i];
                }
                next[o] = if l + 1 == net.num_layers() {
                    s
                } else {
                    match net.hidden_activation() {
                        Activation::Relu => s.max(0.0),
                        Activation::Tanh => s.tanh(),
                        Activation::Identity => s,
                    }
                };
            }
            h = next;
        }
        h
    }

    #[test]
    fn parameter_count_matches_layer_dims() {
        let net = FeedForwardNet::new(&[3, 7, 5, 2], Activation::Relu, 1).unwrap();
        assert_eq!(net.num_params(), 3 * 7 + 7 + 7 * 5 + 5 + 5 * 2 + 2);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(FeedForwardNet::zeros(&[3], Activation::Relu).is_err());
        assert!(FeedForwardNet::zeros(&[3, 0, 1], Activation::Relu).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = FeedForwardNet::zeros(&[2, 4, 3], Activation::Tanh).unwrap();
        assert_eq!(mlp_forward(&net, &[1.5, -3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net =
            FeedForwardNet::from_params(&[2, 2], Activation::Relu, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(mlp_forward(&net, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn seeded_relu_net_matches_reference_forward() {
        let net = FeedForwardNet::new(&[2, 16, 16, 3], Activation::Relu, 0).unwrap();
        let got = mlp_forward(&net, &[0.5, -0.5]).unwrap();
        let want = reference_forward(&net, &[0.5, -0.5]);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(got.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let net = FeedForwardNet::new(&[2, 3], Activation::Relu, 0).unwrap();
        assert!(matches!(
            mlp_forward(&net, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(mlp_backward(&net, &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = FeedForwardNet::new(&[3, 5, 2], Activation::Tanh, 4).unwrap();
        let (gp, gx) = mlp_backward(&net, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(gp.iter().chain(&gx).all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_gradients_are_outer_products() {
        let net = FeedForwardNet::new(&[3, 2], Activation::Relu, 9).unwrap();
        let x = [1.0, -2.0, 0.5];
        let u = [0.3, -1.1];
        let (gp, gx) = mlp_backward(&net, &x, &u).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((gp[o * 3 + i] - u[o] * x[i]).abs() < 1e-15);
            }
            assert!((gp[6 + o] - u[o]).abs() < 1e-15);
        }
        let w = net.weights(0);
        for i in 0..3 {
            let want = u[0] * w[i] + u[1] * w[3 + i];
            assert!((gx[i] - want).abs() < 1e-15);
        }
    }

    fn central_difference(f: impl Fn(&FeedForwardNet) -> f64, net: &FeedForwardNet, k: usize, h: f64) -> f64 {
        let mut p = net.clone();
        p.params_mut()[k] += h;
        let fp = f(&p);
        p.params_mut()[k] -= 2.0 * h;
        let fm = f(&p);
        (fp - fm) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn batch_backward_matches_finite_differences() {
        let mut rng = Rng::new(21);
        for act in [Activation::Tanh, Activation::Relu] {
            let net = FeedForwardNet::new(&[3, 6, 5, 2], act, 17).unwrap();
            let x = random_input(&mut rng, 4, 3);
            let up = random_input(&mut rng, 4, 2);
            let loss = |n: &FeedForwardNet| -> f64 {
                let y = n.predict(&x).unwrap();
                y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
            };
            let cache = net.forward_batch(&x).unwrap();
            let mut grads = vec![0.0; net.num_params()];
            net.backward_batch(&cache, &up, &mut grads).unwrap();
            for k in 0..net.num_params() {
                let fd = central_difference(loss, &net, k, 1e-5);
                assert!(rel_err(grads[k], fd) < 1e-4, "{act:?} param {k}: {} vs {fd}", grads[k]);
            }
        }
    }

    #[test]
    fn output_tangents_are_input_jacobian_columns() {
        let net = FeedForwardNet::new(&[2, 8, 8, 3], Activation::Tanh, 5).unwrap();
        let mut rng = Rng::new(2);
        let x = random_input(&mut rng, 3, 2);
        let cache = net.forward_tangent(&x).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            for r in 0..3 {
                xp.set(r, j, x.get(r, j) + h);
                xm.set(r, j, x.get(r, j) - h);
            }
            let yp = net.predict(&xp).unwrap();
            let ym = net.predict(&xm).unwrap();
            let t = cache.output_tangent(j);
            for i in 0..t.as_slice().len() {
                let fd = (yp.as_slice()[i] - ym.as_slice()[i]) / (2.0 * h);
                assert!((t.as_slice()[i] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn tangent_backward_matches_finite_differences() {
        // loss = Σ u·y + Σ_j v_j·(∂y/∂x_j)²
        let mut rng = Rng::new(8);
        let x = random_input(&mut rng, 5, 2);
        let u = random_input(&mut rng, 5, 2);
        let v: Vec<Mat> = (0..2).map(|_| random_input(&mut rng, 5, 2)).collect();
        let loss = |n: &FeedForwardNet| -> f64 {
            let c = n.forward_tangent(&x).unwrap();
            let mut s: f64 = c.output().as_slice().iter().zip(u.as_slice()).map(|(a, b)| a * b).sum();
            for j in 0..2 {
                s += c
                    .output_tangent(j)
                    .as_slice()
                    .iter()
                    .zip(v[j].as_slice())
                    .map(|(t, w)| w * t * t)
                    .sum::<f64>();
            }
            s
        };
        for act in [Activation::Tanh, Activation::Relu] {
            let net = FeedForwardNet::new(&[2, 7, 6, 2], act, 31).unwrap();
            let cache = net.forward_tangent(&x).unwrap();
            let up_t: Vec<Mat> = (0..2)
                .map(|j| {
                    let t = cache.output_tangent(j);
                    let data = t
                        .as_slice()
                        .iter()
                        .zip(v[j].as_slice())
                        .map(|(t, w)| 2.0 * w * t)
                        .collect();
                    Mat::from_vec(5, 2, data).unwrap()
                })
                .collect();
            let mut grads = vec![0.0; net.num_params()];
            let gx = net.backward_tangent(&cache, &u, &up_t, &mut grads).unwrap();
            for k in 0..net.num_params() {
                let fd = central_difference(loss, &net, k, 1e-5);
                assert!(rel_err(grads[k], fd) < 1e-4, "{act:?} param {k}: {} vs {fd}", grads[k]);
            }
            // input gradient, tanh only (ReLU tangents are piecewise constant in x)
            if act == Activation::Tanh {
                let h = 1e-5;
                for r in 0..5 {
                    for j in 0..2 {
                        let eval = |dx: f64| {
                            let mut xx = x.clone();
                            xx.set(r, j, x.get(r, j) + dx);
                            let c = net.forward_tangent(&xx).unwrap();
                            let mut s: f64 = c.output().as_slice().iter().zip(u.as_slice()).map(|(a, b)| a * b).sum();
                            for jj in 0..2 {
                                s += c
                                    .output_tangent(jj)
                                    .as_slice()
                                    .iter()
                                    .zip(v[jj].as_slice())
                                    .map(|(t, w)| w * t * t)
                                    .sum::<f64>();
                            }
                            s
                        };
                        let fd = (eval(h) - eval(-h)) / (2.0 * h);
                        assert!(rel_err(gx.get(r, j), fd) < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn tangent_backward_without_tangent_terms_equals_plain_backward() {
        let net = FeedForwardNet::new(&[3, 4, 2], Activation::Tanh, 3).unwrap();
        let mut rng = Rng::new(1);
        let x = random_input(&mut rng, 6, 3);
        let up = random_input(&mut rng, 6, 2);
        let mut g1 = vec![0.0; net.num_params()];
        let mut g2 = vec![0.0; net.num_params()];
        net.backward_batch(&net.forward_batch(&x).unwrap(), &up, &mut g1)
            .unwrap();
        net.backward_tangent(&net.forward_tangent(&x).unwrap(), &up, &[], &mut g2)
            .unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let a = FeedForwardNet::new(&[4, 9, 3], Activation::Relu, 77).unwrap();
        let b = FeedForwardNet::new(&[4, 9, 3], Activation::Relu, 77).unwrap();
        let mut rng = Rng::new(0);
        let x = random_input(&mut rng, 10, 4);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }
}
