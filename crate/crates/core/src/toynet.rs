//! Dense ReLU networks with hand-written backprop and Adam.

use crate::domain::RngStream;
use crate::flowcore::{self, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input has {found} values, layer expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target {index} outside {dim} classes")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] flowcore::FlowError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// `y = W x + b` with `W` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut s = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                s += wi * xi;
            }
            out.push(s);
        }
    }
}

/// ReLU between layers, identity at the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layers: Vec<Layer>,
}

/// Activations kept for the backward pass: `inputs[i]` feeds layer `i`,
/// `pre[i]` is its affine output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub dims: Vec<usize>,
    pub hidden_activation: String,
}

impl MlpNet {
    /// He-normal weights (std `sqrt(2 / n_in)`), zero biases.
    pub fn new(dims: &[usize], rng: &mut RngStream) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let std = (2.0 / d[0] as f64).sqrt();
                let mut l = Layer::zeros(d[0], d[1]);
                for w in &mut l.w {
                    *w = std * rng.next_normal();
                }
                l
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        Self { layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect() }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::ShapeMismatch("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.w.len() != l.n_in * l.n_out || l.b.len() != l.n_out {
                return Err(NetError::ShapeMismatch(format!("layer {i} buffers do not match {}x{}", l.n_out, l.n_in)));
            }
            if i > 0 && layers[i - 1].n_out != l.n_in {
                return Err(NetError::ShapeMismatch(format!("layer {i} input {} != previous output {}", l.n_in, layers[i - 1].n_out)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in];
        d.extend(self.layers.iter().map(|l| l.n_out));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimMismatch { expected: self.input_dim(), found: x.len() });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(l.n_out);
            l.apply(&cur, &mut z);
            let next = if i + 1 < self.layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { Vec::new() };
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward(x)?.pre.pop().expect("non-empty"))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input. ReLU'(0) is taken as 0.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64], grads: &mut Grads) -> Result<Vec<f64>, NetError> {
        if cache.pre.len() != self.layers.len() || grads.layers.len() != self.layers.len() {
            return Err(NetError::ShapeMismatch("cache or grads from a different network".into()));
        }
        if d_out.len() != self.output_dim() {
            return Err(NetError::ShapeMismatch(format!("d_out has {} values, output has {}", d_out.len(), self.output_dim())));
        }
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if i + 1 < self.layers.len() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[i]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for o in 0..l.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d;
                let row = &mut g.w[o * l.n_in..(o + 1) * l.n_in];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
            let mut d_in = vec![0.0; l.n_in];
            for o in 0..l.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &l.w[o * l.n_in..(o + 1) * l.n_in];
                for (di, wi) in d_in.iter_mut().zip(row) {
                    *di += d * wi;
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), NetError> {
        if p.len() != self.n_params() {
            return Err(NetError::ShapeMismatch(format!("{} params given, net has {}", p.len(), self.n_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&p[at..at + nw]);
            l.b.copy_from_slice(&p[at + nw..at + nw + nb]);
            at += nw + nb;
        }
        Ok(())
    }

    pub fn topology(&self) -> Topology {
        Topology { dims: self.dims(), hidden_activation: "relu".into() }
    }

    /// Writes `<stem>.tns` (flat parameters) and `<stem>.json` (topology).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), NetError> {
        let json = serde_json::to_string_pretty(&self.topology()).expect("topology serializes");
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        flowcore::write_tns(&dir.join(format!("{stem}.tns")), &Tensor::vector(self.params()))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let topo: Topology = serde_json::from_str(&text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        if topo.hidden_activation != "relu" || topo.dims.len() < 2 {
            return Err(NetError::Checkpoint(format!("unsupported topology {topo:?}")));
        }
        let mut net = Self::zeros(&topo.dims);
        let t = flowcore::read_tns(&dir.join(format!("{stem}.tns")))?;
        net.set_params(t.data())?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradient buffers shaped like an [`MlpNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

impl Grads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net.layers.iter().map(|l| LayerGrad { w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] }).collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    /// Flat view in the same order as [`MlpNet::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &MlpNet, cfg: AdamConfig) -> Self {
        let n = net.n_params();
        Self { cfg, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected Adam update of `net` in place.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Grads) -> Result<(), NetError> {
        if grads.layers.len() != net.layers.len() || self.m.len() != net.n_params() {
            return Err(NetError::ShapeMismatch("optimizer state does not match network".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut at = 0;
        for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
            if g.w.len() != l.w.len() || g.b.len() != l.b.len() {
                return Err(NetError::ShapeMismatch("gradient buffer does not match layer".into()));
            }
            for (p, gi) in l.w.iter_mut().chain(l.b.iter_mut()).zip(g.w.iter().chain(&g.b)) {
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                at += 1;
            }
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>), NetError> {
    if target >= logits.len() {
        return Err(NetError::IndexOutOfRange { index: target, dim: logits.len() });
    }
    let lse = crate::scoring::log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Mean squared error over elements and its gradient.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), NetError> {
    if pred.len() != target.len() {
        return Err(NetError::DimMismatch { expected: target.len(), found: pred.len() });
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Relative error with a floor on the denominator so near-zero gradients
/// compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::stream;

    fn net(dims: &[usize], seed: u64) -> MlpNet {
        MlpNet::new(dims, &mut stream(seed, &["net"]))
    }

    #[test]
    fn zero_net_zero_output() {
        let n = MlpNet::zeros(&[3, 4, 2]);
        assert_eq!(n.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut n = MlpNet::zeros(&[3, 3]);
        for i in 0..3 {
            n.layers_mut()[0].w[i * 3 + i] = 1.0;
        }
        assert_eq!(n.predict(&[0.5, 1.0, 2.0]).unwrap(), vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn hand_computed_two_layer() {
        // W1 = [[1, 2], [-1, 1]], b1 = [0.5, 0]; ReLU; W2 = [[2, -3]], b2 = [1].
        // x = (1, -1): pre1 = (1 - 2 + 0.5, -1 - 1) = (-0.5, -2) -> relu (0, 0) -> 1.
        // x = (2, 1):  pre1 = (4.5, -1) -> (4.5, 0) -> 2*4.5 + 1 = 10.
        let n = MlpNet::from_layers(vec![
            Layer { n_in: 2, n_out: 2, w: vec![1.0, 2.0, -1.0, 1.0], b: vec![0.5, 0.0] },
            Layer { n_in: 2, n_out: 1, w: vec![2.0, -3.0], b: vec![1.0] },
        ])
        .unwrap();
        assert_eq!(n.predict(&[1.0, -1.0]).unwrap(), vec![1.0]);
        assert_eq!(n.predict(&[2.0, 1.0]).unwrap(), vec![10.0]);
        assert!(matches!(n.predict(&[1.0]), Err(NetError::DimMismatch { expected: 2, found: 1 })));
    }

    #[test]
    fn zero_upstream_gradient() {
        let n = net(&[4, 5, 3], 1);
        let c = n.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let mut g = Grads::zeros_like(&n);
        let dx = n.backward(&c, &[0.0; 3], &mut g).unwrap();
        assert!(g.flat().iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_mse_closed_form() {
        let n = net(&[3, 2], 2);
        let x = [0.3, -0.7, 1.1];
        let y = [0.5, -0.25];
        let c = n.forward(&x).unwrap();
        let (_, d) = mse(c.output(), &y).unwrap();
        let mut g = Grads::zeros_like(&n);
        n.backward(&c, &d, &mut g).unwrap();
        let out = c.output();
        for o in 0..2 {
            let r = 2.0 * (out[o] - y[o]) / 2.0;
            for i in 0..3 {
                assert!((g.layers[0].w[o * 3 + i] - r * x[i]).abs() < 1e-15);
            }
            assert!((g.layers[0].b[o] - r).abs() < 1e-15);
        }
    }

    #[test]
    fn finite_difference_check() {
        let mut n = net(&[5, 7, 6, 3], 3);
        let x = [0.2, -0.4, 0.9, 0.1, -1.3];
        let target = 1;
        let loss_of = |n: &MlpNet| softmax_xent(&n.predict(&x).unwrap(), target).unwrap().0;
        let c = n.forward(&x).unwrap();
        let (_, d) = softmax_xent(c.output(), target).unwrap();
        let mut g = Grads::zeros_like(&n);
        let dx = n.backward(&c, &d, &mut g).unwrap();
        let analytic = g.flat();
        let p0 = n.params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            n.set_params(&p).unwrap();
            let up = loss_of(&n);
            p[i] -= 2.0 * h;
            n.set_params(&p).unwrap();
            let down = loss_of(&n);
            worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * h), 1e-6));
        }
        n.set_params(&p0).unwrap();
        assert!(worst <= 1e-6, "{worst}");
        for j in 0..x.len() {
            let mut xp = x;
            xp[j] += h;
            let up = softmax_xent(&n.predict(&xp).unwrap(), target).unwrap().0;
            xp[j] -= 2.0 * h;
            let down = softmax_xent(&n.predict(&xp).unwrap(), target).unwrap().0;
            assert!(relative_error(dx[j], (up - down) / (2.0 * h), 1e-6) <= 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut n = net(&[3, 2], 4);
        let before = n.params();
        let mut s = AdamState::new(&n, AdamConfig::default());
        let g = Grads::zeros_like(&n);
        s.step(&mut n, &g).unwrap();
        assert_eq!(n.params(), before);
    }

    #[test]
    fn adam_first_step() {
        let mut n = MlpNet::zeros(&[2, 1]);
        let mut g = Grads::zeros_like(&n);
        g.layers[0].w = vec![0.5, -2.0];
        g.layers[0].b = vec![1e-3];
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(&n, cfg);
        s.step(&mut n, &g).unwrap();
        let got = n.params();
        for (p, gi) in got.iter().zip([0.5, -2.0, 1e-3]) {
            let expect = -cfg.lr * gi / (f64::abs(gi) + cfg.eps);
            assert!((p - expect).abs() < 1e-15, "{p} vs {expect}");
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // f(p) = (p0 - 1)^2 + 4 (p1 + 0.5)^2 with p the bias of a 1x2 layer.
        let mut n = MlpNet::zeros(&[1, 2]);
        let mut s = AdamState::new(&n, AdamConfig { lr: 0.05, ..AdamConfig::default() });
        let f = |b: &[f64]| (b[0] - 1.0).powi(2) + 4.0 * (b[1] + 0.5).powi(2);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let b = n.layers()[0].b.clone();
            losses.push(f(&b));
            let mut g = Grads::zeros_like(&n);
            g.layers[0].b = vec![2.0 * (b[0] - 1.0), 8.0 * (b[1] + 0.5)];
            s.step(&mut n, &g).unwrap();
        }
        let last = f(&n.layers()[0].b);
        assert!(last < 1e-4, "{last}");
        assert!(losses[20] < losses[0]);
    }

    #[test]
    fn xent_values() {
        let (l, g) = softmax_xent(&[0.0; 4], 2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        assert!(softmax_xent(&[50.0, 0.0, 0.0], 0).unwrap().0 < 1e-20);
        let expect = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        let (l, _) = softmax_xent(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.40761).abs() < 1e-5);
        assert!(matches!(softmax_xent(&[1.0], 1), Err(NetError::IndexOutOfRange { index: 1, dim: 1 })));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let n = net(&[4, 3, 2], 9);
        n.save(dir.path(), "enc").unwrap();
        assert_eq!(MlpNet::load(dir.path(), "enc").unwrap(), n);
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(net(&[8, 8, 4], 5), net(&[8, 8, 4], 5));
        assert_ne!(net(&[8, 8, 4], 5), net(&[8, 8, 4], 6));
    }
}
