//! The three parametric functions: stochastic Gaussian encoder, classifier,
//! and domain discriminator, as MLPs over the autodiff core.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Clamp applied to the encoder's log-variance head output; keeps
/// `exp(log_var)` away from overflow/underflow.
pub const LOG_VAR_CLAMP: f64 = 10.0;

/// Layer widths. Hidden layers use tanh; heads are linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub d_x: usize,
    pub hidden: usize,
    pub d_z: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(d_x: usize, num_classes: usize) -> Self {
        Architecture {
            d_x,
            hidden: 64,
            d_z: 16,
            num_classes,
        }
    }
}

/// Per-example posterior parameters of the stochastic encoder.
#[derive(Debug, Clone, Copy)]
pub struct GaussianLatent {
    pub mu: NodeId,
    pub log_var: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `[fan_in x fan_out]`
    pub weight: Tensor,
    /// `[1 x fan_out]`
    pub bias: Tensor,
}

impl LinearParams {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        LinearParams {
            weight: Tensor::new(vec![fan_in, fan_out], data).unwrap().with_grad(),
            bias: Tensor::zeros(vec![1, fan_out]).with_grad(),
        }
    }

    fn zeroed(fan_in: usize, fan_out: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(vec![fan_in, fan_out]).with_grad(),
            bias: Tensor::zeros(vec![1, fan_out]).with_grad(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Encoder, classifier, and discriminator parameters.
///
/// All tensors require gradients; the canonical traversal order of
/// [`ModelParams::tensors`] is what the optimizer state, flat-vector
/// round-trips, and checkpoints rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub enc1: LinearParams,
    pub enc2: LinearParams,
    pub mu_head: LinearParams,
    pub log_var_head: LinearParams,
    pub cls1: LinearParams,
    pub cls2: LinearParams,
    pub disc1: LinearParams,
    pub disc2: LinearParams,
}

/// Graph-resident handles for one forward/backward pass.
pub struct BoundParams {
    pub enc1: BoundLinear,
    pub enc2: BoundLinear,
    pub mu_head: BoundLinear,
    pub log_var_head: BoundLinear,
    pub cls1: BoundLinear,
    pub cls2: BoundLinear,
    pub disc1: BoundLinear,
    pub disc2: BoundLinear,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases; the log-variance head starts at
    /// zero so training begins at unit posterior variance.
    pub fn init(arch: Architecture, rng: &mut RngStream) -> Self {
        let h = arch.hidden;
        ModelParams {
            arch,
            enc1: LinearParams::glorot(arch.d_x, h, rng),
            enc2: LinearParams::glorot(h, h, rng),
            mu_head: LinearParams::glorot(h, arch.d_z, rng),
            log_var_head: LinearParams::zeroed(h, arch.d_z),
            cls1: LinearParams::glorot(arch.d_z, h, rng),
            cls2: LinearParams::glorot(h, arch.num_classes, rng),
            disc1: LinearParams::glorot(arch.d_z, h, rng),
            disc2: LinearParams::glorot(h, 1, rng),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("enc1.weight", &self.enc1.weight),
            ("enc1.bias", &self.enc1.bias),
            ("enc2.weight", &self.enc2.weight),
            ("enc2.bias", &self.enc2.bias),
            ("mu_head.weight", &self.mu_head.weight),
            ("mu_head.bias", &self.mu_head.bias),
            ("log_var_head.weight", &self.log_var_head.weight),
            ("log_var_head.bias", &self.log_var_head.bias),
            ("cls1.weight", &self.cls1.weight),
            ("cls1.bias", &self.cls1.bias),
            ("cls2.weight", &self.cls2.weight),
            ("cls2.bias", &self.cls2.bias),
            ("disc1.weight", &self.disc1.weight),
            ("disc1.bias", &self.disc1.bias),
            ("disc2.weight", &self.disc2.weight),
            ("disc2.bias", &self.disc2.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.enc1.weight,
            &mut self.enc1.bias,
            &mut self.enc2.weight,
            &mut self.enc2.bias,
            &mut self.mu_head.weight,
            &mut self.mu_head.bias,
            &mut self.log_var_head.weight,
            &mut self.log_var_head.bias,
            &mut self.cls1.weight,
            &mut self.cls1.bias,
            &mut self.cls2.weight,
            &mut self.cls2.bias,
            &mut self.disc1.weight,
            &mut self.disc1.bias,
            &mut self.disc2.weight,
            &mut self.disc2.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Concatenation of all parameters in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        let mut rng = RngStream::new(0);
        let mut params = ModelParams::init(arch, &mut rng);
        let expected = params.num_params();
        if flat.len() != expected {
            return Err(Error::contract(format!(
                "from_flat: expected {expected} values, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in params.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(params)
    }

    /// Insert every parameter as a differentiable graph leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut bind = |p: &LinearParams| BoundLinear {
            weight: g.leaf(p.weight.clone()),
            bias: g.leaf(p.bias.clone()),
        };
        BoundParams {
            enc1: bind(&self.enc1),
            enc2: bind(&self.enc2),
            mu_head: bind(&self.mu_head),
            log_var_head: bind(&self.log_var_head),
            cls1: bind(&self.cls1),
            cls2: bind(&self.cls2),
            disc1: bind(&self.disc1),
            disc2: bind(&self.disc2),
        }
    }

    /// Insert parameters as constants, for evaluation passes that never
    /// call backward.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        let mut bind = |p: &LinearParams| BoundLinear {
            weight: g.constant(p.weight.clone()),
            bias: g.constant(p.bias.clone()),
        };
        BoundParams {
            enc1: bind(&self.enc1),
            enc2: bind(&self.enc2),
            mu_head: bind(&self.mu_head),
            log_var_head: bind(&self.log_var_head),
            cls1: bind(&self.cls1),
            cls2: bind(&self.cls2),
            disc1: bind(&self.disc1),
            disc2: bind(&self.disc2),
        }
    }

    /// Write parameters as a textual checkpoint: one `tensor` header line per
    /// parameter followed by its row-major values. The default f64 rendering
    /// is shortest-roundtrip, so load is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "vbda-params v1").unwrap();
        for (name, t) in self.tensors() {
            write!(out, "tensor {name} {}", t.shape().len()).unwrap();
            for d in t.shape() {
                write!(out, " {d}").unwrap();
            }
            out.push('\n');
            let mut first = true;
            for v in t.data() {
                if !first {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
                first = false;
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, arch: Architecture) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("vbda-params v1") {
            return Err(Error::contract("checkpoint: bad header"));
        }
        let mut rng = RngStream::new(0);
        let mut params = ModelParams::init(arch, &mut rng);
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        for ((name, shape), tensor) in expected.iter().zip(params.tensors_mut()) {
            let header = lines
                .next()
                .ok_or_else(|| Error::contract("checkpoint: truncated"))?;
            let mut parts = header.split_whitespace();
            if parts.next() != Some("tensor") || parts.next() != Some(name.as_str()) {
                return Err(Error::contract(format!(
                    "checkpoint: expected tensor {name}, got {header:?}"
                )));
            }
            let ndim: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::contract("checkpoint: bad ndim"))?;
            let dims: Vec<usize> = parts.filter_map(|s| s.parse().ok()).collect();
            if dims.len() != ndim || dims != *shape {
                return Err(Error::contract(format!(
                    "checkpoint: tensor {name} has shape {dims:?}, expected {shape:?}"
                )));
            }
            let values = lines
                .next()
                .ok_or_else(|| Error::contract("checkpoint: missing values"))?;
            let parsed: std::result::Result<Vec<f64>, _> =
                values.split_whitespace().map(|s| s.parse::<f64>()).collect();
            let parsed =
                parsed.map_err(|e| Error::contract(format!("checkpoint: bad value: {e}")))?;
            if parsed.len() != tensor.numel() {
                return Err(Error::contract(format!(
                    "checkpoint: tensor {name} has {} values, expected {}",
                    parsed.len(),
                    tensor.numel()
                )));
            }
            tensor.data_mut().copy_from_slice(&parsed);
        }
        Ok(params)
    }
}

impl BoundParams {
    /// Node ids in the same canonical order as [`ModelParams::tensors`].
    pub fn ids(&self) -> Vec<NodeId> {
        vec![
            self.enc1.weight,
            self.enc1.bias,
            self.enc2.weight,
            self.enc2.bias,
            self.mu_head.weight,
            self.mu_head.bias,
            self.log_var_head.weight,
            self.log_var_head.bias,
            self.cls1.weight,
            self.cls1.bias,
            self.cls2.weight,
            self.cls2.bias,
            self.disc1.weight,
            self.disc1.bias,
            self.disc2.weight,
            self.disc2.bias,
        ]
    }
}

/// Gradients of every parameter leaf in canonical order; zeros where
/// backward did not reach.
pub fn collect_grads(g: &Graph, bound: &BoundParams) -> Vec<Vec<f64>> {
    bound
        .ids()
        .iter()
        .map(|&id| match g.grad(id) {
            Some(grad) => grad.to_vec(),
            None => vec![0.0; g.value(id).numel()],
        })
        .collect()
}

fn linear(g: &mut Graph, layer: &BoundLinear, x: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, layer.weight)?;
    g.add_bias(xw, layer.bias)
}

/// Posterior parameters of `g_theta(z|x)`; deterministic given params and x.
pub fn encode(g: &mut Graph, p: &BoundParams, x: NodeId) -> Result<GaussianLatent> {
    let h1 = linear(g, &p.enc1, x)?;
    let h1 = g.tanh(h1);
    let h2 = linear(g, &p.enc2, h1)?;
    let h2 = g.tanh(h2);
    let mu = linear(g, &p.mu_head, h2)?;
    let lv = linear(g, &p.log_var_head, h2)?;
    let log_var = g.clamp(lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP);
    Ok(GaussianLatent { mu, log_var })
}

/// `z = mu + exp(log_var / 2) * eps` for a caller-supplied noise tensor.
/// Gradient flows to mu and log_var, never to eps.
pub fn reparameterize_with_eps(
    g: &mut Graph,
    latent: &GaussianLatent,
    eps: Tensor,
) -> Result<NodeId> {
    let eps = g.constant(eps);
    let half_lv = g.scale(latent.log_var, 0.5);
    let sigma = g.exp(half_lv);
    let noise = g.mul(sigma, eps)?;
    g.add(latent.mu, noise)
}

/// Reparameterized sample with standard-normal noise drawn from `rng`.
pub fn reparameterize(
    g: &mut Graph,
    latent: &GaussianLatent,
    rng: &mut RngStream,
) -> Result<NodeId> {
    let shape = g.value(latent.mu).shape().to_vec();
    let numel = g.value(latent.mu).numel();
    let eps = Tensor::new(shape, rng.normal_vec(numel))?;
    reparameterize_with_eps(g, latent, eps)
}

/// Class probabilities `h_phi(y|z)`: MLP logits through row softmax.
pub fn classify(g: &mut Graph, p: &BoundParams, z: NodeId) -> Result<NodeId> {
    let h = linear(g, &p.cls1, z)?;
    let h = g.tanh(h);
    let logits = linear(g, &p.cls2, h)?;
    g.softmax_rows(logits)
}

/// Probability that each z came from the source domain.
///
/// A gradient-reversal node with coefficient `lambda_d` sits between z and
/// the discriminator MLP, so one backward pass trains the discriminator to
/// separate domains while pushing the encoder to confuse it. The sigmoid
/// output is clamped strictly inside (0, 1).
pub fn discriminate(
    g: &mut Graph,
    p: &BoundParams,
    z: NodeId,
    lambda_d: f64,
) -> Result<NodeId> {
    let reversed = g.gradient_reversal(z, lambda_d)?;
    let h = linear(g, &p.disc1, reversed)?;
    let h = g.tanh(h);
    let logit = linear(g, &p.disc2, h)?;
    let prob = g.sigmoid(logit);
    Ok(g.clamp(prob, 1e-12, 1.0 - 1e-12))
}
