//! Scalar terms of the training objective plus mutual-information
//! diagnostics.
//!
//! All entropies and MI values are in nats. Probabilities are clamped to
//! `[1e-12, 1]` before any log; the clamp is part of every loss contract.

use std::fmt;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::DomainBatch;
use crate::error::{Error, Result};
use crate::models::{
    classify, discriminate, encode, reparameterize_with_eps, BoundParams, GaussianLatent,
    ModelParams,
};
use crate::rng::RngStream;

pub const PROB_CLAMP_LO: f64 = 1e-12;
pub const PROB_CLAMP_HI: f64 = 1.0;

/// Weights of the four regularizers; the classification term is unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_ce: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_d: 0.0,
        lambda_ce: 0.0,
        lambda_s: 0.0,
        lambda_t: 0.0,
    };
}

/// The five scalar components of the composite objective plus MI
/// diagnostics, as plain values read off the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Source classification cross-entropy.
    pub l_cls: f64,
    /// Domain discriminator binary cross-entropy.
    pub l_adv: f64,
    /// Target conditional entropy H(Y|Z), nats.
    pub l_ce: f64,
    /// Source bottleneck KL.
    pub kl_s: f64,
    /// Target bottleneck KL.
    pub kl_t: f64,
    /// Weighted sum actually optimized.
    pub total: f64,
    /// Upper bound on I(X_s;Z) — the per-example KL mean on this batch.
    pub i_u_s: f64,
    /// Upper bound on I(X_t;Z).
    pub i_u_t: f64,
    /// Lower bound on I(Y_s;Z): label entropy minus cross-entropy.
    pub i_l_s: f64,
}

impl LossBreakdown {
    /// Re-assemble the total from components in the same association order
    /// the graph uses, so the result is bit-identical to `total`.
    pub fn reconstruct_total(&self, w: &LossWeights) -> f64 {
        (((self.l_cls + w.lambda_d * self.l_adv) + w.lambda_ce * self.l_ce)
            + w.lambda_s * self.kl_s)
            + w.lambda_t * self.kl_t
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_cls, self.l_adv, self.l_ce, self.kl_s, self.kl_t, self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "l_cls={:.6} l_adv={:.6} l_ce={:.6} kl_s={:.6} kl_t={:.6} total={:.6}",
            self.l_cls, self.l_adv, self.l_ce, self.kl_s, self.kl_t, self.total
        )
    }
}

fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::contract(format!(
                "label {y} at row {i} out of range for {num_classes} classes"
            )));
        }
    }
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &y) in labels.iter().enumerate() {
        data[i * num_classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_classes], data)
}

/// Mean over the batch of `-ln p(label)`, probabilities clamped.
pub fn classification_loss(
    g: &mut Graph,
    probs: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    let t = g.value(probs);
    if t.shape().len() != 2 || t.shape()[0] != labels.len() {
        return Err(Error::contract(format!(
            "classification_loss: probs shape {:?} vs {} labels",
            t.shape(),
            labels.len()
        )));
    }
    let k = t.shape()[1];
    let m = labels.len() as f64;
    let mask = one_hot(labels, k)?;
    let mask = g.constant(mask);
    let clamped = g.clamp(probs, PROB_CLAMP_LO, PROB_CLAMP_HI);
    let lp = g.log(clamped)?;
    let picked = g.mul(mask, lp)?;
    let sum = g.sum_all(picked);
    Ok(g.scale(sum, -1.0 / m))
}

/// `-mean log d_src - mean log(1 - d_tgt)`; the discriminator descends it
/// while the gradient-reversal node makes the encoder ascend it.
pub fn adversarial_loss(g: &mut Graph, d_src: NodeId, d_tgt: NodeId) -> Result<NodeId> {
    for (name, id) in [("d_src", d_src), ("d_tgt", d_tgt)] {
        let t = g.value(id);
        if t.shape().len() != 2 || t.shape()[1] != 1 {
            return Err(Error::contract(format!(
                "adversarial_loss: {name} must be [batch x 1], got {:?}",
                t.shape()
            )));
        }
    }
    let cs = g.clamp(d_src, PROB_CLAMP_LO, PROB_CLAMP_HI);
    let ls = g.log(cs)?;
    let ms = g.mean_all(ls);
    let src_term = g.scale(ms, -1.0);

    let neg_t = g.neg(d_tgt);
    let one_minus = g.add_scalar(neg_t, 1.0);
    let ct = g.clamp(one_minus, PROB_CLAMP_LO, PROB_CLAMP_HI);
    let lt = g.log(ct)?;
    let mt = g.mean_all(lt);
    let tgt_term = g.scale(mt, -1.0);

    g.add(src_term, tgt_term)
}

/// Mean over the batch of the prediction entropy `-sum_y h log h`, in nats.
/// This non-negative quantity is what training minimizes.
pub fn conditional_entropy(g: &mut Graph, probs: NodeId) -> Result<NodeId> {
    let t = g.value(probs);
    if t.shape().len() != 2 {
        return Err(Error::contract(format!(
            "conditional_entropy: probs must be 2-d, got {:?}",
            t.shape()
        )));
    }
    let m = t.shape()[0] as f64;
    let clamped = g.clamp(probs, PROB_CLAMP_LO, PROB_CLAMP_HI);
    let lp = g.log(clamped)?;
    let plogp = g.mul(probs, lp)?;
    let sum = g.sum_all(plogp);
    Ok(g.scale(sum, -1.0 / m))
}

/// Mean over the batch of `D_KL(N(mu, diag(exp(log_var))) || N(0, I))`
/// in closed form: `0.5 * sum_i (mu_i^2 + sigma_i^2 - 1 - log sigma_i^2)`.
pub fn kl_to_standard_normal(g: &mut Graph, latent: &GaussianLatent) -> Result<NodeId> {
    let m = g.value(latent.mu).shape()[0] as f64;
    let mu2 = g.mul(latent.mu, latent.mu)?;
    let var = g.exp(latent.log_var);
    let a = g.add(mu2, var)?;
    let b = g.add_scalar(a, -1.0);
    let c = g.sub(b, latent.log_var)?;
    let sum = g.sum_all(c);
    Ok(g.scale(sum, 0.5 / m))
}

/// Source of reparameterization noise for one objective evaluation.
pub enum EpsSource<'a> {
    /// Draw fresh standard-normal noise (source first, then target).
    Stream(&'a mut RngStream),
    /// Inject fixed noise; used by gradient checks and ablation identities.
    Fixed { eps_s: Tensor, eps_t: Tensor },
}

/// The composite objective: classification + weighted adversarial,
/// conditional-entropy, and per-domain bottleneck terms, with every
/// component and the MI diagnostics reported in the breakdown.
///
/// All components are always computed (zero weights only null their
/// contribution to the total), so baselines and the full method share one
/// code path and ablation identities hold bit-exactly.
pub fn total_objective(
    g: &mut Graph,
    bound: &BoundParams,
    batch: &DomainBatch,
    weights: &LossWeights,
    eps: EpsSource<'_>,
) -> Result<(NodeId, LossBreakdown)> {
    let x_s = g.constant(batch.x_s.clone());
    let x_t = g.constant(batch.x_t.clone());
    let lat_s = encode(g, bound, x_s)?;
    let lat_t = encode(g, bound, x_t)?;

    let d_z = g.value(lat_s.mu).shape()[1];
    let (eps_s, eps_t) = match eps {
        EpsSource::Stream(rng) => {
            let (bs, bt) = (batch.x_s.nrows(), batch.x_t.nrows());
            let eps_s = Tensor::new(vec![bs, d_z], rng.normal_vec(bs * d_z))?;
            let eps_t = Tensor::new(vec![bt, d_z], rng.normal_vec(bt * d_z))?;
            (eps_s, eps_t)
        }
        EpsSource::Fixed { eps_s, eps_t } => (eps_s, eps_t),
    };
    let z_s = reparameterize_with_eps(g, &lat_s, eps_s)?;
    let z_t = reparameterize_with_eps(g, &lat_t, eps_t)?;

    let probs_s = classify(g, bound, z_s)?;
    let l_cls = classification_loss(g, probs_s, &batch.y_s)?;

    let probs_t = classify(g, bound, z_t)?;
    let l_ce = conditional_entropy(g, probs_t)?;

    let d_s = discriminate(g, bound, z_s, weights.lambda_d)?;
    let d_t = discriminate(g, bound, z_t, weights.lambda_d)?;
    let l_adv = adversarial_loss(g, d_s, d_t)?;

    let kl_s = kl_to_standard_normal(g, &lat_s)?;
    let kl_t = kl_to_standard_normal(g, &lat_t)?;

    let adv_w = g.scale(l_adv, weights.lambda_d);
    let ce_w = g.scale(l_ce, weights.lambda_ce);
    let kls_w = g.scale(kl_s, weights.lambda_s);
    let klt_w = g.scale(kl_t, weights.lambda_t);
    let t1 = g.add(l_cls, adv_w)?;
    let t2 = g.add(t1, ce_w)?;
    let t3 = g.add(t2, kls_w)?;
    let total = g.add(t3, klt_w)?;

    let marginal = empirical_label_marginal(&batch.y_s, g.value(probs_s).ncols());
    let i_l_s = mi_lower_bound_labels(g.value(probs_s), &batch.y_s, &marginal)?;
    let breakdown = LossBreakdown {
        l_cls: g.value(l_cls).item(),
        l_adv: g.value(l_adv).item(),
        l_ce: g.value(l_ce).item(),
        kl_s: g.value(kl_s).item(),
        kl_t: g.value(kl_t).item(),
        total: g.value(total).item(),
        i_u_s: g.value(kl_s).item(),
        i_u_t: g.value(kl_t).item(),
        i_l_s,
    };
    Ok((total, breakdown))
}

/// Scalar function of the flat parameter vector whose true gradient at
/// `base` equals the gradient field that backward produces on the composite
/// objective, for use with `finite_difference_check`.
///
/// The adversarial term is a minimax realized by gradient reversal, so the
/// optimized scalar is not a plain function of the parameters: the reversal
/// deliberately reports `-lambda_d` times the forward derivative into the
/// encoder. Freezing each side of the game at the base point turns it into
/// two ordinary terms with the same partials the reversal produces:
/// `+lambda_d` times the discriminator half (latents frozen) and
/// `-lambda_d^2` times the encoder half (discriminator frozen).
pub fn objective_fd_surrogate(
    base: &ModelParams,
    batch: &DomainBatch,
    weights: &LossWeights,
    eps_s: &Tensor,
    eps_t: &Tensor,
) -> Result<impl Fn(&[f64]) -> f64> {
    let (z_s_frozen, z_t_frozen) = {
        let mut g = Graph::new();
        let bound = base.bind_frozen(&mut g);
        let xs = g.constant(batch.x_s.clone());
        let xt = g.constant(batch.x_t.clone());
        let lat_s = encode(&mut g, &bound, xs)?;
        let lat_t = encode(&mut g, &bound, xt)?;
        let zs = reparameterize_with_eps(&mut g, &lat_s, eps_s.clone())?;
        let zt = reparameterize_with_eps(&mut g, &lat_t, eps_t.clone())?;
        (g.value(zs).clone(), g.value(zt).clone())
    };
    let disc1_base = base.disc1.clone();
    let disc2_base = base.disc2.clone();
    let arch = base.arch;
    let batch = batch.clone();
    let weights = *weights;
    let eps_s = eps_s.clone();
    let eps_t = eps_t.clone();

    Ok(move |p: &[f64]| -> f64 {
        let params = ModelParams::from_flat(arch, p).expect("flat parameter size");
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let xs = g.constant(batch.x_s.clone());
        let xt = g.constant(batch.x_t.clone());
        let lat_s = encode(&mut g, &bound, xs).unwrap();
        let lat_t = encode(&mut g, &bound, xt).unwrap();
        let zs = reparameterize_with_eps(&mut g, &lat_s, eps_s.clone()).unwrap();
        let zt = reparameterize_with_eps(&mut g, &lat_t, eps_t.clone()).unwrap();
        let probs_s = classify(&mut g, &bound, zs).unwrap();
        let l_cls = classification_loss(&mut g, probs_s, &batch.y_s).unwrap();
        let probs_t = classify(&mut g, &bound, zt).unwrap();
        let l_ce = conditional_entropy(&mut g, probs_t).unwrap();
        let kl_s = kl_to_standard_normal(&mut g, &lat_s).unwrap();
        let kl_t = kl_to_standard_normal(&mut g, &lat_t).unwrap();

        // Perturbed discriminator against base-point latents.
        let zsf = g.constant(z_s_frozen.clone());
        let ztf = g.constant(z_t_frozen.clone());
        let ds = discriminate(&mut g, &bound, zsf, 0.0).unwrap();
        let dt = discriminate(&mut g, &bound, ztf, 0.0).unwrap();
        let adv_disc = adversarial_loss(&mut g, ds, dt).unwrap();

        // Base-point discriminator against perturbed latents.
        let frozen = BoundParams {
            disc1: crate::models::BoundLinear {
                weight: g.constant(disc1_base.weight.clone()),
                bias: g.constant(disc1_base.bias.clone()),
            },
            disc2: crate::models::BoundLinear {
                weight: g.constant(disc2_base.weight.clone()),
                bias: g.constant(disc2_base.bias.clone()),
            },
            ..bound
        };
        let ds = discriminate(&mut g, &frozen, zs, 0.0).unwrap();
        let dt = discriminate(&mut g, &frozen, zt, 0.0).unwrap();
        let adv_enc = adversarial_loss(&mut g, ds, dt).unwrap();

        g.value(l_cls).item()
            + weights.lambda_ce * g.value(l_ce).item()
            + weights.lambda_s * g.value(kl_s).item()
            + weights.lambda_t * g.value(kl_t).item()
            + weights.lambda_d * g.value(adv_disc).item()
            - weights.lambda_d * weights.lambda_d * g.value(adv_enc).item()
    })
}

/// Closed-form per-example KL to the standard normal, averaged over the
/// sample: the variational upper bound on I(X;Z). Uses `exp_m1` so the
/// result is non-negative even at machine precision.
pub fn mi_upper_bound(mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    if mu.shape() != log_var.shape() {
        return Err(Error::ShapeMismatch {
            op: "mi_upper_bound",
            lhs: mu.shape().to_vec(),
            rhs: log_var.shape().to_vec(),
        });
    }
    if mu.numel() == 0 {
        return Err(Error::contract("mi_upper_bound: empty sample"));
    }
    let n = mu.shape()[0] as f64;
    let mut acc = 0.0;
    for (&m, &lv) in mu.data().iter().zip(log_var.data()) {
        acc += 0.5 * (m * m + (lv.exp_m1() - lv));
    }
    Ok(acc / n)
}

/// Empirical class frequencies of a label sample.
pub fn empirical_label_marginal(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &y in labels {
        counts[y] += 1.0;
    }
    let n = labels.len() as f64;
    counts.iter().map(|c| c / n).collect()
}

/// Lower bound on I(Y;Z): `H(Y) - mean cross-entropy`, in nats. Negative
/// values mean the classifier is worse than the marginal predictor; the
/// value never exceeds `H(Y)`.
pub fn mi_lower_bound_labels(
    probs: &Tensor,
    labels: &[usize],
    label_marginal: &[f64],
) -> Result<f64> {
    if probs.shape().len() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::contract(format!(
            "mi_lower_bound_labels: probs shape {:?} vs {} labels",
            probs.shape(),
            labels.len()
        )));
    }
    let k = probs.ncols();
    if label_marginal.len() != k {
        return Err(Error::contract("mi_lower_bound_labels: marginal length"));
    }
    let h_y: f64 = label_marginal
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum();
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::contract(format!("label {y} out of range")));
        }
        let p = probs.row(i)[y].clamp(PROB_CLAMP_LO, PROB_CLAMP_HI);
        ce -= p.ln();
    }
    ce /= labels.len() as f64;
    Ok(h_y - ce)
}
