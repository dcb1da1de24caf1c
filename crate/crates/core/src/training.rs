//! The optimization loop: Adam, the warm-up schedule for the adversarial
//! weight, evaluation, and metric recording.

use std::time::Instant;

use crate::autodiff::Graph;
use crate::data::{BatchIterator, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{
    classify, collect_grads, encode, reparameterize, Architecture, ModelParams,
};
use crate::objectives::{
    empirical_label_marginal, mi_lower_bound_labels, total_objective, EpsSource, LossBreakdown,
    LossWeights,
};
use crate::rng::RngStream;

/// All hyperparameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_d: f64,
    pub lambda_ce: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub steps: u64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of steps over which lambda_d ramps linearly from 0.
    pub warmup_frac: f64,
    pub eval_every: u64,
    pub seed: u64,
    pub hidden: usize,
    pub d_z: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_d: 1.0,
            lambda_ce: 0.1,
            lambda_s: 0.1,
            lambda_t: 0.01,
            steps: 2000,
            batch_source: 64,
            batch_target: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_frac: 0.2,
            eval_every: 50,
            seed: 0,
            hidden: 64,
            d_z: 16,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_d: self.lambda_d,
            lambda_ce: self.lambda_ce,
            lambda_s: self.lambda_s,
            lambda_t: self.lambda_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_d < 0.0 || self.lambda_ce < 0.0 || self.lambda_s < 0.0 || self.lambda_t < 0.0
        {
            return Err(Error::contract("loss weights must be non-negative"));
        }
        if self.lr <= 0.0 {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::contract("warmup_frac must be in [0, 1]"));
        }
        if self.eval_every == 0 {
            return Err(Error::contract("eval_every must be positive"));
        }
        if self.batch_source == 0 || self.batch_target == 0 {
            return Err(Error::contract("batch sizes must be positive"));
        }
        if self.hidden == 0 || self.d_z == 0 {
            return Err(Error::contract("architecture widths must be positive"));
        }
        Ok(())
    }
}

/// One evaluation snapshot during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub breakdown: LossBreakdown,
    /// Diagnostic-only lower bound on I(Y_t;Z), computed from held-out
    /// target labels via the evaluation accessor; never fed to the optimizer.
    pub i_l_t_oracle: f64,
    pub src_acc: f64,
    pub tgt_acc: f64,
    /// Wall-clock milliseconds since the start of the run.
    pub wall_ms: f64,
}

/// Effective adversarial weight at a step: linear ramp from 0 over the
/// first `warmup_frac` of steps, then the configured value.
pub fn effective_lambda_d(lambda_d: f64, warmup_frac: f64, step: u64, steps: u64) -> f64 {
    let warmup_steps = (warmup_frac * steps as f64).round() as u64;
    if warmup_steps == 0 || step >= warmup_steps {
        lambda_d
    } else {
        lambda_d * step as f64 / warmup_steps as f64
    }
}

/// First/second moment state for Adam, aligned with the canonical
/// parameter traversal order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.numel()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// Standard bias-corrected adaptive-moment update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let tensors = params.tensors_mut();
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(Error::contract(format!(
            "adam_step: {} tensors, {} grads, {} states",
            tensors.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((tensor, grad), (m, v)) in tensors
        .iter()
        .zip(grads)
        .zip(state.m.iter().zip(state.v.iter()))
    {
        if tensor.numel() != grad.len() || m.len() != grad.len() || v.len() != grad.len() {
            return Err(Error::contract(format!(
                "adam_step: size mismatch ({} params, {} grad, {} state)",
                tensor.numel(),
                grad.len(),
                m.len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((tensor, grad), (m, v)) in tensors
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let data = tensor.data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Class probabilities for a whole dataset, in chunks. With
/// `use_posterior_mean` the latent is mu (deterministic); otherwise z is
/// sampled through the reparameterization path.
fn dataset_probs(
    params: &ModelParams,
    dataset: &LabeledDataset,
    rng: &mut RngStream,
    use_posterior_mean: bool,
) -> Result<Vec<Vec<f64>>> {
    let chunk = 512;
    let n = dataset.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = dataset.features().gather(&idx);
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let xn = g.constant(x);
        let lat = encode(&mut g, &bound, xn)?;
        let z = if use_posterior_mean {
            lat.mu
        } else {
            reparameterize(&mut g, &lat, rng)?
        };
        let probs = classify(&mut g, &bound, z)?;
        let t = g.value(probs);
        for i in 0..t.nrows() {
            out.push(t.row(i).to_vec());
        }
        start = end;
    }
    Ok(out)
}

/// Fraction of argmax-correct predictions on a labeled dataset.
pub fn evaluate(
    params: &ModelParams,
    dataset: &LabeledDataset,
    rng: &mut RngStream,
    use_posterior_mean: bool,
) -> Result<f64> {
    let probs = dataset_probs(params, dataset, rng, use_posterior_mean)?;
    let labels = dataset.labels_for_eval();
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            argmax == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Dataset-level lower bound on I(Y;Z) using posterior-mean latents.
fn mi_lower_bound_on_dataset(params: &ModelParams, dataset: &LabeledDataset) -> Result<f64> {
    let mut unused = RngStream::new(0);
    let probs = dataset_probs(params, dataset, &mut unused, true)?;
    let flat: Vec<f64> = probs.iter().flatten().copied().collect();
    let k = dataset.num_classes();
    let tensor = crate::autodiff::Tensor::new(vec![dataset.len(), k], flat)?;
    let labels = dataset.labels_for_eval();
    let marginal = empirical_label_marginal(labels, k);
    mi_lower_bound_labels(&tensor, labels, &marginal)
}

/// Run the full optimization loop: sample a domain batch, evaluate the
/// composite objective, backpropagate, and apply Adam, recording metrics
/// every `eval_every` steps (plus the final step). Deterministic in
/// everything except `wall_ms` given (config, data).
pub fn train(
    config: &TrainConfig,
    source: &LabeledDataset,
    target: &LabeledDataset,
) -> Result<(ModelParams, Vec<MetricsRecord>)> {
    config.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::contract(format!(
            "source dim {} != target dim {}",
            source.dim(),
            target.dim()
        )));
    }
    let arch = Architecture {
        d_x: source.dim(),
        hidden: config.hidden,
        d_z: config.d_z,
        num_classes: source.num_classes(),
    };
    let root = RngStream::new(config.seed);
    let mut init_rng = root.derive(1);
    let mut eps_rng = root.derive(2);
    let batch_rng = root.derive(3);
    let mut eval_rng = root.derive(4);

    let mut params = ModelParams::init(arch, &mut init_rng);
    let mut adam = AdamState::new(&params);
    let mut records = Vec::new();
    if config.steps == 0 {
        return Ok((params, records));
    }
    let mut batches = BatchIterator::new(
        source,
        target.features(),
        config.batch_source,
        config.batch_target,
        batch_rng,
    )?;

    let start = Instant::now();
    for step in 0..config.steps {
        let mut weights = config.weights();
        weights.lambda_d =
            effective_lambda_d(config.lambda_d, config.warmup_frac, step, config.steps);
        let batch = batches.next_batch();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let (total, breakdown) =
            total_objective(&mut g, &bound, &batch, &weights, EpsSource::Stream(&mut eps_rng))?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                breakdown: breakdown.to_string(),
            });
        }
        if step % config.eval_every == 0 || step == config.steps - 1 {
            let src_acc = evaluate(&params, source, &mut eval_rng, true)?;
            let tgt_acc = evaluate(&params, target, &mut eval_rng, true)?;
            let i_l_t_oracle = mi_lower_bound_on_dataset(&params, target)?;
            records.push(MetricsRecord {
                step,
                breakdown,
                i_l_t_oracle,
                src_acc,
                tgt_acc,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        g.backward(total)?;
        let grads = collect_grads(&g, &bound);
        adam_step(
            &mut params,
            &grads,
            &mut adam,
            config.lr,
            config.beta1,
            config.beta2,
            config.adam_eps,
        )?;
    }
    Ok((params, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_nuisance_task, generate_rotated_moons, SyntheticSpec};

    #[test]
    fn warmup_schedule_boundaries() {
        // Step 0 is exactly 0; the boundary step is exactly lambda_d.
        let steps = 1000;
        let lambda = 0.8;
        assert_eq!(effective_lambda_d(lambda, 0.2, 0, steps), 0.0);
        assert_eq!(effective_lambda_d(lambda, 0.2, 200, steps), lambda);
        assert_eq!(effective_lambda_d(lambda, 0.2, 999, steps), lambda);
        let mid = effective_lambda_d(lambda, 0.2, 100, steps);
        assert!((mid - 0.4).abs() < 1e-15);
        // No warm-up: full weight from step 0.
        assert_eq!(effective_lambda_d(lambda, 0.0, 0, steps), lambda);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut rng = RngStream::new(1);
        let arch = Architecture {
            d_x: 3,
            hidden: 4,
            d_z: 2,
            num_classes: 2,
        };
        let mut params = ModelParams::init(arch, &mut rng);
        let before = params.to_flat();
        let mut state = AdamState::new(&params);
        let grads: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        }
        assert_eq!(params.to_flat(), before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // From zero state with constant gradient g, the bias-corrected first
        // step is lr * g / (|g| + eps) ~ lr * sign(g).
        let mut rng = RngStream::new(2);
        let arch = Architecture {
            d_x: 3,
            hidden: 4,
            d_z: 2,
            num_classes: 2,
        };
        let mut params = ModelParams::init(arch, &mut rng);
        let before = params.to_flat();
        let mut state = AdamState::new(&params);
        let grads: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.37; t.numel()])
            .collect();
        let lr = 1e-3;
        adam_step(&mut params, &grads, &mut state, lr, 0.9, 0.999, 1e-8).unwrap();
        let after = params.to_flat();
        for (a, b) in before.iter().zip(&after) {
            let delta = a - b;
            assert!((delta - lr).abs() < 1e-7, "delta {delta}");
        }
    }

    #[test]
    fn adam_matches_independent_scalar_oracle() {
        // Ten steps on a single coordinate against a from-scratch scalar
        // implementation of the same update.
        let arch = Architecture {
            d_x: 1,
            hidden: 1,
            d_z: 1,
            num_classes: 2,
        };
        let mut rng = RngStream::new(3);
        let mut params = ModelParams::init(arch, &mut rng);
        let mut state = AdamState::new(&params);
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);

        // Scalar oracle for the first coordinate of enc1.weight.
        let mut x = params.to_flat()[0];
        let (mut m, mut v) = (0.0, 0.0);
        let grad_seq: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        for (t, &g) in grad_seq.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + eps);
        }

        for &g in &grad_seq {
            let grads: Vec<Vec<f64>> = params
                .tensors()
                .iter()
                .map(|(_, t)| vec![g; t.numel()])
                .collect();
            adam_step(&mut params, &grads, &mut state, lr, b1, b2, eps).unwrap();
        }
        assert!(
            (params.to_flat()[0] - x).abs() < 1e-12,
            "{} vs oracle {x}",
            params.to_flat()[0]
        );
    }

    #[test]
    fn adam_shape_mismatch_is_contract_error() {
        let mut rng = RngStream::new(4);
        let arch = Architecture {
            d_x: 3,
            hidden: 4,
            d_z: 2,
            num_classes: 2,
        };
        let mut params = ModelParams::init(arch, &mut rng);
        let mut state = AdamState::new(&params);
        let grads = vec![vec![0.0; 3]];
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_steps_returns_initial_params_and_no_metrics() {
        let pair = generate_nuisance_task(&SyntheticSpec {
            n_per_domain: 50,
            ..SyntheticSpec::nuisance_defaults()
        })
        .unwrap();
        let config = TrainConfig {
            steps: 0,
            batch_source: 16,
            batch_target: 16,
            ..Default::default()
        };
        let (params, records) = train(&config, &pair.source, &pair.target).unwrap();
        assert!(records.is_empty());
        let mut rng = RngStream::new(config.seed).derive(1);
        let arch = Architecture {
            d_x: pair.source.dim(),
            hidden: config.hidden,
            d_z: config.d_z,
            num_classes: 2,
        };
        let fresh = ModelParams::init(arch, &mut rng);
        assert_eq!(params.to_flat(), fresh.to_flat());
    }

    #[test]
    fn same_seed_bit_identical_metric_streams() {
        let pair = generate_nuisance_task(&SyntheticSpec {
            n_per_domain: 200,
            ..SyntheticSpec::nuisance_defaults()
        })
        .unwrap();
        let config = TrainConfig {
            steps: 60,
            eval_every: 20,
            batch_source: 32,
            batch_target: 32,
            seed: 42,
            ..Default::default()
        };
        let (p1, r1) = train(&config, &pair.source, &pair.target).unwrap();
        let (p2, r2) = train(&config, &pair.source, &pair.target).unwrap();
        assert_eq!(p1.to_flat(), p2.to_flat());
        assert_eq!(r1.len(), r2.len());
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.breakdown.total.to_bits(), b.breakdown.total.to_bits());
            assert_eq!(a.src_acc.to_bits(), b.src_acc.to_bits());
            assert_eq!(a.tgt_acc.to_bits(), b.tgt_acc.to_bits());
            assert_eq!(a.i_l_t_oracle.to_bits(), b.i_l_t_oracle.to_bits());
        }
    }

    #[test]
    fn source_only_reaches_high_source_accuracy() {
        // The signal dims separate the classes by construction; with all
        // regularizers off the classifier must fit the source domain.
        let pair = generate_nuisance_task(&SyntheticSpec::nuisance_defaults()).unwrap();
        let config = TrainConfig {
            lambda_d: 0.0,
            lambda_ce: 0.0,
            lambda_s: 0.0,
            lambda_t: 0.0,
            steps: 2000,
            seed: 5,
            ..Default::default()
        };
        let (params, _) = train(&config, &pair.source, &pair.target).unwrap();
        let mut rng = RngStream::new(0);
        let acc = evaluate(&params, &pair.source, &mut rng, true).unwrap();
        assert!(acc >= 0.99, "source accuracy {acc}");
    }

    #[test]
    fn classification_loss_decreases_on_default_tasks() {
        // Averaged over 5 seeds, step-0 l_cls exceeds the final recorded
        // l_cls after 500 steps, on both synthetic default tasks.
        let nuisance = generate_nuisance_task(&SyntheticSpec {
            n_per_domain: 500,
            ..SyntheticSpec::nuisance_defaults()
        })
        .unwrap();
        let moons = generate_rotated_moons(&SyntheticSpec {
            n_per_domain: 500,
            ..SyntheticSpec::moons_defaults()
        })
        .unwrap();
        let tasks: Vec<(&LabeledDataset, &LabeledDataset)> = vec![
            (&nuisance.source, &nuisance.target),
            (&moons.0, &moons.1),
        ];
        for (source, target) in tasks {
            let mut initial_sum = 0.0;
            let mut final_sum = 0.0;
            for seed in 0..5 {
                let config = TrainConfig {
                    steps: 500,
                    eval_every: 100,
                    batch_source: 32,
                    batch_target: 32,
                    seed,
                    ..Default::default()
                };
                let (_, records) = train(&config, source, target).unwrap();
                initial_sum += records.first().unwrap().breakdown.l_cls;
                final_sum += records.last().unwrap().breakdown.l_cls;
            }
            assert!(
                initial_sum > final_sum,
                "l_cls did not decrease: {initial_sum} -> {final_sum}"
            );
        }
    }

    #[test]
    fn evaluate_posterior_mean_is_deterministic() {
        let pair = generate_nuisance_task(&SyntheticSpec {
            n_per_domain: 100,
            ..SyntheticSpec::nuisance_defaults()
        })
        .unwrap();
        let mut rng = RngStream::new(9);
        let arch = Architecture {
            d_x: pair.source.dim(),
            hidden: 16,
            d_z: 4,
            num_classes: 2,
        };
        let params = ModelParams::init(arch, &mut rng);
        let mut r1 = RngStream::new(1);
        let mut r2 = RngStream::new(2);
        let a1 = evaluate(&params, &pair.source, &mut r1, true).unwrap();
        let a2 = evaluate(&params, &pair.source, &mut r2, true).unwrap();
        assert_eq!(a1.to_bits(), a2.to_bits());
    }

    #[test]
    fn non_finite_input_aborts_with_diagnostics() {
        let x = vec![f64::NAN; 8];
        let source = LabeledDataset::new(4, 2, x, vec![0, 1, 0, 1], 2).unwrap();
        let tx: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let target = LabeledDataset::new(4, 2, tx, vec![0, 1, 0, 1], 2).unwrap();
        let config = TrainConfig {
            steps: 3,
            batch_source: 2,
            batch_target: 2,
            ..Default::default()
        };
        match train(&config, &source, &target) {
            Err(Error::NonFiniteLoss { step, breakdown }) => {
                assert_eq!(step, 0);
                assert!(breakdown.contains("l_cls"));
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }
}
