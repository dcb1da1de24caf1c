//! Seeded synthetic domain pairs.
//!
//! The nuisance-correlation task plants a "background" code in the inputs
//! whose marginal distribution is identical in both domains but which is
//! correlated with the class label only in the source domain: a feature a
//! marginal-matching method has no reason to remove and a classifier every
//! reason to exploit. The rotated-moons task is a plain low-dimensional
//! covariate shift with clean clusters.

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

const SIGNAL_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    NuisanceCorrelation,
    RotatedMoons,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: TaskKind,
    /// Examples per domain.
    pub n_per_domain: usize,
    pub num_classes: usize,
    pub d_signal: usize,
    pub d_nuisance: usize,
    /// Label-code correlation strength in the source domain, in [0, 1].
    pub rho: f64,
    /// Target rotation in degrees (moons only).
    pub angle_deg: f64,
    /// Per-dimension Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn nuisance_defaults() -> Self {
        SyntheticSpec {
            kind: TaskKind::NuisanceCorrelation,
            n_per_domain: 2000,
            num_classes: 2,
            d_signal: 2,
            d_nuisance: 8,
            rho: 0.95,
            angle_deg: 0.0,
            noise: 0.5,
            seed: 7,
        }
    }

    pub fn moons_defaults() -> Self {
        SyntheticSpec {
            kind: TaskKind::RotatedMoons,
            n_per_domain: 2000,
            num_classes: 2,
            d_signal: 2,
            d_nuisance: 0,
            rho: 0.0,
            angle_deg: 35.0,
            noise: 0.1,
            seed: 7,
        }
    }

    fn validate_nuisance(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::contract("nuisance task requires K >= 2"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::contract(format!("rho must be in [0,1], got {}", self.rho)));
        }
        if self.d_signal < 2 {
            return Err(Error::contract("nuisance task requires d_signal >= 2"));
        }
        if self.d_nuisance < self.num_classes {
            return Err(Error::contract("nuisance task requires d_nuisance >= K"));
        }
        if self.n_per_domain == 0 {
            return Err(Error::contract("n_per_domain must be positive"));
        }
        if self.noise <= 0.0 {
            return Err(Error::contract("noise must be positive"));
        }
        Ok(())
    }
}

pub struct NuisancePair {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    /// Number of independent background-code factors in the nuisance dims.
    pub factors: usize,
    /// Code radius within each factor's block of K dims.
    pub code_radius: f64,
    spec: SyntheticSpec,
}

impl NuisancePair {
    /// Nearest-mean decode of one factor's code from the nuisance dims of a
    /// raw example row. Diagnostic only (plug-in MI estimation in tests).
    pub fn decode_factor(&self, row: &[f64], factor: usize) -> usize {
        let k = self.spec.num_classes;
        let block = &row[self.spec.d_signal + factor * k..self.spec.d_signal + (factor + 1) * k];
        (0..k)
            .min_by(|&a, &b| {
                let da = dist_to_code(block, a, self.code_radius);
                let db = dist_to_code(block, b, self.code_radius);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    }
}

fn dist_to_code(block: &[f64], code: usize, radius: f64) -> f64 {
    block
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = if i == code { radius } else { 0.0 };
            (v - m) * (v - m)
        })
        .sum()
}

/// Class-conditional signal Gaussians identical in both domains, plus a
/// bank of independent categorical background codes in the nuisance dims.
/// Each code's marginal matches across domains, but each tracks the label
/// with probability `rho` in source and is label-independent in target: a
/// high-entropy shortcut that is predictive where it was learned and pure
/// noise where it matters.
pub fn generate_nuisance_task(spec: &SyntheticSpec) -> Result<NuisancePair> {
    spec.validate_nuisance()?;
    let k = spec.num_classes;
    let d = spec.d_signal + spec.d_nuisance;
    // One code factor per K nuisance dims; leftover dims are pure noise.
    let factors = spec.d_nuisance / k;

    // Class means on a circle in the first two signal dims. Each factor's
    // codes sit on its own block of orthogonal axes, with the radius chosen
    // so the total mean-structure variance of the nuisance subspace equals
    // the signal subspace's (noise is identical per dim everywhere): neither
    // subspace dominates by scale, and the shift lives purely in the
    // label-code coupling.
    let class_means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            let mut m = vec![0.0; spec.d_signal];
            m[0] = SIGNAL_RADIUS * angle.cos();
            m[1] = SIGNAL_RADIUS * angle.sin();
            m
        })
        .collect();
    let code_radius =
        SIGNAL_RADIUS * (k as f64 / (factors as f64 * (k as f64 - 1.0))).sqrt();

    let gen_domain = |rng: &mut RngStream, source: bool| -> Result<LabeledDataset> {
        let n = spec.n_per_domain;
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.pick(k);
            for j in 0..spec.d_signal {
                x.push(class_means[label][j] + spec.noise * rng.next_normal());
            }
            for _ in 0..factors {
                let code = if source && rng.next_uniform() < spec.rho {
                    label
                } else {
                    rng.pick(k)
                };
                for j in 0..k {
                    let m = if j == code { code_radius } else { 0.0 };
                    x.push(m + spec.noise * rng.next_normal());
                }
            }
            for _ in factors * k..spec.d_nuisance {
                x.push(spec.noise * rng.next_normal());
            }
            y.push(label);
        }
        LabeledDataset::new(n, d, x, y, k)
    };

    let base = RngStream::new(spec.seed);
    let mut src_rng = base.derive(0x5151);
    let mut tgt_rng = base.derive(0x5252);
    Ok(NuisancePair {
        source: gen_domain(&mut src_rng, true)?,
        target: gen_domain(&mut tgt_rng, false)?,
        factors,
        code_radius,
        spec: spec.clone(),
    })
}

/// Two interleaving half-circles with Gaussian noise; the target domain is
/// the same point set rotated about the origin by `angle_deg`.
pub fn generate_rotated_moons(spec: &SyntheticSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.num_classes != 2 {
        return Err(Error::contract("rotated moons requires K = 2"));
    }
    if spec.n_per_domain == 0 {
        return Err(Error::contract("n_per_domain must be positive"));
    }
    let n = spec.n_per_domain;
    let mut rng = RngStream::new(spec.seed).derive(0x6161);
    let mut base = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.pick(2);
        let t = rng.uniform_in(0.0, std::f64::consts::PI);
        let (mut px, mut py) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        px += spec.noise * rng.next_normal();
        py += spec.noise * rng.next_normal();
        base.push(px);
        base.push(py);
        labels.push(label);
    }
    let angle = spec.angle_deg.to_radians();
    let (c, s) = (angle.cos(), angle.sin());
    let mut rotated = Vec::with_capacity(n * 2);
    for i in 0..n {
        let (px, py) = (base[2 * i], base[2 * i + 1]);
        rotated.push(px * c - py * s);
        rotated.push(px * s + py * c);
    }
    let source = LabeledDataset::new(n, 2, base, labels.clone(), 2)?;
    let target = LabeledDataset::new(n, 2, rotated, labels, 2)?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_and_var(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = values.collect();
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        (mean, var, n)
    }

    #[test]
    fn rho_zero_matches_distributions() {
        let spec = SyntheticSpec {
            rho: 0.0,
            n_per_domain: 4000,
            ..SyntheticSpec::nuisance_defaults()
        };
        let pair = generate_nuisance_task(&spec).unwrap();
        let d = pair.source.dim();
        for j in 0..d {
            let (ms, vs, n) = mean_and_var((0..spec.n_per_domain).map(|i| pair.source.feature_row(i)[j]));
            let (mt, vt, _) = mean_and_var((0..spec.n_per_domain).map(|i| pair.target.feature_row(i)[j]));
            let se = ((vs + vt) / n as f64).sqrt();
            assert!(
                (ms - mt).abs() < 3.0 * se,
                "dim {j}: source mean {ms} vs target {mt} (3se {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn nuisance_marginals_match_for_any_rho() {
        for rho in [0.0, 0.5, 0.95, 1.0] {
            let spec = SyntheticSpec {
                rho,
                n_per_domain: 4000,
                ..SyntheticSpec::nuisance_defaults()
            };
            let pair = generate_nuisance_task(&spec).unwrap();
            for j in spec.d_signal..spec.d_signal + spec.d_nuisance {
                let (ms, vs, n) =
                    mean_and_var((0..spec.n_per_domain).map(|i| pair.source.feature_row(i)[j]));
                let (mt, vt, _) =
                    mean_and_var((0..spec.n_per_domain).map(|i| pair.target.feature_row(i)[j]));
                let se_mean = ((vs + vt) / n as f64).sqrt();
                assert!(
                    (ms - mt).abs() < 3.0 * se_mean,
                    "rho {rho} dim {j}: means {ms} vs {mt}"
                );
                // Variance of the sample variance ~ 2 sigma^4 / (n-1).
                let se_var = ((2.0 * (vs * vs + vt * vt)) / (n as f64 - 1.0)).sqrt();
                assert!(
                    (vs - vt).abs() < 3.0 * se_var,
                    "rho {rho} dim {j}: vars {vs} vs {vt}"
                );
            }
        }
    }

    /// Plug-in MI between the label and the decoded code of one factor.
    fn label_code_mi(pair: &NuisancePair, ds: &LabeledDataset, factor: usize) -> f64 {
        let k = ds.num_classes();
        let mut joint = vec![0.0; k * k];
        let n = ds.len();
        for i in 0..n {
            let code = pair.decode_factor(ds.feature_row(i), factor);
            joint[ds.labels_for_eval()[i] * k + code] += 1.0 / n as f64;
        }
        let mut py = vec![0.0; k];
        let mut pc = vec![0.0; k];
        for yi in 0..k {
            for ci in 0..k {
                py[yi] += joint[yi * k + ci];
                pc[ci] += joint[yi * k + ci];
            }
        }
        let mut mi = 0.0;
        for yi in 0..k {
            for ci in 0..k {
                let p = joint[yi * k + ci];
                if p > 0.0 {
                    mi += p * (p / (py[yi] * pc[ci])).ln();
                }
            }
        }
        mi
    }

    #[test]
    fn rho_one_gives_ln2_source_mi_and_zero_target_mi() {
        // Low noise keeps the nearest-mean decode essentially exact, so the
        // plug-in estimate isolates the label-code coupling.
        let spec = SyntheticSpec {
            rho: 1.0,
            n_per_domain: 10_000,
            noise: 0.25,
            ..SyntheticSpec::nuisance_defaults()
        };
        let pair = generate_nuisance_task(&spec).unwrap();
        for factor in 0..pair.factors {
            let mi_s = label_code_mi(&pair, &pair.source, factor);
            let mi_t = label_code_mi(&pair, &pair.target, factor);
            assert!(
                (mi_s - std::f64::consts::LN_2).abs() < 0.02,
                "factor {factor}: source MI {mi_s} should be ~ln 2"
            );
            assert!(mi_t.abs() < 0.02, "factor {factor}: target MI {mi_t} should be ~0");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = SyntheticSpec::nuisance_defaults();
        let a = generate_nuisance_task(&spec).unwrap();
        let b = generate_nuisance_task(&spec).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);

        let spec = SyntheticSpec::moons_defaults();
        let (s1, t1) = generate_rotated_moons(&spec).unwrap();
        let (s2, t2) = generate_rotated_moons(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSpec::nuisance_defaults();
        spec.rho = 1.5;
        assert!(generate_nuisance_task(&spec).is_err());
        let mut spec = SyntheticSpec::moons_defaults();
        spec.num_classes = 3;
        assert!(generate_rotated_moons(&spec).is_err());
    }

    #[test]
    fn moons_angle_zero_identical() {
        let spec = SyntheticSpec {
            angle_deg: 0.0,
            ..SyntheticSpec::moons_defaults()
        };
        let (s, t) = generate_rotated_moons(&spec).unwrap();
        for i in 0..s.len() {
            for j in 0..2 {
                assert!((s.feature_row(i)[j] - t.feature_row(i)[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn moons_half_turn_is_negation() {
        let spec = SyntheticSpec {
            angle_deg: 180.0,
            ..SyntheticSpec::moons_defaults()
        };
        let (s, t) = generate_rotated_moons(&spec).unwrap();
        for i in 0..s.len() {
            for j in 0..2 {
                assert!(
                    (s.feature_row(i)[j] + t.feature_row(i)[j]).abs() < 1e-12,
                    "row {i} dim {j}"
                );
            }
        }
    }

    #[test]
    fn moons_class_means_match_analytic_centroids() {
        // For t ~ U[0, pi]: E[cos t] = 0, E[sin t] = 2/pi. Class 1 mirrors
        // through (0.5, 0.25).
        let spec = SyntheticSpec {
            n_per_domain: 1000,
            angle_deg: 0.0,
            ..SyntheticSpec::moons_defaults()
        };
        let (s, _) = generate_rotated_moons(&spec).unwrap();
        let two_over_pi = 2.0 / std::f64::consts::PI;
        let expect = [
            [0.0, two_over_pi],
            [1.0, 0.5 - two_over_pi],
        ];
        for class in 0..2 {
            let rows: Vec<usize> = (0..s.len())
                .filter(|&i| s.labels_for_eval()[i] == class)
                .collect();
            for j in 0..2 {
                let (mean, var, n) = mean_and_var(rows.iter().map(|&i| s.feature_row(i)[j]));
                let se = (var / n as f64).sqrt();
                assert!(
                    (mean - expect[class][j]).abs() < 3.0 * se,
                    "class {class} dim {j}: {mean} vs {} (3se {})",
                    expect[class][j],
                    3.0 * se
                );
            }
        }
    }
}
