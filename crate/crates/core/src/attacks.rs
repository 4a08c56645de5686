//! Minimal-perturbation adversarial distance.
//!
//! [`adv_distance`] bisects over the perturbation budget, using an untargeted
//! projected-gradient attack as the feasibility oracle. The final bracket width
//! is `eps_upper * 2^-bisection_iters`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{ensure, Result};
use crate::nn::ModelCheckpoint;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    /// Norm of the dual space (l1 for linf, l2 for l2).
    pub fn dual_of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => Norm::L2.of(v),
            Norm::Linf => v.iter().map(|x| x.abs()).sum(),
        }
    }

    fn project(self, delta: &mut [f64], eps: f64) {
        match self {
            Norm::L2 => {
                let n = Norm::L2.of(delta);
                if n > eps {
                    let s = eps / n;
                    delta.iter_mut().for_each(|d| *d *= s);
                }
            }
            Norm::Linf => delta.iter_mut().for_each(|d| *d = d.clamp(-eps, eps)),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(format!("unknown norm {other:?}")),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: Norm,
    pub pgd_steps: usize,
    /// PGD step size as a fraction of the current budget.
    pub step_fraction: f64,
    pub bisection_iters: usize,
    /// Upper end of the bisection bracket.
    pub eps_upper: f64,
    pub seed: u64,
    /// Extra PGD runs from random starts inside the ball, tried when the
    /// deterministic run from `x` fails.
    pub restarts: usize,
    /// Optional coordinate box (e.g. `[0, 1]` for images) adversarial inputs must stay in.
    pub clip_box: Option<(f64, f64)>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            norm: Norm::L2,
            pgd_steps: 40,
            step_fraction: 0.25,
            bisection_iters: 12,
            eps_upper: 10.0,
            seed: 0,
            restarts: 0,
            clip_box: None,
        }
    }
}

impl AttackConfig {
    /// Sets `eps_upper` to the diameter (in this config's norm) of the
    /// bounding box of `dataset`'s features.
    pub fn with_box_diameter(mut self, dataset: &LabeledDataset) -> Self {
        self.eps_upper = feature_box_diameter(dataset, self.norm);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.pgd_steps > 0, "pgd_steps must be positive");
        ensure!(self.step_fraction > 0.0 && self.step_fraction <= 1.0, "step_fraction must be in (0, 1]");
        ensure!(self.bisection_iters > 0, "bisection_iters must be positive");
        ensure!(self.eps_upper > 0.0 && self.eps_upper.is_finite(), "eps_upper must be positive and finite");
        if let Some((lo, hi)) = self.clip_box {
            ensure!(lo < hi, "clip box must be nonempty");
        }
        Ok(())
    }
}

pub fn feature_box_diameter(dataset: &LabeledDataset, norm: Norm) -> f64 {
    let d = dataset.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in dataset.rows() {
        for j in 0..d {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let span: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(0.0)).collect();
    let diameter = norm.of(&span);
    if diameter > 0.0 {
        diameter
    } else {
        1.0
    }
}

/// Outcome of a distance search. `distance` is `+inf` when no adversarial
/// example was found within `eps_upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialResult {
    pub distance: f64,
    pub perturbation: Option<Vec<f64>>,
    pub flipped_to: Option<usize>,
    pub iterations_used: usize,
}

impl AdversarialResult {
    pub fn is_finite(&self) -> bool {
        self.distance.is_finite()
    }
}

/// A successful PGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdSuccess {
    pub perturbation: Vec<f64>,
    pub flipped_to: usize,
    pub iterations: usize,
}

fn apply(x: &[f64], delta: &[f64]) -> Vec<f64> {
    x.iter().zip(delta).map(|(a, d)| a + d).collect()
}

/// Untargeted PGD inside the `eps`-ball around `x`.
///
/// Each step ascends the cross-entropy at `true_label` (signed gradient for
/// linf, normalised gradient for l2) by `step_fraction * eps`, then projects
/// back onto the ball. Returns as soon as the argmax differs from `true_label`.
/// An input that is already misclassified succeeds immediately with a zero
/// perturbation.
#[allow(clippy::too_many_arguments)]
pub fn pgd_attack(
    model: &ModelCheckpoint,
    x: &[f64],
    true_label: usize,
    norm: Norm,
    eps: f64,
    steps: usize,
    step_fraction: f64,
    clip_box: Option<(f64, f64)>,
    start: Option<&[f64]>,
) -> Result<Option<PgdSuccess>> {
    ensure!(eps > 0.0, "eps must be positive");
    ensure!(true_label < model.spec().num_classes, "label {true_label} out of range");
    let original = model.predict(x)?;
    if original != true_label {
        return Ok(Some(PgdSuccess { perturbation: vec![0.0; x.len()], flipped_to: original, iterations: 0 }));
    }
    let net = model.network();
    let alpha = step_fraction * eps;
    let mut delta = match start {
        Some(s) => {
            let mut d = s.to_vec();
            norm.project(&mut d, eps);
            d
        }
        None => vec![0.0; x.len()],
    };
    let clip = |delta: &mut [f64]| {
        if let Some((lo, hi)) = clip_box {
            for (d, &xi) in delta.iter_mut().zip(x) {
                *d = (xi + *d).clamp(lo, hi) - xi;
            }
        }
    };
    clip(&mut delta);
    let mut grad = vec![0.0; x.len()];
    for step in 1..=steps {
        let point = apply(x, &delta);
        net.backprop(&point, true_label, None, Some(&mut grad));
        match norm {
            Norm::Linf => {
                for (d, g) in delta.iter_mut().zip(&grad) {
                    if *g != 0.0 {
                        *d += alpha * g.signum();
                    }
                }
            }
            Norm::L2 => {
                let gn = Norm::L2.of(&grad);
                if gn == 0.0 || !gn.is_finite() {
                    return Ok(None);
                }
                for (d, g) in delta.iter_mut().zip(&grad) {
                    *d += alpha * g / gn;
                }
            }
        }
        norm.project(&mut delta, eps);
        clip(&mut delta);
        let candidate = apply(x, &delta);
        let label = crate::nn::ProbVector::from_logits(&net.logits(&candidate)).argmax();
        if label != original {
            return Ok(Some(PgdSuccess { perturbation: delta, flipped_to: label, iterations: step }));
        }
    }
    Ok(None)
}

fn random_start<R: Rng>(norm: Norm, dim: usize, eps: f64, rng: &mut R) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..dim).map(|_| rng.random_range(-eps..=eps)).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = Norm::L2.of(&dir).max(f64::MIN_POSITIVE);
            let r = eps * rng.random::<f64>().powf(1.0 / dim as f64);
            dir.iter().map(|d| d * r / n).collect()
        }
    }
}

fn feasible(
    model: &ModelCheckpoint,
    x: &[f64],
    label: usize,
    cfg: &AttackConfig,
    eps: f64,
    stream: RngStream,
    used: &mut usize,
) -> Result<Option<PgdSuccess>> {
    let run = |start: Option<&[f64]>, used: &mut usize| -> Result<Option<PgdSuccess>> {
        let out = pgd_attack(model, x, label, cfg.norm, eps, cfg.pgd_steps, cfg.step_fraction, cfg.clip_box, start)?;
        *used += out.as_ref().map_or(cfg.pgd_steps, |s| s.iterations);
        Ok(out)
    };
    if let Some(hit) = run(None, used)? {
        return Ok(Some(hit));
    }
    let mut rng = stream.rng();
    for _ in 0..cfg.restarts {
        let start = random_start(cfg.norm, x.len(), eps, &mut rng);
        if let Some(hit) = run(Some(&start), used)? {
            return Ok(Some(hit));
        }
    }
    Ok(None)
}

/// Smallest budget (up to the bisection bracket) at which PGD flips the prediction.
pub fn adv_distance(model: &ModelCheckpoint, x: &[f64], true_label: usize, cfg: &AttackConfig) -> Result<AdversarialResult> {
    adv_distance_with_stream(model, x, true_label, cfg, RngStream::new(cfg.seed, 0))
}

/// As [`adv_distance`], drawing restart randomness from `stream`.
pub fn adv_distance_with_stream(
    model: &ModelCheckpoint,
    x: &[f64],
    true_label: usize,
    cfg: &AttackConfig,
    stream: RngStream,
) -> Result<AdversarialResult> {
    cfg.validate()?;
    let predicted = model.predict(x)?;
    ensure!(true_label < model.spec().num_classes, "label {true_label} out of range");
    if predicted != true_label {
        return Ok(AdversarialResult {
            distance: 0.0,
            perturbation: Some(vec![0.0; x.len()]),
            flipped_to: Some(predicted),
            iterations_used: 0,
        });
    }
    let mut used = 0;
    let Some(mut best) = feasible(model, x, true_label, cfg, cfg.eps_upper, stream.child(0), &mut used)? else {
        return Ok(AdversarialResult { distance: f64::INFINITY, perturbation: None, flipped_to: None, iterations_used: used });
    };
    let (mut lo, mut hi) = (0.0, cfg.eps_upper);
    for i in 0..cfg.bisection_iters {
        let mid = 0.5 * (lo + hi);
        match feasible(model, x, true_label, cfg, mid, stream.child(i as u64 + 1), &mut used)? {
            Some(hit) => {
                hi = mid;
                best = hit;
            }
            None => lo = mid,
        }
    }
    Ok(AdversarialResult {
        distance: hi,
        perturbation: Some(best.perturbation),
        flipped_to: Some(best.flipped_to),
        iterations_used: used,
    })
}

/// Exact distance from `x` to the nearest decision boundary of a linear
/// softmax model: the minimum over competing classes `j` of
/// `g_j(x) / ||w_pred - w_j||_dual`, with `g_j` the logit gap.
pub fn linear_margin_distance(model: &ModelCheckpoint, x: &[f64], norm: Norm) -> Result<f64> {
    ensure!(model.spec().is_linear(), "closed-form margin needs a model without hidden layers");
    let logits = model.logits(x)?;
    let pred = crate::nn::ProbVector::from_logits(&logits).argmax();
    let layer = model.layout()[0];
    let w = &model.params()[layer.weight_offset..layer.bias_offset];
    let row = |c: usize| &w[c * layer.fan_in..(c + 1) * layer.fan_in];
    let mut best = f64::INFINITY;
    for j in (0..layer.fan_out).filter(|&j| j != pred) {
        let diff: Vec<f64> = row(pred).iter().zip(row(j)).map(|(a, b)| a - b).collect();
        let gap = logits[pred] - logits[j];
        let scale = norm.dual_of(&diff);
        let d = if scale > 0.0 {
            gap / scale
        } else if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        best = best.min(d);
    }
    Ok(best.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelSpec, Provenance};

    fn linear(w0: [f64; 2], w1: [f64; 2], b: [f64; 2]) -> ModelCheckpoint {
        let spec = ModelSpec::linear(2, 2).unwrap();
        ModelCheckpoint::new(spec, vec![w0[0], w0[1], w1[0], w1[1], b[0], b[1]], Provenance::default()).unwrap()
    }

    #[test]
    fn closed_form_margin() {
        // w1 - w0 = (3, 4), so at g = 5 the l2 distance is 5 / 5 = 1 and the linf one 5 / 7.
        let m = linear([0.0, 0.0], [3.0, 4.0], [0.0, 0.0]);
        let x = [1.0, 0.5];
        assert!((linear_margin_distance(&m, &x, Norm::L2).unwrap() - 1.0).abs() < 1e-12);
        assert!((linear_margin_distance(&m, &x, Norm::Linf).unwrap() - 5.0 / 7.0).abs() < 1e-12);
        assert_eq!(linear_margin_distance(&m, &[0.0, 0.0], Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_rejects_hidden_layers() {
        let m = ModelCheckpoint::zeros(ModelSpec::mlp(2, &[3], 2).unwrap()).unwrap();
        assert!(linear_margin_distance(&m, &[0.0, 0.0], Norm::L2).is_err());
    }

    #[test]
    fn misclassified_input_has_zero_distance() {
        let m = linear([0.0, 0.0], [3.0, 4.0], [0.0, 0.0]);
        let r = adv_distance(&m, &[1.0, 1.0], 0, &AttackConfig::default()).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.flipped_to, Some(1));
        let hit = pgd_attack(&m, &[1.0, 1.0], 0, Norm::L2, 0.5, 10, 0.25, None, None).unwrap().unwrap();
        assert!(hit.perturbation.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn tiny_budget_fails_and_large_budget_succeeds() {
        let m = linear([0.0, 0.0], [3.0, 4.0], [0.0, 0.0]);
        let x = [2.0, 2.0];
        assert!(pgd_attack(&m, &x, 1, Norm::Linf, 1e-12, 40, 0.25, None, None).unwrap().is_none());
        let hit = pgd_attack(&m, &x, 1, Norm::Linf, 10.0, 40, 0.25, None, None).unwrap().unwrap();
        assert!(Norm::Linf.of(&hit.perturbation) <= 10.0 * (1.0 + 1e-9));
        let adv: Vec<f64> = x.iter().zip(&hit.perturbation).map(|(a, d)| a + d).collect();
        assert_ne!(m.predict(&adv).unwrap(), 1);
    }

    #[test]
    fn bisection_matches_closed_form_on_linear_model() {
        let m = linear([0.5, -1.0], [-0.25, 0.75], [0.1, -0.3]);
        for norm in [Norm::L2, Norm::Linf] {
            let cfg = AttackConfig { norm, eps_upper: 8.0, bisection_iters: 20, ..AttackConfig::default() };
            for x in [[1.0, 2.0], [-2.0, -1.0], [0.3, 0.9]] {
                let label = m.predict(&x).unwrap();
                let r = adv_distance(&m, &x, label, &cfg).unwrap();
                let exact = linear_margin_distance(&m, &x, norm).unwrap();
                assert!((r.distance - exact).abs() <= 8.0 * 2f64.powi(-20) + 1e-9 * exact, "{norm}: {} vs {exact}", r.distance);
                let delta = r.perturbation.unwrap();
                assert!(norm.of(&delta) <= r.distance * (1.0 + 1e-6));
                let adv: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
                assert_ne!(m.predict(&adv).unwrap(), label);
            }
        }
    }

    #[test]
    fn more_bisection_never_widens() {
        let m = linear([0.5, -1.0], [-0.25, 0.75], [0.1, -0.3]);
        let x = [1.0, 2.0];
        let label = m.predict(&x).unwrap();
        let coarse = AttackConfig { bisection_iters: 6, ..AttackConfig::default() };
        let fine = AttackConfig { bisection_iters: 14, ..AttackConfig::default() };
        let a = adv_distance(&m, &x, label, &coarse).unwrap().distance;
        let b = adv_distance(&m, &x, label, &fine).unwrap().distance;
        assert!(b <= a + fine.eps_upper * 2f64.powi(-14));
    }

    #[test]
    fn unreachable_boundary_is_infinite() {
        // Class 0 wins everywhere by a constant bias: no perturbation flips it.
        let m = linear([0.0, 0.0], [0.0, 0.0], [5.0, 0.0]);
        let r = adv_distance(&m, &[0.0, 0.0], 0, &AttackConfig::default()).unwrap();
        assert!(r.distance.is_infinite());
        assert!(r.perturbation.is_none());
    }

    #[test]
    fn clip_box_is_respected() {
        let m = linear([0.0, 0.0], [3.0, 4.0], [0.0, -4.0]);
        let x = [0.2, 0.2];
        let hit = pgd_attack(&m, &x, 0, Norm::Linf, 5.0, 40, 0.25, Some((0.0, 1.0)), None).unwrap().unwrap();
        for (a, d) in x.iter().zip(&hit.perturbation) {
            assert!((0.0..=1.0).contains(&(a + d)));
        }
    }
}
