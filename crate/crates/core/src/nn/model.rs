use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation {other:?}")),
        }
    }
}

/// Architecture of a dense classifier. An empty `hidden_widths` gives a linear
/// softmax model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// Where one dense layer lives inside the flat parameter vector. Weights are
/// stored row-major as `fan_out x fan_in`, followed by `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self { input_dim, hidden_widths, num_classes, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new(), num_classes, Activation::Relu)
    }

    pub fn mlp(input_dim: usize, hidden_widths: &[usize], num_classes: usize) -> Result<Self> {
        Self::new(input_dim, hidden_widths.to_vec(), num_classes, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim > 0, "input_dim must be positive");
        ensure!(self.num_classes >= 2, "num_classes must be at least 2, got {}", self.num_classes);
        ensure!(
            self.hidden_widths.iter().all(|&w| w > 0),
            "hidden widths must be positive: {:?}",
            self.hidden_widths
        );
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_widths.is_empty()
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let layout = LayerLayout {
                    fan_in,
                    fan_out,
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                layout
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps `probs` after checking simplex membership (tolerance 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        ensure!(!probs.is_empty(), "empty probability vector");
        ensure!(
            probs.iter().all(|p| (0.0..=1.0).contains(p)),
            "probabilities must lie in [0, 1]: {probs:?}"
        );
        let total: f64 = probs.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-9, "probabilities sum to {total}, not 1");
        Ok(Self(probs))
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        Self(softmax(logits))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub stream_id: u64,
    pub dataset_fingerprint: String,
    pub config_fingerprint: String,
}

/// Immutable trained parameters plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    spec: ModelSpec,
    params: Vec<f64>,
    provenance: Provenance,
    layout: Vec<LayerLayout>,
}

impl ModelCheckpoint {
    pub fn new(spec: ModelSpec, params: Vec<f64>, provenance: Provenance) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        ensure!(
            params.len() == expected,
            "parameter count {} does not match spec ({expected})",
            params.len()
        );
        ensure!(params.iter().all(|p| p.is_finite()), "non-finite parameter in checkpoint");
        let layout = spec.layers();
        Ok(Self { spec, params, provenance, layout })
    }

    /// All-zero parameters. Useful as a degenerate model in tests.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::new(spec, vec![0.0; n], Provenance::default())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub(crate) fn network(&self) -> Network<'_> {
        Network { spec: &self.spec, layout: &self.layout, params: &self.params }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.network().logits(x))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ProbVector> {
        self.check_input(x)?;
        Ok(ProbVector(softmax(&self.network().logits(x))))
    }

    /// Predicted class (argmax of the logits).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(argmax(&self.network().logits(x)))
    }

    /// Mean cross-entropy over a batch and its exact gradient with respect to
    /// the flat parameter vector.
    pub fn loss_and_gradients(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(inputs, labels)?;
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / inputs.len() as f64;
        let net = self.network();
        let mut loss = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            loss += net.backprop(x, y, Some((&mut grad, scale)), None);
        }
        Ok((loss * scale, grad))
    }

    pub fn per_example_gradients(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_batch(inputs, labels)?;
        let net = self.network();
        Ok(inputs
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let mut g = vec![0.0; self.params.len()];
                net.backprop(x, y, Some((&mut g, 1.0)), None);
                g
            })
            .collect())
    }

    /// Gradient of the cross-entropy at `target_class` with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], target_class: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_label(target_class)?;
        let mut g = vec![0.0; x.len()];
        self.network().backprop(x, target_class, None, Some(&mut g));
        Ok(g)
    }

    pub fn mean_loss(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<f64> {
        self.check_batch(inputs, labels)?;
        let net = self.network();
        let total: f64 = inputs.iter().zip(labels).map(|(x, &y)| net.loss(x, y)).sum();
        Ok(total / inputs.len() as f64)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        ensure!(
            x.len() == self.spec.input_dim,
            "input has {} features, model expects {}",
            x.len(),
            self.spec.input_dim
        );
        ensure!(x.iter().all(|v| v.is_finite()), "non-finite input feature");
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        ensure!(y < self.spec.num_classes, "label {y} out of range for {} classes", self.spec.num_classes);
        Ok(())
    }

    fn check_batch(&self, inputs: &[&[f64]], labels: &[usize]) -> Result<()> {
        ensure!(!inputs.is_empty(), "empty batch");
        ensure!(inputs.len() == labels.len(), "batch has {} inputs but {} labels", inputs.len(), labels.len());
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_input(x)?;
            self.check_label(y)?;
        }
        Ok(())
    }
}

/// Borrowed view over a parameter vector. All arithmetic lives here so that
/// training can run on a mutable working copy without building checkpoints.
#[derive(Clone, Copy)]
pub(crate) struct Network<'a> {
    pub spec: &'a ModelSpec,
    pub layout: &'a [LayerLayout],
    pub params: &'a [f64],
}

impl<'a> Network<'a> {
    /// Layer outputs: `acts[0]` is the input, the last entry the logits.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layout.len() + 1);
        acts.push(x.to_vec());
        let last = self.layout.len() - 1;
        for (l, layer) in self.layout.iter().enumerate() {
            let input = &acts[l];
            let w = &self.params[layer.weight_offset..layer.bias_offset];
            let b = &self.params[layer.bias_offset..layer.bias_offset + layer.fan_out];
            let mut out = b.to_vec();
            for (o, z) in out.iter_mut().enumerate() {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                *z += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l != last {
                for z in &mut out {
                    *z = self.spec.activation.apply(*z);
                }
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).pop().expect("at least one layer")
    }

    pub fn loss(&self, x: &[f64], y: usize) -> f64 {
        let z = self.logits(x);
        log_sum_exp(&z) - z[y]
    }

    /// Cross-entropy at label `y`; optionally accumulates `scale * dL/dθ` into
    /// `param_grad` and writes `dL/dx` into `input_grad`.
    pub fn backprop(
        &self,
        x: &[f64],
        y: usize,
        param_grad: Option<(&mut [f64], f64)>,
        input_grad: Option<&mut [f64]>,
    ) -> f64 {
        let acts = self.trace(x);
        let logits = acts.last().expect("logits");
        let loss = log_sum_exp(logits) - logits[y];

        // dL/dz = softmax - onehot; the target entry is written as the negated
        // sum of the others so it stays nonzero when p_y rounds to 1.
        let mut delta = softmax(logits);
        delta[y] = -delta.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, p)| p).sum::<f64>();

        let mut param_grad = param_grad;
        for l in (0..self.layout.len()).rev() {
            let layer = self.layout[l];
            let input = &acts[l];
            if let Some((g, scale)) = param_grad.as_mut() {
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let sd = *scale * d;
                    let row = &mut g[layer.weight_offset + o * layer.fan_in..layer.weight_offset + (o + 1) * layer.fan_in];
                    for (gw, &a) in row.iter_mut().zip(input) {
                        *gw += sd * a;
                    }
                    g[layer.bias_offset + o] += sd;
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            let w = &self.params[layer.weight_offset..layer.bias_offset];
            let mut back = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (bi, &wi) in back.iter_mut().zip(row) {
                    *bi += wi * d;
                }
            }
            if l > 0 {
                for (bi, &a) in back.iter_mut().zip(input) {
                    *bi *= self.spec.activation.derivative_from_output(a);
                }
            }
            delta = back;
        }
        if let Some(out) = input_grad {
            out.copy_from_slice(&delta);
        }
        loss
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::nn::init_params;
    use rand::Rng;

    fn random_model(dims: &[usize], classes: usize, act: Activation, seed: u64) -> ModelCheckpoint {
        let spec = ModelSpec::new(dims[0], dims[1..].to_vec(), classes, act).unwrap();
        let mut params = init_params(&spec, RngStream::new(seed, 0));
        // Nonzero biases so every path is exercised.
        let mut rng = RngStream::new(seed, 99).rng();
        for p in &mut params {
            *p += rng.random_range(-0.3..0.3);
        }
        ModelCheckpoint::new(spec, params, Provenance::default()).unwrap()
    }

    fn random_inputs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, 1).rng();
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()).max(1e-6)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ModelCheckpoint::zeros(ModelSpec::mlp(3, &[4], 5).unwrap()).unwrap();
        let p = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        for &v in p.as_slice() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_zero_logit_symmetry() {
        let spec = ModelSpec::linear(2, 2).unwrap();
        // w0 = (1, 0), w1 = (0, 0), biases zero
        let m = ModelCheckpoint::new(spec, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], Provenance::default()).unwrap();
        assert_eq!(m.forward(&[0.0, 0.0]).unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn forward_matches_straight_line_recomputation() {
        let m = random_model(&[2, 8], 3, Activation::Relu, 11);
        let x = [0.7, -1.3];
        let p = &m.params;
        // hidden: W1 (8x2) at 0, b1 at 16; output: W2 (3x8) at 24, b2 at 48
        let mut h = [0.0; 8];
        for o in 0..8 {
            let z = p[o * 2] * x[0] + p[o * 2 + 1] * x[1] + p[16 + o];
            h[o] = if z > 0.0 { z } else { 0.0 };
        }
        let mut z = [0.0; 3];
        for c in 0..3 {
            let mut s = p[48 + c];
            for j in 0..8 {
                s += p[24 + c * 8 + j] * h[j];
            }
            z[c] = s;
        }
        let m_ = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m_).exp()).collect();
        let s: f64 = e.iter().sum();
        let got = m.forward(&x).unwrap();
        for c in 0..3 {
            assert!((got.as_slice()[c] - e[c] / s).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let m = ModelCheckpoint::zeros(ModelSpec::linear(2, 2).unwrap()).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(crate::Error::Contract(_))));
        assert!(matches!(m.loss_and_gradients(&[&[1.0, 2.0]], &[2]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn one_hot_output_gives_zero_loss_and_gradient() {
        let spec = ModelSpec::linear(1, 2).unwrap();
        let m = ModelCheckpoint::new(spec, vec![0.0, 0.0, 1000.0, 0.0], Provenance::default()).unwrap();
        let (loss, grad) = m.loss_and_gradients(&[&[0.5]], &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_batch_has_identical_loss_and_gradient() {
        let m = random_model(&[3, 5], 3, Activation::Tanh, 2);
        let xs = random_inputs(4, 3, 2);
        let ys = [0, 2, 1, 1];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let (l1, g1) = m.loss_and_gradients(&refs, &ys).unwrap();
        let doubled: Vec<&[f64]> = refs.iter().chain(refs.iter()).copied().collect();
        let ys2: Vec<usize> = ys.iter().chain(ys.iter()).copied().collect();
        let (l2, g2) = m.loss_and_gradients(&doubled, &ys2).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        assert!(max_rel_err(&g1, &g2) < 1e-12);
    }

    fn finite_difference_params(m: &ModelCheckpoint, xs: &[&[f64]], ys: &[usize], h: f64) -> Vec<f64> {
        let base = m.params.clone();
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                let mut minus = base.clone();
                minus[i] -= h;
                let mp = ModelCheckpoint::new(m.spec.clone(), plus, Provenance::default()).unwrap();
                let mm = ModelCheckpoint::new(m.spec.clone(), minus, Provenance::default()).unwrap();
                (mp.mean_loss(xs, ys).unwrap() - mm.mean_loss(xs, ys).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        for (act, seed) in [(Activation::Relu, 5), (Activation::Tanh, 6)] {
            let m = random_model(&[3, 6, 4], 3, act, seed);
            let xs = random_inputs(5, 3, seed);
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let ys = [0, 1, 2, 1, 0];
            let (_, g) = m.loss_and_gradients(&refs, &ys).unwrap();
            let fd = finite_difference_params(&m, &refs, &ys, 1e-5);
            assert!(max_rel_err(&g, &fd) < 1e-4, "{act:?}: {}", max_rel_err(&g, &fd));
        }
    }

    #[test]
    fn per_example_mean_is_batch_gradient() {
        let m = random_model(&[2, 7], 3, Activation::Relu, 8);
        let xs = random_inputs(4, 2, 8);
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let ys = [2, 0, 1, 2];
        let (_, full) = m.loss_and_gradients(&refs, &ys).unwrap();
        let per = m.per_example_gradients(&refs, &ys).unwrap();
        for i in 0..full.len() {
            let mean = per.iter().map(|g| g[i]).sum::<f64>() / per.len() as f64;
            assert!((mean - full[i]).abs() < 1e-10);
        }
        let single = m.per_example_gradients(&refs[..1], &ys[..1]).unwrap();
        let (_, g1) = m.loss_and_gradients(&refs[..1], &ys[..1]).unwrap();
        assert_eq!(single[0], g1);
        let same = m.per_example_gradients(&[refs[0], refs[0]], &[1, 1]).unwrap();
        assert_eq!(same[0], same[1]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = random_model(&[4, 9, 5], 3, Activation::Tanh, 21);
        let x = [0.2, -0.4, 1.1, 0.05];
        let g = m.input_gradient(&x, 2).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..4)
            .map(|i| {
                let mut p = x;
                p[i] += h;
                let mut q = x;
                q[i] -= h;
                (m.mean_loss(&[&p], &[2]).unwrap() - m.mean_loss(&[&q], &[2]).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(max_rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn input_gradient_of_zero_and_linear_models() {
        let zero = ModelCheckpoint::zeros(ModelSpec::mlp(3, &[4], 2).unwrap()).unwrap();
        // Zero weights: output is constant in x.
        assert!(zero.input_gradient(&[1.0, 2.0, 3.0], 0).unwrap().iter().all(|&g| g == 0.0));

        let spec = ModelSpec::linear(2, 2).unwrap();
        // w0 = (1, 2), w1 = (-1, 0.5)
        let m = ModelCheckpoint::new(spec, vec![1.0, 2.0, -1.0, 0.5, 0.0, 0.0], Provenance::default()).unwrap();
        let g = m.input_gradient(&[0.3, 0.1], 0).unwrap();
        // dL/dx = p1 * (w1 - w0) for target 0
        let diff = [-2.0, -1.5];
        let ratio = g[0] / diff[0];
        assert!(ratio > 0.0);
        assert!((g[1] / diff[1] - ratio).abs() < 1e-12);
    }

    #[test]
    fn forward_is_on_simplex() {
        let m = random_model(&[2, 16, 16], 3, Activation::Relu, 3);
        for x in random_inputs(50, 2, 3) {
            let p = m.forward(&x).unwrap();
            assert!(ProbVector::new(p.into_vec()).is_ok());
        }
    }

    #[test]
    fn parameter_count_enforced() {
        let spec = ModelSpec::mlp(2, &[3], 2).unwrap();
        assert_eq!(spec.param_count(), 2 * 3 + 3 + 3 * 2 + 2);
        assert!(ModelCheckpoint::new(spec.clone(), vec![0.0; 5], Provenance::default()).is_err());
        let mut bad = vec![0.0; spec.param_count()];
        bad[0] = f64::NAN;
        assert!(ModelCheckpoint::new(spec, bad, Provenance::default()).is_err());
    }
}
