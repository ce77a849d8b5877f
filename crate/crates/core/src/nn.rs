//! Minimal feedforward network: fully connected layers, ReLU hidden
//! activations, linear output, forward pass with activation caching, exact
//! backpropagation, and plain gradient-descent updates.
//!
//! This is the single model substrate shared by the DQN trainer and the
//! attribution engine, which is why it stays small and auditable instead of
//! delegating to an external framework: the DeepLIFT propagation in
//! [`crate::explain`] needs direct access to every pre-activation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Serialized model format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-layer activation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => z.max(F::zero()),
            Activation::Identity => z,
        }
    }

    fn derivative<F: Real>(self, z: F) -> F {
        match self {
            Activation::Relu => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Identity => F::one(),
        }
    }
}

/// One fully connected layer; weights are row-major `[output][input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<F> {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<F>,
    pub biases: Vec<F>,
    pub activation: Activation,
}

impl<F: Real> Layer<F> {
    pub fn weight(&self, out: usize, inp: usize) -> F {
        self.weights[out * self.input_dim + inp]
    }
}

/// Feedforward network, generic over the scalar type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<F> {
    pub layers: Vec<Layer<F>>,
    /// Bumped on every parameter mutation; forward traces snapshot it so a
    /// stale trace is rejected by [`backward`].
    #[serde(skip)]
    revision: u64,
}

/// Cached forward pass: inputs, pre-activations, and activations per layer.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    pub input: Vec<F>,
    /// z_l = W_l a_{l-1} + b_l for each layer.
    pub pre_activations: Vec<Vec<F>>,
    /// a_l = act(z_l) for each layer.
    pub activations: Vec<Vec<F>>,
    revision: u64,
}

impl<F: Real> ForwardTrace<F> {
    pub fn output(&self) -> &[F] {
        self.activations.last().expect("trace has at least one layer")
    }
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub d_weights: Vec<Vec<F>>,
    pub d_biases: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(model: &Mlp<F>) -> Self {
        Gradients {
            d_weights: model.layers.iter().map(|l| vec![F::zero(); l.weights.len()]).collect(),
            d_biases: model.layers.iter().map(|l| vec![F::zero(); l.biases.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients<F>) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for layer in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            for g in layer.iter_mut() {
                *g *= factor;
            }
        }
    }
}

impl<F: Real> Mlp<F> {
    /// Xavier-uniform initialized network: ReLU hidden layers, linear output.
    pub fn xavier(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("mlp: need at least input and output dims"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("mlp: zero-width layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (nin, nout) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (nin + nout) as f64).sqrt();
            let weights = (0..nin * nout)
                .map(|_| F::of(rng.gen_range(-limit..limit)))
                .collect();
            layers.push(Layer {
                input_dim: nin,
                output_dim: nout,
                weights,
                biases: vec![F::zero(); nout],
                activation: if l + 1 == n_layers { Activation::Identity } else { Activation::Relu },
            });
        }
        Ok(Mlp { layers, revision: 0 })
    }

    /// Network with explicitly provided parameters (tests, oracles).
    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self> {
        let model = Mlp { layers, revision: 0 };
        model.check_consistent()?;
        Ok(model)
    }

    fn check_consistent(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("mlp: no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.input_dim * l.output_dim || l.biases.len() != l.output_dim {
                return Err(Error::invalid(format!("mlp: layer {i} has inconsistent shapes")));
            }
            if i > 0 && self.layers[i - 1].output_dim != l.input_dim {
                return Err(Error::invalid(format!("mlp: layer {i} input dim mismatch")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.output_dim));
        dims
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Forward pass without trace allocation; used in inner loops.
    pub fn predict(&self, input: &[F]) -> Result<Vec<F>> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "forward: input dim {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut a = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.clear();
            next.reserve(layer.output_dim);
            for o in 0..layer.output_dim {
                let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                let mut z = layer.biases[o];
                for (w, x) in row.iter().zip(&a) {
                    z += *w * *x;
                }
                next.push(layer.activation.apply(z));
            }
            std::mem::swap(&mut a, &mut next);
        }
        Ok(a)
    }
}

/// Forward pass with full activation caching for backprop and DeepLIFT.
pub fn forward<F: Real>(model: &Mlp<F>, input: &[F]) -> Result<(Vec<F>, ForwardTrace<F>)> {
    if input.len() != model.input_dim() {
        return Err(Error::invalid(format!(
            "forward: input dim {} != {}",
            input.len(),
            model.input_dim()
        )));
    }
    let mut pre_activations = Vec::with_capacity(model.layers.len());
    let mut activations = Vec::with_capacity(model.layers.len());
    let mut a = input.to_vec();
    for layer in &model.layers {
        let mut z = Vec::with_capacity(layer.output_dim);
        for o in 0..layer.output_dim {
            let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
            let mut acc = layer.biases[o];
            for (w, x) in row.iter().zip(&a) {
                acc += *w * *x;
            }
            z.push(acc);
        }
        let act: Vec<F> = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre_activations.push(z);
        a = act.clone();
        activations.push(act);
    }
    let output = a;
    Ok((
        output,
        ForwardTrace { input: input.to_vec(), pre_activations, activations, revision: model.revision },
    ))
}

/// Exact backpropagation.
///
/// `output_gradient` is dL/d_output for whatever scalar loss the caller is
/// differentiating. Returns parameter gradients and the input gradient.
pub fn backward<F: Real>(
    model: &Mlp<F>,
    trace: &ForwardTrace<F>,
    output_gradient: &[F],
) -> Result<(Gradients<F>, Vec<F>)> {
    if trace.revision != model.revision || trace.pre_activations.len() != model.layers.len() {
        return Err(Error::ContractViolation(
            "backward: trace was not produced by this model state".into(),
        ));
    }
    if output_gradient.len() != model.output_dim() {
        return Err(Error::invalid("backward: output gradient dim mismatch"));
    }
    let mut grads = Gradients::zeros_like(model);
    // dL/da for the current layer, walking backwards.
    let mut upstream = output_gradient.to_vec();
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let z = &trace.pre_activations[l];
        let prev_act: &[F] = if l == 0 { &trace.input } else { &trace.activations[l - 1] };
        // dL/dz = dL/da * act'(z)
        let delta: Vec<F> =
            upstream.iter().zip(z).map(|(&g, &zv)| g * layer.activation.derivative(zv)).collect();
        let dw = &mut grads.d_weights[l];
        for o in 0..layer.output_dim {
            let d = delta[o];
            let row = &mut dw[o * layer.input_dim..(o + 1) * layer.input_dim];
            for (slot, &a) in row.iter_mut().zip(prev_act) {
                *slot += d * a;
            }
            grads.d_biases[l][o] += d;
        }
        // dL/da_{l-1} = W^T delta
        let mut down = vec![F::zero(); layer.input_dim];
        for o in 0..layer.output_dim {
            let d = delta[o];
            let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
            for (slot, &w) in down.iter_mut().zip(row) {
                *slot += w * d;
            }
        }
        upstream = down;
    }
    Ok((grads, upstream))
}

/// One plain gradient-descent step: θ ← θ − α ∇θ.
///
/// Non-finite gradients surface as a divergence error instead of being
/// clamped into the parameters.
pub fn sgd_update<F: Real>(model: &mut Mlp<F>, grads: &Gradients<F>, learning_rate: F) -> Result<()> {
    if !(learning_rate > F::zero()) {
        return Err(Error::invalid("sgd_update: learning_rate must be > 0"));
    }
    let finite = grads
        .d_weights
        .iter()
        .chain(grads.d_biases.iter())
        .all(|layer| layer.iter().all(|g| g.is_finite()));
    if !finite {
        return Err(Error::Divergence("non-finite gradient in sgd_update".into()));
    }
    for (l, layer) in model.layers.iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grads.d_weights[l]) {
            *w = *w - learning_rate * *g;
        }
        for (b, g) in layer.biases.iter_mut().zip(&grads.d_biases[l]) {
            *b = *b - learning_rate * *g;
        }
    }
    model.revision += 1;
    Ok(())
}

/// Copy parameters from `src` into `dst` (target-network refresh).
pub fn clone_into<F: Real>(src: &Mlp<F>, dst: &mut Mlp<F>) -> Result<()> {
    if src.layer_dims() != dst.layer_dims() {
        return Err(Error::invalid("clone_into: architecture mismatch"));
    }
    for (s, d) in src.layers.iter().zip(dst.layers.iter_mut()) {
        if s.activation != d.activation {
            return Err(Error::invalid("clone_into: activation mismatch"));
        }
        d.weights.copy_from_slice(&s.weights);
        d.biases.copy_from_slice(&s.biases);
    }
    dst.revision += 1;
    Ok(())
}

/// Versioned JSON wrapper for model files.
#[derive(Serialize, Deserialize)]
struct ModelFile<F> {
    format_version: u32,
    model: Mlp<F>,
}

impl<F: Real + Serialize + for<'de> Deserialize<'de>> Mlp<F> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile { format_version: MODEL_FORMAT_VERSION, model: self.clone() })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<F> = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model format version {} unsupported (expected {})",
                file.format_version, MODEL_FORMAT_VERSION
            )));
        }
        file.model.check_consistent()?;
        Ok(file.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar loss used by the finite-difference oracle: L = sum_k c_k out_k.
    fn weighted_output_loss(model: &Mlp<f64>, input: &[f64], coeffs: &[f64]) -> f64 {
        let out = model.predict(input).unwrap();
        out.iter().zip(coeffs).map(|(o, c)| o * c).sum()
    }

    fn finite_diff_check(dims: &[usize], seed: u64) {
        let mut model = Mlp::<f64>::xavier(dims, seed).unwrap();
        // bias the biases away from zero so ReLU kinks are not sampled
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for layer in &mut model.layers {
            for b in &mut layer.biases {
                *b = rng.gen_range(-0.3..0.3);
            }
        }
        let input: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (_, trace) = forward(&model, &input).unwrap();
        let (grads, _) = backward(&model, &trace, &coeffs).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        for l in 0..model.layers.len() {
            for idx in 0..model.layers[l].weights.len() {
                let orig = model.layers[l].weights[idx];
                model.layers[l].weights[idx] = orig + h;
                let up = weighted_output_loss(&model, &input, &coeffs);
                model.layers[l].weights[idx] = orig - h;
                let down = weighted_output_loss(&model, &input, &coeffs);
                model.layers[l].weights[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.d_weights[l][idx];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "layer {l} w[{idx}]: numeric {numeric} vs analytic {analytic}"
                );
                checked += 1;
            }
            for idx in 0..model.layers[l].biases.len() {
                let orig = model.layers[l].biases[idx];
                model.layers[l].biases[idx] = orig + h;
                let up = weighted_output_loss(&model, &input, &coeffs);
                model.layers[l].biases[idx] = orig - h;
                let down = weighted_output_loss(&model, &input, &coeffs);
                model.layers[l].biases[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.d_biases[l][idx];
                let denom = numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "layer {l} b[{idx}]: numeric {numeric} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, model.num_parameters());
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_diff_check(&[12, 16, 16, 4], 1);
    }

    #[test]
    fn zero_weights_forward_returns_bias() {
        let layer = Layer {
            input_dim: 3,
            output_dim: 2,
            weights: vec![0.0; 6],
            biases: vec![0.7, -0.3],
            activation: Activation::Identity,
        };
        let model = Mlp::from_layers(vec![layer]).unwrap();
        let (out, _) = forward(&model, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.7, -0.3]);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let layer = Layer {
            input_dim: 3,
            output_dim: 3,
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            biases: vec![0.0; 3],
            activation: Activation::Identity,
        };
        let model = Mlp::from_layers(vec![layer]).unwrap();
        let input = [0.5, -1.5, 2.0];
        let (out, _) = forward(&model, &input).unwrap();
        assert_eq!(out, input.to_vec());
    }

    #[test]
    fn seeded_forward_is_deterministic() {
        let a = Mlp::<f64>::xavier(&[12, 8, 4], 99).unwrap();
        let b = Mlp::<f64>::xavier(&[12, 8, 4], 99).unwrap();
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = Mlp::<f64>::xavier(&[4, 2], 0).unwrap();
        assert!(forward(&model, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let model = Mlp::<f64>::xavier(&[5, 7, 3], 2).unwrap();
        let (_, trace) = forward(&model, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let (grads, input_grad) = backward(&model, &trace, &[0.0, 0.0, 0.0]).unwrap();
        assert!(grads.d_weights.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.d_biases.iter().flatten().all(|&g| g == 0.0));
        assert!(input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_net_input_gradient_is_weight_transpose_product() {
        let layer = Layer {
            input_dim: 2,
            output_dim: 2,
            weights: vec![1.0, 2.0, 3.0, 4.0], // [[1,2],[3,4]]
            biases: vec![0.0, 0.0],
            activation: Activation::Identity,
        };
        let model = Mlp::from_layers(vec![layer]).unwrap();
        let (_, trace) = forward(&model, &[5.0, 6.0]).unwrap();
        let g = [0.5, -1.0];
        let (_, input_grad) = backward(&model, &trace, &g).unwrap();
        // W^T g = [1*0.5 + 3*(-1), 2*0.5 + 4*(-1)]
        assert_eq!(input_grad, vec![-2.5, -3.0]);
    }

    #[test]
    fn backward_rejects_stale_trace() {
        let mut model = Mlp::<f64>::xavier(&[3, 3, 2], 5).unwrap();
        let (_, trace) = forward(&model, &[0.1, 0.2, 0.3]).unwrap();
        let grads = {
            let (g, _) = backward(&model, &trace, &[1.0, 0.0]).unwrap();
            g
        };
        sgd_update(&mut model, &grads, 0.01).unwrap();
        assert!(matches!(
            backward(&model, &trace, &[1.0, 0.0]),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn sgd_moves_parameter_by_alpha_times_gradient() {
        let layer = Layer {
            input_dim: 1,
            output_dim: 1,
            weights: vec![1.0],
            biases: vec![0.0],
            activation: Activation::Identity,
        };
        let mut model = Mlp::<f64>::from_layers(vec![layer]).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        grads.d_weights[0][0] = 2.0;
        sgd_update(&mut model, &grads, 0.1).unwrap();
        assert!((model.layers[0].weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_zero_learning_rate_and_nonfinite_gradient() {
        let mut model = Mlp::<f64>::xavier(&[2, 2], 1).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        assert!(sgd_update(&mut model, &grads, 0.0).is_err());
        grads.d_weights[0][0] = f64::NAN;
        assert!(matches!(sgd_update(&mut model, &grads, 0.1), Err(Error::Divergence(_))));
    }

    #[test]
    fn small_step_decreases_loss_on_smooth_region() {
        let mut model = Mlp::<f64>::xavier(&[4, 8, 2], 3).unwrap();
        let input = [0.3, -0.2, 0.9, 0.5];
        let target = [1.0, -1.0];
        let loss = |m: &Mlp<f64>| {
            let out = m.predict(&input).unwrap();
            out.iter().zip(&target).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
        };
        let before = loss(&model);
        let (out, trace) = forward(&model, &input).unwrap();
        let g: Vec<f64> = out.iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let (grads, _) = backward(&model, &trace, &g).unwrap();
        sgd_update(&mut model, &grads, 1e-4).unwrap();
        assert!(loss(&model) < before);
    }

    #[test]
    fn clone_into_copies_and_isolates() {
        let mut src = Mlp::<f64>::xavier(&[3, 5, 2], 7).unwrap();
        let mut dst = Mlp::<f64>::xavier(&[3, 5, 2], 8).unwrap();
        clone_into(&src, &mut dst).unwrap();
        let x = [0.1, 0.2, 0.3];
        assert_eq!(src.predict(&x).unwrap(), dst.predict(&x).unwrap());
        // idempotent
        let snapshot = dst.clone();
        clone_into(&src, &mut dst).unwrap();
        assert_eq!(snapshot.layers, dst.layers);
        // mutating src afterwards leaves dst unchanged
        src.layers[0].weights[0] += 1.0;
        assert_ne!(src.predict(&x).unwrap(), dst.predict(&x).unwrap());
    }

    #[test]
    fn clone_into_rejects_architecture_mismatch() {
        let src = Mlp::<f64>::xavier(&[3, 5, 2], 7).unwrap();
        let mut dst = Mlp::<f64>::xavier(&[3, 4, 2], 7).unwrap();
        assert!(clone_into(&src, &mut dst).is_err());
    }

    #[test]
    fn json_round_trip_reproduces_forward_bits() {
        let model = Mlp::<f64>::xavier(&[12, 64, 64, 4], 1234).unwrap();
        let text = model.to_json().unwrap();
        let loaded = Mlp::<f64>::from_json(&text).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let a = model.predict(&x).unwrap();
        let b = loaded.predict(&x).unwrap();
        assert_eq!(a, b, "loaded model must reproduce bit-identical outputs");
    }

    #[test]
    fn relu_net_is_positively_homogeneous_with_zero_bias() {
        let mut model = Mlp::<f64>::xavier(&[4, 6, 3], 11).unwrap();
        for layer in &mut model.layers {
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        let x = [0.4, -0.7, 0.2, 0.9];
        let lam = 3.5;
        let scaled: Vec<f64> = x.iter().map(|v| v * lam).collect();
        let out_scaled = model.predict(&scaled).unwrap();
        let out: Vec<f64> = model.predict(&x).unwrap().iter().map(|v| v * lam).collect();
        for (a, b) in out_scaled.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn float32_lane_runs_the_same_kernels() {
        let model = Mlp::<f32>::xavier(&[4, 6, 2], 5).unwrap();
        let (out, trace) = forward(&model, &[0.1f32, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(out.len(), 2);
        let (grads, _) = backward(&model, &trace, &[1.0f32, 0.0]).unwrap();
        assert_eq!(grads.d_weights.len(), 2);
    }
}
