//! Shapley-value feature attribution for the trained policy.
//!
//! Three routes to the same quantity, all measured against a background
//! dataset with interventional missing-feature semantics (absent features
//! are replaced by background values):
//!
//! - [`exact_shapley`] enumerates every feature coalition — the reference
//!   result, feasible because the state has 12 features.
//! - [`sampled_shapley`] is the unbiased permutation estimator; efficiency
//!   holds per permutation by telescoping.
//! - [`deeplift_rescale`] propagates contribution multipliers backward
//!   through the network (rescale rule), averaged over the background.
//!
//! The explained output is the logit (Q-value) of a target action.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::{forward, Activation, Mlp};
use crate::{Error, Real, Result};

/// Enumeration guard: beyond this many features, exact Shapley is refused.
pub const MAX_EXACT_FEATURES: usize = 20;

/// Threshold below which the rescale rule falls back to the local gradient.
pub const ZERO_DELTA_THRESHOLD: f64 = 1e-9;

/// Where a background set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Simulated,
    Ingested,
}

/// Baseline dataset of normalized state vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSet<F> {
    pub samples: Vec<Vec<F>>,
    pub provenance: Provenance,
}

impl<F: Real> BackgroundSet<F> {
    pub fn new(samples: Vec<Vec<F>>, provenance: Provenance) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("background set must hold at least one sample"));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("background samples have mixed dimensions"));
        }
        Ok(BackgroundSet { samples, provenance })
    }

    /// Uniform subsample without replacement, seeded.
    pub fn subsample(
        states: &[Vec<F>],
        size: usize,
        provenance: Provenance,
        seed: u64,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("cannot subsample an empty state pool"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = states.len();
        let k = size.max(1).min(n);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            indices.swap(i, j);
        }
        let samples = indices[..k].iter().map(|&i| states[i].clone()).collect();
        BackgroundSet::new(samples, provenance)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }
}

/// Attribution method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    /// Permutation sampling with this many permutations.
    Permutation(usize),
    DeepLift,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Exact => write!(f, "exact"),
            Method::Permutation(n) => write!(f, "permutation({n})"),
            Method::DeepLift => write!(f, "deeplift"),
        }
    }
}

/// Per-feature Shapley values for one explained decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution<F> {
    /// Raw-scale feature values, for reporting.
    pub feature_values: Vec<F>,
    /// The values the model actually saw.
    pub normalized_values: Vec<F>,
    pub shapley: Vec<F>,
    /// Mean model output over the background (v of the empty coalition).
    pub base_value: F,
    /// Model output at the explained instance (v of the full coalition).
    pub output_value: F,
    /// Action whose logit is explained.
    pub target_action: usize,
    pub method: Method,
}

impl<F: Real> Attribution<F> {
    /// Attach raw-scale feature values (reports show these, not the
    /// normalized model inputs).
    pub fn with_raw_values(mut self, raw: Vec<F>) -> Self {
        debug_assert_eq!(raw.len(), self.shapley.len());
        self.feature_values = raw;
        self
    }

    /// Efficiency residual: sum of attributions minus (output − base).
    pub fn efficiency_gap(&self) -> F {
        let total: F = self.shapley.iter().cloned().sum();
        total - (self.output_value - self.base_value)
    }
}

fn check_instance<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    background: &BackgroundSet<F>,
) -> Result<()> {
    if instance.len() != model.input_dim() {
        return Err(Error::invalid(format!(
            "instance has {} features, model expects {}",
            instance.len(),
            model.input_dim()
        )));
    }
    if background.dim() != model.input_dim() {
        return Err(Error::invalid("background dimension does not match the model"));
    }
    Ok(())
}

fn check_target<F: Real>(model: &Mlp<F>, target_action: usize) -> Result<()> {
    if target_action >= model.output_dim() {
        return Err(Error::invalid(format!(
            "target action {} out of 0..{}",
            target_action,
            model.output_dim()
        )));
    }
    Ok(())
}

/// Model prediction for a coalition mask: features in the mask come from
/// the instance, the rest from each background sample, averaged.
fn coalition_value<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    background: &BackgroundSet<F>,
    mask: u64,
    target_action: usize,
    hybrid: &mut Vec<F>,
) -> Result<F> {
    let mut acc = F::zero();
    for sample in &background.samples {
        hybrid.clear();
        hybrid.extend(
            sample
                .iter()
                .enumerate()
                .map(|(i, &b)| if mask & (1 << i) != 0 { instance[i] } else { b }),
        );
        acc += model.predict(hybrid)?[target_action];
    }
    Ok(acc / F::of(background.len() as f64))
}

/// v(S): the model's expected prediction with only the subset `S` of
/// features taken from the instance.
pub fn value_function<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    background: &BackgroundSet<F>,
    subset: &[usize],
    target_action: usize,
) -> Result<F> {
    check_instance(model, instance, background)?;
    check_target(model, target_action)?;
    let n = instance.len();
    let mut mask = 0u64;
    for &i in subset {
        if i >= n {
            return Err(Error::invalid(format!("subset feature {i} out of 0..{n}")));
        }
        mask |= 1 << i;
    }
    let mut hybrid = Vec::with_capacity(n);
    coalition_value(model, instance, background, mask, target_action, &mut hybrid)
}

/// Coalition weights |S|!(N−|S|−1)!/N! for every coalition size, from exact
/// integer factorials.
fn shapley_weights(n: usize) -> Vec<f64> {
    let fact: Vec<u128> = (0..=n)
        .scan(1u128, |acc, k| {
            if k > 0 {
                *acc *= k as u128;
            }
            Some(*acc)
        })
        .collect();
    (0..n).map(|s| fact[s] as f64 * fact[n - 1 - s] as f64 / fact[n] as f64).collect()
}

/// Exact Shapley values by full coalition enumeration.
///
/// Evaluates all 2^N coalition values once, then assembles every attribution
/// from the weighted marginal sums. Refuses models beyond
/// [`MAX_EXACT_FEATURES`] inputs; use [`sampled_shapley`] there.
pub fn exact_shapley<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    background: &BackgroundSet<F>,
    target_action: usize,
) -> Result<Attribution<F>> {
    check_instance(model, instance, background)?;
    check_target(model, target_action)?;
    let n = instance.len();
    if n > MAX_EXACT_FEATURES {
        return Err(Error::invalid(format!(
            "exact enumeration over {n} features is infeasible (limit {MAX_EXACT_FEATURES}); \
             use sampled_shapley instead"
        )));
    }
    let full = 1u64 << n;
    let mut values = Vec::with_capacity(full as usize);
    let mut hybrid = Vec::with_capacity(n);
    for mask in 0..full {
        values.push(coalition_value(model, instance, background, mask, target_action, &mut hybrid)?);
    }
    let weights = shapley_weights(n);
    let mut shapley = vec![F::zero(); n];
    for (i, psi) in shapley.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for mask in 0..full {
            if mask & bit == 0 {
                let w = F::of(weights[mask.count_ones() as usize]);
                *psi += w * (values[(mask | bit) as usize] - values[mask as usize]);
            }
        }
    }
    Ok(Attribution {
        feature_values: instance.to_vec(),
        normalized_values: instance.to_vec(),
        shapley,
        base_value: values[0],
        output_value: values[(full - 1) as usize],
        target_action,
        method: Method::Exact,
    })
}

/// Unbiased permutation-sampling estimator of the Shapley values.
///
/// Marginal contributions telescope along each permutation, so the
/// efficiency property holds for any number of permutations.
pub fn sampled_shapley<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    background: &BackgroundSet<F>,
    target_action: usize,
    n_permutations: usize,
    rng: &mut impl Rng,
) -> Result<Attribution<F>> {
    check_instance(model, instance, background)?;
    check_target(model, target_action)?;
    if n_permutations == 0 {
        return Err(Error::invalid("sampled_shapley: need at least one permutation"));
    }
    let n = instance.len();
    let full = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut hybrid = Vec::with_capacity(n);
    let base = coalition_value(model, instance, background, 0, target_action, &mut hybrid)?;
    let output = coalition_value(model, instance, background, full, target_action, &mut hybrid)?;
    let mut shapley = vec![F::zero(); n];
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..n_permutations {
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut mask = 0u64;
        let mut prev = base;
        for &feature in &perm {
            mask |= 1 << feature;
            let value = if mask == full {
                output
            } else {
                coalition_value(model, instance, background, mask, target_action, &mut hybrid)?
            };
            shapley[feature] += value - prev;
            prev = value;
        }
    }
    let scale = F::one() / F::of(n_permutations as f64);
    for psi in &mut shapley {
        *psi *= scale;
    }
    Ok(Attribution {
        feature_values: instance.to_vec(),
        normalized_values: instance.to_vec(),
        shapley,
        base_value: base,
        output_value: output,
        target_action,
        method: Method::Permutation(n_permutations),
    })
}

/// DeepLIFT-rescale contributions for one (instance, reference) pair.
fn deeplift_single<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    reference: &[F],
    target_action: usize,
) -> Result<(Vec<F>, F, F)> {
    let (out_x, trace_x) = forward(model, instance)?;
    let (out_b, trace_b) = forward(model, reference)?;
    let threshold = F::of(ZERO_DELTA_THRESHOLD);
    // multipliers w.r.t. the current layer's post-activation outputs
    let mut multipliers = vec![F::zero(); model.output_dim()];
    multipliers[target_action] = F::one();
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let zx = &trace_x.pre_activations[l];
        let zb = &trace_b.pre_activations[l];
        let ax = &trace_x.activations[l];
        let ab = &trace_b.activations[l];
        // rescale rule through the activation: m_z = m_a * da/dz over the
        // deltas, with the local gradient as the 0/0 fallback
        let m_pre: Vec<F> = (0..layer.output_dim)
            .map(|o| {
                let dz = zx[o] - zb[o];
                let slope = if dz.abs() > threshold {
                    (ax[o] - ab[o]) / dz
                } else {
                    match layer.activation {
                        Activation::Relu => {
                            if zx[o] > F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            }
                        }
                        Activation::Identity => F::one(),
                    }
                };
                multipliers[o] * slope
            })
            .collect();
        // linear rule through the affine map: m_in = W^T m_z
        let mut m_in = vec![F::zero(); layer.input_dim];
        for o in 0..layer.output_dim {
            let m = m_pre[o];
            let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
            for (slot, &w) in m_in.iter_mut().zip(row) {
                *slot += w * m;
            }
        }
        multipliers = m_in;
    }
    let contributions: Vec<F> = multipliers
        .iter()
        .zip(instance.iter().zip(reference))
        .map(|(&m, (&x, &b))| m * (x - b))
        .collect();
    Ok((contributions, out_x[target_action], out_b[target_action]))
}

/// DeepSHAP: DeepLIFT-rescale contributions averaged over the background.
pub fn deeplift_rescale<F: Real>(
    model: &Mlp<F>,
    instance: &[F],
    background: &BackgroundSet<F>,
    target_action: usize,
) -> Result<Attribution<F>> {
    check_instance(model, instance, background)?;
    check_target(model, target_action)?;
    let n = instance.len();
    let mut shapley = vec![F::zero(); n];
    let mut base = F::zero();
    let mut output = F::zero();
    for reference in &background.samples {
        let (contrib, out_x, out_b) = deeplift_single(model, instance, reference, target_action)?;
        for (acc, c) in shapley.iter_mut().zip(&contrib) {
            *acc += *c;
        }
        base += out_b;
        output = out_x;
    }
    let inv = F::one() / F::of(background.len() as f64);
    for psi in &mut shapley {
        *psi *= inv;
    }
    Ok(Attribution {
        feature_values: instance.to_vec(),
        normalized_values: instance.to_vec(),
        shapley,
        base_value: base * inv,
        output_value: output,
        target_action,
        method: Method::DeepLift,
    })
}

/// One trace entry to explain: the normalized model input plus the raw
/// feature values to attach for reporting.
#[derive(Debug, Clone)]
pub struct TraceInstance<F> {
    pub normalized: Vec<F>,
    pub raw: Vec<F>,
}

/// Explain every step of a trace, targeting each step's greedy action.
///
/// Instances are independent and run in parallel; output order follows the
/// trace and is independent of thread count.
pub fn explain_trace<F: Real>(
    model: &Mlp<F>,
    instances: &[TraceInstance<F>],
    background: &BackgroundSet<F>,
    method: Method,
    seed: u64,
) -> Result<Vec<Attribution<F>>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(idx, inst)| {
            let q = model.predict(&inst.normalized)?;
            let mut target = 0usize;
            for (i, v) in q.iter().enumerate().skip(1) {
                if *v > q[target] {
                    target = i;
                }
            }
            let attribution = match method {
                Method::Exact => exact_shapley(model, &inst.normalized, background, target)?,
                Method::Permutation(n) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                    );
                    sampled_shapley(model, &inst.normalized, background, target, n, &mut rng)?
                }
                Method::DeepLift => deeplift_rescale(model, &inst.normalized, background, target)?,
            };
            Ok(attribution.with_raw_values(inst.raw.clone()))
        })
        .collect()
}
