//! DQN training: replay buffer, ε-greedy behaviour policy, Bellman targets
//! against a periodically synced target network, and ε / learning-rate
//! schedules. Training is fully deterministic per seed.

mod normalize;
mod replay;

pub use normalize::{Normalizer, ALTITUDE_RANGE, RSRP_RANGE, RSRQ_RANGE};
pub use replay::{ReplayBuffer, Transition};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Policy, Scenario, StateVector};
use crate::nn;
use crate::{Error, Mlp, Real, Result};

/// Serialized checkpoint format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Hyperparameters for a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Target-network refresh period, in gradient steps.
    pub target_update_every: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Per-episode multiplicative ε decay.
    pub epsilon_decay: f64,
    /// Initial learning rate α₀.
    pub alpha0: f64,
    /// Learning-rate decay speed η.
    pub eta: f64,
    pub buffer_capacity: usize,
    /// Run a greedy evaluation episode every this many episodes (0 = never).
    pub eval_every: usize,
    /// Hidden layer widths; input/output dims come from the scenario.
    pub hidden_dims: Vec<usize>,
    /// Gradient step every this many environment steps.
    pub train_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 1500,
            batch_size: 64,
            gamma: 0.95,
            target_update_every: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay: 0.997,
            alpha0: 1e-3,
            eta: 0.002,
            buffer_capacity: 50_000,
            eval_every: 100,
            hidden_dims: vec![64, 64],
            train_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("train: gamma must be in [0, 1)"));
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::config(format!("train: {name} must be in [0, 1]")));
            }
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::config("train: epsilon_decay must be in (0, 1]"));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::config("train: alpha0 must be > 0"));
        }
        if self.eta < 0.0 {
            return Err(Error::config("train: eta must be >= 0"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("train: need buffer_capacity >= batch_size >= 1"));
        }
        if self.target_update_every == 0 || self.train_every == 0 {
            return Err(Error::config("train: update periods must be >= 1"));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("train: zero-width hidden layer"));
        }
        Ok(())
    }
}

/// ε-greedy action selection, exactly the printed distribution: the greedy
/// action with probability 1−ε, each other action with probability ε/(L−1).
/// Argmax ties break to the lowest slot.
pub fn epsilon_greedy<F: Real>(q_values: &[F], epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::invalid("epsilon_greedy: empty action set"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid("epsilon_greedy: epsilon must be in [0, 1]"));
    }
    let l = q_values.len();
    if l < 2 && epsilon > 0.0 {
        return Err(Error::invalid("epsilon_greedy: need at least 2 actions to explore"));
    }
    let greedy = argmax(q_values);
    if epsilon > 0.0 && rng.gen::<f64>() >= 1.0 - epsilon {
        let k = rng.gen_range(0..l - 1);
        Ok(if k >= greedy { k + 1 } else { k })
    } else {
        Ok(greedy)
    }
}

fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Bellman backup target: `r` for terminal transitions, else
/// `r + γ max_a' Q_target(s', a')`.
pub fn bellman_target(transition: &Transition, target_model: &Mlp, gamma: f64) -> Result<f64> {
    if transition.terminal || gamma == 0.0 {
        return Ok(transition.reward);
    }
    let q_next = target_model.predict(&transition.next_state)?;
    let max_q = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(transition.reward + gamma * max_q)
}

/// One gradient step on the mean squared TD error of a batch.
///
/// The gradient flows only through the predicted Q of the taken action.
/// Returns the pre-update batch loss.
pub fn train_batch(
    main_model: &mut Mlp,
    target_model: &Mlp,
    batch: &[&Transition],
    gamma: f64,
    alpha: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("train_batch: empty batch"));
    }
    let n = batch.len() as f64;
    let mut grads = nn::Gradients::zeros_like(main_model);
    let mut loss = 0.0;
    for transition in batch {
        let (q, trace) = nn::forward(main_model, &transition.state)?;
        let target = bellman_target(transition, target_model, gamma)?;
        let delta = q[transition.action] - target;
        loss += delta * delta;
        let mut out_grad = vec![0.0; q.len()];
        out_grad[transition.action] = 2.0 * delta / n;
        let (g, _) = nn::backward(main_model, &trace, &out_grad)?;
        grads.accumulate(&g);
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("batch loss became {loss}")));
    }
    nn::sgd_update(main_model, &grads, alpha)?;
    Ok(loss)
}

/// Decaying learning rate α(Γ) = α₀ / (1 + ηΓ).
pub fn learning_rate<F: Real>(alpha0: F, eta: F, episode_index: usize) -> F {
    alpha0 / (F::one() + eta * F::of(episode_index as f64))
}

/// Exponentially decaying exploration: ε(Γ) = max(ε_end, ε_start · decay^Γ).
pub fn epsilon_schedule(config: &TrainConfig, episode_index: usize) -> f64 {
    (config.epsilon_start * config.epsilon_decay.powi(episode_index as i32)).max(config.epsilon_end)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub episode: usize,
    pub return_sum: f64,
    pub handovers: u64,
    pub ping_pongs: u64,
    pub epsilon: f64,
    pub alpha: f64,
    pub mean_loss: f64,
}

/// A periodic greedy-policy evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub episode: usize,
    pub return_sum: f64,
    pub handovers: u64,
}

/// Full training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeLogRow>,
    pub eval_points: Vec<EvalPoint>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,return,handovers,ping_pongs,epsilon,alpha,loss\n");
        for r in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.episode, r.return_sum, r.handovers, r.ping_pongs, r.epsilon, r.alpha, r.mean_loss
            ));
        }
        out
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: Mlp,
    pub normalizer: Normalizer,
    pub log: TrainLog,
}

/// Persisted model bundle: network, normalization constants, config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Mlp,
    pub normalizer: Normalizer,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(result: &TrainResult, config: &TrainConfig) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: result.model.clone(),
            normalizer: result.normalizer.clone(),
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint format version {} unsupported (expected {})",
                ck.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(ck)
    }

    /// Check the model input width against a scenario's state layout.
    pub fn compatible_with(&self, scenario: &Scenario) -> Result<()> {
        if self.model.input_dim() != scenario.state_dim()
            || self.model.output_dim() != scenario.num_candidates
        {
            return Err(Error::config(format!(
                "checkpoint expects {}-dim states / {} actions, scenario has {} / {}",
                self.model.input_dim(),
                self.model.output_dim(),
                scenario.state_dim(),
                scenario.num_candidates
            )));
        }
        Ok(())
    }
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93);
    x = (x ^ (x >> 32)).wrapping_mul(0xd6e8_feb8_6659_fd93);
    x ^ (x >> 32)
}

const STREAM_EXPLORE: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_EVAL: u64 = 0x5eed_e7a1;

/// Train a DQN policy on the scenario.
///
/// Runs `config.episodes` episodes of environment interaction with ε-greedy
/// exploration, one gradient step per `train_every` environment steps once
/// the buffer holds a batch, and a target-network refresh every
/// `target_update_every` gradient steps.
pub fn train(scenario: &Scenario, config: &TrainConfig) -> Result<TrainResult> {
    scenario.validate()?;
    config.validate()?;
    let normalizer = Normalizer::for_scenario(scenario);
    let mut dims = vec![scenario.state_dim()];
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(scenario.num_candidates);
    let mut model = Mlp::xavier(&dims, config.seed)?;
    let mut target = model.clone();
    let mut replay = ReplayBuffer::new(config.buffer_capacity);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_EXPLORE));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_REPLAY));
    let mut log = TrainLog::default();
    let mut grad_steps = 0usize;

    for episode in 0..config.episodes {
        let epsilon = epsilon_schedule(config, episode);
        let alpha = learning_rate(config.alpha0, config.eta, episode);
        let mut env = Environment::new(scenario, episode as u64)?;
        let mut return_sum = 0.0;
        let mut handovers = 0u64;
        let mut ping_pongs = 0u64;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut env_steps = 0usize;
        while !env.is_done() {
            let state_norm = normalizer.normalize(&env.state().features);
            let q = model.predict(&state_norm)?;
            let action = epsilon_greedy(&q, epsilon, &mut explore_rng)?;
            let outcome = env.step(action).map_err(|e| {
                Error::Divergence(format!("episode {episode}: environment failed: {e}"))
            })?;
            return_sum += outcome.reward;
            handovers += outcome.handover as u64;
            ping_pongs += outcome.ping_pong as u64;
            replay.push(Transition {
                state: state_norm,
                action,
                reward: outcome.reward,
                next_state: normalizer.normalize(&outcome.next_state.features),
                terminal: env.is_done(),
            });
            env_steps += 1;
            if replay.len() >= config.batch_size && env_steps % config.train_every == 0 {
                let batch = replay.sample(config.batch_size, &mut replay_rng);
                let loss = train_batch(&mut model, &target, &batch, config.gamma, alpha)
                    .map_err(|e| Error::Divergence(format!("episode {episode}: {e}")))?;
                loss_sum += loss;
                loss_count += 1;
                grad_steps += 1;
                if grad_steps % config.target_update_every == 0 {
                    nn::clone_into(&model, &mut target)?;
                }
            }
        }
        log.episodes.push(EpisodeLogRow {
            episode,
            return_sum,
            handovers,
            ping_pongs,
            epsilon,
            alpha,
            mean_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
        });
        if config.eval_every > 0 && (episode + 1) % config.eval_every == 0 {
            let mut policy = GreedyPolicy::new(model.clone(), normalizer.clone());
            let (metrics, trace) = crate::env::run_episode(
                &mut policy,
                scenario,
                sub_seed(STREAM_EVAL, episode as u64),
            )?;
            log.eval_points.push(EvalPoint {
                episode,
                return_sum: trace.steps.iter().map(|s| s.reward).sum(),
                handovers: metrics.handover_count,
            });
        }
    }
    Ok(TrainResult { model, normalizer, log })
}

/// Greedy policy over a trained model; callers pass raw state vectors and
/// normalization happens internally.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    model: Mlp,
    normalizer: Normalizer,
}

impl GreedyPolicy {
    pub fn new(model: Mlp, normalizer: Normalizer) -> Self {
        GreedyPolicy { model, normalizer }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        GreedyPolicy { model: ck.model.clone(), normalizer: ck.normalizer.clone() }
    }

    pub fn q_values(&self, state: &StateVector) -> Vec<f64> {
        self.model
            .predict(&self.normalizer.normalize(&state.features))
            .expect("state layout matches model input")
    }
}

impl Policy for GreedyPolicy {
    fn select(&mut self, state: &StateVector) -> usize {
        argmax(&self.q_values(state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn constant_model(outputs: &[f64], input_dim: usize) -> Mlp {
        let layer = Layer {
            input_dim,
            output_dim: outputs.len(),
            weights: vec![0.0; input_dim * outputs.len()],
            biases: outputs.to_vec(),
            activation: Activation::Identity,
        };
        Mlp::from_layers(vec![layer]).unwrap()
    }

    fn transition(reward: f64, action: usize, dim: usize) -> Transition {
        Transition {
            state: vec![0.1; dim],
            action,
            reward,
            next_state: vec![0.2; dim],
            terminal: false,
        }
    }

    #[test]
    fn epsilon_zero_is_always_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&[0.1, 0.9, 0.3, 0.9], 0.0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn epsilon_one_never_picks_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = [0.0, 2.0, 1.0, -1.0];
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[epsilon_greedy(&q, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1], 0, "greedy action must never be chosen at epsilon = 1");
        for (i, &c) in counts.iter().enumerate() {
            if i != 1 {
                let freq = c as f64 / n as f64;
                assert!((freq - 1.0 / 3.0).abs() < 0.02, "slot {i} frequency {freq}");
            }
        }
    }

    #[test]
    fn epsilon_greedy_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(epsilon_greedy(&[1.0], 0.5, &mut rng).is_err());
        assert!(epsilon_greedy(&[1.0, 2.0], 1.5, &mut rng).is_err());
        assert!(epsilon_greedy::<f64>(&[], 0.0, &mut rng).is_err());
    }

    #[test]
    fn bellman_target_cases() {
        let target = constant_model(&[2.0, 1.0], 3);
        let mut t = transition(1.0, 0, 3);
        // terminal -> r
        t.terminal = true;
        assert_eq!(bellman_target(&t, &target, 0.9).unwrap(), 1.0);
        // gamma = 0 -> r
        t.terminal = false;
        assert_eq!(bellman_target(&t, &target, 0.0).unwrap(), 1.0);
        // r + gamma * max Q'
        let y = bellman_target(&t, &target, 0.9).unwrap();
        assert!((y - 2.8).abs() < 1e-12);
    }

    #[test]
    fn train_batch_zero_loss_leaves_parameters_unchanged() {
        // with gamma = 0 and rewards equal to the predicted Q(s, a), the TD
        // error is zero everywhere
        let mut model = constant_model(&[0.5, -0.3], 2);
        let target = model.clone();
        let before = model.clone();
        let t1 = Transition {
            state: vec![0.0, 0.0],
            action: 0,
            reward: 0.5,
            next_state: vec![0.0, 0.0],
            terminal: false,
        };
        let t2 = Transition { action: 1, reward: -0.3, ..t1.clone() };
        let loss = train_batch(&mut model, &target, &[&t1, &t2], 0.0, 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(model.layers, before.layers);
    }

    #[test]
    fn train_batch_single_transition_loss_is_delta_squared() {
        let mut model = constant_model(&[0.5, -0.3], 2);
        let target = model.clone();
        let t = Transition {
            state: vec![0.0, 0.0],
            action: 1,
            reward: 0.7,
            next_state: vec![0.0, 0.0],
            terminal: true,
        };
        // delta = Q(s, a) - r = -0.3 - 0.7 = -1.0
        let loss = train_batch(&mut model, &target, &[&t], 0.95, 1e-6).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_updates_on_frozen_batch_reduce_loss() {
        let mut model = Mlp::xavier(&[4, 16, 3], 7).unwrap();
        let target = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<Transition> = (0..16)
            .map(|i| Transition {
                state: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                action: i % 3,
                reward: rng.gen_range(-1.0..1.0),
                next_state: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                terminal: true,
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let first = train_batch(&mut model, &target, &refs, 0.9, 1e-3).unwrap();
        let mut last = first;
        for _ in 0..99 {
            last = train_batch(&mut model, &target, &refs, 0.9, 1e-3).unwrap();
        }
        assert!(last < first, "loss should fall: {first} -> {last}");
    }

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(learning_rate(1e-3f64, 0.1, 0), 1e-3);
        assert!((learning_rate(1e-3f64, 0.1, 10) - 5e-4).abs() < 1e-18);
        assert_eq!(learning_rate(1e-3f64, 0.0, 500), 1e-3);
    }

    #[test]
    fn epsilon_schedule_decays_to_floor() {
        let config = TrainConfig { epsilon_decay: 0.99, ..TrainConfig::default() };
        assert_eq!(epsilon_schedule(&config, 0), 1.0);
        let late = epsilon_schedule(&config, 100_000);
        assert_eq!(late, 0.01);
        let mid = epsilon_schedule(&config, 100);
        assert!((mid - 0.99f64.powi(100)).abs() < 1e-12);
        // monotone non-increasing
        let mut prev = f64::INFINITY;
        for ep in 0..2000 {
            let e = epsilon_schedule(&config, ep);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn train_zero_episodes_returns_initialized_model() {
        let scenario = Scenario::desk_default(1);
        let config = TrainConfig { episodes: 0, seed: 42, ..TrainConfig::default() };
        let result = train(&scenario, &config).unwrap();
        let mut dims = vec![scenario.state_dim()];
        dims.extend_from_slice(&config.hidden_dims);
        dims.push(scenario.num_candidates);
        let fresh = Mlp::xavier(&dims, 42).unwrap();
        assert_eq!(result.model.layers, fresh.layers);
        assert!(result.log.episodes.is_empty());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let mut scenario = Scenario::desk_default(5);
        scenario.episode_steps = 40;
        let config = TrainConfig {
            episodes: 6,
            buffer_capacity: 2000,
            batch_size: 16,
            eval_every: 0,
            hidden_dims: vec![16],
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&scenario, &config).unwrap();
        let b = train(&scenario, &config).unwrap();
        assert_eq!(a.model.layers, b.model.layers);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn greedy_policy_constant_and_affine_invariant() {
        let scenario = Scenario::desk_default(2);
        let normalizer = Normalizer::for_scenario(&scenario);
        let base = constant_model(&[0.3, 2.0, -1.0, 0.9], scenario.state_dim());
        let mut policy = GreedyPolicy::new(base.clone(), normalizer.clone());
        // positive affine transform of the outputs preserves the argmax
        let mut scaled = base.clone();
        for (w, b) in scaled.layers[0]
            .weights
            .iter_mut()
            .zip(std::iter::repeat(()))
        {
            *w *= 3.0;
            let _ = b;
        }
        for b in &mut scaled.layers[0].biases {
            *b = *b * 3.0 + 0.7;
        }
        let mut scaled_policy = GreedyPolicy::new(scaled, normalizer);
        let env = Environment::new(&scenario, 0).unwrap();
        let s = env.state();
        assert_eq!(policy.select(s), 1);
        assert_eq!(scaled_policy.select(s), 1);
    }

    #[test]
    fn greedy_policy_replays_recorded_actions() {
        let mut scenario = Scenario::desk_default(3);
        scenario.episode_steps = 25;
        let config = TrainConfig {
            episodes: 2,
            batch_size: 8,
            buffer_capacity: 512,
            eval_every: 0,
            hidden_dims: vec![8],
            seed: 4,
            ..TrainConfig::default()
        };
        let result = train(&scenario, &config).unwrap();
        let mut policy = GreedyPolicy::new(result.model, result.normalizer);
        let (_, trace) = crate::env::run_episode(&mut policy, &scenario, 11).unwrap();
        for step in &trace.steps {
            assert_eq!(policy.select(&step.state), step.action);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let scenario = Scenario::desk_default(8);
        let config =
            TrainConfig { episodes: 0, seed: 13, hidden_dims: vec![8], ..TrainConfig::default() };
        let result = train(&scenario, &config).unwrap();
        let ck = Checkpoint::new(&result, &config);
        let text = ck.to_json().unwrap();
        let loaded = Checkpoint::from_json(&text).unwrap();
        assert_eq!(ck, loaded);
        loaded.compatible_with(&scenario).unwrap();
        let mut other = scenario.clone();
        other.num_candidates = 5;
        other.bs_sites = Scenario::desk_default(8).bs_sites;
        assert!(loaded.compatible_with(&other).is_err());
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
