//! Weight-conditioned deep Q-learning.
//!
//! The Q-network sees the normalized environment state with the preference
//! weights appended and learns Q-values of the scalarized reward. Training
//! draws fresh weights every episode, so one network covers the whole
//! simplex; holding the weights fixed gives an ordinary single-preference
//! agent.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datahub::DataWindow;
use crate::env::{
    self, normalize_state, scalarize, Action, EnvConfig, EnvError, EnvState, PreferenceWeights, Trajectory,
    WindowStats, STATE_FEATURES,
};
use crate::nn::{Mlp, NnError, Optimizer, OutputActivation, Stepper};

pub const EXTENDED_STATE_LEN: usize = STATE_FEATURES + 2;
const AGENT_META_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("corrupt agent metadata: {0}")]
    CorruptMeta(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSchedule {
    /// `1 / (decay * episode)`.
    Reciprocal,
    /// `start * decay^(episode - 1)`.
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentHyper {
    pub episodes: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub epsilon_schedule: EpsilonSchedule,
    /// Gradient updates begin once this many episodes have completed.
    pub warmup_episodes: usize,
    pub target_sync_episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub hidden: Vec<usize>,
}

impl Default for AgentHyper {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            replay_capacity: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay: 0.98,
            epsilon_schedule: EpsilonSchedule::Reciprocal,
            warmup_episodes: 10,
            target_sync_episodes: 50,
            batch_size: 64,
            gamma: 1.0,
            learning_rate: 0.001,
            optimizer: Optimizer::Adam,
            hidden: vec![32, 32, 16],
        }
    }
}

impl AgentHyper {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: &str| Err(AgentError::InvalidHyper(msg.to_owned()));
        if self.episodes == 0 || self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync_episodes == 0 {
            return bad("episodes, replay_capacity, batch_size and target_sync_episodes must be >= 1");
        }
        if self.batch_size > self.replay_capacity {
            return bad("batch_size exceeds replay_capacity");
        }
        if !(0.0..=1.0).contains(&self.epsilon_end) || !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end exceeds epsilon_start");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay.is_finite()) {
            return bad("epsilon_decay must be > 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(EXTENDED_STATE_LEN);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(Action::COUNT);
        sizes
    }
}

/// Exploration rate for a 1-based episode number, clamped to
/// `[epsilon_end, epsilon_start]`.
pub fn epsilon(episode: usize, hyper: &AgentHyper) -> f64 {
    let episode = episode.max(1) as f64;
    let raw = match hyper.epsilon_schedule {
        EpsilonSchedule::Reciprocal => 1.0 / (episode * hyper.epsilon_decay),
        EpsilonSchedule::Multiplicative => hyper.epsilon_start * hyper.epsilon_decay.powf(episode - 1.0),
    };
    raw.clamp(hyper.epsilon_end, hyper.epsilon_start)
}

/// `w_cost ~ U[0, 1]`, `w_comf = 1 - w_cost`.
pub fn sample_weights<R: Rng>(rng: &mut R) -> PreferenceWeights {
    let w_cost: f64 = rng.gen_range(0.0..=1.0);
    PreferenceWeights::from_cost_weight(w_cost).expect("uniform draw lies on the simplex")
}

/// Normalized state followed by `[w_cost, w_comf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedState(pub [f64; EXTENDED_STATE_LEN]);

impl ExtendedState {
    pub fn new(
        state: &EnvState,
        stats: &WindowStats,
        config: &EnvConfig,
        weights: PreferenceWeights,
    ) -> Result<Self, EnvError> {
        let s = normalize_state(state, stats, config)?;
        let mut out = [0.0; EXTENDED_STATE_LEN];
        out[..STATE_FEATURES].copy_from_slice(&s);
        out[STATE_FEATURES] = weights.w_cost();
        out[STATE_FEATURES + 1] = weights.w_comf();
        Ok(Self(out))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: ExtendedState,
    pub action: Action,
    /// Scalarized reward.
    pub reward: f64,
    pub next: ExtendedState,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `batch` distinct transitions chosen uniformly at random.
    pub fn sample<'a, R: Rng>(&'a self, batch: usize, rng: &mut R) -> Vec<&'a Transition> {
        index::sample(rng, self.items.len(), batch.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

fn greedy_action(q: &[f64]) -> Action {
    // ties go to Idle
    if q[1] > q[0] {
        Action::Run
    } else {
        Action::Idle
    }
}

/// Epsilon-greedy choice over the two Q-values.
pub fn select_action<R: Rng>(
    q_net: &Mlp,
    state: &ExtendedState,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action, NnError> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(if rng.gen::<bool>() { Action::Run } else { Action::Idle });
    }
    Ok(greedy_action(&q_net.forward(state.as_slice())?))
}

/// A trained Q-network together with the normalization statistics of the
/// window it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct QAgent {
    pub net: Mlp,
    pub stats: WindowStats,
}

impl QAgent {
    pub fn q_values(
        &self,
        state: &EnvState,
        weights: PreferenceWeights,
        config: &EnvConfig,
    ) -> Result<Vec<f64>, AgentError> {
        let ext = ExtendedState::new(state, &self.stats, config, weights)?;
        Ok(self.net.forward(ext.as_slice())?)
    }

    pub fn greedy(&self, state: &EnvState, weights: PreferenceWeights, config: &EnvConfig) -> Result<Action, AgentError> {
        Ok(greedy_action(&self.q_values(state, weights, config)?))
    }

    /// Writes the network to `model_path` and provenance to `meta_path`.
    pub fn save(&self, model_path: &Path, meta_path: &Path, meta: &AgentMeta) -> Result<(), AgentError> {
        self.net.save(model_path)?;
        let meta = AgentMeta {
            stats: self.stats,
            ..meta.clone()
        };
        fs::write(meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
        Ok(())
    }

    pub fn load(model_path: &Path, meta_path: &Path) -> Result<(Self, AgentMeta), AgentError> {
        let net = Mlp::load(model_path)?;
        let meta: AgentMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)
            .map_err(|e| AgentError::CorruptMeta(e.to_string()))?;
        if meta.schema_version != AGENT_META_VERSION {
            return Err(AgentError::CorruptMeta(format!(
                "unsupported schema_version {}",
                meta.schema_version
            )));
        }
        if net.input_size() != EXTENDED_STATE_LEN || net.output_size() != Action::COUNT {
            return Err(AgentError::CorruptMeta(format!(
                "network shape {:?} is not a Q-network",
                net.layer_sizes()
            )));
        }
        Ok((Self { net, stats: meta.stats }, meta))
    }
}

/// Sidecar stored next to a saved Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub schema_version: u32,
    pub hyper: AgentHyper,
    pub seed: u64,
    pub stats: WindowStats,
    /// `None` for a weight-conditioned agent.
    pub fixed_weights: Option<PreferenceWeights>,
}

impl AgentMeta {
    pub fn new(hyper: &AgentHyper, seed: u64, stats: WindowStats, fixed_weights: Option<PreferenceWeights>) -> Self {
        Self {
            schema_version: AGENT_META_VERSION,
            hyper: hyper.clone(),
            seed,
            stats,
            fixed_weights,
        }
    }
}

/// Where each training episode's preference weights come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSource {
    /// Fresh uniform draw per episode.
    Sampled,
    Fixed(PreferenceWeights),
}

/// Per-episode training summary passed to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub epsilon: f64,
    pub weights: PreferenceWeights,
    pub reward: env::RewardVector,
}

/// Weight-conditioned training with fresh weights every episode.
pub fn train_dwmorl(
    window: &DataWindow,
    config: &EnvConfig,
    hyper: &AgentHyper,
    seed: u64,
) -> Result<QAgent, AgentError> {
    train(window, config, hyper, WeightSource::Sampled, seed, |_| {})
}

/// Same loop as [`train_dwmorl`] with the weights held constant.
pub fn train_fixed(
    window: &DataWindow,
    config: &EnvConfig,
    hyper: &AgentHyper,
    weights: PreferenceWeights,
    seed: u64,
) -> Result<QAgent, AgentError> {
    train(window, config, hyper, WeightSource::Fixed(weights), seed, |_| {})
}

/// DQN training loop on a one-day window.
///
/// Every step stores a transition; once `warmup_episodes` have completed,
/// every step also performs one minibatch update against the target network,
/// which is refreshed every `target_sync_episodes` episodes.
pub fn train<F>(
    window: &DataWindow,
    config: &EnvConfig,
    hyper: &AgentHyper,
    source: WeightSource,
    seed: u64,
    mut observer: F,
) -> Result<QAgent, AgentError>
where
    F: FnMut(&EpisodeSummary),
{
    hyper.validate()?;
    config.validate()?;
    window
        .validate()
        .map_err(|e| AgentError::InsufficientData(e.to_string()))?;
    if window.days != 1 {
        return Err(AgentError::InsufficientData(format!(
            "training needs exactly one day of data, got {}",
            window.days
        )));
    }
    let stats = WindowStats::from_window(window);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut online = Mlp::new(&hyper.layer_sizes(), OutputActivation::Identity, rng.gen())?;
    let mut target = online.clone();
    let mut memory = ReplayMemory::new(hyper.replay_capacity);
    let mut batch = UpdateBuffers::new(hyper.batch_size);
    let mut stepper = Stepper::new(hyper.optimizer, &online);

    for episode in 1..=hyper.episodes {
        let weights = match source {
            WeightSource::Sampled => sample_weights(&mut rng),
            WeightSource::Fixed(w) => w,
        };
        let eps = epsilon(episode, hyper);
        let learning = episode > hyper.warmup_episodes;
        let mut state = env::reset(window, 0, config)?;
        let mut ext = ExtendedState::new(&state, &stats, config, weights)?;
        let mut total = env::RewardVector::ZERO;
        loop {
            let action = select_action(&online, &ext, eps, &mut rng)?;
            let out = env::step(&state, action, window, 0, config)?;
            let next_ext = ExtendedState::new(&out.next, &stats, config, weights)?;
            memory.push(Transition {
                state: ext,
                action,
                reward: scalarize(out.reward, weights),
                next: next_ext,
                terminal: out.terminal,
            });
            total += out.reward;
            if learning && memory.len() >= hyper.batch_size {
                batch.update(&mut online, &mut stepper, &target, &memory, hyper, &mut rng)?;
            }
            if out.terminal {
                break;
            }
            state = out.next;
            ext = next_ext;
        }
        if episode % hyper.target_sync_episodes == 0 {
            target = online.clone();
        }
        observer(&EpisodeSummary {
            episode,
            epsilon: eps,
            weights,
            reward: total,
        });
    }
    Ok(QAgent { net: online, stats })
}

struct UpdateBuffers {
    states: Vec<f64>,
    next_states: Vec<f64>,
    d_output: Vec<f64>,
}

impl UpdateBuffers {
    fn new(batch: usize) -> Self {
        Self {
            states: Vec::with_capacity(batch * EXTENDED_STATE_LEN),
            next_states: Vec::with_capacity(batch * EXTENDED_STATE_LEN),
            d_output: Vec::with_capacity(batch * Action::COUNT),
        }
    }

    /// One optimizer step on the mean squared TD error of a sampled minibatch.
    fn update<R: Rng>(
        &mut self,
        online: &mut Mlp,
        stepper: &mut Stepper,
        target: &Mlp,
        memory: &ReplayMemory,
        hyper: &AgentHyper,
        rng: &mut R,
    ) -> Result<(), NnError> {
        let sample = memory.sample(hyper.batch_size, rng);
        let n = sample.len();
        self.states.clear();
        self.next_states.clear();
        for t in &sample {
            self.states.extend_from_slice(t.state.as_slice());
            self.next_states.extend_from_slice(t.next.as_slice());
        }
        let next_q = target.forward_batch(&self.next_states, n)?;
        let trace = online.forward_trace(&self.states, n)?;
        let q = trace.output();
        self.d_output.clear();
        self.d_output.resize(n * Action::COUNT, 0.0);
        let scale = 2.0 / n as f64;
        for (i, t) in sample.iter().enumerate() {
            let bootstrap = if t.terminal {
                0.0
            } else {
                let row = &next_q[i * Action::COUNT..(i + 1) * Action::COUNT];
                hyper.gamma * row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let slot = i * Action::COUNT + t.action.index();
            self.d_output[slot] = scale * (q[slot] - (t.reward + bootstrap));
        }
        let grads = online.backward_trace(&trace, &self.d_output)?;
        stepper.step(online, &grads, hyper.learning_rate)
    }
}

/// Epsilon used by non-greedy rollouts.
pub const ROLLOUT_EPSILON: f64 = 0.01;

/// Runs one episode per day of `window` under fixed weights and sums the
/// unscalarized rewards. Greedy rollouts never touch the RNG.
pub fn rollout(
    agent: &QAgent,
    weights: PreferenceWeights,
    window: &DataWindow,
    config: &EnvConfig,
    greedy: bool,
    seed: u64,
) -> Result<Trajectory, AgentError> {
    let eps = if greedy { 0.0 } else { ROLLOUT_EPSILON };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure = None;
    let traj = env::simulate(window, config, |_, state| {
        let chosen = ExtendedState::new(state, &agent.stats, config, weights)
            .map_err(AgentError::from)
            .and_then(|ext| select_action(&agent.net, &ext, eps, &mut rng).map_err(AgentError::from));
        chosen.unwrap_or_else(|e| {
            failure.get_or_insert(e);
            Action::Idle
        })
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}
