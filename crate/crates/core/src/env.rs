//! Residential energy-consumption environment with a two-objective reward.
//!
//! An episode is one day of 24 hourly steps over a [`DataWindow`]. Each hour
//! the controller decides whether to run the shiftable appliance. The reward
//! is a vector `[cost, comfort]`: `cost` is the negated, scaled grid
//! expenditure and `comfort` pays out the remaining task hours when the
//! appliance runs inside the comfort window.

use std::fs;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datahub::{DataWindow, HOURS_PER_DAY};

const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("negative input `{name}` = {value}")]
    NegativeInput { name: &'static str, value: f64 },
    #[error("day index {index} out of range for a {days}-day window")]
    IndexOutOfRange { index: usize, days: usize },
    #[error("episode already terminated")]
    SteppedAfterTerminal,
    #[error("normalization maximum for {0} is zero")]
    ZeroMax(&'static str),
    #[error("invalid preference weights [{w_cost}, {w_comf}]")]
    InvalidWeights { w_cost: f64, w_comf: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// Observation at the start of an hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub price: f64,
    pub renewable_power: f64,
    pub background_power: f64,
    pub task_remaining: u32,
    pub hour_of_day: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Idle,
    Run,
}

impl Action {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        match self {
            Action::Idle => 0,
            Action::Run => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Action::Idle),
            1 => Some(Action::Run),
            _ => None,
        }
    }

    pub fn runs(self) -> bool {
        self == Action::Run
    }
}

/// Per-step or accumulated `[cost, comfort]` reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub cost: f64,
    pub comfort: f64,
}

impl RewardVector {
    pub const ZERO: Self = Self { cost: 0.0, comfort: 0.0 };

    pub fn new(cost: f64, comfort: f64) -> Self {
        Self { cost, comfort }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.cost, self.comfort]
    }
}

impl Add for RewardVector {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            cost: self.cost + rhs.cost,
            comfort: self.comfort + rhs.comfort,
        }
    }
}

impl AddAssign for RewardVector {
    fn add_assign(&mut self, rhs: Self) {
        self.cost += rhs.cost;
        self.comfort += rhs.comfort;
    }
}

impl Sum for RewardVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, Add::add)
    }
}

/// A point on the two-objective simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct PreferenceWeights {
    w_cost: f64,
    w_comf: f64,
}

impl PreferenceWeights {
    pub fn new(w_cost: f64, w_comf: f64) -> Result<Self, EnvError> {
        let in_unit = |w: f64| (0.0..=1.0).contains(&w);
        if !in_unit(w_cost) || !in_unit(w_comf) || (w_cost + w_comf - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(EnvError::InvalidWeights { w_cost, w_comf });
        }
        Ok(Self { w_cost, w_comf })
    }

    /// `[w_cost, 1 - w_cost]`.
    pub fn from_cost_weight(w_cost: f64) -> Result<Self, EnvError> {
        Self::new(w_cost, 1.0 - w_cost)
    }

    pub fn w_cost(&self) -> f64 {
        self.w_cost
    }

    pub fn w_comf(&self) -> f64 {
        self.w_comf
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.w_cost, self.w_comf]
    }
}

impl TryFrom<[f64; 2]> for PreferenceWeights {
    type Error = EnvError;

    fn try_from([w_cost, w_comf]: [f64; 2]) -> Result<Self, EnvError> {
        Self::new(w_cost, w_comf)
    }
}

impl From<PreferenceWeights> for [f64; 2] {
    fn from(w: PreferenceWeights) -> Self {
        w.to_array()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Draw of the shiftable appliance while running, kW.
    pub appliance_power: f64,
    pub task_hours_per_day: u32,
    /// Hours (start-of-hour convention) that earn comfort reward.
    pub comfort_window: Vec<u32>,
    pub cost_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            appliance_power: 1.0,
            task_hours_per_day: 2,
            comfort_window: (0..=6).collect(),
            cost_scale: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.appliance_power.is_finite() && self.appliance_power > 0.0) {
            return Err(EnvError::InvalidConfig("appliance_power must be > 0".into()));
        }
        if self.task_hours_per_day < 1 || self.task_hours_per_day as usize > HOURS_PER_DAY {
            return Err(EnvError::InvalidConfig("task_hours_per_day must be in [1, 24]".into()));
        }
        if !(self.cost_scale.is_finite() && self.cost_scale > 0.0) {
            return Err(EnvError::InvalidConfig("cost_scale must be > 0".into()));
        }
        if let Some(h) = self.comfort_window.iter().find(|&&h| h as usize >= HOURS_PER_DAY) {
            return Err(EnvError::InvalidConfig(format!("comfort_window hour {h} out of range")));
        }
        Ok(())
    }

    pub fn in_comfort_window(&self, hour: u32) -> bool {
        self.comfort_window.contains(&hour)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("config serializes"))
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<f64, EnvError> {
    if value < 0.0 || value.is_nan() {
        Err(EnvError::NegativeInput { name, value })
    } else {
        Ok(value)
    }
}

/// `-cost_scale * price * max(shiftable + background - renewable, 0)`.
pub fn reward_cost(
    price: f64,
    shiftable_power: f64,
    background_power: f64,
    renewable_power: f64,
    cost_scale: f64,
) -> Result<f64, EnvError> {
    let price = non_negative("price", price)?;
    let shiftable = non_negative("shiftable_power", shiftable_power)?;
    let background = non_negative("background_power", background_power)?;
    let renewable = non_negative("renewable_power", renewable_power)?;
    let scale = non_negative("cost_scale", cost_scale)?;
    let grid_draw = (shiftable + background - renewable).max(0.0);
    // 0.0 rather than -0.0 when nothing is drawn.
    Ok(if grid_draw == 0.0 || price == 0.0 {
        0.0
    } else {
        -scale * price * grid_draw
    })
}

/// `task_remaining * [runs] * [hour in comfort window]`.
pub fn reward_comfort(task_remaining: u32, action: Action, hour_of_day: u32, comfort_window: &[u32]) -> f64 {
    if action.runs() && comfort_window.contains(&hour_of_day) {
        f64::from(task_remaining)
    } else {
        0.0
    }
}

/// Linear utility `cost * w_cost + comfort * w_comf`.
pub fn scalarize(reward: RewardVector, weights: PreferenceWeights) -> f64 {
    reward.cost * weights.w_cost + reward.comfort * weights.w_comf
}

fn check_day(window: &DataWindow, day_index: usize) -> Result<(), EnvError> {
    if day_index >= window.days {
        Err(EnvError::IndexOutOfRange {
            index: day_index,
            days: window.days,
        })
    } else {
        Ok(())
    }
}

fn observe(window: &DataWindow, day_index: usize, hour: u32, task_remaining: u32) -> EnvState {
    let i = day_index * HOURS_PER_DAY + hour as usize;
    EnvState {
        price: window.price[i],
        renewable_power: window.renewable[i],
        background_power: window.background[i],
        task_remaining,
        hour_of_day: hour,
    }
}

/// Hour-0 state of the given day with a full task.
pub fn reset(window: &DataWindow, day_index: usize, config: &EnvConfig) -> Result<EnvState, EnvError> {
    check_day(window, day_index)?;
    Ok(observe(window, day_index, 0, config.task_hours_per_day))
}

/// Result of one hourly transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: EnvState,
    pub reward: RewardVector,
    pub terminal: bool,
    /// The action actually applied; a run request with no task left is idle.
    pub applied: Action,
}

/// Advances one hour.
///
/// The terminal transition out of hour 23 returns a next state that keeps the
/// hour-23 observation with the updated task count; it is never bootstrapped
/// from.
pub fn step(
    state: &EnvState,
    action: Action,
    window: &DataWindow,
    day_index: usize,
    config: &EnvConfig,
) -> Result<Step, EnvError> {
    check_day(window, day_index)?;
    if state.hour_of_day as usize >= HOURS_PER_DAY {
        return Err(EnvError::InvalidState(format!("hour_of_day {} > 23", state.hour_of_day)));
    }
    let applied = if action.runs() && state.task_remaining > 0 {
        Action::Run
    } else {
        Action::Idle
    };
    let shiftable = if applied.runs() { config.appliance_power } else { 0.0 };
    let cost = reward_cost(
        state.price,
        shiftable,
        state.background_power,
        state.renewable_power,
        config.cost_scale,
    )?;
    let comfort = reward_comfort(state.task_remaining, applied, state.hour_of_day, &config.comfort_window);
    let task_remaining = state.task_remaining - u32::from(applied.runs());
    let terminal = state.hour_of_day as usize == HOURS_PER_DAY - 1;
    let next = if terminal {
        EnvState { task_remaining, ..*state }
    } else {
        observe(window, day_index, state.hour_of_day + 1, task_remaining)
    };
    Ok(Step {
        next,
        reward: RewardVector { cost, comfort },
        terminal,
        applied,
    })
}

/// Stateful wrapper over [`reset`] / [`step`] for one day.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    window: &'a DataWindow,
    config: &'a EnvConfig,
    day_index: usize,
    state: EnvState,
    done: bool,
}

impl<'a> Episode<'a> {
    pub fn new(window: &'a DataWindow, day_index: usize, config: &'a EnvConfig) -> Result<Self, EnvError> {
        let state = reset(window, day_index, config)?;
        Ok(Self {
            window,
            config,
            day_index,
            state,
            done: false,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn step(&mut self, action: Action) -> Result<Step, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterTerminal);
        }
        let out = step(&self.state, action, self.window, self.day_index, self.config)?;
        self.state = out.next;
        self.done = out.terminal;
        Ok(out)
    }
}

/// Actions and summed reward of a run over one or more days.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Applied actions, 24 per day.
    pub actions: Vec<Action>,
    pub reward: RewardVector,
}

/// Plays every day of `window` in order, resetting the task each day, with
/// actions chosen by `policy(day_index, state)`.
pub fn simulate<F>(window: &DataWindow, config: &EnvConfig, mut policy: F) -> Result<Trajectory, EnvError>
where
    F: FnMut(usize, &EnvState) -> Action,
{
    let mut actions = Vec::with_capacity(window.days * HOURS_PER_DAY);
    let mut reward = RewardVector::ZERO;
    for day in 0..window.days {
        let mut episode = Episode::new(window, day, config)?;
        while !episode.is_done() {
            let action = policy(day, episode.state());
            let out = episode.step(action)?;
            actions.push(out.applied);
            reward += out.reward;
        }
    }
    Ok(Trajectory { actions, reward })
}

/// Per-series maxima used to scale observations into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub max_price: f64,
    pub max_renewable: f64,
    pub max_background: f64,
}

impl WindowStats {
    pub fn from_window(window: &DataWindow) -> Self {
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        Self {
            max_price: max(&window.price),
            max_renewable: max(&window.renewable),
            max_background: max(&window.background),
        }
    }
}

pub const STATE_FEATURES: usize = 5;

pub fn normalize_state(
    state: &EnvState,
    stats: &WindowStats,
    config: &EnvConfig,
) -> Result<[f64; STATE_FEATURES], EnvError> {
    let positive = |name, v: f64| if v > 0.0 { Ok(v) } else { Err(EnvError::ZeroMax(name)) };
    let max_price = positive("price", stats.max_price)?;
    let max_renewable = positive("renewable", stats.max_renewable)?;
    let max_background = positive("background", stats.max_background)?;
    Ok([
        state.price / max_price,
        state.renewable_power / max_renewable,
        state.background_power / max_background,
        f64::from(state.task_remaining) / f64::from(config.task_hours_per_day),
        f64::from(state.hour_of_day) / HOURS_PER_DAY as f64,
    ])
}
