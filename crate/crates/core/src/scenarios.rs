//! Rule-based simulated users that run the appliance at fixed hours every day.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datahub::{DataWindow, HOURS_PER_DAY};
use crate::env::{simulate, Action, EnvConfig, EnvError, RewardVector};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("demonstrations need a one-day window, got {0} days")]
    WindowMismatch(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// The three benchmark users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    AlwaysMaxComfort,
    AlwaysSaveCost,
    Mixture,
}

impl Scenario {
    /// Ordered from most comfort-seeking to most cost-saving.
    pub const ALL: [Scenario; 3] = [Scenario::AlwaysMaxComfort, Scenario::Mixture, Scenario::AlwaysSaveCost];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::AlwaysMaxComfort => "always_max_comfort",
            Scenario::AlwaysSaveCost => "always_save_cost",
            Scenario::Mixture => "mixture",
        }
    }

    pub fn run_hours(self) -> [u32; 2] {
        match self {
            // 2:00-4:00 am
            Scenario::AlwaysMaxComfort => [2, 3],
            // 10:00-11:00 am and 2:00-3:00 pm
            Scenario::AlwaysSaveCost => [10, 14],
            // 6:00-7:00 am and 10:00-11:00 am
            Scenario::Mixture => [6, 10],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| ScenarioError::UnknownScenario(s.to_owned()))
    }
}

/// Hours (start-of-hour convention) at which a user runs the appliance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub name: String,
    /// Sorted, distinct.
    pub run_hours: Vec<u32>,
}

impl Schedule {
    pub fn new(name: impl Into<String>, hours: &[u32]) -> Result<Self, ScenarioError> {
        let mut run_hours = hours.to_vec();
        run_hours.sort_unstable();
        run_hours.dedup();
        if run_hours.len() != hours.len() {
            return Err(ScenarioError::InvalidSchedule(format!("repeated hour in {hours:?}")));
        }
        if let Some(h) = run_hours.iter().find(|&&h| h as usize >= HOURS_PER_DAY) {
            return Err(ScenarioError::InvalidSchedule(format!("hour {h} out of range")));
        }
        Ok(Self {
            name: name.into(),
            run_hours,
        })
    }

    /// Parses a comma-separated hour list such as `2,3`.
    pub fn parse_hours(name: impl Into<String>, list: &str) -> Result<Self, ScenarioError> {
        let hours = list
            .split(',')
            .map(|h| {
                h.trim()
                    .parse::<u32>()
                    .map_err(|_| ScenarioError::InvalidSchedule(format!("bad hour `{h}` in `{list}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, &hours)
    }

    pub fn validate_for(&self, config: &EnvConfig) -> Result<(), ScenarioError> {
        if self.run_hours.len() != config.task_hours_per_day as usize {
            return Err(ScenarioError::InvalidSchedule(format!(
                "{} run hours but the task takes {} hours",
                self.run_hours.len(),
                config.task_hours_per_day
            )));
        }
        Ok(())
    }

    pub fn runs_at(&self, hour: u32) -> bool {
        self.run_hours.contains(&hour)
    }
}

pub fn builtin_schedule(name: &str) -> Result<Schedule, ScenarioError> {
    let scenario: Scenario = name.parse()?;
    Ok(scenario_schedule(scenario))
}

pub fn scenario_schedule(scenario: Scenario) -> Schedule {
    Schedule::new(scenario.name(), &scenario.run_hours()).expect("built-in schedules are valid")
}

/// Cumulative reward of a user following `schedule` on every day of `window`.
pub type UserResult = RewardVector;

pub fn run_schedule(schedule: &Schedule, window: &DataWindow, config: &EnvConfig) -> Result<UserResult, ScenarioError> {
    schedule.validate_for(config)?;
    let traj = simulate(window, config, |_, state| {
        if schedule.runs_at(state.hour_of_day) {
            Action::Run
        } else {
            Action::Idle
        }
    })?;
    Ok(traj.reward)
}

/// Demonstration fed to the inference model: the schedule's cumulative
/// reward on the one-day training window.
pub fn demo_features(schedule: &Schedule, window: &DataWindow, config: &EnvConfig) -> Result<RewardVector, ScenarioError> {
    if window.days != 1 {
        return Err(ScenarioError::WindowMismatch(window.days));
    }
    run_schedule(schedule, window, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{slice_window, synthesize};

    #[test]
    fn builtin_hours() {
        assert_eq!(builtin_schedule("always_max_comfort").unwrap().run_hours, vec![2, 3]);
        assert_eq!(builtin_schedule("always_save_cost").unwrap().run_hours, vec![10, 14]);
        assert_eq!(builtin_schedule("mixture").unwrap().run_hours, vec![6, 10]);
        assert_eq!(
            builtin_schedule("night_owl"),
            Err(ScenarioError::UnknownScenario("night_owl".into()))
        );
    }

    #[test]
    fn one_day_comfort_totals() {
        let w = synthesize(7, 1);
        let cfg = EnvConfig::default();
        let comfort = |name| run_schedule(&builtin_schedule(name).unwrap(), &w, &cfg).unwrap().comfort;
        assert_eq!(comfort("always_max_comfort"), 3.0);
        assert_eq!(comfort("always_save_cost"), 0.0);
        assert_eq!(comfort("mixture"), 2.0);
    }

    #[test]
    fn demo_features_contract() {
        let w = synthesize(7, 1);
        let cfg = EnvConfig::default();
        let save = builtin_schedule("always_save_cost").unwrap();
        let comfort = builtin_schedule("always_max_comfort").unwrap();
        let a = demo_features(&save, &w, &cfg).unwrap();
        assert_eq!(a.comfort, 0.0);
        assert_eq!(a, demo_features(&save, &w, &cfg).unwrap());
        assert!(a.cost >= demo_features(&comfort, &w, &cfg).unwrap().cost);
        let week = synthesize(7, 7);
        assert_eq!(demo_features(&save, &week, &cfg), Err(ScenarioError::WindowMismatch(7)));
    }

    #[test]
    fn week_equals_sum_of_days() {
        let week = synthesize(8, 7);
        let cfg = EnvConfig::default();
        for sc in Scenario::ALL {
            let s = scenario_schedule(sc);
            let total = run_schedule(&s, &week, &cfg).unwrap();
            let by_day: RewardVector = (0..7)
                .map(|d| run_schedule(&s, &slice_window(&week, d).unwrap(), &cfg).unwrap())
                .sum();
            assert!((total.cost - by_day.cost).abs() < 1e-12);
            assert_eq!(total.comfort, by_day.comfort);
        }
    }

    #[test]
    fn comfort_ordering_across_users() {
        let cfg = EnvConfig::default();
        for seed in 0..5 {
            let w = synthesize(seed, 7);
            let c: Vec<f64> = Scenario::ALL
                .iter()
                .map(|&sc| run_schedule(&scenario_schedule(sc), &w, &cfg).unwrap().comfort)
                .collect();
            assert!(c[0] >= c[1] && c[1] >= c[2] && c[2] == 0.0);
        }
    }

    #[test]
    fn custom_schedules() {
        let s = Schedule::parse_hours("custom", "14, 3").unwrap();
        assert_eq!(s.run_hours, vec![3, 14]);
        assert!(Schedule::parse_hours("custom", "3,x").is_err());
        assert!(Schedule::parse_hours("custom", "3,3").is_err());
        assert!(Schedule::parse_hours("custom", "3,24").is_err());
        let three = Schedule::parse_hours("custom", "1,2,3").unwrap();
        assert!(three.validate_for(&EnvConfig::default()).is_err());
    }
}
