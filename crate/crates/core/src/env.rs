//! Bus engine replacement environment, optionally padded with dummy state
//! coordinates that affect neither rewards nor transitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpSpec, RewardModel, ThetaVector};

pub const CONTINUE: usize = 0;
pub const REPLACE: usize = 1;

/// Reward parameterization of the bus environment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusReward {
    /// `r(continue) = -θ₁·m`, `r(replace) = -θ₂`.
    #[default]
    Standard,
    /// `r(continue) = 0`, `r(replace) = θ₁·m - θ₂`.
    ZeroContinue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BusEnvConfig {
    pub mileage_grid_size: usize,
    /// Mileage of the top grid point; grid points are evenly spaced from 0.
    pub mileage_max: f64,
    pub theta_true: ThetaVector,
    pub gamma: f64,
    /// `drift[k]` is the probability of advancing `k` grid points.
    pub drift: Vec<f64>,
    pub dummy_dims: usize,
    pub dummy_range: (f64, f64),
    /// Number of discrete levels per dummy coordinate.
    pub dummy_levels: usize,
    pub reward: BusReward,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl Default for BusEnvConfig {
    fn default() -> Self {
        Self {
            mileage_grid_size: 200,
            mileage_max: 10.0,
            theta_true: ThetaVector { values: vec![0.3, 2.0], bounds: None },
            gamma: 0.95,
            drift: vec![0.3, 0.5, 0.2],
            dummy_dims: 0,
            dummy_range: (-5.0, 5.0),
            dummy_levels: 5,
            reward: BusReward::Standard,
            r_max: None,
        }
    }
}

impl BusEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mileage_grid_size < 2 {
            return Err(Error::invalid("mileage_grid_size must be at least 2"));
        }
        if !(self.mileage_max > 0.0) || !self.mileage_max.is_finite() {
            return Err(Error::invalid("mileage_max must be positive"));
        }
        if self.theta_true.len() != 2 {
            return Err(Error::invalid("bus theta has exactly two entries"));
        }
        ThetaVector::new(self.theta_true.values.clone())?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must lie in [0, 1)"));
        }
        if self.drift.is_empty()
            || self.drift.iter().any(|p| !(*p >= 0.0))
            || (self.drift.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid("drift must be a probability vector"));
        }
        let (lo, hi) = self.dummy_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("dummy_range must be a well-ordered finite interval"));
        }
        if self.dummy_dims > 0 && self.dummy_levels < 1 {
            return Err(Error::invalid("dummy_levels must be at least 1"));
        }
        Ok(())
    }

    pub fn mileage(&self, index: usize) -> f64 {
        index as f64 * self.mileage_max / (self.mileage_grid_size - 1) as f64
    }

    /// Dummy levels: midpoints of `dummy_levels` equal cells of `dummy_range`.
    pub fn dummy_values(&self) -> Vec<f64> {
        let (lo, hi) = self.dummy_range;
        let w = (hi - lo) / self.dummy_levels as f64;
        (0..self.dummy_levels).map(|k| lo + (k as f64 + 0.5) * w).collect()
    }

    /// Number of distinct dummy configurations.
    pub fn dummy_combinations(&self) -> usize {
        self.dummy_levels.pow(self.dummy_dims as u32)
    }

    pub fn n_states(&self) -> usize {
        self.mileage_grid_size * self.dummy_combinations()
    }

    /// State index for mileage index `m` and dummy combination `d`.
    pub fn state_index(&self, m: usize, d: usize) -> usize {
        m * self.dummy_combinations() + d
    }
}

/// Builds the environment's [`MdpSpec`]. States are ordered mileage-major,
/// then dummy coordinates lexicographically.
pub fn make_bus_env(config: &BusEnvConfig) -> Result<MdpSpec> {
    config.validate()?;
    let g = config.mileage_grid_size;
    let combos = config.dummy_combinations();
    let levels = config.dummy_values();
    let mut states = Vec::with_capacity(g * combos);
    for m in 0..g {
        for d in 0..combos {
            let mut p = vec![config.mileage(m)];
            let mut rest = d;
            let mut coords = vec![0.0; config.dummy_dims];
            for c in coords.iter_mut().rev() {
                *c = levels[rest % config.dummy_levels];
                rest /= config.dummy_levels;
            }
            p.extend(coords);
            states.push(p);
        }
    }
    let dummy_p = 1.0 / combos as f64;
    let mut rows = Vec::with_capacity(g * combos * 2);
    for m in 0..g {
        for _ in 0..combos {
            for start in [m, 0] {
                let mut row = Vec::with_capacity(config.drift.len() * combos);
                for (k, &p) in config.drift.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let target = (start + k).min(g - 1);
                    for d in 0..combos {
                        row.push((config.state_index(target, d), p * dummy_p));
                    }
                }
                rows.push(row);
            }
        }
    }
    let reward = match config.reward {
        BusReward::Standard => RewardModel::BusEngine { mileage_coord: 0 },
        BusReward::ZeroContinue => RewardModel::BusEngineAnchored { mileage_coord: 0 },
    };
    let mdp = MdpSpec::new(
        states,
        vec!["continue".into(), "replace".into()],
        config.gamma,
        rows,
        reward,
    )?;
    match config.r_max {
        Some(r) => mdp.with_r_max(r),
        None => Ok(mdp),
    }
}
