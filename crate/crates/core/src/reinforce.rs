//! Utility of simulated windows and score-function policy optimization.
//!
//! Each iteration simulates a batch of windows under the current policy,
//! scores them with the utility, and moves `ξ` along
//! `mean_i (U_i − b) · Σ_{requests k} ∇ log π_ξ(a_k | history before k)`
//! where `b` is the batch-mean utility when the baseline is on and 0
//! otherwise.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{ObservationWindow, UserRecord};
use crate::model::HistoryModel;
use crate::policy::{features, PolicyGrad, PolicyParams};
use crate::simulator::{sample_sequence, stream_rng, user_id};

/// `U(e) = Σ_k w_{v_k} − Σ_{requests} c_{a_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    /// Reward per event type `1..=V`.
    pub type_rewards: Vec<f64>,
    /// Cost per action `1..=A`.
    pub action_costs: Vec<f64>,
}

impl UtilitySpec {
    pub fn zero(num_types: usize, num_actions: usize) -> Self {
        Self { type_rewards: vec![0.0; num_types], action_costs: vec![0.0; num_actions] }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.type_rewards.iter().chain(&self.action_costs).all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("utility weights must be finite".into()));
        }
        if self.action_costs.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidConfig("action costs must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn utility(record: &UserRecord, spec: &UtilitySpec) -> f64 {
    record
        .events
        .iter()
        .map(|e| {
            let reward = spec.type_rewards.get(e.v as usize - 1).copied().unwrap_or(0.0);
            let cost = if e.a > 0 { spec.action_costs.get(e.a as usize - 1).copied().unwrap_or(0.0) } else { 0.0 };
            reward - cost
        })
        .sum()
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = shifted_mean(values);
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean computed relative to the first element, so a constant input returns
/// exactly that constant.
fn shifted_mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

/// Monte-Carlo estimate of the expected utility over `n` simulated windows.
/// One `u64` is drawn from `rng` to seed independent per-sample streams.
pub fn expected_utility<M: HistoryModel, R: RngCore + ?Sized>(
    model: &M,
    policy: &PolicyParams,
    window: ObservationWindow,
    spec: &UtilitySpec,
    n: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    expected_utility_seeded(model, policy, window, spec, n, rng.next_u64())
}

pub fn expected_utility_seeded<M: HistoryModel>(
    model: &M,
    policy: &PolicyParams,
    window: ObservationWindow,
    spec: &UtilitySpec,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidConfig("expected utility needs at least 2 samples".into()));
    }
    spec.validate()?;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = sample_sequence(model, policy, window, user_id(i), &mut stream_rng(seed, i as u64))?;
            Ok(utility(&r, spec))
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_se(&values))
}

/// `Σ_{requests k} ∇ log π(a_k | e_{1:k−1})`, recomputing the features the
/// simulator used when the action was drawn.
pub fn score(record: &UserRecord, policy: &PolicyParams) -> Result<PolicyGrad> {
    let schema = policy.schema;
    let mut g = PolicyGrad::zeros(policy.num_actions(), policy.num_features());
    for (k, e) in record.events.iter().enumerate() {
        if schema.is_request(e.v) {
            let f = features(&record.events[..k], e.t, record.window.t0, &schema);
            policy.add_log_prob_grad(&f, e.a, 1.0, &mut g)?;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: usize,
    pub tolerance: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Self { window: 50, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    /// Step `λ`. Zero is accepted and leaves `ξ` unchanged.
    pub step_size: f64,
    pub iterations: usize,
    /// Simulated windows per gradient estimate.
    pub batch_size: usize,
    pub baseline: bool,
    pub seed: u64,
    /// Stop early once the moving average of the mean utility stops moving.
    pub plateau: Option<Plateau>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            iterations: 200,
            batch_size: 32,
            baseline: true,
            seed: 0,
            plateau: Some(Plateau::default()),
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::InvalidConfig(format!("step_size must be nonnegative, got {}", self.step_size)));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("iterations and batch_size must be positive".into()));
        }
        if let Some(p) = self.plateau {
            if p.window == 0 || p.tolerance.is_nan() || p.tolerance < 0.0 {
                return Err(Error::InvalidConfig("plateau window must be positive and tolerance nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub mean_utility: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizeTrace {
    pub points: Vec<TracePoint>,
}

impl OptimizeTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_utility,se\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.iteration, p.mean_utility, p.se));
        }
        out
    }

    fn plateaued(&self, p: &Plateau) -> bool {
        let n = self.points.len();
        if n < 2 * p.window {
            return false;
        }
        let avg = |s: &[TracePoint]| s.iter().map(|x| x.mean_utility).sum::<f64>() / s.len() as f64;
        let recent = avg(&self.points[n - p.window..]);
        let before = avg(&self.points[n - 2 * p.window..n - p.window]);
        (recent - before).abs() <= p.tolerance
    }
}

/// One gradient estimate from a batch of simulated windows. Returns the
/// estimate and the batch utilities.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient<M: HistoryModel>(
    model: &M,
    policy: &PolicyParams,
    window: ObservationWindow,
    spec: &UtilitySpec,
    batch_size: usize,
    baseline: bool,
    seed: u64,
    first_stream: u64,
) -> Result<(PolicyGrad, Vec<f64>)> {
    let samples: Vec<(f64, PolicyGrad)> = (0..batch_size)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, first_stream + b as u64);
            let r = sample_sequence(model, policy, window, user_id(b), &mut rng)?;
            Ok((utility(&r, spec), score(&r, policy)?))
        })
        .collect::<Result<_>>()?;
    let utilities: Vec<f64> = samples.iter().map(|(u, _)| *u).collect();
    let b = if baseline { shifted_mean(&utilities) } else { 0.0 };
    let mut g = PolicyGrad::zeros(policy.num_actions(), policy.num_features());
    let inv = 1.0 / batch_size as f64;
    for (u, s) in &samples {
        let adv = u - b;
        if adv != 0.0 {
            g.add_scaled(s, adv * inv);
        }
    }
    Ok((g, utilities))
}

pub fn optimize_policy<M: HistoryModel>(
    model: &M,
    xi0: &PolicyParams,
    window: ObservationWindow,
    spec: &UtilitySpec,
    cfg: &OptimizeConfig,
) -> Result<(PolicyParams, OptimizeTrace)> {
    cfg.validate()?;
    spec.validate()?;
    xi0.validate()?;
    let mut xi = xi0.clone();
    let mut trace = OptimizeTrace::default();
    for it in 0..cfg.iterations {
        let first = (it as u64) * cfg.batch_size as u64;
        let (g, utilities) = batch_gradient(model, &xi, window, spec, cfg.batch_size, cfg.baseline, cfg.seed, first)?;
        xi.ascend(&g, cfg.step_size);
        if !xi.is_finite() {
            return Err(Error::DivergenceDetected { iteration: it, what: "non-finite policy parameters".into() });
        }
        let (mean_utility, se) = mean_and_se(&utilities);
        trace.points.push(TracePoint { iteration: it + 1, mean_utility, se });
        if let Some(p) = &cfg.plateau {
            if trace.plateaued(p) {
                break;
            }
        }
    }
    Ok((xi, trace))
}
