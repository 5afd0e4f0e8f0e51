//! Windowed, right-censored log-likelihood and maximum-likelihood training.
//!
//! For a record observed on `[t0, t0 + t_max]` with events `e_1..e_B` the
//! log-likelihood is
//!
//! ```text
//! Σ_k log q_{v_k}(φ_k) p(τ_k | v_k, φ_k)  +  log S(t0 + t_max − t_B; φ_{B+1})
//! ```
//!
//! where `φ_k` is produced by stepping the model on the start pseudo-event
//! and then on each observed event, and `S` is the probability that no
//! event happens before the window closes. A sequence that does not fit in
//! the window has log-likelihood `−∞`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay_dist::PhiGrad;
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::event_model::{validate_record, AugmentedEvent, UserRecord};
use crate::model::HistoryModel;
use crate::simulator::stream_rng;

fn invalid(record: &UserRecord, e: Error) -> Error {
    Error::InvalidRecord { user: record.user_id.clone(), source: Box::new(e) }
}

fn fits_window(record: &UserRecord) -> bool {
    record.events.iter().all(|e| record.window.contains(e.t))
}

pub fn sequence_log_likelihood<M: HistoryModel>(record: &UserRecord, model: &M) -> Result<f64> {
    if !fits_window(record) {
        return Ok(f64::NEG_INFINITY);
    }
    validate_record(record, model.schema(), false).map_err(|e| invalid(record, e))?;

    let mut state = model.initial_state();
    let mut prev = AugmentedEvent::start(record.window.t0);
    let mut prev_delay = 0.0;
    let mut total = 0.0;
    for e in &record.events {
        let (phi, next) = model.step(&state, &prev, prev_delay).map_err(|err| invalid(record, err))?;
        let tau = e.t - prev.t;
        total += phi.event_log_prob(tau, e.v).map_err(|err| invalid(record, err))?;
        if total == f64::NEG_INFINITY {
            return Ok(total);
        }
        state = next;
        prev_delay = tau;
        prev = *e;
    }
    let (phi, _) = model.step(&state, &prev, prev_delay).map_err(|err| invalid(record, err))?;
    Ok(total + phi.survival(record.window.end() - prev.t).ln())
}

/// Per-user log-likelihoods in input order.
pub fn per_user_log_likelihood<M: HistoryModel>(records: &[UserRecord], model: &M) -> Result<Vec<f64>> {
    records.par_iter().map(|r| sequence_log_likelihood(r, model)).collect()
}

/// Sum over independent users. The summation order is the input order.
pub fn dataset_log_likelihood<M: HistoryModel>(records: &[UserRecord], model: &M) -> Result<f64> {
    Ok(per_user_log_likelihood(records, model)?.into_iter().sum())
}

/// Log-likelihood of one record and its gradient, added into `grad`.
pub fn sequence_log_likelihood_grad(
    record: &UserRecord,
    weights: &EncoderWeights,
    grad: &mut EncoderWeights,
) -> Result<f64> {
    if !fits_window(record) {
        return Ok(f64::NEG_INFINITY);
    }
    validate_record(record, &weights.config.schema, false).map_err(|e| invalid(record, e))?;
    let (trace, _) = weights.forward_trace(record.window.t0, &record.events).map_err(|e| invalid(record, e))?;
    let m = weights.config.num_marks();
    let mut phi_grads = vec![PhiGrad::zeros(m); trace.len()];
    let mut total = 0.0;
    let mut prev_t = record.window.t0;
    for ((e, cache), g) in record.events.iter().zip(&trace).zip(phi_grads.iter_mut()) {
        total += cache.phi.event_log_prob_grad(e.t - prev_t, e.v, g).map_err(|err| invalid(record, err))?;
        prev_t = e.t;
    }
    let last = trace.last().expect("trace has B + 1 steps");
    total += last.phi.log_survival_grad(record.window.end() - prev_t, phi_grads.last_mut().expect("nonempty"));
    if !total.is_finite() {
        return Ok(total);
    }
    weights.backward_into(&trace, &phi_grads, grad)?;
    Ok(total)
}

/// Dataset log-likelihood and its gradient. Per-user gradients are summed in
/// input order so the result does not depend on thread scheduling.
pub fn dataset_log_likelihood_grad(records: &[UserRecord], weights: &EncoderWeights) -> Result<(f64, EncoderWeights)> {
    let refs: Vec<&UserRecord> = records.iter().collect();
    batch_log_likelihood_grad(&refs, weights)
}

fn batch_log_likelihood_grad(records: &[&UserRecord], weights: &EncoderWeights) -> Result<(f64, EncoderWeights)> {
    let parts: Vec<(f64, EncoderWeights)> = records
        .par_iter()
        .map(|r| {
            let mut g = EncoderWeights::zeros(weights.config);
            let ll = sequence_log_likelihood_grad(r, weights, &mut g)?;
            Ok((ll, g))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grad = EncoderWeights::zeros(weights.config);
    for (ll, g) in &parts {
        total += ll;
        grad.add_scaled(g, 1.0);
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GradientAscent,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub step_size: f64,
    pub epochs: usize,
    /// Users per minibatch.
    pub batch_size: usize,
    /// Weight `λ` of the quadratic log-prior `−λ‖θ‖²`.
    pub l2: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { step_size: 0.01, epochs: 20, batch_size: 64, l2: 0.0, seed: 0, optimizer: Optimizer::Adam }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2 must be nonnegative, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_ll: f64,
    /// `train_ll − λ‖θ‖²`
    pub objective: f64,
    pub heldout_ll: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochStats>,
}

impl FitReport {
    /// `epoch,train_ll,heldout_ll` with an empty field when there is no
    /// held-out set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_ll,heldout_ll\n");
        for e in &self.epochs {
            let held = e.heldout_ll.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_ll, held));
        }
        out
    }
}

/// Penalized training objective `log L(D | θ) − λ‖θ‖²`.
pub fn objective(records: &[UserRecord], weights: &EncoderWeights, l2: f64) -> Result<f64> {
    Ok(dataset_log_likelihood(records, weights)? - l2 * weights.sum_sq())
}

struct AdamState {
    m: EncoderWeights,
    v: EncoderWeights,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(w: &EncoderWeights) -> Self {
        Self { m: EncoderWeights::zeros(w.config), v: EncoderWeights::zeros(w.config), t: 0 }
    }

    fn ascend(&mut self, w: &mut EncoderWeights, g: &EncoderWeights, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let tensors = w.tensors_mut().into_iter().zip(g.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for ((((_, w), (_, g)), (_, m)), (_, v)) in tensors {
            for i in 0..w.data.len() {
                let gi = g.data[i];
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * gi;
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * gi * gi;
                w.data[i] += lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains fresh weights initialized from `cfg.seed`.
pub fn fit_mle(
    train: &[UserRecord],
    heldout: &[UserRecord],
    model: EncoderConfig,
    cfg: &FitConfig,
) -> Result<(EncoderWeights, FitReport)> {
    let initial = EncoderWeights::init(model, cfg.seed)?;
    fit_mle_from(initial, train, heldout, cfg)
}

/// Minibatch ascent on the per-user objective
/// `(log L(D | θ) − λ‖θ‖²) / N`. Batches partition users; one user's
/// sequence is never split.
pub fn fit_mle_from(
    initial: EncoderWeights,
    train: &[UserRecord],
    heldout: &[UserRecord],
    cfg: &FitConfig,
) -> Result<(EncoderWeights, FitReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let schema = initial.config.schema;
    for r in train.iter().chain(heldout) {
        validate_record(r, &schema, false).map_err(|e| invalid(r, e))?;
    }

    let n = train.len() as f64;
    let mut w = initial;
    let mut adam = AdamState::new(&w);
    let mut report = FitReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let users: Vec<&UserRecord> = batch.iter().map(|&i| &train[i]).collect();
            let (ll, mut g) = batch_log_likelihood_grad(&users, &w).map_err(|e| diverged(e, epoch))?;
            if !ll.is_finite() {
                return Err(Error::DivergenceDetected { iteration: epoch, what: format!("batch log-likelihood {ll}") });
            }
            let scale = 1.0 / users.len() as f64;
            for (_, m) in g.tensors_mut() {
                m.data.iter_mut().for_each(|x| *x *= scale);
            }
            g.add_scaled(&w, -2.0 * cfg.l2 / n);
            match cfg.optimizer {
                Optimizer::GradientAscent => w.add_scaled(&g, cfg.step_size),
                Optimizer::Adam => adam.ascend(&mut w, &g, cfg.step_size),
            }
            if !w.is_finite() {
                return Err(Error::DivergenceDetected { iteration: epoch, what: "non-finite weights".into() });
            }
        }
        let train_ll = dataset_log_likelihood(train, &w).map_err(|e| diverged(e, epoch))?;
        let obj = train_ll - cfg.l2 * w.sum_sq();
        if !obj.is_finite() {
            return Err(Error::DivergenceDetected { iteration: epoch, what: format!("objective {obj}") });
        }
        let heldout_ll = if heldout.is_empty() {
            None
        } else {
            Some(dataset_log_likelihood(heldout, &w).map_err(|e| diverged(e, epoch))?)
        };
        report.epochs.push(EpochStats { epoch: epoch + 1, train_ll, objective: obj, heldout_ll });
    }
    Ok((w, report))
}

/// Overflowing activations during training mean the iterate diverged.
fn diverged(e: Error, epoch: usize) -> Error {
    let inner = match &e {
        Error::InvalidRecord { source, .. } => source.as_ref(),
        other => other,
    };
    match inner {
        Error::NonFiniteActivation { step } => {
            Error::DivergenceDetected { iteration: epoch, what: format!("non-finite activation at step {step}") }
        }
        _ => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay_dist::{EventDistParams, PiecewisePower};
    use crate::event_model::{EventSchema, ObservationWindow};
    use crate::model::ConstantModel;

    fn pp(a: f64, b: f64, t: f64) -> PiecewisePower {
        PiecewisePower::new(a, b, t).unwrap()
    }

    fn constant(q: Vec<f64>, delays: Vec<PiecewisePower>) -> ConstantModel {
        let n = q.len() as u32;
        ConstantModel::new(EventSchema::new(n, 1), EventDistParams::new(q, delays).unwrap()).unwrap()
    }

    fn window(t0: f64, t_max: f64) -> ObservationWindow {
        ObservationWindow::new(t0, t_max).unwrap()
    }

    fn small_config() -> EncoderConfig {
        EncoderConfig::new(EventSchema::new(3, 2)).with_dims(5, 3)
    }

    #[test]
    fn empty_sequence_is_the_survival_term() {
        let model = constant(vec![0.3, 0.4], vec![pp(1.0, 3.0, 1.0), pp(2.0, 2.0, 4.0)]);
        let r = UserRecord::new("u", window(2.0, 5.0), vec![]);
        let ll = sequence_log_likelihood(&r, &model).unwrap();
        assert!((ll - model.phi().survival(5.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn out_of_window_is_negative_infinity() {
        let model = constant(vec![0.5], vec![pp(1.0, 3.0, 1.0)]);
        let r = UserRecord::new("u", window(0.0, 5.0), vec![AugmentedEvent::new(6.0, 1, 0)]);
        assert_eq!(sequence_log_likelihood(&r, &model).unwrap(), f64::NEG_INFINITY);
        let r = UserRecord::new("u", window(0.0, 5.0), vec![AugmentedEvent::new(-1.0, 1, 0)]);
        assert_eq!(sequence_log_likelihood(&r, &model).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn unordered_record_is_invalid() {
        let model = constant(vec![0.5], vec![pp(1.0, 3.0, 1.0)]);
        let r = UserRecord::new(
            "bob",
            window(0.0, 5.0),
            vec![AugmentedEvent::new(2.0, 1, 0), AugmentedEvent::new(1.0, 1, 0)],
        );
        match sequence_log_likelihood(&r, &model) {
            Err(Error::InvalidRecord { user, .. }) => assert_eq!(user, "bob"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_events_hand_product() {
        let d1 = pp(1.0, 3.0, 1.0);
        let d2 = pp(0.5, 2.5, 2.0);
        let model = constant(vec![0.3, 0.6], vec![d1, d2]);
        let r = UserRecord::new(
            "u",
            window(1.0, 10.0),
            vec![AugmentedEvent::new(1.5, 2, 0), AugmentedEvent::new(4.0, 1, 0)],
        );
        // q_2 p_2(0.5) · q_1 p_1(2.5) · S(11 − 4)
        let s = 0.1 + 0.3 * (1.0 - d1.cdf(7.0)) + 0.6 * (1.0 - d2.cdf(7.0));
        let expected = (0.6 * d2.density(0.5) * 0.3 * d1.density(2.5) * s).ln();
        let ll = sequence_log_likelihood(&r, &model).unwrap();
        assert!((ll - expected).abs() < 1e-12, "{ll} vs {expected}");
    }

    #[test]
    fn zero_mass_event_is_impossible() {
        let model = constant(vec![0.0, 0.5], vec![pp(1.0, 3.0, 1.0), pp(1.0, 3.0, 1.0)]);
        let r = UserRecord::new("u", window(0.0, 10.0), vec![AugmentedEvent::new(1.0, 1, 0)]);
        assert_eq!(sequence_log_likelihood(&r, &model).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn event_at_window_end_has_no_censoring() {
        let d = pp(1.0, 3.0, 1.0);
        let model = constant(vec![0.5], vec![d]);
        let r = UserRecord::new("u", window(0.0, 2.0), vec![AugmentedEvent::new(2.0, 1, 0)]);
        let expected = (0.5 * d.density(2.0)).ln();
        assert!((sequence_log_likelihood(&r, &model).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn shrinking_the_window_below_the_last_event_is_impossible() {
        let model = constant(vec![0.5], vec![pp(1.0, 3.0, 1.0)]);
        let events = vec![AugmentedEvent::new(1.0, 1, 0), AugmentedEvent::new(3.0, 1, 0)];
        for t_max in [3.0, 4.0, 10.0] {
            let r = UserRecord::new("u", window(0.0, t_max), events.clone());
            assert!(sequence_log_likelihood(&r, &model).unwrap().is_finite());
        }
        for t_max in [2.999, 1.5, 0.5] {
            let r = UserRecord::new("u", window(0.0, t_max), events.clone());
            assert_eq!(sequence_log_likelihood(&r, &model).unwrap(), f64::NEG_INFINITY);
        }
    }

    fn random_records(n: usize, seed: u64) -> Vec<UserRecord> {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|i| {
                let mut t = 0.0;
                let mut events = vec![];
                for _ in 0..rng.random_range(0..6) {
                    t += rng.random_range(0.1..3.0);
                    let v = rng.random_range(1..=3u32);
                    let a = if v == 3 { rng.random_range(1..=2) } else { 0 };
                    events.push(AugmentedEvent::new(t, v, a));
                }
                UserRecord::new(format!("u{i}"), window(0.0, t + 1.0), events)
            })
            .collect()
    }

    #[test]
    fn dataset_is_a_sum_over_users() {
        let w = EncoderWeights::init(small_config(), 4).unwrap();
        let records = random_records(3, 1);
        let single = sequence_log_likelihood(&records[0], &w).unwrap();
        assert_eq!(dataset_log_likelihood(&records[..1], &w).unwrap(), single);
        let dup = vec![records[0].clone(), records[0].clone()];
        assert_eq!(dataset_log_likelihood(&dup, &w).unwrap(), 2.0 * single);
        let sum: f64 = records.iter().map(|r| sequence_log_likelihood(r, &w).unwrap()).sum();
        assert!((dataset_log_likelihood(&records, &w).unwrap() - sum).abs() < 1e-12);
    }

    #[test]
    fn invalid_user_is_named() {
        let w = EncoderWeights::init(small_config(), 4).unwrap();
        let mut records = random_records(3, 1);
        records[1].user_id = "carol".into();
        records[1].events = vec![AugmentedEvent::new(0.5, 1, 2)];
        match dataset_log_likelihood(&records, &w) {
            Err(Error::InvalidRecord { user, source }) => {
                assert_eq!(user, "carol");
                assert!(matches!(*source, Error::ActionOnNonRequest { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences_end_to_end() {
        let w = EncoderWeights::init(small_config(), 8).unwrap();
        let r = UserRecord::new(
            "u",
            window(0.0, 9.0),
            vec![
                AugmentedEvent::new(0.7, 1, 0),
                AugmentedEvent::new(1.9, 3, 2),
                AugmentedEvent::new(2.2, 2, 0),
                AugmentedEvent::new(5.0, 3, 1),
                AugmentedEvent::new(7.5, 1, 0),
            ],
        );
        let (ll, g) = dataset_log_likelihood_grad(std::slice::from_ref(&r), &w).unwrap();
        assert_eq!(ll, sequence_log_likelihood(&r, &w).unwrap());
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..w.num_params() {
            let mut wp = w.clone();
            *wp.flat_mut(i) += h;
            let mut wm = w.clone();
            *wm.flat_mut(i) -= h;
            let fd =
                (sequence_log_likelihood(&r, &wp).unwrap() - sequence_log_likelihood(&r, &wm).unwrap()) / (2.0 * h);
            let an = g.flat(i);
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let records = random_records(4, 2);
        let cfg = FitConfig { epochs: 0, ..FitConfig::default() };
        let initial = EncoderWeights::init(small_config(), cfg.seed).unwrap();
        let (w, report) = fit_mle(&records, &[], small_config(), &cfg).unwrap();
        assert_eq!(w, initial);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn objective_is_loglik_minus_penalty() {
        let records = random_records(5, 3);
        let cfg = FitConfig { epochs: 1, l2: 0.25, batch_size: 2, ..FitConfig::default() };
        let (w, report) = fit_mle(&records, &records[..2], small_config(), &cfg).unwrap();
        let ll: f64 = records.iter().map(|r| sequence_log_likelihood(r, &w).unwrap()).sum();
        let penalty: f64 = w.tensors().iter().flat_map(|(_, m)| m.data.iter()).map(|x| 0.25 * x * x).sum();
        let e = report.epochs[0];
        assert!((e.objective - (ll - penalty)).abs() < 1e-9);
        assert!((objective(&records, &w, 0.25).unwrap() - e.objective).abs() < 1e-9);
        assert!(e.heldout_ll.is_some());
    }

    #[test]
    fn training_improves_the_objective() {
        let records = random_records(40, 5);
        let cfg = FitConfig { epochs: 8, batch_size: 8, step_size: 0.02, ..FitConfig::default() };
        let initial = EncoderWeights::init(small_config(), cfg.seed).unwrap();
        let before = dataset_log_likelihood(&records, &initial).unwrap();
        let (_, report) = fit_mle(&records, &[], small_config(), &cfg).unwrap();
        let after = report.epochs.last().unwrap().train_ll;
        assert!(after > before + 1.0, "{before} -> {after}");
        assert_eq!(report.to_csv().lines().count(), 9);
    }

    #[test]
    fn fit_rejects_bad_config_and_empty_data() {
        let records = random_records(2, 5);
        let bad = FitConfig { step_size: 0.0, ..FitConfig::default() };
        assert!(matches!(fit_mle(&records, &[], small_config(), &bad), Err(Error::InvalidConfig(_))));
        assert!(fit_mle(&[], &[], small_config(), &FitConfig::default()).is_err());
    }

    #[test]
    fn huge_step_is_reported_as_divergence() {
        let records = random_records(10, 6);
        let cfg = FitConfig {
            epochs: 50,
            batch_size: 10,
            step_size: 1e300,
            optimizer: Optimizer::GradientAscent,
            ..FitConfig::default()
        };
        let r = fit_mle(&records, &[], small_config(), &cfg);
        assert!(matches!(r, Err(Error::DivergenceDetected { .. })), "{r:?}");
    }
}
