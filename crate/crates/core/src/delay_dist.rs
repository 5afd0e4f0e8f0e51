//! Piecewise-power delay law and the joint (delay, mark) event distribution.
//!
//! The delay density rises as `(τ/τ*)^α` up to its mode `τ*` and then decays
//! as `(τ/τ*)^(-β)`, giving a power-law tail. The peak value is fixed by
//! normalization, which leaves three free parameters `(α, β, τ*)`. CDF and
//! inverse CDF are closed form, so sampling is exact inverse transform.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on `Σ q_m ≤ 1`.
pub const SIMPLEX_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePower {
    pub alpha: f64,
    pub beta: f64,
    pub tau_star: f64,
}

impl PiecewisePower {
    pub fn new(alpha: f64, beta: f64, tau_star: f64) -> Result<Self> {
        let d = Self { alpha, beta, tau_star };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.tau_star.is_finite()
            && self.alpha > 0.0
            && self.beta > 1.0
            && self.tau_star > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "need alpha > 0, beta > 1, tau_star > 0; got ({}, {}, {})",
                self.alpha, self.beta, self.tau_star
            )))
        }
    }

    /// Density at the mode, `(α+1)(β−1) / ((α+β) τ*)`.
    pub fn peak(&self) -> f64 {
        (self.alpha + 1.0) * (self.beta - 1.0) / ((self.alpha + self.beta) * self.tau_star)
    }

    /// CDF value at the mode, `(β−1)/(α+β)`.
    pub fn mode_mass(&self) -> f64 {
        (self.beta - 1.0) / (self.alpha + self.beta)
    }

    pub fn density(&self, tau: f64) -> f64 {
        if tau < 0.0 {
            return 0.0;
        }
        let u = tau / self.tau_star;
        if u <= 1.0 {
            self.peak() * u.powf(self.alpha)
        } else {
            self.peak() * u.powf(-self.beta)
        }
    }

    pub fn log_density(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lu = (tau / self.tau_star).ln();
        let base =
            (self.alpha + 1.0).ln() + (self.beta - 1.0).ln() - (self.alpha + self.beta).ln() - self.tau_star.ln();
        if lu <= 0.0 {
            base + self.alpha * lu
        } else {
            base - self.beta * lu
        }
    }

    pub fn cdf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let u = tau / self.tau_star;
        if u <= 1.0 {
            self.mode_mass() * u.powf(self.alpha + 1.0)
        } else {
            1.0 - self.tail(u)
        }
    }

    /// `1 − cdf(τ)` without cancellation in the tail.
    pub fn sf(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 1.0;
        }
        let u = tau / self.tau_star;
        if u <= 1.0 {
            1.0 - self.mode_mass() * u.powf(self.alpha + 1.0)
        } else {
            self.tail(u)
        }
    }

    fn tail(&self, u: f64) -> f64 {
        (self.alpha + 1.0) / (self.alpha + self.beta) * u.powf(1.0 - self.beta)
    }

    pub fn inverse_cdf(&self, eta: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::EtaOutOfRange(eta));
        }
        let (a, b) = (self.alpha, self.beta);
        let k = self.mode_mass();
        Ok(if eta < k {
            self.tau_star * (eta / k).powf(1.0 / (a + 1.0))
        } else {
            self.tau_star * ((1.0 - eta) * (a + b) / (a + 1.0)).powf(-1.0 / (b - 1.0))
        })
    }

    /// Gradient of `log density(τ)` w.r.t. `(α, β, τ*)`.
    ///
    /// At `τ = τ*` the left branch is used.
    pub fn log_density_grad(&self, tau: f64) -> [f64; 3] {
        let (a, b, ts) = (self.alpha, self.beta, self.tau_star);
        let lu = (tau / ts).ln();
        let common_a = 1.0 / (a + 1.0) - 1.0 / (a + b);
        let common_b = 1.0 / (b - 1.0) - 1.0 / (a + b);
        if tau <= ts {
            [common_a + lu, common_b, -(1.0 + a) / ts]
        } else {
            [common_a, common_b - lu, (b - 1.0) / ts]
        }
    }

    /// Gradient of `cdf(τ)` w.r.t. `(α, β, τ*)`. Continuous across `τ*`.
    pub fn cdf_grad(&self, tau: f64) -> [f64; 3] {
        if tau <= 0.0 {
            return [0.0; 3];
        }
        let (a, b, ts) = (self.alpha, self.beta, self.tau_star);
        let u = tau / ts;
        let lu = u.ln();
        if u <= 1.0 {
            let f = self.mode_mass() * u.powf(a + 1.0);
            [f * (lu - 1.0 / (a + b)), f * (1.0 / (b - 1.0) - 1.0 / (a + b)), -f * (a + 1.0) / ts]
        } else {
            let g = self.tail(u);
            [-g * (1.0 / (a + 1.0) - 1.0 / (a + b)), g * (1.0 / (a + b) + lu), -g * (b - 1.0) / ts]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eta: f64 = rng.random();
        // random::<f64>() is in [0, 1)
        self.inverse_cdf(eta).expect("uniform draw in [0, 1)")
    }
}

/// One predictive distribution `φ` over the next event: mark probabilities
/// `q_1..q_M` (the remainder is the no-event mass) and one delay law per mark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDistParams {
    pub q: Vec<f64>,
    pub delays: Vec<PiecewisePower>,
}

/// Outcome of drawing the next event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NextEvent {
    /// Delay since the previous event and 1-based mark.
    Event { tau: f64, mark: u32 },
    /// The `(∞, ∞)` atom: no further event ever.
    NoEvent,
}

impl EventDistParams {
    pub fn new(q: Vec<f64>, delays: Vec<PiecewisePower>) -> Result<Self> {
        let p = Self { q, delays };
        p.validate()?;
        Ok(p)
    }

    /// Distribution that never produces an event.
    pub fn no_event(delays: Vec<PiecewisePower>) -> Result<Self> {
        Self::new(vec![0.0; delays.len()], delays)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.delays.len() {
            return Err(Error::InvalidParams(format!(
                "{} mark probabilities but {} delay laws",
                self.q.len(),
                self.delays.len()
            )));
        }
        if self.q.iter().any(|&q| !(q.is_finite() && q >= 0.0)) {
            return Err(Error::InvalidParams("mark probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = self.q.iter().sum();
        if total > 1.0 + SIMPLEX_EPS {
            return Err(Error::InvalidParams(format!("mark probabilities sum to {total} > 1")));
        }
        self.delays.iter().try_for_each(PiecewisePower::validate)
    }

    pub fn num_marks(&self) -> usize {
        self.q.len()
    }

    /// No-event mass `q_∞ = 1 − Σ q_m`.
    pub fn q_none(&self) -> f64 {
        (1.0 - self.q.iter().sum::<f64>()).max(0.0)
    }

    fn mark_index(&self, mark: u32) -> Result<usize> {
        let m = mark as usize;
        if m == 0 || m > self.q.len() {
            return Err(Error::UnknownTypeCode(mark));
        }
        Ok(m - 1)
    }

    /// `log q_m + log p(τ | m)`; `−∞` when `q_m = 0`.
    pub fn event_log_prob(&self, tau: f64, mark: u32) -> Result<f64> {
        let i = self.mark_index(mark)?;
        let q = self.q[i];
        if q == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(q.ln() + self.delays[i].log_density(tau))
    }

    /// Probability of no event within `(0, τ]`.
    pub fn survival(&self, tau: f64) -> f64 {
        let censored: f64 = self.q.iter().zip(&self.delays).map(|(q, d)| q * d.sf(tau)).sum();
        self.q_none() + censored
    }

    /// Mixture CDF over all marks, `Σ q_m F_m(τ)`.
    pub fn cdf(&self, tau: f64) -> f64 {
        self.q.iter().zip(&self.delays).map(|(q, d)| q * d.cdf(tau)).sum()
    }

    /// Multinomial draw of the mark by cumulative scan, then inverse
    /// transform for the delay.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NextEvent {
        let eta: f64 = rng.random();
        let mut cum = 0.0;
        let mut m = 0usize;
        while cum <= eta {
            if m == self.q.len() {
                return NextEvent::NoEvent;
            }
            cum += self.q[m];
            m += 1;
        }
        let tau = self.delays[m - 1].sample(rng);
        NextEvent::Event { tau, mark: m as u32 }
    }

    /// Adds the gradient of [`Self::event_log_prob`] w.r.t. `φ` into `grad`
    /// and returns the value.
    pub fn event_log_prob_grad(&self, tau: f64, mark: u32, grad: &mut PhiGrad) -> Result<f64> {
        let i = self.mark_index(mark)?;
        let value = self.event_log_prob(tau, mark)?;
        if value.is_finite() {
            grad.q[i] += 1.0 / self.q[i];
            let g = self.delays[i].log_density_grad(tau);
            grad.alpha[i] += g[0];
            grad.beta[i] += g[1];
            grad.tau_star[i] += g[2];
        }
        Ok(value)
    }

    /// Adds the gradient of `log survival(τ)` into `grad` and returns the value.
    ///
    /// The no-event mass is treated as its own coordinate `grad.q[M]`.
    pub fn log_survival_grad(&self, tau: f64, grad: &mut PhiGrad) -> f64 {
        let s = self.survival(tau);
        let m = self.q.len();
        grad.q[m] += 1.0 / s;
        for i in 0..m {
            let d = &self.delays[i];
            grad.q[i] += d.sf(tau) / s;
            let g = d.cdf_grad(tau);
            let scale = -self.q[i] / s;
            grad.alpha[i] += scale * g[0];
            grad.beta[i] += scale * g[1];
            grad.tau_star[i] += scale * g[2];
        }
        s.ln()
    }
}

/// Gradient of a scalar w.r.t. one [`EventDistParams`]. `q` has `M + 1`
/// entries; the last is the no-event mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGrad {
    pub q: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau_star: Vec<f64>,
}

impl PhiGrad {
    pub fn zeros(num_marks: usize) -> Self {
        Self {
            q: vec![0.0; num_marks + 1],
            alpha: vec![0.0; num_marks],
            beta: vec![0.0; num_marks],
            tau_star: vec![0.0; num_marks],
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.q, &self.alpha, &self.beta, &self.tau_star].iter().all(|v| v.iter().all(|&x| x == 0.0))
    }
}
