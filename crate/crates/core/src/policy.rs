//! Linear-softmax stochastic policy over actions at request events.
//!
//! The policy sees a fixed summary of the augmented history: per-type event
//! counts, per-action counts, `log(1 + elapsed)` and a constant. Action
//! probabilities are the normalized exponentials of `W f + b`, so every
//! action keeps positive probability and the score `∇ log π` is closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{AugmentedEvent, EventSchema, NO_ACTION};
use crate::linalg::softmax;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFeatures(pub Vec<f64>);

/// Feature dimension `V + A + 2`.
pub fn feature_dim(schema: &EventSchema) -> usize {
    (schema.num_types + schema.num_actions) as usize + 2
}

/// Summary of `prefix` at time `t_now`.
///
/// Layout: slots `0..V` count event types `1..=V`, slots `V..V+A` count
/// actions `1..=A`, then `log(1 + t_now − t0)` and the constant `1`.
pub fn features(prefix: &[AugmentedEvent], t_now: f64, t0: f64, schema: &EventSchema) -> HistoryFeatures {
    let v = schema.num_types as usize;
    let a = schema.num_actions as usize;
    let mut f = vec![0.0; v + a + 2];
    for e in prefix {
        if (1..=v).contains(&(e.v as usize)) {
            f[e.v as usize - 1] += 1.0;
        }
        if e.a != NO_ACTION && (e.a as usize) <= a {
            f[v + e.a as usize - 1] += 1.0;
        }
    }
    f[v + a] = (t_now - t0).max(0.0).ln_1p();
    f[v + a + 1] = 1.0;
    HistoryFeatures(f)
}

/// `ξ`: an `A × F` weight matrix (row-major) and `A` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub schema: EventSchema,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(num_actions: usize, num_features: usize) -> Self {
        Self { weights: vec![0.0; num_actions * num_features], bias: vec![0.0; num_actions] }
    }

    pub fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        self.weights.iter_mut().zip(&other.weights).for_each(|(a, b)| *a += scale * b);
        self.bias.iter_mut().zip(&other.bias).for_each(|(a, b)| *a += scale * b);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }
}

impl PolicyParams {
    /// `ξ = 0`, the uniform policy.
    pub fn uniform(schema: EventSchema) -> Self {
        let a = schema.num_actions as usize;
        Self { schema, weights: vec![0.0; a * feature_dim(&schema)], bias: vec![0.0; a] }
    }

    pub fn num_actions(&self) -> usize {
        self.schema.num_actions as usize
    }

    pub fn num_features(&self) -> usize {
        feature_dim(&self.schema)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, f) = (self.num_actions(), self.num_features());
        if self.weights.len() != a * f || self.bias.len() != a {
            return Err(Error::ShapeMismatch(format!(
                "policy expects {a}x{f} weights and {a} biases, got {} and {}",
                self.weights.len(),
                self.bias.len()
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidParams("policy parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    pub fn logits(&self, f: &HistoryFeatures) -> Result<Vec<f64>> {
        let nf = self.num_features();
        if f.0.len() != nf {
            return Err(Error::ShapeMismatch(format!("expected {nf} features, got {}", f.0.len())));
        }
        Ok(self
            .weights
            .chunks_exact(nf)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(&f.0).map(|(w, x)| w * x).sum::<f64>())
            .collect())
    }

    /// Probabilities of actions `1..=A` (index `a − 1`).
    pub fn action_probs(&self, f: &HistoryFeatures) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(f)?))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, f: &HistoryFeatures, rng: &mut R) -> Result<u32> {
        let probs = self.action_probs(f)?;
        let eta: f64 = rng.random();
        let mut cum = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if eta < cum {
                return Ok(i as u32 + 1);
            }
        }
        // rounding left eta above the final cumulative sum
        Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32 + 1)
    }

    /// `∇_ξ log π(a | f)`: `(1[a] − π) ⊗ f` for the weights and `1[a] − π`
    /// for the biases.
    pub fn log_prob_grad(&self, f: &HistoryFeatures, action: u32) -> Result<PolicyGrad> {
        let mut g = PolicyGrad::zeros(self.num_actions(), self.num_features());
        self.add_log_prob_grad(f, action, 1.0, &mut g)?;
        Ok(g)
    }

    pub fn add_log_prob_grad(&self, f: &HistoryFeatures, action: u32, scale: f64, out: &mut PolicyGrad) -> Result<()> {
        let a = action as usize;
        if a == 0 || a > self.num_actions() {
            return Err(Error::UnknownActionCode(action));
        }
        let probs = self.action_probs(f)?;
        let nf = self.num_features();
        for (i, p) in probs.iter().enumerate() {
            let coef = scale * (if i + 1 == a { 1.0 } else { 0.0 } - p);
            out.bias[i] += coef;
            for (w, x) in out.weights[i * nf..(i + 1) * nf].iter_mut().zip(&f.0) {
                *w += coef * x;
            }
        }
        Ok(())
    }

    /// `self += scale · g`, skipping coordinates where the increment is 0.
    pub fn ascend(&mut self, g: &PolicyGrad, scale: f64) {
        for (x, d) in self.weights.iter_mut().chain(self.bias.iter_mut()).zip(g.iter()) {
            let step = scale * d;
            if step != 0.0 {
                *x += step;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn schema(a: u32) -> EventSchema {
        EventSchema::new(3, a)
    }

    fn random_policy(a: u32, seed: u64) -> PolicyParams {
        let mut rng = stream_rng(seed, 0);
        let mut p = PolicyParams::uniform(schema(a));
        p.weights.iter_mut().chain(p.bias.iter_mut()).for_each(|x| *x = rng.random_range(-1.0..1.0));
        p
    }

    #[test]
    fn features_examples() {
        let s = schema(2);
        let f = features(&[], 0.0, 0.0, &s);
        assert_eq!(f.0, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let prefix = [AugmentedEvent::new(1.0, 3, 2), AugmentedEvent::new(2.0, 3, 2), AugmentedEvent::new(2.5, 1, 0)];
        let f = features(&prefix, 2.5, 2.5 - (std::f64::consts::E - 1.0), &s);
        assert_eq!(f.0[2], 2.0);
        assert_eq!(f.0[0], 1.0);
        assert_eq!(f.0[4], 2.0);
        assert!((f.0[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn action_probs_examples() {
        let s = schema(3);
        let p = PolicyParams::uniform(s);
        let f = features(&[], 1.0, 0.0, &s);
        for q in p.action_probs(&f).unwrap() {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut p = PolicyParams::uniform(schema(2));
        p.bias = vec![2f64.ln(), 0.0];
        let probs = p.action_probs(&features(&[], 0.0, 0.0, &schema(2))).unwrap();
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(p.action_probs(&HistoryFeatures(vec![1.0])), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let mut p = PolicyParams::uniform(schema(2));
        p.bias.push(0.0);
        assert!(matches!(p.validate(), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn near_deterministic_sampling() {
        let mut p = PolicyParams::uniform(schema(2));
        p.bias = vec![30.0, -30.0];
        let f = features(&[], 0.0, 0.0, &schema(2));
        let mut rng = stream_rng(1, 0);
        for _ in 0..10_000 {
            assert_eq!(p.sample_action(&f, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = random_policy(4, 3);
        let f = features(&[AugmentedEvent::new(1.0, 2, 0)], 3.0, 0.0, &schema(4));
        let a: Vec<u32> = (0..20).map(|i| p.sample_action(&f, &mut stream_rng(9, i)).unwrap()).collect();
        let b: Vec<u32> = (0..20).map(|i| p.sample_action(&f, &mut stream_rng(9, i)).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_sampling_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = PolicyParams::uniform(schema(4));
        let f = features(&[], 0.0, 0.0, &schema(4));
        let mut rng = stream_rng(17, 0);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[p.sample_action(&f, &mut rng).unwrap() as usize - 1] += 1;
        }
        let expected = n as f64 / 4.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi2 {stat} >= {crit}");
    }

    #[test]
    fn bias_gradient_example() {
        let s = EventSchema::new(3, 2);
        let p = PolicyParams::uniform(s);
        let g = p.log_prob_grad(&features(&[], 0.0, 0.0, &s), 1).unwrap();
        assert_eq!(g.bias, vec![0.5, -0.5]);
        assert!(matches!(p.log_prob_grad(&features(&[], 0.0, 0.0, &s), 3), Err(Error::UnknownActionCode(3))));
    }

    #[test]
    fn score_has_zero_mean_under_the_policy() {
        let p = random_policy(3, 5);
        let f = features(&[AugmentedEvent::new(1.0, 1, 0)], 2.0, 0.0, &schema(3));
        let mut rng = stream_rng(21, 0);
        let n = 100_000;
        let mut sum = PolicyGrad::zeros(3, p.num_features());
        let mut sum_sq = PolicyGrad::zeros(3, p.num_features());
        for _ in 0..n {
            let a = p.sample_action(&f, &mut rng).unwrap();
            let g = p.log_prob_grad(&f, a).unwrap();
            sum.add_scaled(&g, 1.0);
            let sq = PolicyGrad {
                weights: g.weights.iter().map(|x| x * x).collect(),
                bias: g.bias.iter().map(|x| x * x).collect(),
            };
            sum_sq.add_scaled(&sq, 1.0);
        }
        let nf = n as f64;
        for (s, s2) in sum.iter().zip(sum_sq.iter()) {
            let mean = s / nf;
            let se = ((s2 / nf - mean * mean).max(0.0) / nf).sqrt();
            assert!(mean.abs() <= 3.0 * se + 1e-12, "mean {mean} se {se}");
        }
    }

    #[test]
    fn log_prob_grad_matches_finite_differences() {
        for seed in 0..5 {
            let p = random_policy(3, seed);
            let f = features(&[AugmentedEvent::new(1.0, 1, 0), AugmentedEvent::new(1.5, 3, 2)], 4.0, 0.0, &schema(3));
            let a = (seed % 3) as u32 + 1;
            let g = p.log_prob_grad(&f, a).unwrap();
            let logp = |p: &PolicyParams| p.action_probs(&f).unwrap()[a as usize - 1].ln();
            let h = 1e-6;
            let n = p.weights.len();
            for i in 0..n + p.bias.len() {
                let bump = |delta: f64| {
                    let mut q = p.clone();
                    if i < n {
                        q.weights[i] += delta
                    } else {
                        q.bias[i - n] += delta
                    }
                    q
                };
                let fd = (logp(&bump(h)) - logp(&bump(-h))) / (2.0 * h);
                let an = if i < n { g.weights[i] } else { g.bias[i - n] };
                assert!((an - fd).abs() <= 1e-6 * an.abs().max(1e-2), "coord {i}: {an} vs {fd}");
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_are_a_positive_simplex(seed in 0u64..10_000, t in 0.0f64..100.0) {
            let p = random_policy(4, seed);
            let f = features(&[AugmentedEvent::new(0.5, 2, 0)], t, 0.0, &schema(4));
            let probs = p.action_probs(&f).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&q| q > 0.0));

            // shifting every bias by the same constant leaves π unchanged
            let mut shifted = p.clone();
            shifted.bias.iter_mut().for_each(|b| *b += 3.7);
            let probs2 = shifted.action_probs(&f).unwrap();
            for (x, y) in probs.iter().zip(&probs2) {
                prop_assert!((x - y).abs() < 1e-12);
            }

            // Σ_a π(a) ∇ log π(a) = 0
            let mut total = PolicyGrad::zeros(4, p.num_features());
            for (i, q) in probs.iter().enumerate() {
                total.add_scaled(&p.log_prob_grad(&f, i as u32 + 1).unwrap(), *q);
            }
            prop_assert!(total.iter().all(|x| x.abs() < 1e-12));
        }
    }
}
