//! Recurrent history encoder.
//!
//! Each step reads the previous augmented event (type embedding, action
//! embedding, `log(1 + delay)`), updates a gated recurrent state
//!
//! ```text
//! z  = sigmoid(W_z x + U_z h + b_z)
//! c  = tanh(W_c x + U_c h + b_c)
//! h' = (1 − z) ⊙ h + z ⊙ c
//! ```
//!
//! and maps `h'` through a linear head to `M + 1` mark logits and `3M` raw
//! delay parameters, which [`param_map`] turns into an [`EventDistParams`].
//! Since `h_0 = 0` and `|c| ≤ 1`, every state stays in `[-1, 1]^d`.
//!
//! Head layout: `raw[0..M]` are the mark logits, `raw[M]` is the no-event
//! logit, and `raw[M + 1 + 3m ..][..3]` holds `(a, b, c)` for mark `m + 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delay_dist::{EventDistParams, PhiGrad, PiecewisePower};
use crate::error::{Error, Result};
use crate::event_model::{AugmentedEvent, EventSchema};
use crate::linalg::{sigmoid, softmax, softplus, Matrix};
use crate::model::HistoryModel;

/// Lower bound applied to `softplus` outputs so `α > 0` and `β > 1` survive
/// underflow.
const MIN_SHAPE: f64 = 1e-10;
/// Clamp for the log-mode so `exp` stays finite.
const MAX_LOG_MODE: f64 = 300.0;

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    #[default]
    GatedUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(flatten)]
    pub schema: EventSchema,
    pub state_dim: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub cell: CellKind,
}

impl EncoderConfig {
    pub fn new(schema: EventSchema) -> Self {
        Self { schema, state_dim: 32, embed_dim: 8, cell: CellKind::GatedUpdate }
    }

    pub fn with_dims(mut self, state_dim: usize, embed_dim: usize) -> Self {
        self.state_dim = state_dim;
        self.embed_dim = embed_dim;
        self
    }

    pub fn num_marks(&self) -> usize {
        self.schema.num_types as usize
    }

    pub fn input_dim(&self) -> usize {
        2 * self.embed_dim + 1
    }

    pub fn head_dim(&self) -> usize {
        4 * self.num_marks() + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.state_dim == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig("state_dim and embed_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub sigma: Vec<f64>,
}

/// Pre-constraint head output.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHead {
    pub values: Vec<f64>,
}

/// All trainable weights. Tensor order (also the persistence order):
/// `type_emb, act_emb, w_update, u_update, b_update, w_cand, u_cand, b_cand,
/// w_head, b_head`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub type_emb: Matrix,
    pub act_emb: Matrix,
    pub w_update: Matrix,
    pub u_update: Matrix,
    pub b_update: Matrix,
    pub w_cand: Matrix,
    pub u_cand: Matrix,
    pub b_cand: Matrix,
    pub w_head: Matrix,
    pub b_head: Matrix,
}

pub const TENSOR_NAMES: [&str; 10] =
    ["type_emb", "act_emb", "w_update", "u_update", "b_update", "w_cand", "u_cand", "b_cand", "w_head", "b_head"];

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepCache {
    type_code: usize,
    action_code: usize,
    input: Vec<f64>,
    h_prev: Vec<f64>,
    update: Vec<f64>,
    cand: Vec<f64>,
    h_next: Vec<f64>,
    raw: Vec<f64>,
    pub phi: EventDistParams,
}

impl EncoderWeights {
    pub fn zeros(config: EncoderConfig) -> Self {
        let v = config.schema.num_types as usize + 1;
        let a = config.schema.num_actions as usize + 1;
        let (d, e, i, h) = (config.state_dim, config.embed_dim, config.input_dim(), config.head_dim());
        Self {
            config,
            type_emb: Matrix::zeros(v, e),
            act_emb: Matrix::zeros(a, e),
            w_update: Matrix::zeros(d, i),
            u_update: Matrix::zeros(d, d),
            b_update: Matrix::zeros(d, 1),
            w_cand: Matrix::zeros(d, i),
            u_cand: Matrix::zeros(d, d),
            b_cand: Matrix::zeros(d, 1),
            w_head: Matrix::zeros(h, d),
            b_head: Matrix::zeros(h, 1),
        }
    }

    /// Uniform(−0.1, 0.1) weights and zero biases from a fixed seed.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut w = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, m) in w.tensors_mut() {
            if !name.starts_with("b_") {
                m.data.iter_mut().for_each(|x| *x = rng.random_range(-INIT_SCALE..INIT_SCALE));
            }
        }
        Ok(w)
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 10] {
        [
            ("type_emb", &self.type_emb),
            ("act_emb", &self.act_emb),
            ("w_update", &self.w_update),
            ("u_update", &self.u_update),
            ("b_update", &self.b_update),
            ("w_cand", &self.w_cand),
            ("u_cand", &self.u_cand),
            ("b_cand", &self.b_cand),
            ("w_head", &self.w_head),
            ("b_head", &self.b_head),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 10] {
        [
            ("type_emb", &mut self.type_emb),
            ("act_emb", &mut self.act_emb),
            ("w_update", &mut self.w_update),
            ("u_update", &mut self.u_update),
            ("b_update", &mut self.b_update),
            ("w_cand", &mut self.w_cand),
            ("u_cand", &mut self.u_cand),
            ("b_cand", &mut self.b_cand),
            ("w_head", &mut self.w_head),
            ("b_head", &mut self.b_head),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    /// Coordinate `i` of the concatenation of all tensors in persistence order.
    pub fn flat_mut(&mut self, mut i: usize) -> &mut f64 {
        for (_, m) in self.tensors_mut() {
            if i < m.data.len() {
                return &mut m.data[i];
            }
            i -= m.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat(&self, mut i: usize) -> f64 {
        for (_, m) in self.tensors() {
            if i < m.data.len() {
                return m.data[i];
            }
            i -= m.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn sum_sq(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.sum_sq()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderWeights, scale: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, scale);
        }
    }

    pub fn init_state(&self) -> EncoderState {
        EncoderState { sigma: vec![0.0; self.config.state_dim] }
    }

    /// `[type embedding; action embedding; log(1 + delay)]`.
    pub fn encode_input(&self, prev: &AugmentedEvent, prev_delay: f64) -> Result<Vec<f64>> {
        let (v, a) = self.codes(prev)?;
        let mut x = Vec::with_capacity(self.config.input_dim());
        x.extend_from_slice(self.type_emb.row(v));
        x.extend_from_slice(self.act_emb.row(a));
        x.push(prev_delay.max(0.0).ln_1p());
        Ok(x)
    }

    fn codes(&self, prev: &AugmentedEvent) -> Result<(usize, usize)> {
        if prev.v > self.config.schema.num_types {
            return Err(Error::UnknownTypeCode(prev.v));
        }
        if prev.a > self.config.schema.num_actions {
            return Err(Error::UnknownActionCode(prev.a));
        }
        Ok((prev.v as usize, prev.a as usize))
    }

    pub fn step(
        &self,
        state: &EncoderState,
        prev: &AugmentedEvent,
        prev_delay: f64,
    ) -> Result<(EventDistParams, EncoderState)> {
        let cache = self.step_cached(state, prev, prev_delay, 0)?;
        Ok((cache.phi, EncoderState { sigma: cache.h_next }))
    }

    /// Forward step that keeps the intermediates for [`Self::backward`].
    /// `step_index` only labels errors.
    pub fn step_cached(
        &self,
        state: &EncoderState,
        prev: &AugmentedEvent,
        prev_delay: f64,
        step_index: usize,
    ) -> Result<StepCache> {
        let (type_code, action_code) = self.codes(prev)?;
        let input = self.encode_input(prev, prev_delay)?;
        let h_prev = state.sigma.clone();
        let d = self.config.state_dim;

        let mut update = self.b_update.data.clone();
        self.w_update.mul_vec_acc(&input, &mut update);
        self.u_update.mul_vec_acc(&h_prev, &mut update);
        update.iter_mut().for_each(|z| *z = sigmoid(*z));

        let mut cand = self.b_cand.data.clone();
        self.w_cand.mul_vec_acc(&input, &mut cand);
        self.u_cand.mul_vec_acc(&h_prev, &mut cand);
        cand.iter_mut().for_each(|c| *c = c.tanh());

        let h_next: Vec<f64> = (0..d).map(|i| h_prev[i] + update[i] * (cand[i] - h_prev[i])).collect();

        let mut raw = self.b_head.data.clone();
        self.w_head.mul_vec_acc(&h_next, &mut raw);
        if !raw.iter().chain(&h_next).all(|x| x.is_finite()) {
            return Err(Error::NonFiniteActivation { step: step_index });
        }
        let phi = param_map(&RawHead { values: raw.clone() }, self.config.num_marks());
        Ok(StepCache { type_code, action_code, input, h_prev, update, cand, h_next, raw, phi })
    }

    /// Runs the recurrence over `events`, caching every step. Returns one
    /// cache per event plus a final one for the censoring distribution.
    pub fn forward_trace(&self, t0: f64, events: &[AugmentedEvent]) -> Result<(Vec<StepCache>, EncoderState)> {
        let mut state = self.init_state();
        let mut prev = AugmentedEvent::start(t0);
        let mut prev_delay = 0.0;
        let mut trace = Vec::with_capacity(events.len() + 1);
        for j in 0..=events.len() {
            let cache = self.step_cached(&state, &prev, prev_delay, j)?;
            state = EncoderState { sigma: cache.h_next.clone() };
            trace.push(cache);
            if let Some(e) = events.get(j) {
                prev_delay = e.t - prev.t;
                prev = *e;
            }
        }
        Ok((trace, state))
    }

    /// Reverse-mode accumulation through all cached steps. `phi_grads[j]` is
    /// the gradient of the loss w.r.t. the distribution produced at step `j`.
    pub fn backward(&self, trace: &[StepCache], phi_grads: &[PhiGrad]) -> Result<EncoderWeights> {
        let mut grad = EncoderWeights::zeros(self.config);
        self.backward_into(trace, phi_grads, &mut grad)?;
        Ok(grad)
    }

    pub fn backward_into(&self, trace: &[StepCache], phi_grads: &[PhiGrad], grad: &mut EncoderWeights) -> Result<()> {
        if trace.len() != phi_grads.len() {
            return Err(Error::MissingForwardCache { expected: phi_grads.len(), found: trace.len() });
        }
        let d = self.config.state_dim;
        let e = self.config.embed_dim;
        let mut dh = vec![0.0; d];
        for (cache, dphi) in trace.iter().zip(phi_grads).rev() {
            let draw = param_map_backward(&cache.raw, &cache.phi, dphi);
            grad.w_head.add_outer(&draw, &cache.h_next);
            grad.b_head.data.iter_mut().zip(&draw).for_each(|(g, r)| *g += r);
            self.w_head.mul_vec_t_acc(&draw, &mut dh);

            let mut d_update = vec![0.0; d];
            let mut d_cand = vec![0.0; d];
            let mut dh_prev = vec![0.0; d];
            for i in 0..d {
                let z = cache.update[i];
                let c = cache.cand[i];
                d_update[i] = dh[i] * (c - cache.h_prev[i]) * z * (1.0 - z);
                d_cand[i] = dh[i] * z * (1.0 - c * c);
                dh_prev[i] = dh[i] * (1.0 - z);
            }
            grad.w_update.add_outer(&d_update, &cache.input);
            grad.u_update.add_outer(&d_update, &cache.h_prev);
            grad.b_update.data.iter_mut().zip(&d_update).for_each(|(g, r)| *g += r);
            grad.w_cand.add_outer(&d_cand, &cache.input);
            grad.u_cand.add_outer(&d_cand, &cache.h_prev);
            grad.b_cand.data.iter_mut().zip(&d_cand).for_each(|(g, r)| *g += r);

            let mut dx = vec![0.0; self.config.input_dim()];
            self.w_update.mul_vec_t_acc(&d_update, &mut dx);
            self.w_cand.mul_vec_t_acc(&d_cand, &mut dx);
            grad.type_emb.row_mut(cache.type_code).iter_mut().zip(&dx[..e]).for_each(|(g, r)| *g += r);
            grad.act_emb.row_mut(cache.action_code).iter_mut().zip(&dx[e..2 * e]).for_each(|(g, r)| *g += r);

            self.u_update.mul_vec_t_acc(&d_update, &mut dh_prev);
            self.u_cand.mul_vec_t_acc(&d_cand, &mut dh_prev);
            dh = dh_prev;
        }
        Ok(())
    }
}

impl HistoryModel for EncoderWeights {
    type State = EncoderState;

    fn schema(&self) -> &EventSchema {
        &self.config.schema
    }

    fn initial_state(&self) -> EncoderState {
        self.init_state()
    }

    fn step(
        &self,
        state: &EncoderState,
        prev: &AugmentedEvent,
        prev_delay: f64,
    ) -> Result<(EventDistParams, EncoderState)> {
        EncoderWeights::step(self, state, prev, prev_delay)
    }
}

/// Maps a raw head to a valid distribution: softmax over the `M + 1` logits
/// (the last slot is the no-event mass), `α = softplus(a)`,
/// `β = 1 + softplus(b)`, `τ* = exp(c)`.
pub fn param_map(raw: &RawHead, num_marks: usize) -> EventDistParams {
    let m = num_marks;
    let probs = softmax(&raw.values[..=m]);
    let delays = (0..m)
        .map(|i| {
            let p = &raw.values[m + 1 + 3 * i..m + 4 + 3 * i];
            PiecewisePower {
                alpha: softplus(p[0]).max(MIN_SHAPE),
                beta: 1.0 + softplus(p[1]).max(MIN_SHAPE),
                tau_star: p[2].clamp(-MAX_LOG_MODE, MAX_LOG_MODE).exp(),
            }
        })
        .collect();
    EventDistParams { q: probs[..m].to_vec(), delays }
}

/// Chains a gradient w.r.t. `φ` back to the raw head.
pub fn param_map_backward(raw: &[f64], phi: &EventDistParams, dphi: &PhiGrad) -> Vec<f64> {
    let m = phi.num_marks();
    let mut out = vec![0.0; raw.len()];
    // full simplex including the no-event slot
    let q_full: Vec<f64> = phi.q.iter().copied().chain(std::iter::once(phi.q_none())).collect();
    let mean: f64 = q_full.iter().zip(&dphi.q).map(|(q, g)| q * g).sum();
    for j in 0..=m {
        out[j] = q_full[j] * (dphi.q[j] - mean);
    }
    for i in 0..m {
        let base = m + 1 + 3 * i;
        let (a, b, c) = (raw[base], raw[base + 1], raw[base + 2]);
        if softplus(a) > MIN_SHAPE {
            out[base] = dphi.alpha[i] * sigmoid(a);
        }
        if softplus(b) > MIN_SHAPE {
            out[base + 1] = dphi.beta[i] * sigmoid(b);
        }
        if c.abs() < MAX_LOG_MODE {
            out[base + 2] = dphi.tau_star[i] * phi.delays[i].tau_star;
        }
    }
    out
}
