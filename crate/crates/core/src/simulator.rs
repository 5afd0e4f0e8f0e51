//! Forward simulation of augmented event sequences over a fixed window.
//!
//! Starting from the start pseudo-event, the model is stepped on the last
//! event, the next `(delay, mark)` is drawn, and the loop stops at the first
//! no-event draw or the first event past the window end (that event is
//! discarded). Request events get an action drawn from the policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay_dist::NextEvent;
use crate::error::{Error, Result};
use crate::event_model::{AugmentedEvent, ObservationWindow, UserRecord, NO_ACTION};
use crate::model::HistoryModel;
use crate::policy::{features, PolicyParams};

/// Independent generator for `(seed, stream)`. Streams of one seed do not
/// overlap, so per-user draws do not depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t0: f64,
    pub t_max: f64,
    pub users: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn window(&self) -> Result<ObservationWindow> {
        ObservationWindow::new(self.t0, self.t_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.window()?;
        if self.users == 0 {
            return Err(Error::InvalidConfig("user count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Simulates one user's window.
pub fn sample_sequence<M: HistoryModel>(
    model: &M,
    policy: &PolicyParams,
    window: ObservationWindow,
    user_id: impl Into<String>,
    rng: &mut ChaCha8Rng,
) -> Result<UserRecord> {
    let schema = *model.schema();
    let end = window.end();
    let mut state = model.initial_state();
    let mut prev = AugmentedEvent::start(window.t0);
    let mut prev_delay = 0.0;
    let mut events: Vec<AugmentedEvent> = Vec::new();

    loop {
        let (phi, next_state) = model.step(&state, &prev, prev_delay)?;
        let (tau, mark) = match phi.sample(rng) {
            NextEvent::NoEvent => break,
            NextEvent::Event { tau, mark } => (tau, mark),
        };
        let mut t = prev.t + tau;
        if t > end {
            break;
        }
        if !events.is_empty() && t <= prev.t {
            // delay lost to rounding; keep timestamps strictly increasing
            t = prev.t.next_up();
            if t > end {
                break;
            }
        }
        let mut event = AugmentedEvent::new(t, mark, NO_ACTION);
        if schema.is_request(mark) {
            let f = features(&events, t, window.t0, &schema);
            event.a = policy.sample_action(&f, rng)?;
        }
        prev_delay = t - prev.t;
        prev = event;
        state = next_state;
        events.push(event);
    }
    Ok(UserRecord::new(user_id, window, events))
}

pub fn user_id(index: usize) -> String {
    format!("u{index}")
}

/// `cfg.users` independent records; user `i` draws from stream `i` of
/// `cfg.seed`. Output order is by user index.
pub fn sample_dataset<M: HistoryModel>(model: &M, policy: &PolicyParams, cfg: &SimConfig) -> Result<Vec<UserRecord>> {
    cfg.validate()?;
    let window = cfg.window()?;
    (0..cfg.users)
        .into_par_iter()
        .map(|i| sample_sequence(model, policy, window, user_id(i), &mut stream_rng(cfg.seed, i as u64)))
        .collect()
}
