//! Markov-in-type reference model.
//!
//! The next-event distribution depends only on the previous event's type
//! (row 0 is used after the start pseudo-event), optionally overridden by
//! the action taken when the previous event was a request. Its likelihood
//! and event statistics can be computed without the encoder, which makes it
//! the reference for likelihood and fitting checks.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay_dist::{EventDistParams, NextEvent};
use crate::error::{Error, Result};
use crate::event_model::{AugmentedEvent, EventSchema, ObservationWindow, UserRecord, NO_ACTION};
use crate::model::HistoryModel;
use crate::policy::{features, PolicyParams};
use crate::simulator::{stream_rng, user_id, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModel {
    #[serde(flatten)]
    pub schema: EventSchema,
    /// `V + 1` rows indexed by the previous event type, row 0 for 'start'.
    pub rows: Vec<EventDistParams>,
    /// Optional `A` rows used after a request answered with action `a`
    /// (index `a − 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_rows: Option<Vec<EventDistParams>>,
}

impl TabularModel {
    pub fn new(
        schema: EventSchema,
        rows: Vec<EventDistParams>,
        action_rows: Option<Vec<EventDistParams>>,
    ) -> Result<Self> {
        let m = Self { schema, rows, action_rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let v = self.schema.num_types as usize;
        if self.rows.len() != v + 1 {
            return Err(Error::ShapeMismatch(format!("tabular model needs {} rows, got {}", v + 1, self.rows.len())));
        }
        if let Some(ar) = &self.action_rows {
            if ar.len() != self.schema.num_actions as usize {
                return Err(Error::ShapeMismatch(format!(
                    "tabular model needs {} action rows, got {}",
                    self.schema.num_actions,
                    ar.len()
                )));
            }
        }
        for row in self.rows.iter().chain(self.action_rows.iter().flatten()) {
            row.validate()?;
            if row.num_marks() != v {
                return Err(Error::ShapeMismatch(format!("row has {} marks, expected {v}", row.num_marks())));
            }
        }
        Ok(())
    }

    pub fn row_for(&self, prev: &AugmentedEvent) -> Result<&EventDistParams> {
        if let (Some(ar), true) = (&self.action_rows, self.schema.is_request(prev.v) && prev.a != NO_ACTION) {
            return ar.get(prev.a as usize - 1).ok_or(Error::UnknownActionCode(prev.a));
        }
        self.rows.get(prev.v as usize).ok_or(Error::UnknownTypeCode(prev.v))
    }

    /// The row used for the first event of every window.
    pub fn start_row(&self) -> &EventDistParams {
        &self.rows[0]
    }
}

impl HistoryModel for TabularModel {
    type State = ();

    fn schema(&self) -> &EventSchema {
        &self.schema
    }

    fn initial_state(&self) {}

    fn step(&self, _: &(), prev: &AugmentedEvent, _: f64) -> Result<(EventDistParams, ())> {
        Ok((self.row_for(prev)?.clone(), ()))
    }
}

/// A generated record with its exact log-likelihood under the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub record: UserRecord,
    pub log_likelihood: f64,
}

/// Samples one window, accumulating the log-likelihood while sampling.
fn synth_one(
    tab: &TabularModel,
    policy: &PolicyParams,
    window: ObservationWindow,
    id: String,
    rng: &mut ChaCha8Rng,
) -> Result<SynthRecord> {
    let schema = tab.schema;
    let end = window.end();
    let mut events: Vec<AugmentedEvent> = Vec::new();
    let mut prev = AugmentedEvent::start(window.t0);
    let mut ll = 0.0;
    loop {
        let row = tab.row_for(&prev)?;
        let (tau, mark) = match row.sample(rng) {
            NextEvent::NoEvent => (f64::INFINITY, 0),
            NextEvent::Event { tau, mark } => (tau, mark),
        };
        let mut t = prev.t + tau;
        if t <= end && !events.is_empty() && t <= prev.t {
            t = prev.t.next_up();
        }
        if t > end {
            ll += row.survival(end - prev.t).ln();
            break;
        }
        let i = mark as usize - 1;
        ll += row.q[i].ln() + row.delays[i].log_density(t - prev.t);
        let mut e = AugmentedEvent::new(t, mark, NO_ACTION);
        if schema.is_request(mark) {
            let f = features(&events, t, window.t0, &schema);
            e.a = policy.sample_action(&f, rng)?;
        }
        events.push(e);
        prev = e;
    }
    Ok(SynthRecord { record: UserRecord::new(id, window, events), log_likelihood: ll })
}

/// Generates `cfg.users` records from the tabular model, each paired with
/// its exact log-likelihood.
pub fn synth(tab: &TabularModel, policy: &PolicyParams, cfg: &SimConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    tab.validate()?;
    let window = cfg.window()?;
    (0..cfg.users)
        .into_par_iter()
        .map(|i| synth_one(tab, policy, window, user_id(i), &mut stream_rng(cfg.seed, i as u64)))
        .collect()
}
