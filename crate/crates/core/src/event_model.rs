//! Event and history types.
//!
//! A user's history is a time-ordered list of [`AugmentedEvent`]s observed
//! inside an [`ObservationWindow`]. Events of the request type carry the
//! action the system delivered in response; every other event carries the
//! null action `0`. Request events split the history into segments, see
//! [`segment`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Type code of the pseudo-event that opens every observation window.
pub const START_TYPE: u32 = 0;
/// Action code meaning "no action".
pub const NO_ACTION: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEvent {
    /// Absolute time in seconds.
    pub t: f64,
    /// Event type, `1..=V` for real events, [`START_TYPE`] for the pseudo-event.
    pub v: u32,
    /// Action code, `0` when none.
    pub a: u32,
}

impl AugmentedEvent {
    pub fn new(t: f64, v: u32, a: u32) -> Self {
        Self { t, v, a }
    }

    pub fn start(t0: f64) -> Self {
        Self { t: t0, v: START_TYPE, a: NO_ACTION }
    }
}

/// Closed interval `[t0, t0 + t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub t0: f64,
    pub t_max: f64,
}

impl ObservationWindow {
    pub fn new(t0: f64, t_max: f64) -> Result<Self> {
        if !t0.is_finite() || !t_max.is_finite() || t_max <= 0.0 {
            return Err(Error::InvalidWindow(format!("t0 = {t0}, t_max = {t_max} (need finite t0 and t_max > 0)")));
        }
        Ok(Self { t0, t_max })
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.t_max
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.end()
    }
}

/// Type/action vocabulary shared by models, policies and data files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSchema {
    /// Number of event types `V` (marks `1..=V`).
    pub num_types: u32,
    /// Number of actions `A` (codes `1..=A`).
    pub num_actions: u32,
    /// The distinguished "request for action" type `R`.
    pub request_type: u32,
}

impl EventSchema {
    /// Schema with the request type set to the highest type code.
    pub fn new(num_types: u32, num_actions: u32) -> Self {
        Self { num_types, num_actions, request_type: num_types }
    }

    pub fn with_request_type(mut self, request_type: u32) -> Self {
        self.request_type = request_type;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_types == 0 {
            return Err(Error::InvalidConfig("num_types must be at least 1".into()));
        }
        if self.num_actions == 0 {
            return Err(Error::InvalidConfig("num_actions must be at least 1".into()));
        }
        if self.request_type == START_TYPE || self.request_type > self.num_types {
            return Err(Error::InvalidConfig(format!(
                "request_type {} not in 1..={}",
                self.request_type, self.num_types
            )));
        }
        Ok(())
    }

    pub fn is_request(&self, v: u32) -> bool {
        v == self.request_type
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub window: ObservationWindow,
    pub events: Vec<AugmentedEvent>,
}

impl UserRecord {
    pub fn new(user_id: impl Into<String>, window: ObservationWindow, events: Vec<AugmentedEvent>) -> Self {
        Self { user_id: user_id.into(), window, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Checks the record invariants. Indices in errors are 1-based event numbers.
///
/// With `strict` set, request events must carry an action (the simulator
/// always produces such fully augmented sequences).
pub fn validate_record(record: &UserRecord, schema: &EventSchema, strict: bool) -> Result<()> {
    let w = record.window;
    let mut prev: Option<f64> = None;
    for (i, e) in record.events.iter().enumerate() {
        let index = i + 1;
        if !w.contains(e.t) {
            return Err(Error::EventOutsideWindow { index, t: e.t, t0: w.t0, t_end: w.end() });
        }
        if let Some(p) = prev {
            if e.t <= p {
                return Err(Error::UnorderedTimestamps { index, t: e.t, prev: p });
            }
        }
        if e.a != NO_ACTION && !schema.is_request(e.v) {
            return Err(Error::ActionOnNonRequest { index, v: e.v, action: e.a });
        }
        if strict && schema.is_request(e.v) && e.a == NO_ACTION {
            return Err(Error::RequestWithoutAction { index });
        }
        prev = Some(e.t);
    }
    Ok(())
}

/// Split points of a history: `[0, B_1, …, B_S, B]` where `B_1..B_S` are the
/// 1-based positions of the request events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    boundaries: Vec<usize>,
}

impl Segmentation {
    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Number of request events `S`.
    pub fn num_requests(&self) -> usize {
        self.boundaries.len() - 2
    }

    /// Sequence length `B`.
    pub fn len(&self) -> usize {
        *self.boundaries.last().expect("boundaries are never empty")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the segment holding 1-based event `k`: `min{s : B_s ≥ k}`.
    pub fn segment_of(&self, k: usize) -> Result<usize> {
        let len = self.len();
        if k == 0 || k > len {
            return Err(Error::IndexOutOfRange { index: k, len });
        }
        // boundaries are sorted; first s with B_s >= k
        Ok(self.boundaries.partition_point(|&b| b < k))
    }

    /// Event slices of the `S + 1` segments. The last one may be empty.
    pub fn segments<'a, T>(&self, events: &'a [T]) -> Vec<&'a [T]> {
        self.boundaries.windows(2).map(|w| &events[w[0]..w[1]]).collect()
    }
}

pub fn segment(record: &UserRecord, schema: &EventSchema) -> Segmentation {
    let mut boundaries = Vec::with_capacity(2);
    boundaries.push(0);
    boundaries.extend(record.events.iter().enumerate().filter(|(_, e)| schema.is_request(e.v)).map(|(i, _)| i + 1));
    boundaries.push(record.events.len());
    Segmentation { boundaries }
}
