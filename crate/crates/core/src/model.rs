//! The interface shared by every history model: given the previous augmented
//! event and a running state, produce the distribution of the next event.

use crate::delay_dist::EventDistParams;
use crate::error::{Error, Result};
use crate::event_model::{AugmentedEvent, EventSchema};

pub trait HistoryModel: Sync {
    type State: Clone + Send;

    fn schema(&self) -> &EventSchema;

    fn initial_state(&self) -> Self::State;

    /// One recurrence step. `prev_delay` is the delay of `prev` relative to
    /// the event before it (0 for the start pseudo-event).
    fn step(
        &self,
        state: &Self::State,
        prev: &AugmentedEvent,
        prev_delay: f64,
    ) -> Result<(EventDistParams, Self::State)>;
}

/// A model whose prediction ignores history. Used to isolate likelihood and
/// simulation logic from the encoder.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    schema: EventSchema,
    phi: EventDistParams,
}

impl ConstantModel {
    pub fn new(schema: EventSchema, phi: EventDistParams) -> Result<Self> {
        schema.validate()?;
        phi.validate()?;
        if phi.num_marks() != schema.num_types as usize {
            return Err(Error::ShapeMismatch(format!(
                "distribution has {} marks, schema has {} types",
                phi.num_marks(),
                schema.num_types
            )));
        }
        Ok(Self { schema, phi })
    }

    pub fn phi(&self) -> &EventDistParams {
        &self.phi
    }
}

impl HistoryModel for ConstantModel {
    type State = ();

    fn schema(&self) -> &EventSchema {
        &self.schema
    }

    fn initial_state(&self) {}

    fn step(&self, _: &(), _: &AugmentedEvent, _: f64) -> Result<(EventDistParams, ())> {
        Ok((self.phi.clone(), ()))
    }
}
