//! Marked temporal point processes of user event streams with interleaved
//! system actions.
//!
//! * [`delay_dist`]: the piecewise-power delay law and the joint
//!   (delay, mark) event distribution.
//! * [`encoder`]: gated recurrent encoder mapping histories to event
//!   distributions, with backpropagation through time.
//! * [`likelihood`]: censored-window log-likelihood and maximum-likelihood
//!   fitting.
//! * [`simulator`], [`policy`], [`reinforce`]: forward simulation under a
//!   stochastic action policy and score-function policy optimization.
//! * [`tabular`], [`io`]: the Markov-in-type reference model and file formats.
//! * [`cli`]: the `mtpp` command-line tool.
//!
//! ```
//! use mtpp::delay_dist::{EventDistParams, PiecewisePower};
//! use mtpp::event_model::EventSchema;
//! use mtpp::likelihood::dataset_log_likelihood;
//! use mtpp::policy::PolicyParams;
//! use mtpp::simulator::SimConfig;
//! use mtpp::tabular::{synth, TabularModel};
//!
//! # fn main() -> mtpp::Result<()> {
//! let schema = EventSchema::new(2, 2); // request type defaults to 2
//! let d = vec![PiecewisePower::new(1.0, 2.5, 1.0)?, PiecewisePower::new(2.0, 3.0, 2.0)?];
//! let row = |q: Vec<f64>| EventDistParams::new(q, d.clone());
//! let tab = TabularModel::new(schema, vec![row(vec![0.5, 0.4])?, row(vec![0.5, 0.3])?, row(vec![0.3, 0.5])?], None)?;
//! let cfg = SimConfig { t0: 0.0, t_max: 30.0, users: 100, seed: 1 };
//! let generated = synth(&tab, &PolicyParams::uniform(schema), &cfg)?;
//! let data: Vec<_> = generated.iter().map(|s| s.record.clone()).collect();
//! let ll = dataset_log_likelihood(&data, &tab)?;
//! let exact: f64 = generated.iter().map(|s| s.log_likelihood).sum();
//! assert!((ll - exact).abs() < 1e-9);
//! # Ok(())
//! # }
//! ```

pub mod cli;
pub mod delay_dist;
pub mod encoder;
pub mod error;
pub mod event_model;
pub mod io;
pub mod likelihood;
mod linalg;
pub mod model;
pub mod policy;
pub mod reinforce;
pub mod simulator;
pub mod tabular;

pub use error::{Error, Result};
pub use linalg::Matrix;
