//! Streaming, anytime-valid detection of Gumbel-max watermarks.
//!
//! The detector consumes one pivotal value `Y_t ∈ [0, 1]` per generated
//! token and maintains an e-process `M_t`. Under unwatermarked text `Y_t` is
//! uniform and `M` is a nonnegative supermartingale, so rejecting the first
//! time `M_t ≥ 1/α` controls the false-alarm rate at `α` no matter when the
//! stream is stopped or inspected.
//!
//! ```
//! use ewmark_core::{Construction, EProcessState, Status};
//!
//! let mut det = EProcessState::new(Construction::recommended_average(), 0.05, 0.0, None).unwrap();
//! for _ in 0..200 {
//!     det.feed(0.999).unwrap();
//!     if det.verdict().is_terminal() {
//!         break;
//!     }
//! }
//! assert_eq!(det.verdict().status, Status::Rejected);
//! ```

#![forbid(unsafe_code)]

pub mod baselines;
pub mod calibrators;
pub mod config;
pub mod eprocess;
pub mod error;
pub mod quadrature;
pub mod sim;
pub mod stats;
pub mod stream;
pub mod types;
pub mod watermark;

pub use calibrators::{Calibrator, FixedKind, MixtureCalibrator, OgVariant, PHistory, StepCalibrator};
pub use config::{ConstructionKind, DetectorConfig};
pub use eprocess::{run, Construction, EProcessState, RunResult, StepOutcome};
pub use error::{Error, Result};
pub use stream::PivotalRecord;
pub use types::{make_prob_vector, PivotalValue, ProbVector, Status, TokenId, Verdict};
pub use watermark::WatermarkKey;
