//! Simulator and user-selection schedulers for multi-user mmWave downlinks
//! with hybrid analog/digital beamforming.
//!
//! The base station steers one codebook beam per user (re-swept every `N_s`
//! slots), measures the effective channels through those beams, picks a user
//! set that maximises the weighted sum-rate under zero-forcing, and updates
//! proportional-fair weights from exponentially averaged rates.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod ml;
pub mod precoder;
pub mod protocol;
pub mod schedulers;

pub use channel::{generate_episode, ArrayGeometry, ChannelState};
pub use codebook::{BeamAssignment, Codebook};
pub use config::SystemConfig;
pub use error::{ConfigError, MetricError, ModelError, PrecoderError, ScheduleError, SimError};
pub use metrics::MetricReport;
pub use ml::{InputMode, MlSelector, SelectorModel, TrainingSet};
pub use precoder::{EffectiveChannels, SelectionResult};
pub use protocol::{episode_seed, EpisodeTrace, SeedStream, Simulator};
pub use schedulers::{SchedulerContext, SchedulerKind, UserSelector};
