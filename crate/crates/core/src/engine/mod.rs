//! The auto-exploring agent loop: policy backends, discrepancy detection,
//! episodes in standard, single-turn and discrepancy-aware modes, and batch
//! collection with utilization metrics.

mod backend;
mod collect;
mod detector;
mod episode;
mod script;

pub use backend::{BackendConfig, BackendError, HttpConfig, HttpPolicy, Policy};
pub use collect::{data_utilization, tool_use_stats, Collection, CollectionStats, Collector};
pub use detector::{detect_discrepancy, DetectorKind, Observation};
pub use episode::{run_episode, EpisodeLimits, EpisodeOutcome};
pub use script::{Branch, Pattern, Script, Trigger};
