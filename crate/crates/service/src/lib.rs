//! Search sessions served over gRPC: each session hosts one object-search agent and walks it
//! through region setup, observation updates and planning.

pub mod config;
pub mod error;
pub mod grpc;
pub mod hier;
pub mod observation;
pub mod service;
pub mod session;

pub use config::{AgentConfig, SearchSpace, TargetConfig};
pub use error::ServiceError;
pub use observation::{DetectionKind, DetectionMessage};
pub use service::{RegionReport, SearchService};
pub use session::{Agent, FoundReport, Lifecycle, ObservationReport, PlanOutcome, ServerEvent, Session};
