//! Gateway service for the openpc control plane: an HTTP+JSON API over the
//! cluster model, persisted as an append-only event log with snapshots.

pub mod config;
pub mod event;
pub mod http;
pub mod service;
pub mod state;
pub mod store;

pub use config::ServiceConfig;
pub use service::{recover, ApiRequest, ApiResponse, ApiService, Body, Clock, ManualClock, Method, RecoverError, WallClock};
pub use store::{EventStore, FailingStore, FileStore, MemoryStore};
