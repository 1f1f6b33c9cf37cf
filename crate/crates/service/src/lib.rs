//! HTTP service and batch CLI over the compositing engine.

pub mod cli;
pub mod error;
pub mod http;
pub mod workspace;

pub use error::ServiceError;
pub use workspace::{Session, StackHandle, StrokeUpdate, Workspace};
