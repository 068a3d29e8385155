//! Sidecar reverse proxy.
//!
//! Forwards plain HTTP to one upstream unchanged apart from the request id
//! header and, off the data path, emits value-free [`hawk_core::TrafficRecord`]s
//! for the stages its [`Role`] covers.

pub mod config;
pub mod emit;
pub mod proxy;
pub mod request_id;

pub use config::{ConfigError, ProxyConfig, Role, ENV_PREFIX};
pub use emit::{EmitStats, Emitter, SENDER_BACKOFF};
pub use proxy::{router, serve, Proxy, CLIENT_HEADER};
pub use request_id::ensure_request_id;
