//! Desk-scale demonstration and measurement for the transparency pipeline:
//! a toy shop topology wired through proxies, a load generator, an overhead
//! benchmark and a canary simulator.

pub mod bench;
pub mod canary;
pub mod demo;
pub mod deploy;
pub mod load;
pub mod services;
pub mod splitter;
pub mod stats;
pub mod topology;

pub use deploy::{DeployOptions, Deployment, Endpoints, PortPlan};
pub use load::{LoadProfile, LoadReport};
pub use topology::Topology;
