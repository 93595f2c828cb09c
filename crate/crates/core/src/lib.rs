pub mod config;
pub mod control;
pub mod device;
pub mod edge_node;
pub mod error;
pub mod forwarder;
pub mod lsh;
pub mod metrics;
pub mod names;
pub mod packet;
pub mod sim;

pub use error::{Error, Result};
