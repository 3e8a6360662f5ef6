pub mod dataset;
pub mod handler;
pub mod kernels;
pub mod manager;
pub mod oracle;
pub mod params;
pub mod plan;
pub mod realtime;
pub mod runtime;
pub mod scenario;
pub mod span;
pub mod taskgraph;
pub mod tuplespace;
pub mod verify;
