//! Network MapReduce: a streaming MapReduce engine embedded in a simulated
//! SDN data plane.
//!
//! Network devices act as mappers (a probe layer in the forwarding chip plus
//! a local-processor layer), devices outside the mapper set act as reducers,
//! and the controller tracks jobs and hands windowed results to analytics
//! applications. A centralized oracle recomputes every application's answer
//! from the raw packet trace.

pub mod apps;
pub mod model;
pub mod mr;
pub mod netsim;
pub mod oracle;
pub mod probes;
pub mod scenario;

pub use model::{
    extract_flow_key, partition_key, window_of, FlowKey, LinkId, NodeId, Packet, SimTime,
    WindowId, WindowKind, WindowPolicy,
};
