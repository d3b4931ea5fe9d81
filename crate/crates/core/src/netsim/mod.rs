//! Deterministic discrete-event packet simulator.

mod sim;
mod topology;
mod trace;
mod traffic;

pub use sim::{
    run, Delivery, EventKey, Fabric, FabricOptions, Phase, ProbeInstall, RunError, RunOutput,
};
pub use topology::{
    build_topology, compute_routes, LinkSpec, NodeSpec, Port, Role, RoutingTable, Topology,
    TopologyConfig, TopologyError,
};
pub use trace::{
    DropRecord, PacketRecord, Trace, TraceEvent, TraceKind, TraceParseError, TRACE_HEADER,
};
pub use traffic::{
    generate_topology, generate_traffic, FlowSpec, SplitMix64, TopologyGenerator,
    TrafficError, TrafficGenerator, TrafficSpec,
};
