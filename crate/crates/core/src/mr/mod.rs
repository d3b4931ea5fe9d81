//! Streaming MapReduce over the simulated network: mapper operators on
//! device local processors, push-mode hash shuffle, windowed reducers on
//! devices outside the mapper set, and the controller's job tracker.

mod job;
mod mapper;
mod record;
mod reducer;
mod runtime;
mod space_saving;

pub use job::{scoped_tag, JobError, JobSpec, MapOperatorSpec, PlannedProbe, ReduceOperatorSpec};
pub use mapper::{CachedWindow, MapperState};
pub use record::{
    CellValue, IntermediateRecord, JobId, RecordKey, ResultEntry, ShuffleMessage, Value,
    ValueKind, ValueMismatch, WindowClose, WindowedResult,
};
pub use reducer::{ProtocolViolation, ReducerState};
pub use runtime::{Deployment, Runtime, RuntimeConfig, SentMessage, ShuffleLog};
pub use space_saving::{Counter, SpaceSaving};
