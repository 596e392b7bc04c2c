//! Slot-based drift-plus-penalty simulation.

pub mod convergence;
pub mod engine;
pub mod queue;
pub mod scenario;
pub mod sweep;

pub use convergence::{detect_convergence, ConvergenceDetector};
pub use engine::{run, run_with_sink, slot_step, DeviceSlot, NullSink, RunSummary, Setting, SlotRecord, TraceSink, Verdict};
pub use queue::{drift_bound, update_queue, DriftTerms, VirtualQueueState};
pub use scenario::{
    ConvergenceConfig, CpuConfig, DeviceTask, EdgeDeviceConfig, EdgeServerConfig, Mode, Scenario, Targets,
};
pub use sweep::{sweep, SweepGrid, SweepPoint, SweepRow};
