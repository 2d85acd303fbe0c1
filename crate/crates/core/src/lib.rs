//! Heap bounds checking and dangling-pointer neutralization for a small SSA
//! IR: instrumentation, check optimization, the runtime, and an interpreter.

pub mod gen;
pub mod instrument;
pub mod ir;
pub mod optimize;
pub mod runtime;
pub mod vm;

pub use gen::{gen_random_program, BugKind, GenConfig, Generated, InjectedBug};
pub use instrument::{collect_sites, instrument_program, CheckSite, InstrumentOptions, SiteKind};
pub use ir::{parse_program, print_program, validate_program, Program};
pub use optimize::{run_pipeline, OptFlags, OptStats, Pass};
pub use runtime::{Bounds, Runtime, RuntimeConfig, RuntimeStats};
pub use vm::{run, run_differential, verdicts_equivalent, DiffResult, ExecutionReport, Verdict, VerdictKind, VmConfig};
