use serde::{Deserialize, Serialize};

use super::{run, ExecutionReport, Verdict, VerdictKind, VmConfig};
use crate::ir::Program;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffResult {
    pub equivalent: bool,
    /// Human-readable reasons the runs disagree; empty when equivalent.
    pub mismatches: Vec<String>,
    pub plain: ExecutionReport,
    pub optimized: ExecutionReport,
    pub unoptimized: ExecutionReport,
}

/// Whether an optimized run reports the same finding as the unoptimized one.
/// The optimized site may stand in for several original checks, so the
/// unoptimized faulting site only has to be among them.
pub fn verdicts_equivalent(unopt: &Verdict, opt: &Verdict) -> bool {
    if unopt.kind().normalized() != opt.kind().normalized() {
        return false;
    }
    match unopt.site() {
        Some(s) => opt.sites().contains(&s),
        None => true,
    }
}

/// Runs the three versions of one program and compares them.
pub fn run_differential(
    plain: &Program,
    optimized: &Program,
    unoptimized: &Program,
    cfg: &VmConfig,
) -> DiffResult {
    let rp = run(plain, cfg);
    let ro = run(optimized, cfg);
    let ru = run(unoptimized, cfg);
    let mut mismatches = Vec::new();
    if !verdicts_equivalent(&ru.verdict, &ro.verdict) {
        mismatches.push(format!(
            "verdict: unoptimized {} at {:?}, optimized {} at {:?}",
            ru.verdict.kind().name(),
            ru.verdict.sites(),
            ro.verdict.kind().name(),
            ro.verdict.sites()
        ));
    }
    if ru.output != ro.output {
        mismatches.push(format!(
            "output: unoptimized {:?}, optimized {:?}",
            ru.output, ro.output
        ));
    }
    if ru.verdict.kind() == VerdictKind::Ok && rp.output != ru.output {
        mismatches.push(format!(
            "output: plain {:?}, instrumented {:?}",
            rp.output, ru.output
        ));
    }
    DiffResult {
        equivalent: mismatches.is_empty(),
        mismatches,
        plain: rp,
        optimized: ro,
        unoptimized: ru,
    }
}
