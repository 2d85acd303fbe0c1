//! Passes that remove or cheapen the runtime instructions inserted by
//! `instrument`.

mod builtin;
mod merge;
mod redundant;
mod self_escape;
mod structs;
mod unsat;
pub mod window;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instrument::{collect_sites, CheckSite, InstrumentOptions, SiteKind};
use crate::ir::{
    trace_base, BaseRef, DominatorInfo, Function, InstKind, Operand, Pos, Program, Site,
    ValueDef,
};

pub use redundant::{
    redundant_pair, remove_redundant, RangeCandidate, RedundantOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Unsat,
    Builtin,
    Struct,
    Redundant,
    SelfEscape,
    Merge,
}

impl Pass {
    /// Pipeline order.
    pub const ALL: [Pass; 6] = [
        Pass::Unsat,
        Pass::Builtin,
        Pass::Struct,
        Pass::Redundant,
        Pass::SelfEscape,
        Pass::Merge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pass::Unsat => "unsat",
            Pass::Builtin => "builtin",
            Pass::Struct => "struct",
            Pass::Redundant => "redundant",
            Pass::SelfEscape => "selfescape",
            Pass::Merge => "merge",
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of enabled passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OptFlags {
    bits: u8,
}

impl OptFlags {
    pub const NONE: OptFlags = OptFlags { bits: 0 };
    pub const ALL: OptFlags = OptFlags { bits: 0b11_1111 };

    fn bit(p: Pass) -> u8 {
        1 << Pass::ALL.iter().position(|&q| q == p).expect("known pass")
    }

    pub fn only(p: Pass) -> OptFlags {
        OptFlags { bits: Self::bit(p) }
    }

    pub fn with(self, p: Pass) -> OptFlags {
        OptFlags {
            bits: self.bits | Self::bit(p),
        }
    }

    pub fn without(self, p: Pass) -> OptFlags {
        OptFlags {
            bits: self.bits & !Self::bit(p),
        }
    }

    pub fn contains(self, p: Pass) -> bool {
        self.bits & Self::bit(p) != 0
    }

    pub fn passes(self) -> impl Iterator<Item = Pass> {
        Pass::ALL.into_iter().filter(move |&p| self.contains(p))
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }
}

impl Default for OptFlags {
    fn default() -> Self {
        OptFlags::ALL
    }
}

impl fmt::Display for OptFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == OptFlags::ALL {
            return f.write_str("all");
        }
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<_> = self.passes().map(Pass::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for OptFlags {
    type Err = OptError;

    /// Comma-separated pass names, `all`, or `none`. A leading `-` removes
    /// a pass, so `all,-merge` enables everything but merging.
    fn from_str(s: &str) -> Result<Self, OptError> {
        let mut flags = OptFlags::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (neg, name) = match part.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, part),
            };
            let set = match name {
                "all" => OptFlags::ALL,
                "none" => OptFlags::NONE,
                _ => Pass::ALL
                    .into_iter()
                    .find(|p| p.name() == name)
                    .map(OptFlags::only)
                    .ok_or_else(|| OptError::UnknownPass(name.to_string()))?,
            };
            flags.bits = if neg {
                flags.bits & !set.bits
            } else {
                flags.bits | set.bits
            };
        }
        Ok(flags)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OptError {
    #[error("unknown optimization pass `{0}`")]
    UnknownPass(String),
    #[error("program is not instrumented")]
    NotInstrumented,
    #[error("struct pass relies on cast checks, which are disabled")]
    StructWithoutCastChecks,
}

/// Rejects pass sets whose premises the instrumentation does not provide.
pub fn check_config(opts: InstrumentOptions, flags: OptFlags) -> Result<(), OptError> {
    if flags.contains(Pass::Struct) && !opts.cast_checks {
        return Err(OptError::StructWithoutCastChecks);
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    /// Runtime instructions the pass looked at.
    pub examined: u64,
    pub removed: u64,
    /// Checks turned into inline asserts.
    pub merged: u64,
    /// Range inits inserted.
    pub rewritten: u64,
}

impl PassStats {
    fn add(&mut self, o: &PassStats) {
        self.examined += o.examined;
        self.removed += o.removed;
        self.merged += o.merged;
        self.rewritten += o.rewritten;
    }
}

/// A check the builtin pass proved will always fail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticViolation {
    pub function: String,
    pub site: u32,
    pub extent: u64,
    pub object_size: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteCounts {
    pub range_checks: u64,
    pub cast_checks: u64,
    pub escapes: u64,
    pub range_inits: u64,
    pub asserts: u64,
}

impl SiteCounts {
    pub fn of(p: &Program) -> SiteCounts {
        let mut c = SiteCounts::default();
        for f in &p.functions {
            for (_, inst) in f.positions() {
                match inst.kind {
                    InstKind::CheckRange { .. } => c.range_checks += 1,
                    InstKind::CastCheck { .. } => c.cast_checks += 1,
                    InstKind::Escape { .. } => c.escapes += 1,
                    InstKind::GetRange { .. } => c.range_inits += 1,
                    InstKind::AssertRange { .. } => c.asserts += 1,
                    _ => {}
                }
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.range_checks + self.cast_checks + self.escapes + self.range_inits + self.asserts
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptStats {
    pub flags: String,
    pub before: SiteCounts,
    pub after: SiteCounts,
    pub passes: BTreeMap<Pass, PassStats>,
    /// Function name → pass → counters.
    pub functions: BTreeMap<String, BTreeMap<Pass, PassStats>>,
    pub static_violations: Vec<StaticViolation>,
}

impl OptStats {
    pub fn pass(&self, p: Pass) -> PassStats {
        self.passes.get(&p).cloned().unwrap_or_default()
    }

    fn record(&mut self, f: &str, p: Pass, s: &PassStats) {
        self.passes.entry(p).or_default().add(s);
        self.functions
            .entry(f.to_string())
            .or_default()
            .entry(p)
            .or_default()
            .add(s);
    }
}

/// Runs the enabled passes, in pipeline order, over an instrumented program.
pub fn run_pipeline(p: &Program, flags: OptFlags) -> Result<(Program, OptStats), OptError> {
    if !p.instrumented {
        return Err(OptError::NotInstrumented);
    }
    let mut out = p.clone();
    let mut stats = OptStats {
        flags: flags.to_string(),
        before: SiteCounts::of(p),
        ..OptStats::default()
    };
    for pass in flags.passes() {
        for fi in 0..out.functions.len() {
            let mut f = out.functions[fi].clone();
            let mut ps = PassStats::default();
            match pass {
                Pass::Unsat => unsat::run(&out, &mut f, &mut ps),
                Pass::Builtin => {
                    builtin::run(&out, &mut f, &mut ps, &mut stats.static_violations)
                }
                Pass::Struct => structs::run(&out, &mut f, &mut ps),
                Pass::Redundant => {
                    let outcome = remove_redundant(&f);
                    ps = outcome.stats.clone();
                    f = outcome.function;
                }
                Pass::SelfEscape => self_escape::run(&mut f, &mut ps),
                Pass::Merge => merge::run(&mut f, &mut ps),
            }
            stats.record(&f.name, pass, &ps);
            out.functions[fi] = f;
        }
    }
    stats.after = SiteCounts::of(&out);
    Ok((out, stats))
}

/// Fills `removable_by` with the passes that, run alone, delete each site.
pub fn annotate_removable(p: &Program, sites: &mut [CheckSite]) -> Result<(), OptError> {
    for pass in Pass::ALL {
        let (q, _) = run_pipeline(p, OptFlags::only(pass))?;
        let left: HashSet<(SiteKind, Option<u32>, String)> = collect_sites(&q)
            .into_iter()
            .map(|s| {
                let kind = match s.kind {
                    SiteKind::MergedAssert => SiteKind::RangeCheck,
                    k => k,
                };
                (kind, s.id, s.function)
            })
            .collect();
        for s in sites.iter_mut() {
            if s.kind == SiteKind::RangeInit {
                continue;
            }
            if !left.contains(&(s.kind, s.id, s.function.clone())) {
                s.removable_by.push(pass.name().to_string());
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CheckKind {
    Range,
    Cast,
}

/// A range or cast check with its pointer traced to a base.
#[derive(Clone, Debug)]
pub(crate) struct CheckInfo {
    pub pos: Pos,
    pub kind: CheckKind,
    pub ptr: Operand,
    pub size: u64,
    pub site: Site,
    pub base: BaseRef,
    pub offset: Option<u64>,
}

impl CheckInfo {
    pub fn extent(&self) -> Option<u64> {
        self.offset.and_then(|o| o.checked_add(self.size))
    }
}

/// Checks in reachable blocks, in reverse postorder.
pub(crate) fn checks(f: &Function, defs: &[ValueDef], dom: &DominatorInfo) -> Vec<CheckInfo> {
    let mut out = Vec::new();
    for &b in &dom.cfg.rpo {
        for (i, inst) in f.block(b).insts.iter().enumerate() {
            let (kind, ptr, size, site) = match &inst.kind {
                InstKind::CheckRange { dst, size, site, .. } => (CheckKind::Range, *dst, *size, site),
                InstKind::CastCheck { ptr, size, site } => (CheckKind::Cast, *ptr, *size, site),
                _ => continue,
            };
            let info = trace_base(f, defs, ptr);
            out.push(CheckInfo {
                pos: Pos::new(b, i),
                kind,
                ptr,
                size,
                site: site.clone(),
                base: info.base,
                offset: info.offset,
            });
        }
    }
    out
}

/// Request size of `alloc` defining `base`, if constant.
pub(crate) fn const_alloc(f: &Function, defs: &[ValueDef], base: BaseRef) -> Option<(Pos, u64)> {
    let BaseRef::Value(v) = base else { return None };
    let ValueDef::Inst(pos) = *defs.get(v.index())? else {
        return None;
    };
    let InstKind::Alloc { size } = &f.inst(pos).kind else {
        return None;
    };
    let n = match *size {
        Operand::Imm(n) => n,
        Operand::Value(s) => match defs.get(s.index())? {
            ValueDef::Inst(sp) => match &f.inst(*sp).kind {
                InstKind::Const { value, .. } => *value,
                _ => return None,
            },
            _ => return None,
        },
        Operand::Global(_) => return None,
    };
    u64::try_from(n).ok().map(|n| (pos, n))
}

/// Deletes the instructions at `dead`.
pub(crate) fn remove_at(f: &mut Function, dead: &HashSet<Pos>) {
    for (b, block) in f.blocks.iter_mut().enumerate() {
        let mut i = 0;
        block.insts.retain(|_| {
            let keep = !dead.contains(&Pos::new(crate::ir::BlockId(b as u32), i));
            i += 1;
            keep
        });
    }
}
