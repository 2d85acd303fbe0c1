//! Inserts range checks after pointer arithmetic, size checks after pointer
//! casts, and escape tracking before pointer stores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{
    is_heap_pointer, trace_base, BaseRef, Function, Inst, InstKind, Operand, Program, Site, Ty,
    ValueDef,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentOptions {
    pub range_checks: bool,
    pub cast_checks: bool,
    pub escapes: bool,
}

impl Default for InstrumentOptions {
    fn default() -> Self {
        InstrumentOptions {
            range_checks: true,
            cast_checks: true,
            escapes: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("program is already instrumented")]
    AlreadyInstrumented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    RangeCheck,
    CastCheck,
    EscapeTrack,
    MergedAssert,
    RangeInit,
}

/// One runtime instruction of an instrumented program, described in terms
/// of the program instruction it guards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSite {
    /// Ordinal of the guarded instruction; `None` for range inits.
    pub id: Option<u32>,
    /// Ordinals of checks folded into this one by the optimizer.
    pub absorbed: Vec<u32>,
    pub kind: SiteKind,
    pub function: String,
    /// Name of the value the guarded pointer was derived from.
    pub base: Option<String>,
    /// Name of the checked pointer.
    pub result: Option<String>,
    pub access_size: u64,
    /// Constant byte offset of the checked pointer from `base`.
    pub static_offset: Option<u64>,
    /// Passes that remove this site when run alone; filled by the optimizer.
    pub removable_by: Vec<String>,
}

/// Instruments every function of `p`.
pub fn instrument_program(
    p: &Program,
    opts: InstrumentOptions,
) -> Result<(Program, Vec<CheckSite>), InstrumentError> {
    if p.instrumented {
        return Err(InstrumentError::AlreadyInstrumented);
    }
    let ordinals = p.source_ordinals();
    let mut out = p.clone();
    out.instrumented = true;
    for (fi, f) in p.functions.iter().enumerate() {
        out.functions[fi] = instrument_function(p, f, &ordinals[fi], opts);
    }
    let sites = collect_sites(&out);
    Ok((out, sites))
}

fn instrument_function(
    p: &Program,
    f: &Function,
    ordinals: &[Vec<Option<u32>>],
    opts: InstrumentOptions,
) -> Function {
    let defs = f.value_defs();
    let mut out = f.clone();
    for (b, block) in f.blocks.iter().enumerate() {
        let mut insts = Vec::with_capacity(block.insts.len());
        for (i, inst) in block.insts.iter().enumerate() {
            let site = || Site::new(ordinals[b][i].expect("program instruction"));
            match &inst.kind {
                InstKind::Store { ty, value, ptr } if opts.escapes && ty.is_ptr() => {
                    if is_heap_pointer(f, &defs, *value).needs_check() {
                        insts.push(Inst::new(InstKind::Escape {
                            loc: *ptr,
                            value: *value,
                            site: site(),
                        }));
                    }
                    insts.push(inst.clone());
                }
                InstKind::PtrAdd { base, .. } if opts.range_checks => {
                    insts.push(inst.clone());
                    let r = inst.result.expect("ptradd has a result");
                    if is_heap_pointer(f, &defs, *base).needs_check() {
                        let size = pointee_size(p, f.value_ty(r));
                        insts.push(Inst::new(InstKind::CheckRange {
                            src: *base,
                            dst: Operand::Value(r),
                            size,
                            site: site(),
                        }));
                    }
                }
                InstKind::Cast { value, to } if opts.cast_checks && to.is_ptr() => {
                    insts.push(inst.clone());
                    let from = p.operand_ty(f, *value);
                    let r = inst.result.expect("cast has a result");
                    if from != *to && is_heap_pointer(f, &defs, *value).needs_check() {
                        insts.push(Inst::new(InstKind::CastCheck {
                            ptr: Operand::Value(r),
                            size: pointee_size(p, to),
                            site: site(),
                        }));
                    }
                }
                _ => insts.push(inst.clone()),
            }
        }
        out.blocks[b].insts = insts;
    }
    out
}

fn pointee_size(p: &Program, ptr_ty: &Ty) -> u64 {
    ptr_ty.pointee().map_or(0, |t| p.size_of(t))
}

/// Describes every runtime instruction in an instrumented program.
pub fn collect_sites(p: &Program) -> Vec<CheckSite> {
    let mut sites = Vec::new();
    for f in &p.functions {
        let defs = f.value_defs();
        for (_, inst) in f.positions() {
            if let Some(site) = describe(f, &defs, &inst.kind) {
                sites.push(site);
            }
        }
    }
    sites
}

fn value_name(f: &Function, op: Operand) -> Option<String> {
    op.as_value().map(|v| f.value_name(v).to_string())
}

fn base_name(f: &Function, r: BaseRef) -> Option<String> {
    match r {
        BaseRef::Value(v) if v.index() < f.values.len() => Some(f.value_name(v).to_string()),
        BaseRef::Value(_) => None,
        BaseRef::Global(_) => Some("<global>".to_string()),
    }
}

fn describe(f: &Function, defs: &[ValueDef], kind: &InstKind) -> Option<CheckSite> {
    let mk = |kind: SiteKind, site: Option<&Site>, ptr: Operand, size: u64| {
        let info = trace_base(f, defs, ptr);
        CheckSite {
            id: site.map(|s| s.id),
            absorbed: site.map(|s| s.absorbed.clone()).unwrap_or_default(),
            kind,
            function: f.name.clone(),
            base: base_name(f, info.base),
            result: value_name(f, ptr),
            access_size: size,
            static_offset: info.offset,
            removable_by: Vec::new(),
        }
    };
    Some(match kind {
        InstKind::CheckRange { dst, size, site, .. } => mk(SiteKind::RangeCheck, Some(site), *dst, *size),
        InstKind::CastCheck { ptr, size, site } => mk(SiteKind::CastCheck, Some(site), *ptr, *size),
        InstKind::Escape { value, site, .. } => mk(SiteKind::EscapeTrack, Some(site), *value, 8),
        InstKind::AssertRange { dst, size, site, .. } => {
            mk(SiteKind::MergedAssert, Some(site), *dst, *size)
        }
        InstKind::GetRange { ptr } => mk(SiteKind::RangeInit, None, *ptr, 0),
        _ => return None,
    })
}
