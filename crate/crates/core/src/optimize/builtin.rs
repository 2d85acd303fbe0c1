//! Answers range queries at compile time for pointers into constant-size
//! allocations.

use std::collections::HashSet;

use super::window::lifetime_stable;
use super::{checks, const_alloc, remove_at, PassStats, StaticViolation};
use crate::ir::{DominatorInfo, Function, Program};
use crate::runtime::alloc_class;

pub(super) fn run(
    _p: &Program,
    f: &mut Function,
    ps: &mut PassStats,
    violations: &mut Vec<StaticViolation>,
) {
    let defs = f.value_defs();
    let dom = DominatorInfo::new(f);
    let mut dead = HashSet::new();
    for c in checks(f, &defs, &dom) {
        ps.examined += 1;
        let Some(extent) = c.extent() else { continue };
        let Some((apos, n)) = const_alloc(f, &defs, c.base) else {
            continue;
        };
        if !dom.dominates(apos, c.pos) || !lifetime_stable(f, &dom.cfg, apos, c.pos, false) {
            continue;
        }
        let class = alloc_class(n);
        if extent <= class {
            dead.insert(c.pos);
        } else {
            violations.push(StaticViolation {
                function: f.name.clone(),
                site: c.site.id,
                extent,
                object_size: class,
            });
        }
    }
    ps.removed += dead.len() as u64;
    remove_at(f, &dead);
}
