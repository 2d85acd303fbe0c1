//! Text format writer; the inverse of [`parse_program`](super::parse_program).

use std::fmt::Write;

use super::{Callee, Function, InstKind, Operand, Program, RecordKind, Site, TyDisplay};

fn op(p: &Program, f: &Function, o: Operand) -> String {
    match o {
        Operand::Value(v) => format!("%{}", f.value_name(v)),
        Operand::Global(g) => format!("@{}", p.global(g).name),
        Operand::Imm(i) => i.to_string(),
    }
}

fn site(s: &Site) -> String {
    let mut out = format!("!{}", s.id);
    for a in &s.absorbed {
        let _ = write!(out, "+{a}");
    }
    out
}

/// Renders the whole program in the text format.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    if p.instrumented {
        out.push_str("instrumented\n");
    }
    for t in &p.types {
        let flex = if t.kind == RecordKind::Flexible { " flex" } else { "" };
        let _ = write!(out, "type {}{} {{ ", t.name, flex);
        for fld in &t.fields {
            let arr = if fld.trailing { "[]" } else { "" };
            let _ = write!(
                out,
                "{} {}{} @{}; ",
                TyDisplay(p, &fld.ty),
                fld.name,
                arr,
                fld.offset
            );
        }
        let _ = writeln!(out, "size {}; align {} }}", t.byte_size, t.align);
    }
    for g in &p.globals {
        let _ = write!(out, "global @{} : {}", g.name, TyDisplay(p, &g.elem));
        if let Some(n) = g.count {
            let _ = write!(out, "[{n}]");
        }
        if !g.init.is_empty() {
            out.push_str(" = \"");
            for b in &g.init {
                let _ = write!(out, "{b:02x}");
            }
            out.push('"');
        }
        out.push('\n');
    }
    let _ = writeln!(out, "entry @{}", p.entry);
    for f in &p.functions {
        out.push('\n');
        print_function(p, f, &mut out);
    }
    out
}

fn print_function(p: &Program, f: &Function, out: &mut String) {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|v| format!("%{}: {}", f.value_name(*v), TyDisplay(p, f.value_ty(*v))))
        .collect();
    let _ = writeln!(
        out,
        "fn @{}({}) -> {} {{",
        f.name,
        params.join(", "),
        TyDisplay(p, &f.ret)
    );
    for b in &f.blocks {
        let _ = writeln!(out, "{}:", b.label);
        for inst in &b.insts {
            out.push_str("  ");
            if let Some(r) = inst.result {
                let _ = write!(out, "%{} = ", f.value_name(r));
            }
            let o = |x: Operand| op(p, f, x);
            let ty = |t| TyDisplay(p, t);
            let text = match &inst.kind {
                InstKind::Alloc { size } => format!("alloc {}", o(*size)),
                InstKind::Free { ptr } => format!("free {}", o(*ptr)),
                InstKind::Slot { ty: t } => format!("slot {}", ty(t)),
                InstKind::PtrAdd {
                    elem,
                    base,
                    indices,
                    ..
                } => {
                    let mut s = format!("ptradd {}, {}", ty(elem), o(*base));
                    for i in indices {
                        let _ = write!(s, ", {}", o(*i));
                    }
                    s
                }
                InstKind::Cast { value, to } => format!("cast {} to {}", o(*value), ty(to)),
                InstKind::Load { ty: t, ptr } => format!("load {}, {}", ty(t), o(*ptr)),
                InstKind::Store { ty: t, value, ptr } => {
                    format!("store {} {}, {}", ty(t), o(*value), o(*ptr))
                }
                InstKind::Const { ty: t, value } => format!("const {} {}", ty(t), value),
                InstKind::Bin {
                    op: b,
                    ty: t,
                    lhs,
                    rhs,
                } => format!("binop {} {} {}, {}", b.name(), ty(t), o(*lhs), o(*rhs)),
                InstKind::Cmp {
                    pred,
                    ty: t,
                    lhs,
                    rhs,
                } => format!("cmp {} {} {}, {}", pred.name(), ty(t), o(*lhs), o(*rhs)),
                InstKind::Br { target } => format!("br {}", f.block(*target).label),
                InstKind::CondBr {
                    cond,
                    then_to,
                    else_to,
                } => format!(
                    "condbr {}, {}, {}",
                    o(*cond),
                    f.block(*then_to).label,
                    f.block(*else_to).label
                ),
                InstKind::Phi { ty: t, incoming } => {
                    let arms: Vec<String> = incoming
                        .iter()
                        .map(|(v, b)| format!("[{}, {}]", o(*v), f.block(*b).label))
                        .collect();
                    format!("phi {} {}", ty(t), arms.join(", "))
                }
                InstKind::Call { callee, args } => {
                    let name = match callee {
                        Callee::Func(id) => p.function(*id).name.as_str(),
                        Callee::PrintI64 => "print_i64",
                    };
                    let args: Vec<String> = args.iter().map(|a| o(*a)).collect();
                    format!("call @{}({})", name, args.join(", "))
                }
                InstKind::Ret { value: None } => "ret".to_string(),
                InstKind::Ret { value: Some(v) } => format!("ret {}", o(*v)),
                InstKind::CheckRange {
                    src,
                    dst,
                    size,
                    site: s,
                } => format!("checkrange {}, {}, {} {}", o(*src), o(*dst), size, site(s)),
                InstKind::CastCheck { ptr, size, site: s } => {
                    format!("castcheck {}, {} {}", o(*ptr), size, site(s))
                }
                InstKind::Escape {
                    loc,
                    value,
                    site: s,
                } => format!("escape {}, {} {}", o(*loc), o(*value), site(s)),
                InstKind::GetRange { ptr } => format!("getrange {}", o(*ptr)),
                InstKind::AssertRange {
                    range,
                    dst,
                    size,
                    site: s,
                } => format!("assertrange {}, {}, {} {}", o(*range), o(*dst), size, site(s)),
            };
            out.push_str(&text);
            out.push('\n');
        }
    }
    out.push_str("}\n");
}

#[cfg(test)]
mod tests {
    use crate::ir::parse_program;

    use super::*;

    const SAMPLE: &str = "
instrumented
type Obj { i32 a @0; i32 b @4; size 8 }
type Str flex { i64 len @0; i8 data[] @8; size 8 }
global @tab : i8[4] = \"01020304\"
global @one : i64
entry @main

fn @helper(%o: Obj*, %n: i64) -> i64 {
entry:
  %p = ptradd Obj, %o, 0, 1
  checkrange %o, %p, 4 !3+7
  %v = load i32, %p
  %c = cmp lt i64 %n, -5
  condbr %c, yes, no
yes:
  br no
no:
  %r = phi i64 [%n, entry], [0, yes]
  ret %r
}

fn @main() -> void {
entry:
  %m = alloc 16
  %o = cast %m to Obj*
  castcheck %o, 8 !1
  %s = slot i8*
  escape %s, %m !2
  store i8* %m, %s
  %x = call @helper(%o, 3)
  call @print_i64(%x)
  %g = getrange %m
  %q = ptradd i8, %m, 9
  assertrange %g, %q, 1 !9
  %t = ptradd i8, @tab, 2
  free %m
  ret
}
";

    #[test]
    fn print_parse_round_trip() {
        let p = parse_program(SAMPLE).unwrap();
        let text = print_program(&p);
        let q = parse_program(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(text, print_program(&q));
    }

    #[test]
    fn sites_print_with_absorbed_ids() {
        let p = parse_program(SAMPLE).unwrap();
        let text = print_program(&p);
        assert!(text.contains("checkrange %o, %p, 4 !3+7"));
        assert!(text.contains("global @tab : i8[4] = \"01020304\""));
    }
}
