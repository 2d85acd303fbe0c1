//! Random program generator for differential testing.
//!
//! Programs keep heap pointers in stack slots and reload them before every
//! use, so a pointer into a freed object is only ever reached through a
//! neutralized location. Loops have constant trip counts. An optional bug
//! is appended at the end of `main` with its expected verdict and site.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ir::{parse_program, InstKind, Operand, Program};
use crate::runtime::alloc_class;
use crate::vm::VerdictKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    /// Top-level statements in `main`.
    pub max_stmts: usize,
    /// Heap object slots in `main`.
    pub max_objects: usize,
    pub min_alloc: u64,
    pub max_alloc: u64,
    /// Probability that a program carries an injected bug.
    pub bug_rate: f64,
    pub max_loop: u64,
    pub weights: StmtWeights,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            max_stmts: 24,
            max_objects: 5,
            min_alloc: 1,
            max_alloc: 96,
            bug_rate: 0.5,
            max_loop: 64,
            weights: StmtWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StmtWeights {
    pub alloc: u32,
    pub write: u32,
    pub read: u32,
    pub fill: u32,
    pub node: u32,
    pub link: u32,
    pub advance: u32,
    pub free: u32,
    pub call: u32,
    pub branch: u32,
    pub vec: u32,
    pub global: u32,
    pub scratch: u32,
}

impl Default for StmtWeights {
    fn default() -> Self {
        StmtWeights {
            alloc: 6,
            write: 6,
            read: 5,
            fill: 3,
            node: 3,
            link: 2,
            advance: 2,
            free: 3,
            call: 2,
            branch: 2,
            vec: 1,
            global: 1,
            scratch: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BugKind {
    Overflow,
    LoopOverflow,
    NonLinearOverflow,
    InBoundOverflow,
    UseAfterFree,
    AliasUseAfterFree,
    DoubleFree,
    InvalidFree,
}

impl BugKind {
    pub const ALL: [BugKind; 8] = [
        BugKind::Overflow,
        BugKind::LoopOverflow,
        BugKind::NonLinearOverflow,
        BugKind::InBoundOverflow,
        BugKind::UseAfterFree,
        BugKind::AliasUseAfterFree,
        BugKind::DoubleFree,
        BugKind::InvalidFree,
    ];

    pub fn expected(self) -> VerdictKind {
        match self {
            BugKind::Overflow | BugKind::LoopOverflow | BugKind::NonLinearOverflow => {
                VerdictKind::Oob
            }
            BugKind::InBoundOverflow => VerdictKind::Ok,
            BugKind::UseAfterFree | BugKind::AliasUseAfterFree => VerdictKind::Uaf,
            BugKind::DoubleFree => VerdictKind::DoubleFree,
            BugKind::InvalidFree => VerdictKind::InvalidFree,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BugKind::Overflow => "overflow",
            BugKind::LoopOverflow => "loop-overflow",
            BugKind::NonLinearOverflow => "non-linear-overflow",
            BugKind::InBoundOverflow => "in-bound-overflow",
            BugKind::UseAfterFree => "use-after-free",
            BugKind::AliasUseAfterFree => "alias-use-after-free",
            BugKind::DoubleFree => "double-free",
            BugKind::InvalidFree => "invalid-free",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedBug {
    pub kind: BugKind,
    pub expected: VerdictKind,
    /// Ordinal of the instruction expected to fault; `None` when the
    /// expected verdict is ok.
    pub site: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub text: String,
    pub program: Program,
    pub bug: Option<InjectedBug>,
}

/// Marker name of the value whose defining or consuming instruction faults.
const BUG: &str = "%bug";

const PRELUDE: &str = "\
type Node { i64 val @0; i8* buf @8; size 16 }
type Vec flex { i64 len @0; i8 data[] @8; size 8 }
global @table : i64[8]

fn @touch(%p: i8*, %n: i64) -> i64 {
entry:
  br head
head:
  %i = phi i64 [0, entry], [%i2, body]
  %s = phi i64 [0, entry], [%s2, body]
  %c = cmp lt i64 %i, %n
  condbr %c, body, done
body:
  %q = ptradd i8, %p, %i
  %b = load i8, %q
  %w = cast %b to i64
  %s2 = binop add i64 %s, %w
  %i2 = binop add i64 %i, 1
  br head
done:
  ret %s
}

fn @bump(%n: Node*) {
entry:
  %f = ptradd Node, %n, 0, 0
  %v = load i64, %f
  %v2 = binop add i64 %v, 1
  store i64 %v2, %f
  ret
}
";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ObjKind {
    Bytes,
    Node,
    Vec,
}

#[derive(Clone, Debug)]
struct Obj {
    slot: String,
    kind: ObjKind,
    live: bool,
    /// Requested bytes.
    size: u64,
    /// For nodes: the byte object `buf` points into and the offset.
    buf: Option<(usize, u64)>,
}

struct Gen {
    rng: ChaCha8Rng,
    cfg: GenConfig,
    lines: Vec<String>,
    next: usize,
    label: String,
    objs: Vec<Obj>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stmt {
    Alloc,
    Write,
    Read,
    Fill,
    Node,
    Link,
    Advance,
    Free,
    Call,
    Branch,
    Vec,
    Global,
    Scratch,
}

/// Generates one program. The same config always yields the same text.
pub fn gen_random_program(cfg: &GenConfig) -> Generated {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        cfg: cfg.clone(),
        lines: Vec::new(),
        next: 0,
        label: "entry".into(),
        objs: Vec::new(),
    };
    g.main();
    let bug_kind = if g.rng.gen_bool(cfg.bug_rate.clamp(0.0, 1.0)) {
        g.bug()
    } else {
        None
    };
    let fin = g.fresh("fin");
    g.inst(format!("{fin} = load i64, %acc"));
    g.inst(format!("call @print_i64({fin})"));
    g.inst("ret".into());
    g.lines.push("}".into());
    let text = format!("{PRELUDE}\n{}\n", g.lines.join("\n"));
    let program = parse_program(&text)
        .unwrap_or_else(|e| panic!("generator produced unparsable text: {e}\n{text}"));
    let bug = bug_kind.map(|kind| InjectedBug {
        kind,
        expected: kind.expected(),
        site: (kind.expected() != VerdictKind::Ok).then(|| bug_site(&program, kind)),
    });
    Generated { text, program, bug }
}

fn bug_site(p: &Program, kind: BugKind) -> u32 {
    let ordinals = p.source_ordinals();
    let main = p.function_by_name("main").expect("main exists").0 as usize;
    let f = &p.functions[main];
    let is_bug = |op: &Operand| match op {
        Operand::Value(v) => f.value_name(*v) == &BUG[1..],
        _ => false,
    };
    for (pos, inst) in f.positions() {
        let hit = match (&inst.kind, kind.expected()) {
            (InstKind::PtrAdd { .. }, VerdictKind::Oob) => {
                inst.result.is_some_and(|r| f.value_name(r) == &BUG[1..])
            }
            (InstKind::Store { ptr, .. } | InstKind::Load { ptr, .. }, VerdictKind::Uaf) => {
                is_bug(ptr)
            }
            (InstKind::Free { ptr }, VerdictKind::DoubleFree | VerdictKind::InvalidFree) => {
                is_bug(ptr)
            }
            _ => false,
        };
        if hit {
            return ordinals[main][pos.block.index()][pos.index].expect("program instruction");
        }
    }
    unreachable!("bug marker missing for {kind:?}")
}

impl Gen {
    fn fresh(&mut self, hint: &str) -> String {
        self.next += 1;
        format!("%{hint}{}", self.next)
    }

    fn fresh_label(&mut self, hint: &str) -> String {
        self.next += 1;
        format!("{hint}{}", self.next)
    }

    fn inst(&mut self, s: String) {
        self.lines.push(format!("  {s}"));
    }

    fn block(&mut self, label: String) {
        self.lines.push(format!("{label}:"));
        self.label = label;
    }

    fn main(&mut self) {
        self.lines.push("fn @main() {".into());
        self.lines.push("entry:".into());
        self.inst("%acc = slot i64".into());
        self.inst("store i64 0, %acc".into());
        let n = self.rng.gen_range(2..=self.cfg.max_objects.max(2));
        for i in 0..n {
            let kind = match self.rng.gen_range(0..6) {
                0 | 1 => ObjKind::Node,
                2 => ObjKind::Vec,
                _ => ObjKind::Bytes,
            };
            let ty = match kind {
                ObjKind::Bytes => "i8*",
                ObjKind::Node => "Node*",
                ObjKind::Vec => "Vec*",
            };
            let slot = format!("%o{i}");
            self.inst(format!("{slot} = slot {ty}"));
            self.objs.push(Obj {
                slot,
                kind,
                live: false,
                size: 0,
                buf: None,
            });
        }
        for i in 0..self.objs.len() {
            self.alloc(i);
        }
        let stmts = self.rng.gen_range(1..=self.cfg.max_stmts.max(1));
        for _ in 0..stmts {
            self.stmt(true);
        }
    }

    fn pick_stmt(&mut self, top: bool) -> Stmt {
        let w = &self.cfg.weights;
        let mut table = vec![
            (Stmt::Write, w.write),
            (Stmt::Read, w.read),
            (Stmt::Fill, w.fill),
            (Stmt::Node, w.node),
            (Stmt::Call, w.call),
            (Stmt::Vec, w.vec),
            (Stmt::Global, w.global),
        ];
        if top {
            table.extend([
                (Stmt::Alloc, w.alloc),
                (Stmt::Link, w.link),
                (Stmt::Advance, w.advance),
                (Stmt::Free, w.free),
                (Stmt::Branch, w.branch),
                (Stmt::Scratch, w.scratch),
            ]);
        }
        let total: u32 = table.iter().map(|t| t.1).sum();
        if total == 0 {
            return Stmt::Global;
        }
        let mut r = self.rng.gen_range(0..total);
        for (s, wt) in table {
            if r < wt {
                return s;
            }
            r -= wt;
        }
        Stmt::Global
    }

    fn live(&self, kind: ObjKind) -> Vec<usize> {
        (0..self.objs.len())
            .filter(|&i| self.objs[i].live && self.objs[i].kind == kind)
            .collect()
    }

    fn choose(&mut self, v: &[usize]) -> Option<usize> {
        v.choose(&mut self.rng).copied()
    }

    /// Emits one statement. Nested statements never allocate, free, or move
    /// pointers, so object state is the same on every path.
    fn stmt(&mut self, top: bool) {
        let s = self.pick_stmt(top);
        let bytes = self.live(ObjKind::Bytes);
        let nodes = self.live(ObjKind::Node);
        let vecs = self.live(ObjKind::Vec);
        match s {
            Stmt::Alloc => {
                let dead: Vec<usize> = (0..self.objs.len()).filter(|&i| !self.objs[i].live).collect();
                match self.choose(&dead) {
                    Some(i) => self.alloc(i),
                    None => self.global(),
                }
            }
            Stmt::Write => match self.choose(&bytes) {
                Some(i) => self.write(i),
                None => self.global(),
            },
            Stmt::Read => match self.choose(&bytes) {
                Some(i) => self.read(i),
                None => self.global(),
            },
            Stmt::Fill => match self.choose(&bytes) {
                Some(i) => self.fill(i),
                None => self.global(),
            },
            Stmt::Node => match self.choose(&nodes) {
                Some(i) => self.node(i),
                None => self.global(),
            },
            Stmt::Link => match (self.choose(&nodes), self.choose(&bytes)) {
                (Some(n), Some(b)) => self.link(n, b),
                _ => self.global(),
            },
            Stmt::Advance => {
                let ready: Vec<usize> = nodes
                    .iter()
                    .copied()
                    .filter(|&n| {
                        self.objs[n]
                            .buf
                            .is_some_and(|(b, off)| self.objs[b].live && off + 1 < self.objs[b].size)
                    })
                    .collect();
                match self.choose(&ready) {
                    Some(n) => self.advance(n),
                    None => self.global(),
                }
            }
            Stmt::Free => {
                let all: Vec<usize> = (0..self.objs.len()).filter(|&i| self.objs[i].live).collect();
                match self.choose(&all) {
                    Some(i) => self.free(i),
                    None => self.global(),
                }
            }
            Stmt::Call => {
                if !nodes.is_empty() && self.rng.gen_bool(0.4) {
                    let n = self.choose(&nodes).expect("non-empty");
                    let p = self.fresh("n");
                    self.inst(format!("{p} = load Node*, {}", self.objs[n].slot));
                    self.inst(format!("call @bump({p})"));
                } else if let Some(i) = self.choose(&bytes) {
                    let len = self.rng.gen_range(0..=self.objs[i].size);
                    let p = self.fresh("p");
                    let r = self.fresh("t");
                    self.inst(format!("{p} = load i8*, {}", self.objs[i].slot));
                    self.inst(format!("{r} = call @touch({p}, {len})"));
                    self.accumulate(&r);
                } else {
                    self.global();
                }
            }
            Stmt::Branch => self.branch(),
            Stmt::Vec => match self.choose(&vecs) {
                Some(i) => self.vec(i),
                None => self.global(),
            },
            Stmt::Global => self.global(),
            Stmt::Scratch => self.scratch(),
        }
    }

    fn accumulate(&mut self, v: &str) {
        let a = self.fresh("a");
        let b = self.fresh("a");
        self.inst(format!("{a} = load i64, %acc"));
        self.inst(format!("{b} = binop add i64 {a}, {v}"));
        self.inst(format!("store i64 {b}, %acc"));
    }

    fn size_operand(&mut self, n: u64) -> String {
        if self.rng.gen_bool(0.3) {
            let s = self.fresh("sz");
            self.inst(format!("{s} = binop add i64 {n}, 0"));
            s
        } else {
            n.to_string()
        }
    }

    fn alloc(&mut self, i: usize) {
        let kind = self.objs[i].kind;
        let size = match kind {
            ObjKind::Bytes => {
                if self.rng.gen_bool(0.05) {
                    self.rng.gen_range(4000..=5000)
                } else {
                    let lo = self.cfg.min_alloc.max(1);
                    self.rng.gen_range(lo..=self.cfg.max_alloc.max(lo))
                }
            }
            ObjKind::Node => 16,
            ObjKind::Vec => 8 + self.rng.gen_range(1..=32),
        };
        let n = self.size_operand(size);
        let m = self.fresh("m");
        self.inst(format!("{m} = alloc {n}"));
        let slot = self.objs[i].slot.clone();
        match kind {
            ObjKind::Bytes => self.inst(format!("store i8* {m}, {slot}")),
            ObjKind::Node => {
                let c = self.fresh("c");
                self.inst(format!("{c} = cast {m} to Node*"));
                self.inst(format!("store Node* {c}, {slot}"));
            }
            ObjKind::Vec => {
                let c = self.fresh("c");
                let l = self.fresh("l");
                self.inst(format!("{c} = cast {m} to Vec*"));
                self.inst(format!("{l} = ptradd Vec, {c}, 0, 0"));
                self.inst(format!("store i64 {}, {l}", size - 8));
                self.inst(format!("store Vec* {c}, {slot}"));
            }
        }
        let o = &mut self.objs[i];
        o.live = true;
        o.size = size;
        o.buf = None;
    }

    fn load_bytes(&mut self, i: usize) -> String {
        let p = self.fresh("p");
        self.inst(format!("{p} = load i8*, {}", self.objs[i].slot));
        p
    }

    /// Several accesses off one reloaded base, some wider than a byte.
    fn write(&mut self, i: usize) {
        let size = self.objs[i].size;
        let p = self.load_bytes(i);
        for _ in 0..self.rng.gen_range(1..=3) {
            let wide = size >= 8 && self.rng.gen_bool(0.3);
            let (ty, width) = if wide { ("i64", 8) } else { ("i8", 1) };
            let off = self.rng.gen_range(0..=size - width);
            let q = self.fresh("q");
            self.inst(format!("{q} = ptradd i8, {p}, {off}"));
            let v = self.rng.gen_range(0..100);
            if wide {
                let w = self.fresh("w");
                self.inst(format!("{w} = cast {q} to {ty}*"));
                self.inst(format!("store {ty} {v}, {w}"));
            } else {
                self.inst(format!("store {ty} {v}, {q}"));
            }
        }
    }

    fn read(&mut self, i: usize) {
        let size = self.objs[i].size;
        let p = self.load_bytes(i);
        let off = self.rng.gen_range(0..size);
        let q = self.fresh("q");
        let b = self.fresh("b");
        let w = self.fresh("b");
        self.inst(format!("{q} = ptradd i8, {p}, {off}"));
        self.inst(format!("{b} = load i8, {q}"));
        self.inst(format!("{w} = cast {b} to i64"));
        self.accumulate(&w);
    }

    /// Counted loop writing `p[i]` for `i` in `0..k`.
    fn fill(&mut self, i: usize) {
        let size = self.objs[i].size;
        let k = self.rng.gen_range(1..=size.min(self.cfg.max_loop.max(1)));
        let p = self.load_bytes(i);
        self.counted_loop(&p, 0, k, None);
    }

    fn counted_loop(&mut self, p: &str, start: u64, end: u64, bug_ptr: Option<&str>) {
        let head = self.fresh_label("head");
        let body = self.fresh_label("body");
        let exit = self.fresh_label("exit");
        let from = self.label.clone();
        let iv = self.fresh("i");
        let iv2 = self.fresh("i");
        let c = self.fresh("c");
        let q = match bug_ptr {
            Some(name) => name.to_string(),
            None => self.fresh("q"),
        };
        self.inst(format!("br {head}"));
        self.block(head.clone());
        self.inst(format!("{iv} = phi i64 [{start}, {from}], [{iv2}, {body}]"));
        self.inst(format!("{c} = cmp lt i64 {iv}, {end}"));
        self.inst(format!("condbr {c}, {body}, {exit}"));
        self.block(body.clone());
        self.inst(format!("{q} = ptradd i8, {p}, {iv}"));
        let t = self.fresh("t");
        self.inst(format!("{t} = cast {iv} to i8"));
        self.inst(format!("store i8 {t}, {q}"));
        self.inst(format!("{iv2} = binop add i64 {iv}, 1"));
        self.inst(format!("br {head}"));
        self.block(exit);
    }

    fn node(&mut self, n: usize) {
        let p = self.fresh("n");
        self.inst(format!("{p} = load Node*, {}", self.objs[n].slot));
        match self.rng.gen_range(0..3) {
            0 => {
                let f = self.fresh("f");
                let v = self.rng.gen_range(0..1000);
                self.inst(format!("{f} = ptradd Node, {p}, 0, 0"));
                self.inst(format!("store i64 {v}, {f}"));
            }
            1 => {
                let f = self.fresh("f");
                let v = self.fresh("v");
                self.inst(format!("{f} = ptradd Node, {p}, 0, 0"));
                self.inst(format!("{v} = load i64, {f}"));
                self.accumulate(&v);
            }
            _ => {
                // Narrowing view of the node as raw bytes.
                let c = self.fresh("c");
                let b = self.fresh("b");
                let w = self.fresh("b");
                self.inst(format!("{c} = cast {p} to i8*"));
                self.inst(format!("{b} = load i8, {c}"));
                self.inst(format!("{w} = cast {b} to i64"));
                self.accumulate(&w);
            }
        }
        if let Some((b, off)) = self.objs[n].buf {
            if self.objs[b].live && self.rng.gen_bool(0.5) {
                let g = self.fresh("g");
                let bp = self.fresh("bp");
                self.inst(format!("{g} = ptradd Node, {p}, 0, 1"));
                self.inst(format!("{bp} = load i8*, {g}"));
                let room = self.objs[b].size - off;
                let k = self.rng.gen_range(0..room);
                let q = self.fresh("q");
                let v = self.fresh("v");
                let w = self.fresh("v");
                self.inst(format!("{q} = ptradd i8, {bp}, {k}"));
                self.inst(format!("{v} = load i8, {q}"));
                self.inst(format!("{w} = cast {v} to i64"));
                self.accumulate(&w);
            }
        }
    }

    /// Stores a pointer to byte object `b` into node `n`'s `buf` field.
    fn link(&mut self, n: usize, b: usize) {
        let p = self.fresh("n");
        let g = self.fresh("g");
        self.inst(format!("{p} = load Node*, {}", self.objs[n].slot));
        self.inst(format!("{g} = ptradd Node, {p}, 0, 1"));
        let size = self.objs[b].size;
        let q = self.load_bytes(b);
        let off = self.rng.gen_range(0..size);
        let v = if off == 0 {
            q
        } else {
            let v = self.fresh("q");
            self.inst(format!("{v} = ptradd i8, {q}, {off}"));
            v
        };
        self.inst(format!("store i8* {v}, {g}"));
        self.objs[n].buf = Some((b, off));
    }

    /// `n->buf++`.
    fn advance(&mut self, n: usize) {
        let p = self.fresh("n");
        let g = self.fresh("g");
        let bp = self.fresh("bp");
        let nb = self.fresh("bp");
        self.inst(format!("{p} = load Node*, {}", self.objs[n].slot));
        self.inst(format!("{g} = ptradd Node, {p}, 0, 1"));
        self.inst(format!("{bp} = load i8*, {g}"));
        self.inst(format!("{nb} = ptradd i8, {bp}, 1"));
        self.inst(format!("store i8* {nb}, {g}"));
        if let Some((_, off)) = &mut self.objs[n].buf {
            *off += 1;
        }
    }

    fn free(&mut self, i: usize) {
        let ty = match self.objs[i].kind {
            ObjKind::Bytes => "i8*",
            ObjKind::Node => "Node*",
            ObjKind::Vec => "Vec*",
        };
        let p = self.fresh("d");
        self.inst(format!("{p} = load {ty}, {}", self.objs[i].slot));
        self.inst(format!("free {p}"));
        self.objs[i].live = false;
        // Forget node links into the freed object.
        for o in &mut self.objs {
            if o.buf.is_some_and(|(b, _)| b == i) {
                o.buf = None;
            }
        }
    }

    fn branch(&mut self) {
        let a = self.fresh("a");
        let bit = self.fresh("a");
        let c = self.fresh("c");
        let then_l = self.fresh_label("then");
        let else_l = self.fresh_label("else");
        let join = self.fresh_label("join");
        self.inst(format!("{a} = load i64, %acc"));
        self.inst(format!("{bit} = binop and i64 {a}, 1"));
        self.inst(format!("{c} = cmp eq i64 {bit}, 0"));
        self.inst(format!("condbr {c}, {then_l}, {else_l}"));
        self.block(then_l);
        for _ in 0..self.rng.gen_range(1..=2) {
            self.stmt(false);
        }
        self.inst(format!("br {join}"));
        self.block(else_l);
        if self.rng.gen_bool(0.5) {
            self.stmt(false);
        }
        self.inst(format!("br {join}"));
        self.block(join);
    }

    fn vec(&mut self, i: usize) {
        let len = self.objs[i].size - 8;
        let v = self.fresh("v");
        let l = self.fresh("l");
        let n = self.fresh("l");
        self.inst(format!("{v} = load Vec*, {}", self.objs[i].slot));
        self.inst(format!("{l} = ptradd Vec, {v}, 0, 0"));
        self.inst(format!("{n} = load i64, {l}"));
        let k = self.rng.gen_range(0..len);
        let d = self.fresh("q");
        let x = self.fresh("x");
        let w = self.fresh("x");
        self.inst(format!("{d} = ptradd Vec, {v}, 0, 1, {k}"));
        self.inst(format!("{x} = load i8, {d}"));
        self.inst(format!("{w} = cast {x} to i64"));
        self.accumulate(&w);
        self.accumulate(&n);
    }

    /// Short-lived buffer used through its register and freed at once.
    /// Accesses may land in the rounding slack past the requested size.
    fn scratch(&mut self) {
        let n = self.rng.gen_range(1..=64);
        let class = alloc_class(n);
        let m = self.fresh("m");
        self.inst(format!("{m} = alloc {n}"));
        for _ in 0..self.rng.gen_range(1..=3) {
            let off = self.rng.gen_range(0..class);
            let q = self.fresh("q");
            self.inst(format!("{q} = ptradd i8, {m}, {off}"));
            self.inst(format!("store i8 {}, {q}", off % 100));
        }
        let q = self.fresh("q");
        let b = self.fresh("b");
        let w = self.fresh("b");
        self.inst(format!("{q} = ptradd i8, {m}, 0"));
        self.inst(format!("{b} = load i8, {q}"));
        self.inst(format!("{w} = cast {b} to i64"));
        self.accumulate(&w);
        self.inst(format!("free {m}"));
    }

    fn global(&mut self) {
        let k = self.rng.gen_range(0..8);
        let q = self.fresh("gt");
        let v = self.fresh("gt");
        self.inst(format!("{q} = ptradd i64, @table, {k}"));
        self.inst(format!("{v} = load i64, {q}"));
        self.accumulate(&v);
    }

    fn bug(&mut self) -> Option<BugKind> {
        let bytes = self.live(ObjKind::Bytes);
        let nodes = self.live(ObjKind::Node);
        let mut kinds: Vec<BugKind> = Vec::new();
        if !bytes.is_empty() {
            kinds.extend([
                BugKind::Overflow,
                BugKind::LoopOverflow,
                BugKind::NonLinearOverflow,
                BugKind::UseAfterFree,
                BugKind::DoubleFree,
                BugKind::InvalidFree,
            ]);
            if bytes.iter().any(|&b| alloc_class(self.objs[b].size) > self.objs[b].size + 1) {
                kinds.push(BugKind::InBoundOverflow);
            }
        }
        let linked: Vec<usize> = nodes
            .iter()
            .copied()
            .filter(|&n| self.objs[n].buf.is_some_and(|(b, _)| self.objs[b].live))
            .collect();
        if !linked.is_empty() {
            kinds.push(BugKind::AliasUseAfterFree);
        }
        let kind = *kinds.choose(&mut self.rng)?;
        let i = self.choose(&bytes).unwrap_or(0);
        let size = self.objs.get(i).map_or(0, |o| o.size);
        let class = alloc_class(size);
        match kind {
            BugKind::Overflow | BugKind::NonLinearOverflow => {
                let off = if kind == BugKind::Overflow {
                    class + self.rng.gen_range(0..8)
                } else {
                    2 * class + self.rng.gen_range(0..class)
                };
                let p = self.load_bytes(i);
                self.inst(format!("{BUG} = ptradd i8, {p}, {off}"));
                self.inst(format!("store i8 1, {BUG}"));
            }
            BugKind::LoopOverflow => {
                let p = self.load_bytes(i);
                let start = class.saturating_sub(self.rng.gen_range(1..=8).min(class));
                self.counted_loop(&p, start, class + 4, Some(BUG));
            }
            BugKind::InBoundOverflow => {
                let cands: Vec<usize> = bytes
                    .iter()
                    .copied()
                    .filter(|&b| alloc_class(self.objs[b].size) > self.objs[b].size + 1)
                    .collect();
                let b = self.choose(&cands).expect("candidate exists");
                let lo = self.objs[b].size + 1;
                let off = self.rng.gen_range(lo..alloc_class(self.objs[b].size));
                let p = self.load_bytes(b);
                self.inst(format!("{BUG} = ptradd i8, {p}, {off}"));
                self.inst(format!("store i8 1, {BUG}"));
            }
            BugKind::UseAfterFree => {
                self.free(i);
                let r = self.load_bytes(i);
                let off = self.rng.gen_range(0..size);
                self.inst(format!("{BUG} = ptradd i8, {r}, {off}"));
                self.inst(format!("store i8 7, {BUG}"));
            }
            BugKind::AliasUseAfterFree => {
                let n = *linked.choose(&mut self.rng).expect("linked node");
                let (b, _) = self.objs[n].buf.expect("linked");
                self.free(b);
                let p = self.fresh("n");
                let g = self.fresh("g");
                let bp = self.fresh("bp");
                self.inst(format!("{p} = load Node*, {}", self.objs[n].slot));
                self.inst(format!("{g} = ptradd Node, {p}, 0, 1"));
                self.inst(format!("{bp} = load i8*, {g}"));
                self.inst(format!("{BUG} = ptradd i8, {bp}, 0"));
                let x = self.fresh("x");
                self.inst(format!("{x} = load i8, {BUG}"));
            }
            BugKind::DoubleFree => {
                self.free(i);
                self.inst(format!("{BUG} = load i8*, {}", self.objs[i].slot));
                self.inst(format!("free {BUG}"));
            }
            BugKind::InvalidFree => {
                let p = self.load_bytes(i);
                let off = self.rng.gen_range(1..=size.max(1));
                self.inst(format!("{BUG} = ptradd i8, {p}, {off}"));
                self.inst(format!("free {BUG}"));
            }
        }
        Some(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{instrument_program, InstrumentOptions};
    use crate::ir::validate_program;
    use crate::vm::{run, VmConfig};

    fn verdict_of(g: &Generated) -> crate::vm::Verdict {
        let (q, _) = instrument_program(&g.program, InstrumentOptions::default()).unwrap();
        run(&q, &VmConfig::default()).verdict
    }

    #[test]
    fn same_seed_same_text() {
        let cfg = GenConfig {
            seed: 42,
            ..GenConfig::default()
        };
        assert_eq!(gen_random_program(&cfg).text, gen_random_program(&cfg).text);
    }

    #[test]
    fn clean_programs_validate_and_run_ok() {
        for seed in 0..40 {
            let cfg = GenConfig {
                seed,
                bug_rate: 0.0,
                ..GenConfig::default()
            };
            let g = gen_random_program(&cfg);
            assert!(g.bug.is_none());
            let diags = validate_program(&g.program);
            assert!(!crate::ir::has_errors(&diags), "seed {seed}: {diags:?}\n{}", g.text);
            let v = verdict_of(&g);
            assert_eq!(v, crate::vm::Verdict::Ok, "seed {seed}\n{}", g.text);
        }
    }

    #[test]
    fn injected_bugs_match_ground_truth() {
        for seed in 0..80 {
            let cfg = GenConfig {
                seed,
                bug_rate: 1.0,
                ..GenConfig::default()
            };
            let g = gen_random_program(&cfg);
            let Some(bug) = &g.bug else { continue };
            let v = verdict_of(&g);
            assert_eq!(v.kind(), bug.expected, "seed {seed} {bug:?}\n{}", g.text);
            assert_eq!(v.site(), bug.site, "seed {seed} {bug:?}\n{}", g.text);
        }
    }

    #[test]
    fn node_links_into_freed_objects_are_not_followed() {
        let weights = StmtWeights {
            alloc: 6,
            node: 8,
            link: 8,
            free: 6,
            advance: 2,
            ..StmtWeights::default()
        };
        for seed in 0..300 {
            let g = gen_random_program(&GenConfig {
                seed,
                bug_rate: 0.0,
                weights: weights.clone(),
                ..GenConfig::default()
            });
            assert_eq!(verdict_of(&g).kind(), crate::vm::VerdictKind::Ok, "seed {seed}\n{}", g.text);
        }
    }
}
