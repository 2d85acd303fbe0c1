//! Miniature SSA IR: types, functions, instructions, and the analyses the
//! instrumentation and optimization passes consume.
//!
//! A [`Program`] owns a type registry, a set of globals, and a list of
//! functions. Each [`Function`] keeps a value table (parameters and
//! instruction results share one index space) and an ordered list of
//! blocks. Every block ends in exactly one terminator.

mod base;
mod cfg;
mod dom;
mod parse;
mod print;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use base::{is_heap_pointer, trace_base, BaseInfo, BaseRef, ChainStep, HeapClass, Origin};
pub use cfg::Cfg;
pub use dom::{compute_dominators, compute_postdominators, DomTree, DominatorInfo};
pub use parse::{parse_program, ParseError, ParseErrorKind};
pub use print::print_program;
pub use validate::{has_errors, validate_program, Diagnostic, Severity};

/// Index of a value (parameter or instruction result) within a function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueId(pub u32);

/// Index of a block within a function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlobalId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntWidth {
    I8,
    I16,
    I32,
    I64,
}

impl IntWidth {
    pub fn bytes(self) -> u64 {
        match self {
            IntWidth::I8 => 1,
            IntWidth::I16 => 2,
            IntWidth::I32 => 4,
            IntWidth::I64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntWidth::I8 => "i8",
            IntWidth::I16 => "i16",
            IntWidth::I32 => "i32",
            IntWidth::I64 => "i64",
        }
    }

    /// Sign-extends the low `bytes()` bytes of `raw`.
    pub fn normalize(self, raw: u64) -> u64 {
        match self {
            IntWidth::I8 => raw as u8 as i8 as i64 as u64,
            IntWidth::I16 => raw as u16 as i16 as i64 as u64,
            IntWidth::I32 => raw as u32 as i32 as i64 as u64,
            IntWidth::I64 => raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Ty {
    Int(IntWidth),
    Ptr(Box<Ty>),
    Record(TypeId),
    Void,
    /// The `(start, end)` pair produced by `getrange`.
    Range,
}

impl Ty {
    pub const I8: Ty = Ty::Int(IntWidth::I8);
    pub const I16: Ty = Ty::Int(IntWidth::I16);
    pub const I32: Ty = Ty::Int(IntWidth::I32);
    pub const I64: Ty = Ty::Int(IntWidth::I64);

    pub fn ptr_to(ty: Ty) -> Ty {
        Ty::Ptr(Box::new(ty))
    }

    pub fn is_ptr(&self) -> bool {
        matches!(self, Ty::Ptr(_))
    }

    pub fn is_int(&self) -> bool {
        matches!(self, Ty::Int(_))
    }

    pub fn pointee(&self) -> Option<&Ty> {
        match self {
            Ty::Ptr(inner) => Some(inner),
            _ => None,
        }
    }

    /// Types that can live in an SSA register and in memory.
    pub fn is_first_class(&self) -> bool {
        matches!(self, Ty::Int(_) | Ty::Ptr(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    /// Fixed layout; every field offset is constant and within `byte_size`.
    Record,
    /// Fixed prefix followed by a trailing array of dynamic length.
    Flexible,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub ty: Ty,
    pub offset: u64,
    /// A trailing array (`data[]`); only legal as the last field of a
    /// flexible record.
    pub trailing: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeDef {
    pub name: String,
    pub kind: RecordKind,
    pub fields: Vec<Field>,
    pub byte_size: u64,
    pub align: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Global {
    pub name: String,
    pub elem: Ty,
    /// Array length; `None` for a single element.
    pub count: Option<u64>,
    pub init: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(ValueId),
    Global(GlobalId),
    Imm(i64),
}

impl Operand {
    pub fn as_value(self) -> Option<ValueId> {
        match self {
            Operand::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl From<ValueId> for Operand {
    fn from(v: ValueId) -> Self {
        Operand::Value(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    pub const ALL: [BinOp; 10] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 6] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Lt,
        CmpPred::Le,
        CmpPred::Gt,
        CmpPred::Ge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Lt => "lt",
            CmpPred::Le => "le",
            CmpPred::Gt => "gt",
            CmpPred::Ge => "ge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Callee {
    Func(FuncId),
    /// `@print_i64`, the only I/O the IR has.
    PrintI64,
}

/// Source identity of an instrumented check: the ordinal of the instruction
/// it guards, plus the ordinals of checks merged into it by the optimizer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub id: u32,
    pub absorbed: Vec<u32>,
}

impl Site {
    pub fn new(id: u32) -> Self {
        Site {
            id,
            absorbed: Vec::new(),
        }
    }

    /// Own id followed by every absorbed id.
    pub fn all(&self) -> Vec<u32> {
        let mut ids = vec![self.id];
        ids.extend(self.absorbed.iter().copied());
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstKind {
    Alloc {
        size: Operand,
    },
    Free {
        ptr: Operand,
    },
    /// A stack slot holding one value of `ty`; yields `ty*`.
    Slot {
        ty: Ty,
    },
    PtrAdd {
        elem: Ty,
        base: Operand,
        indices: Vec<Operand>,
        /// Byte offset from `base` when every index is a non-negative literal.
        static_offset: Option<u64>,
    },
    Cast {
        value: Operand,
        to: Ty,
    },
    Load {
        ty: Ty,
        ptr: Operand,
    },
    Store {
        ty: Ty,
        value: Operand,
        ptr: Operand,
    },
    Const {
        ty: Ty,
        value: i64,
    },
    Bin {
        op: BinOp,
        ty: Ty,
        lhs: Operand,
        rhs: Operand,
    },
    Cmp {
        pred: CmpPred,
        ty: Ty,
        lhs: Operand,
        rhs: Operand,
    },
    Br {
        target: BlockId,
    },
    CondBr {
        cond: Operand,
        then_to: BlockId,
        else_to: BlockId,
    },
    Phi {
        ty: Ty,
        incoming: Vec<(Operand, BlockId)>,
    },
    Call {
        callee: Callee,
        args: Vec<Operand>,
    },
    Ret {
        value: Option<Operand>,
    },
    CheckRange {
        src: Operand,
        dst: Operand,
        size: u64,
        site: Site,
    },
    CastCheck {
        ptr: Operand,
        size: u64,
        site: Site,
    },
    Escape {
        loc: Operand,
        value: Operand,
        site: Site,
    },
    GetRange {
        ptr: Operand,
    },
    AssertRange {
        range: Operand,
        dst: Operand,
        size: u64,
        site: Site,
    },
}

impl InstKind {
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            InstKind::Br { .. } | InstKind::CondBr { .. } | InstKind::Ret { .. }
        )
    }

    /// Instructions inserted by instrumentation or optimization.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            InstKind::CheckRange { .. }
                | InstKind::CastCheck { .. }
                | InstKind::Escape { .. }
                | InstKind::GetRange { .. }
                | InstKind::AssertRange { .. }
        )
    }

    pub fn site(&self) -> Option<&Site> {
        match self {
            InstKind::CheckRange { site, .. }
            | InstKind::CastCheck { site, .. }
            | InstKind::Escape { site, .. }
            | InstKind::AssertRange { site, .. } => Some(site),
            _ => None,
        }
    }

    pub fn operands(&self) -> Vec<Operand> {
        match self {
            InstKind::Alloc { size } => vec![*size],
            InstKind::Free { ptr } => vec![*ptr],
            InstKind::Slot { .. } | InstKind::Const { .. } | InstKind::Br { .. } => vec![],
            InstKind::PtrAdd { base, indices, .. } => {
                let mut ops = vec![*base];
                ops.extend(indices.iter().copied());
                ops
            }
            InstKind::Cast { value, .. } => vec![*value],
            InstKind::Load { ptr, .. } => vec![*ptr],
            InstKind::Store { value, ptr, .. } => vec![*value, *ptr],
            InstKind::Bin { lhs, rhs, .. } | InstKind::Cmp { lhs, rhs, .. } => vec![*lhs, *rhs],
            InstKind::CondBr { cond, .. } => vec![*cond],
            InstKind::Phi { incoming, .. } => incoming.iter().map(|(op, _)| *op).collect(),
            InstKind::Call { args, .. } => args.clone(),
            InstKind::Ret { value } => value.iter().copied().collect(),
            InstKind::CheckRange { src, dst, .. } => vec![*src, *dst],
            InstKind::CastCheck { ptr, .. } => vec![*ptr],
            InstKind::Escape { loc, value, .. } => vec![*loc, *value],
            InstKind::GetRange { ptr } => vec![*ptr],
            InstKind::AssertRange { range, dst, .. } => vec![*range, *dst],
        }
    }

    pub fn successors(&self) -> Vec<BlockId> {
        match self {
            InstKind::Br { target } => vec![*target],
            InstKind::CondBr {
                then_to, else_to, ..
            } => {
                if then_to == else_to {
                    vec![*then_to]
                } else {
                    vec![*then_to, *else_to]
                }
            }
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inst {
    pub result: Option<ValueId>,
    pub kind: InstKind,
}

impl Inst {
    pub fn new(kind: InstKind) -> Self {
        Inst { result: None, kind }
    }

    pub fn with_result(result: ValueId, kind: InstKind) -> Self {
        Inst {
            result: Some(result),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub insts: Vec<Inst>,
}

impl Block {
    pub fn terminator(&self) -> Option<&Inst> {
        self.insts.last().filter(|i| i.kind.is_terminator())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValueInfo {
    pub name: String,
    pub ty: Ty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<ValueId>,
    pub ret: Ty,
    pub values: Vec<ValueInfo>,
    pub blocks: Vec<Block>,
}

/// Position of an instruction: block plus index within the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub block: BlockId,
    pub index: usize,
}

impl Pos {
    pub fn new(block: BlockId, index: usize) -> Self {
        Pos { block, index }
    }
}

/// Where a value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueDef {
    Param(usize),
    Inst(Pos),
    /// Declared in the value table but not defined by any instruction.
    Undefined,
}

impl Function {
    pub fn value_ty(&self, v: ValueId) -> &Ty {
        &self.values[v.index()].ty
    }

    pub fn value_name(&self, v: ValueId) -> &str {
        &self.values[v.index()].name
    }

    pub fn block(&self, b: BlockId) -> &Block {
        &self.blocks[b.index()]
    }

    pub fn inst(&self, pos: Pos) -> &Inst {
        &self.blocks[pos.block.index()].insts[pos.index]
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    /// Appends a fresh value with a name unique in this function.
    pub fn new_value(&mut self, hint: &str, ty: Ty) -> ValueId {
        let mut name = hint.to_string();
        let mut n = 0;
        while self.values.iter().any(|v| v.name == name) {
            n += 1;
            name = format!("{hint}.{n}");
        }
        self.values.push(ValueInfo { name, ty });
        ValueId(self.values.len() as u32 - 1)
    }

    /// Definition site of every value.
    pub fn value_defs(&self) -> Vec<ValueDef> {
        let mut defs = vec![ValueDef::Undefined; self.values.len()];
        for (i, p) in self.params.iter().enumerate() {
            defs[p.index()] = ValueDef::Param(i);
        }
        for (b, block) in self.blocks.iter().enumerate() {
            for (i, inst) in block.insts.iter().enumerate() {
                if let Some(r) = inst.result {
                    defs[r.index()] = ValueDef::Inst(Pos::new(BlockId(b as u32), i));
                }
            }
        }
        defs
    }

    /// Iterates over every instruction with its position.
    pub fn positions(&self) -> impl Iterator<Item = (Pos, &Inst)> {
        self.blocks.iter().enumerate().flat_map(|(b, block)| {
            block
                .insts
                .iter()
                .enumerate()
                .map(move |(i, inst)| (Pos::new(BlockId(b as u32), i), inst))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub types: Vec<TypeDef>,
    pub globals: Vec<Global>,
    pub functions: Vec<Function>,
    pub entry: String,
    /// Set once instrumentation has run; a second run is rejected.
    pub instrumented: bool,
}

impl Program {
    pub fn type_def(&self, id: TypeId) -> &TypeDef {
        &self.types[id.0 as usize]
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.types
            .iter()
            .position(|t| t.name == name)
            .map(|i| TypeId(i as u32))
    }

    pub fn function(&self, id: FuncId) -> &Function {
        &self.functions[id.0 as usize]
    }

    pub fn function_by_name(&self, name: &str) -> Option<FuncId> {
        self.functions
            .iter()
            .position(|f| f.name == name)
            .map(|i| FuncId(i as u32))
    }

    pub fn global(&self, id: GlobalId) -> &Global {
        &self.globals[id.0 as usize]
    }

    pub fn global_ty(&self, id: GlobalId) -> Ty {
        Ty::ptr_to(self.global(id).elem.clone())
    }

    pub fn global_size(&self, id: GlobalId) -> u64 {
        let g = self.global(id);
        self.size_of(&g.elem) * g.count.unwrap_or(1)
    }

    /// Byte size of a type as stored in memory.
    pub fn size_of(&self, ty: &Ty) -> u64 {
        match ty {
            Ty::Int(w) => w.bytes(),
            Ty::Ptr(_) => 8,
            Ty::Record(id) => self.type_def(*id).byte_size,
            Ty::Void | Ty::Range => 0,
        }
    }

    pub fn operand_ty(&self, f: &Function, op: Operand) -> Ty {
        match op {
            Operand::Value(v) => f.value_ty(v).clone(),
            Operand::Global(g) => self.global_ty(g),
            Operand::Imm(_) => Ty::I64,
        }
    }

    pub fn ty_name(&self, ty: &Ty) -> String {
        TyDisplay(self, ty).to_string()
    }

    /// Program-wide ordinals of every non-runtime instruction, indexed by
    /// function, block, and instruction index. Runtime instructions map to
    /// `None`. The ordinals are unaffected by instrumentation and
    /// optimization since those never add or remove program instructions.
    pub fn source_ordinals(&self) -> Vec<Vec<Vec<Option<u32>>>> {
        let mut next = 0u32;
        self.functions
            .iter()
            .map(|f| {
                f.blocks
                    .iter()
                    .map(|b| {
                        b.insts
                            .iter()
                            .map(|i| {
                                if i.kind.is_runtime() {
                                    None
                                } else {
                                    next += 1;
                                    Some(next - 1)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Result type of a `ptradd` and its constant byte offset, if any.
    pub fn ptradd_layout(
        &self,
        elem: &Ty,
        indices: &[Operand],
    ) -> Result<(Ty, Option<u64>), String> {
        let mut offset: Option<i128> = Some(0);
        let mut cur = elem.clone();
        let mut in_trailing = false;
        for (k, idx) in indices.iter().enumerate() {
            if k == 0 || in_trailing {
                let scale = self.size_of(&cur) as i128;
                offset = match (offset, idx) {
                    (Some(o), Operand::Imm(i)) => Some(o + (*i as i128) * scale),
                    _ => None,
                };
                in_trailing = false;
                continue;
            }
            let Ty::Record(tid) = &cur else {
                return Err(format!(
                    "index {k} steps into non-record type {}",
                    self.ty_name(&cur)
                ));
            };
            let def = self.type_def(*tid);
            let Operand::Imm(field_idx) = idx else {
                return Err(format!(
                    "field index into record {} must be a literal",
                    def.name
                ));
            };
            let field = usize::try_from(*field_idx)
                .ok()
                .and_then(|i| def.fields.get(i))
                .ok_or_else(|| format!("record {} has no field {field_idx}", def.name))?;
            offset = offset.map(|o| o + field.offset as i128);
            in_trailing = field.trailing;
            cur = field.ty.clone();
        }
        let offset = offset.and_then(|o| u64::try_from(o).ok());
        Ok((Ty::ptr_to(cur), offset))
    }
}

pub(crate) struct TyDisplay<'a>(pub &'a Program, pub &'a Ty);

impl fmt::Display for TyDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.1 {
            Ty::Int(w) => f.write_str(w.name()),
            Ty::Ptr(inner) => write!(f, "{}*", TyDisplay(self.0, inner)),
            Ty::Record(id) => match self.0.types.get(id.0 as usize) {
                Some(def) => f.write_str(&def.name),
                None => write!(f, "<type#{}>", id.0),
            },
            Ty::Void => f.write_str("void"),
            Ty::Range => f.write_str("range"),
        }
    }
}
