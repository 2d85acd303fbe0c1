//! Segregated-list allocator over a simulated address space, with constant
//! time bounds lookup, escape tracking, and dangling-pointer neutralization.

mod escape;
mod memory;
mod size_class;
mod span;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use escape::{EscapeCache, EscapeRecord};
pub use memory::{
    region_of, MemFault, Region, SimMemory, GLOBAL_BASE, HEAP_BASE, POISON, REGION_LIMIT,
    STACK_BASE,
};
pub use size_class::{alloc_class, class_code, size_class, span_pages, PAGE_SIZE, SMALL_CLASSES};
pub use span::{ObjState, PageEntry, PageMap, Span};

pub const DEFAULT_CACHE_CAP: usize = 64;
pub const DEFAULT_HEAP_LIMIT: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub cache_cap: usize,
    /// Bytes of address space the heap may grow to.
    pub heap_limit: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            cache_cap: DEFAULT_CACHE_CAP,
            heap_limit: DEFAULT_HEAP_LIMIT,
        }
    }
}

/// Half-open object bounds `[lower, upper)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: u64,
    pub upper: u64,
}

impl Bounds {
    /// Full address space; what a non-heap pointer is checked against.
    pub const ALL: Bounds = Bounds {
        lower: 0,
        upper: u64::MAX,
    };

    pub fn contains(&self, addr: u64) -> bool {
        self.lower <= addr && addr < self.upper
    }

    /// `[dst, dst + size)` lies inside the bounds.
    pub fn admits(&self, dst: u64, size: u64) -> bool {
        self.lower <= dst && (dst as u128 + size as u128) <= self.upper as u128
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryError {
    NotHeap,
    /// The address falls in a freed object.
    Stale(Bounds),
    /// The address falls in a span slot that was never allocated.
    Unallocated(Bounds),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trap {
    OutOfBounds {
        src: u64,
        dst: u64,
        size: u64,
        bounds: Option<Bounds>,
    },
    UseAfterFree {
        addr: u64,
    },
    DoubleFree {
        addr: u64,
    },
    InvalidFree {
        addr: u64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub allocations: u64,
    pub frees: u64,
    pub checks: u64,
    pub violations: u64,
    pub escapes: u64,
    pub escapes_recorded: u64,
    pub cache_flushes: u64,
    pub neutralized: u64,
    pub queries: u64,
    /// Primitive steps taken inside `range_query`.
    pub query_ops: u64,
    pub spans: u64,
    pub failed_allocations: u64,
}

#[derive(Clone, Debug)]
pub struct Runtime {
    config: RuntimeConfig,
    spans: Vec<Span>,
    page_map: PageMap,
    /// Per object size: spans that may still have room, most recent last.
    partial: HashMap<u64, Vec<u32>>,
    in_partial: Vec<bool>,
    next_page: u64,
    cache: EscapeCache,
    pub memory: SimMemory,
    stats: RuntimeStats,
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime::new(RuntimeConfig::default())
    }
}

impl Runtime {
    pub fn new(config: RuntimeConfig) -> Self {
        Runtime {
            config,
            spans: Vec::new(),
            page_map: PageMap::default(),
            partial: HashMap::new(),
            in_partial: Vec::new(),
            next_page: 0,
            cache: EscapeCache::new(config.cache_cap),
            memory: SimMemory::new(),
            stats: RuntimeStats::default(),
        }
    }

    pub fn config(&self) -> RuntimeConfig {
        self.config
    }

    pub fn stats(&self) -> RuntimeStats {
        self.stats
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn cache(&self) -> &EscapeCache {
        &self.cache
    }

    /// Allocates `size` bytes; `None` when the heap budget is exhausted.
    pub fn alloc(&mut self, size: u64) -> Option<u64> {
        let class = alloc_class(size);
        let span_id = match self.span_with_room(class) {
            Some(id) => id,
            None => match self.new_span(class) {
                Some(id) => id,
                None => {
                    self.stats.failed_allocations += 1;
                    return None;
                }
            },
        };
        let span = &mut self.spans[span_id as usize];
        let idx = span.take().expect("span has room");
        let start = span.object_start(idx);
        let len = span.object_size;
        self.memory.fill(start, len, 0).expect("span pages are mapped");
        self.stats.allocations += 1;
        Some(start)
    }

    fn span_with_room(&mut self, class: u64) -> Option<u32> {
        let list = self.partial.get_mut(&class)?;
        while let Some(&id) = list.last() {
            if self.spans[id as usize].has_room() {
                return Some(id);
            }
            list.pop();
            self.in_partial[id as usize] = false;
        }
        None
    }

    fn new_span(&mut self, class: u64) -> Option<u32> {
        let pages = span_pages(class);
        let limit_pages = self.config.heap_limit / PAGE_SIZE;
        if self.next_page + pages > limit_pages || self.spans.len() >= (1 << 24) - 1 {
            return None;
        }
        let id = self.spans.len() as u32;
        let start_page = self.next_page;
        self.next_page += pages;
        let page_base = HEAP_BASE + start_page * PAGE_SIZE;
        self.spans.push(Span::new(page_base, pages, class));
        self.in_partial.push(true);
        self.partial.entry(class).or_default().push(id);
        self.page_map
            .register(start_page, pages, id, class_code(class));
        self.memory.map(page_base, pages * PAGE_SIZE);
        self.stats.spans += 1;
        Some(id)
    }

    /// Span and object index for a heap address, in constant time: one page
    /// map load, one decode, one division, one state read.
    fn locate(&mut self, addr: u64) -> Result<(u32, u32, Bounds), QueryError> {
        self.stats.queries += 1;
        self.stats.query_ops += 1;
        if addr < HEAP_BASE {
            return Err(QueryError::NotHeap);
        }
        let rel_page = (addr - HEAP_BASE) / PAGE_SIZE;
        self.stats.query_ops += 1;
        let Some(entry) = self.page_map.get(rel_page) else {
            return Err(QueryError::NotHeap);
        };
        self.stats.query_ops += 1;
        let page_base = HEAP_BASE + entry.start_page * PAGE_SIZE;
        let object_size = match entry.small_class() {
            Some(c) => c,
            None => self.spans[entry.span as usize].object_size,
        };
        self.stats.query_ops += 1;
        let idx = (addr - page_base) / object_size;
        let bounds = Bounds {
            lower: page_base + idx * object_size,
            upper: page_base + (idx + 1) * object_size,
        };
        self.stats.query_ops += 1;
        match self.spans[entry.span as usize].states[idx as usize] {
            ObjState::Live => Ok((entry.span, idx as u32, bounds)),
            ObjState::Free => Err(QueryError::Stale(bounds)),
            ObjState::Unused => Err(QueryError::Unallocated(bounds)),
        }
    }

    /// Bounds of the live object containing `addr`.
    pub fn range_query(&mut self, addr: u64) -> Result<Bounds, QueryError> {
        self.locate(addr).map(|(_, _, b)| b)
    }

    /// The query form used by merged checks; identical to `range_query`.
    pub fn get_range(&mut self, addr: u64) -> Result<Bounds, QueryError> {
        self.range_query(addr)
    }

    /// Validates that `[dst, dst + size)` stays inside the object `src`
    /// points into. Non-heap sources pass.
    pub fn check_range(&mut self, src: u64, dst: u64, size: u64) -> Result<(), Trap> {
        self.stats.checks += 1;
        let result = match self.range_query(src) {
            Err(QueryError::NotHeap) => Ok(()),
            Err(QueryError::Stale(_)) => Err(Trap::UseAfterFree { addr: src }),
            Err(QueryError::Unallocated(b)) => Err(Trap::OutOfBounds {
                src,
                dst,
                size,
                bounds: Some(b),
            }),
            Ok(b) if b.admits(dst, size) => Ok(()),
            Ok(b) => Err(Trap::OutOfBounds {
                src,
                dst,
                size,
                bounds: Some(b),
            }),
        };
        if result.is_err() {
            self.stats.violations += 1;
        }
        result
    }

    /// Validates that the object behind `ptr` has at least `size` bytes
    /// from `ptr` onward.
    pub fn cast_check(&mut self, ptr: u64, size: u64) -> Result<(), Trap> {
        self.check_range(ptr, ptr, size)
    }

    /// Records that `location` holds `value`, if `value` points into a live
    /// heap object.
    pub fn escape(&mut self, location: u64, value: u64) {
        self.stats.escapes += 1;
        let Ok((span, idx, _)) = self.locate(value) else {
            return;
        };
        if self.cache.insert(EscapeRecord {
            location,
            span,
            idx,
        }) {
            self.stats.escapes_recorded += 1;
        }
        if self.cache.is_full() {
            self.flush_escape_cache();
        }
    }

    /// Moves pending records into their spans' tables, skipping duplicates.
    pub fn flush_escape_cache(&mut self) {
        if self.cache.is_empty() {
            return;
        }
        self.stats.cache_flushes += 1;
        let spans = &mut self.spans;
        for rec in self.cache.drain() {
            spans[rec.span as usize]
                .escapes
                .entry(rec.idx)
                .or_default()
                .insert(rec.location);
        }
    }

    pub fn free(&mut self, addr: u64) -> Result<(), Trap> {
        let result = self.free_inner(addr);
        if result.is_err() {
            self.stats.violations += 1;
        }
        result
    }

    fn free_inner(&mut self, addr: u64) -> Result<(), Trap> {
        if addr == 0 {
            return Ok(());
        }
        if addr == POISON {
            return Err(Trap::DoubleFree { addr });
        }
        let (span_id, idx, bounds) = match self.locate(addr) {
            Ok(found) => found,
            Err(QueryError::Stale(b)) if b.lower == addr => return Err(Trap::DoubleFree { addr }),
            Err(_) => return Err(Trap::InvalidFree { addr }),
        };
        if bounds.lower != addr {
            return Err(Trap::InvalidFree { addr });
        }
        self.flush_escape_cache();
        let span = &mut self.spans[span_id as usize];
        if let Some(locations) = span.escapes.remove(&idx) {
            for loc in locations {
                match self.memory.read_uint(loc, 8) {
                    Ok(v) if bounds.contains(v) => {
                        self.memory
                            .write_uint(loc, 8, POISON)
                            .expect("readable location is writable");
                        self.stats.neutralized += 1;
                    }
                    _ => {}
                }
            }
        }
        let span = &mut self.spans[span_id as usize];
        span.release(idx);
        if !self.in_partial[span_id as usize] {
            self.in_partial[span_id as usize] = true;
            self.partial
                .entry(span.object_size)
                .or_default()
                .push(span_id);
        }
        self.stats.frees += 1;
        Ok(())
    }

    /// Committed locations recorded against the object containing `addr`.
    pub fn escape_locations(&self, addr: u64) -> Vec<u64> {
        let Some((span, idx)) = self.peek(addr) else {
            return Vec::new();
        };
        self.spans[span as usize]
            .escapes
            .get(&idx)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn committed_records(&self) -> usize {
        self.spans
            .iter()
            .flat_map(|s| s.escapes.values())
            .map(|l| l.len())
            .sum()
    }

    /// Span and index of a heap address without touching the counters.
    fn peek(&self, addr: u64) -> Option<(u32, u32)> {
        let rel = addr.checked_sub(HEAP_BASE)? / PAGE_SIZE;
        let e = self.page_map.get(rel)?;
        let span = &self.spans[e.span as usize];
        Some((e.span, ((addr - span.page_base) / span.object_size) as u32))
    }

    /// Whether `addr` lies in any heap span, live or not.
    pub fn is_heap(&self, addr: u64) -> bool {
        self.peek(addr).is_some()
    }

    pub fn live_objects(&self) -> u64 {
        self.spans.iter().map(|s| s.live as u64).sum()
    }
}
