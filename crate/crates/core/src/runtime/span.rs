use std::collections::{BTreeMap, BTreeSet};

use super::size_class::{PAGE_SIZE, SMALL_CLASSES, LARGE_CODE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjState {
    /// Never handed out.
    Unused,
    Live,
    Free,
}

/// A run of pages carved into equal objects of one size class.
#[derive(Clone, Debug)]
pub struct Span {
    pub page_base: u64,
    pub num_pages: u64,
    pub object_size: u64,
    pub states: Vec<ObjState>,
    /// Freed indices, reused last-in first-out.
    pub free_list: Vec<u32>,
    /// First index never handed out.
    pub next_fresh: u32,
    pub live: u32,
    /// Object index → locations holding a pointer into that object.
    pub escapes: BTreeMap<u32, BTreeSet<u64>>,
}

impl Span {
    pub fn new(page_base: u64, num_pages: u64, object_size: u64) -> Self {
        let capacity = (num_pages * PAGE_SIZE / object_size) as usize;
        Span {
            page_base,
            num_pages,
            object_size,
            states: vec![ObjState::Unused; capacity],
            free_list: Vec::new(),
            next_fresh: 0,
            live: 0,
            escapes: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u32 {
        self.states.len() as u32
    }

    pub fn has_room(&self) -> bool {
        !self.free_list.is_empty() || self.next_fresh < self.capacity()
    }

    /// Picks an object index and marks it live.
    pub fn take(&mut self) -> Option<u32> {
        let idx = match self.free_list.pop() {
            Some(i) => i,
            None if self.next_fresh < self.capacity() => {
                self.next_fresh += 1;
                self.next_fresh - 1
            }
            None => return None,
        };
        self.states[idx as usize] = ObjState::Live;
        self.live += 1;
        Some(idx)
    }

    pub fn release(&mut self, idx: u32) {
        debug_assert_eq!(self.states[idx as usize], ObjState::Live);
        self.states[idx as usize] = ObjState::Free;
        self.free_list.push(idx);
        self.live -= 1;
    }

    pub fn object_start(&self, idx: u32) -> u64 {
        self.page_base + idx as u64 * self.object_size
    }

    pub fn end(&self) -> u64 {
        self.page_base + self.num_pages * PAGE_SIZE
    }
}

/// One packed 8-byte entry per heap page: the span's first page (relative to
/// the heap base), the span's index in the span table, and the class code.
/// Zero marks an unmapped page.
#[derive(Clone, Debug, Default)]
pub struct PageMap {
    entries: Vec<u64>,
}

const PRESENT: u64 = 1 << 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageEntry {
    pub start_page: u64,
    pub span: u32,
    pub code: u8,
}

impl PageEntry {
    pub fn pack(self) -> u64 {
        debug_assert!(self.start_page < 1 << 31);
        debug_assert!(self.span < 1 << 24);
        PRESENT | (self.start_page << 32) | ((self.span as u64) << 8) | self.code as u64
    }

    pub fn unpack(raw: u64) -> Option<PageEntry> {
        if raw & PRESENT == 0 {
            return None;
        }
        Some(PageEntry {
            start_page: (raw >> 32) & 0x7FFF_FFFF,
            span: ((raw >> 8) & 0xFF_FFFF) as u32,
            code: (raw & 0xFF) as u8,
        })
    }

    /// Object size for small classes; `None` means consult the span table.
    pub fn small_class(self) -> Option<u64> {
        (self.code != LARGE_CODE).then(|| SMALL_CLASSES[self.code as usize])
    }
}

impl PageMap {
    /// Registers `num_pages` pages starting at relative page `start_page`.
    pub fn register(&mut self, start_page: u64, num_pages: u64, span: u32, code: u8) {
        let end = (start_page + num_pages) as usize;
        if self.entries.len() < end {
            self.entries.resize(end, 0);
        }
        let raw = PageEntry {
            start_page,
            span,
            code,
        }
        .pack();
        for p in start_page..start_page + num_pages {
            self.entries[p as usize] = raw;
        }
    }

    pub fn get(&self, rel_page: u64) -> Option<PageEntry> {
        let raw = *self.entries.get(usize::try_from(rel_page).ok()?)?;
        PageEntry::unpack(raw)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_round_trips() {
        let e = PageEntry {
            start_page: 12345,
            span: 77,
            code: 3,
        };
        assert_eq!(PageEntry::unpack(e.pack()), Some(e));
        assert_eq!(PageEntry::unpack(0), None);
        assert_eq!(e.small_class(), Some(48));
    }

    #[test]
    fn span_recycles_lifo() {
        let mut s = Span::new(0x10000, 1, 32);
        assert_eq!(s.capacity(), 128);
        let a = s.take().unwrap();
        let b = s.take().unwrap();
        assert_eq!((a, b), (0, 1));
        s.release(a);
        s.release(b);
        assert_eq!(s.take(), Some(1));
        assert_eq!(s.take(), Some(0));
        assert_eq!(s.take(), Some(2));
    }
}
