use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::size_class::PAGE_SIZE;

/// Value written over dangling pointers. Bits 63..47 disagree, so it is not a
/// canonical address and lies outside every region below.
pub const POISON: u64 = 0xDEAD_BEEF_0000_0000;

pub const HEAP_BASE: u64 = 0x1_0000;
pub const GLOBAL_BASE: u64 = 0x6000_0000_0000;
pub const STACK_BASE: u64 = 0x7000_0000_0000;
pub const REGION_LIMIT: u64 = 0x1000_0000_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Heap,
    Global,
    Stack,
}

pub fn region_of(addr: u64) -> Option<Region> {
    if (HEAP_BASE..HEAP_BASE + REGION_LIMIT).contains(&addr) {
        Some(Region::Heap)
    } else if (GLOBAL_BASE..GLOBAL_BASE + REGION_LIMIT).contains(&addr) {
        Some(Region::Global)
    } else if (STACK_BASE..STACK_BASE + REGION_LIMIT).contains(&addr) {
        Some(Region::Stack)
    } else {
        None
    }
}

/// Access to an address that is not mapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemFault {
    pub addr: u64,
}

/// Sparse byte store over the 64-bit address space. Pages must be mapped
/// before use; mapped pages read as zero until written.
#[derive(Clone, Debug, Default)]
pub struct SimMemory {
    pages: HashMap<u64, Box<[u8]>>,
}

impl SimMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps every page overlapping `[start, start + len)`.
    pub fn map(&mut self, start: u64, len: u64) {
        if len == 0 {
            return;
        }
        let first = start / PAGE_SIZE;
        let last = (start + len - 1) / PAGE_SIZE;
        for page in first..=last {
            self.pages
                .entry(page)
                .or_insert_with(|| vec![0u8; PAGE_SIZE as usize].into_boxed_slice());
        }
    }

    pub fn is_mapped(&self, addr: u64) -> bool {
        self.pages.contains_key(&(addr / PAGE_SIZE))
    }

    pub fn read_bytes(&self, addr: u64, out: &mut [u8]) -> Result<(), MemFault> {
        for (i, b) in out.iter_mut().enumerate() {
            let a = addr.checked_add(i as u64).ok_or(MemFault { addr })?;
            let page = self.pages.get(&(a / PAGE_SIZE)).ok_or(MemFault { addr: a })?;
            *b = page[(a % PAGE_SIZE) as usize];
        }
        Ok(())
    }

    pub fn write_bytes(&mut self, addr: u64, data: &[u8]) -> Result<(), MemFault> {
        // Probe first so a faulting write leaves memory untouched.
        for i in 0..data.len() as u64 {
            let a = addr.checked_add(i).ok_or(MemFault { addr })?;
            if !self.is_mapped(a) {
                return Err(MemFault { addr: a });
            }
        }
        for (i, b) in data.iter().enumerate() {
            let a = addr + i as u64;
            let page = self.pages.get_mut(&(a / PAGE_SIZE)).expect("probed");
            page[(a % PAGE_SIZE) as usize] = *b;
        }
        Ok(())
    }

    /// Little-endian read of `width` bytes (1, 2, 4 or 8).
    pub fn read_uint(&self, addr: u64, width: u64) -> Result<u64, MemFault> {
        let mut buf = [0u8; 8];
        self.read_bytes(addr, &mut buf[..width as usize])?;
        Ok(u64::from_le_bytes(buf))
    }

    pub fn write_uint(&mut self, addr: u64, width: u64, value: u64) -> Result<(), MemFault> {
        self.write_bytes(addr, &value.to_le_bytes()[..width as usize])
    }

    pub fn fill(&mut self, addr: u64, len: u64, byte: u8) -> Result<(), MemFault> {
        self.write_bytes(addr, &vec![byte; len as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poison_is_outside_every_region() {
        assert_eq!(region_of(POISON), None);
        let top = POISON >> 47;
        assert!(top != 0 && top != (1 << 17) - 1);
    }

    #[test]
    fn unmapped_access_faults() {
        let mut m = SimMemory::new();
        assert_eq!(m.read_uint(0x5000, 8), Err(MemFault { addr: 0x5000 }));
        m.map(0x5000, 1);
        assert_eq!(m.read_uint(0x5000, 8), Ok(0));
        m.write_uint(0x5ff8, 8, 0x1122_3344_5566_7788).unwrap();
        assert_eq!(m.read_uint(0x5ffc, 4), Ok(0x1122_3344));
        // Straddles into an unmapped page; nothing is written.
        assert_eq!(m.write_uint(0x5ffc, 8, u64::MAX), Err(MemFault { addr: 0x6000 }));
        assert_eq!(m.read_uint(0x5ffc, 4), Ok(0x1122_3344));
    }
}
