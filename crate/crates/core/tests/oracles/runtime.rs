//! Plain models of the allocator table and of pointer neutralization.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use heapguard::runtime::{QueryError, HEAP_BASE, POISON, STACK_BASE};
use heapguard::{Bounds, Runtime, RuntimeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Object footprint for a request of `n` bytes: one spare byte, rounded up
/// to the next listed class, or to whole pages past 4096.
pub fn footprint(n: u64) -> u64 {
    const CLASSES: [u64; 13] = [8, 16, 32, 48, 64, 96, 128, 192, 256, 512, 1024, 2048, 4096];
    let need = n + 1;
    CLASSES
        .iter()
        .copied()
        .find(|&c| c >= need)
        .unwrap_or_else(|| need.div_ceil(4096) * 4096)
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    len: u64,
    live: bool,
}

/// Random allocs and frees, then `queries` random addresses checked against
/// a table of every slot ever handed out.
pub fn range_query_matches_table(queries: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rt = Runtime::new(RuntimeConfig::default());
    let mut table: BTreeMap<u64, Slot> = BTreeMap::new();
    let mut live: Vec<u64> = Vec::new();
    for _ in 0..3000 {
        if !live.is_empty() && rng.gen_bool(0.35) {
            let a = live.swap_remove(rng.gen_range(0..live.len()));
            rt.free(a).unwrap();
            table.get_mut(&a).unwrap().live = false;
        } else {
            let n = if rng.gen_bool(0.05) { rng.gen_range(4096..20000) } else { rng.gen_range(0..600) };
            let a = rt.alloc(n).unwrap();
            let len = footprint(n);
            // Fresh or reused slots never overlap a neighbour.
            if let Some((&s, slot)) = table.range(..=a).next_back() {
                assert!(s == a || s + slot.len <= a, "overlap at {a:#x}");
            }
            if let Some((&s, _)) = table.range(a + 1..).next() {
                assert!(a + len <= s, "overlap at {a:#x}");
            }
            if let Some(old) = table.get(&a) {
                assert!(!old.live);
                assert_eq!(old.len, len, "reused slot changed size");
            }
            table.insert(a, Slot { len, live: true });
            live.push(a);
        }
    }
    let top = table.iter().map(|(s, x)| s + x.len).max().unwrap();
    let keys: Vec<u64> = table.keys().copied().collect();
    for _ in 0..queries {
        let addr = match rng.gen_range(0..10) {
            0..=6 => {
                let s = keys[rng.gen_range(0..keys.len())];
                s + rng.gen_range(0..table[&s].len)
            }
            7 => rng.gen_range(0..HEAP_BASE),
            8 => rng.gen_range(top + (1 << 24)..top + (1 << 32)),
            _ => rng.gen_range(HEAP_BASE..top),
        };
        let got = rt.range_query(addr);
        let owner = table
            .range(..=addr)
            .next_back()
            .filter(|(s, x)| addr < *s + x.len)
            .map(|(s, x)| (Bounds { lower: *s, upper: s + x.len }, x.live));
        match owner {
            Some((b, true)) => assert_eq!(got, Ok(b), "{addr:#x}"),
            Some((b, false)) => assert_eq!(got, Err(QueryError::Stale(b)), "{addr:#x}"),
            None => match got {
                Err(QueryError::NotHeap) => {}
                Err(QueryError::Unallocated(b)) => {
                    assert!(b.contains(addr));
                    assert!(!table.keys().any(|&s| b.contains(s)), "{addr:#x}: {b:?}");
                }
                other => panic!("{addr:#x}: untracked address resolved to {other:?}"),
            },
        }
    }
}

/// Mean query ops per lookup, and the wall time of the lookups, with
/// `live_objects` objects on the heap.
pub fn mean_ops(live_objects: usize) -> (f64, std::time::Duration) {
    let mut rng = ChaCha8Rng::seed_from_u64(live_objects as u64);
    let mut rt = Runtime::new(RuntimeConfig::default());
    let addrs: Vec<u64> = (0..live_objects)
        .map(|_| rt.alloc(rng.gen_range(1..3000)).unwrap())
        .collect();
    let before = rt.stats();
    let queries = 20_000;
    let t = std::time::Instant::now();
    for k in 0..queries {
        let a = addrs[k % addrs.len()] + 3;
        std::hint::black_box(rt.range_query(a).unwrap());
    }
    let elapsed = t.elapsed();
    let after = rt.stats();
    ((after.query_ops - before.query_ops) as f64 / queries as f64, elapsed)
}

#[derive(Clone, Copy, Debug)]
struct Obj {
    start: u64,
    len: u64,
}

/// Random alloc, pointer-store, overwrite, and free sequences. At each free,
/// exactly the recorded locations still pointing into the object must be
/// poisoned, and no other word may change.
pub fn neutralization_is_complete_and_precise(sequences: usize) {
    const WORDS: u64 = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut poisoned_total = 0u64;
    for seq in 0..sequences {
        let cap = rng.gen_range(1..6);
        let mut rt = Runtime::new(RuntimeConfig {
            cache_cap: cap,
            ..RuntimeConfig::default()
        });
        rt.memory.map(STACK_BASE, 4096);
        let loc = |w: u64| STACK_BASE + 8 * w;
        let mut mem: HashMap<u64, u64> = HashMap::new();
        let mut objs: Vec<Obj> = Vec::new();
        let mut live: Vec<usize> = Vec::new();
        // Locations recorded for each object since it was allocated.
        let mut recorded: HashMap<usize, Vec<u64>> = HashMap::new();
        for _ in 0..rng.gen_range(5..30) {
            match rng.gen_range(0..10) {
                0..=2 => {
                    let n = rng.gen_range(1..200);
                    let start = rt.alloc(n).unwrap();
                    objs.push(Obj { start, len: footprint(n) });
                    live.push(objs.len() - 1);
                }
                3..=5 if !live.is_empty() => {
                    let o = objs[live[rng.gen_range(0..live.len())]];
                    let v = o.start + rng.gen_range(0..o.len);
                    let w = loc(rng.gen_range(0..WORDS));
                    rt.memory.write_uint(w, 8, v).unwrap();
                    mem.insert(w, v);
                    let id = objs.iter().rposition(|x| x.start == o.start).unwrap();
                    recorded.entry(id).or_default().push(w);
                    rt.escape(w, v);
                }
                6 => {
                    // Unrecorded overwrite with an integer.
                    let w = loc(rng.gen_range(0..WORDS));
                    let v = rng.gen_range(0..1000);
                    rt.memory.write_uint(w, 8, v).unwrap();
                    mem.insert(w, v);
                }
                7..=9 if !live.is_empty() => {
                    let id = live.swap_remove(rng.gen_range(0..live.len()));
                    let o = objs[id];
                    rt.free(o.start).unwrap();
                    for w in recorded.remove(&id).unwrap_or_default() {
                        let v = mem[&w];
                        if o.start <= v && v < o.start + o.len {
                            mem.insert(w, POISON);
                        }
                    }
                    for (&w, &v) in &mem {
                        assert_eq!(rt.memory.read_uint(w, 8).unwrap(), v, "sequence {seq} word {w:#x}");
                    }
                }
                _ => {}
            }
        }
        poisoned_total += rt.stats().neutralized;
    }
    assert!(poisoned_total as usize > sequences, "{poisoned_total}");
}
