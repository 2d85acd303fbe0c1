//! Brute-force oracles for dominance, path windows, and redundant-check
//! elimination, over instruction positions.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{HashMap, HashSet};

use heapguard::ir::{parse_program, BlockId, Callee, DominatorInfo, Function, InstKind, Pos};
use heapguard::optimize::window::{between, lifetime_stable, quiet_reach};
use heapguard::optimize::{redundant_pair, remove_redundant, RangeCandidate};
use heapguard::{instrument_program, InstrumentOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random function over two pointer params. With `cyclic`, branches may go
/// backwards. Returns the text of a whole program whose first function is
/// the one under test.
pub fn random_function(rng: &mut ChaCha8Rng, cyclic: bool, max_checks: usize) -> String {
    let nb = rng.gen_range(1..=7);
    let mut out = String::from("fn @f(%m0: i8*, %m1: i8*, %c: i64, %s: i64*) {\n");
    let mut checks = 0;
    let mut n = 0;
    for b in 0..nb {
        out += &format!("b{b}:\n");
        for _ in 0..rng.gen_range(0..4) {
            n += 1;
            match rng.gen_range(0..10) {
                0..=4 if checks < max_checks => {
                    checks += 1;
                    let base = rng.gen_range(0..2);
                    if rng.gen_bool(0.25) {
                        let k = rng.gen_range(0..4);
                        out += &format!("  %v{n} = ptradd i64, %m{base}, {k}\n  store i64 0, %v{n}\n");
                    } else {
                        let off = rng.gen_range(0..40);
                        out += &format!("  %v{n} = ptradd i8, %m{base}, {off}\n");
                    }
                }
                5 => out += &format!("  %v{n} = const i64 {n}\n"),
                6 => out += "  free %m1\n",
                7 => out += "  call @g()\n",
                8 => out += &format!("  %v{n} = load i64, %s\n"),
                _ => out += "  call @print_i64(1)\n",
            }
        }
        let later: Vec<usize> = if cyclic { (0..nb).collect() } else { (b + 1..nb).collect() };
        if later.is_empty() || rng.gen_bool(0.15) {
            out += "  ret\n";
        } else if later.len() >= 2 && rng.gen_bool(0.6) {
            let t = later[rng.gen_range(0..later.len())];
            let mut e = later[rng.gen_range(0..later.len())];
            while e == t {
                e = later[rng.gen_range(0..later.len())];
            }
            out += &format!("  condbr %c, b{t}, b{e}\n");
        } else {
            out += &format!("  br b{}\n", later[rng.gen_range(0..later.len())]);
        }
    }
    out += "}\nfn @g() {\nentry:\n  ret\n}\nfn @main() {\nentry:\n  ret\n}\n";
    out
}

pub fn instrumented_f(src: &str) -> Function {
    let p = parse_program(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    let (q, _) = instrument_program(&p, InstrumentOptions::default()).unwrap();
    q.functions[0].clone()
}

/// Position-level graph of a function.
pub struct Graph {
    pub nodes: Vec<Pos>,
    pub index: HashMap<Pos, usize>,
    pub succ: Vec<Vec<usize>>,
    pub is_ret: Vec<bool>,
}

impl Graph {
    pub fn new(f: &Function) -> Graph {
        let mut nodes = Vec::new();
        let mut index = HashMap::new();
        for (b, blk) in f.blocks.iter().enumerate() {
            for i in 0..blk.insts.len() {
                let p = Pos::new(BlockId(b as u32), i);
                index.insert(p, nodes.len());
                nodes.push(p);
            }
        }
        let mut succ = vec![Vec::new(); nodes.len()];
        let mut is_ret = vec![false; nodes.len()];
        for (k, p) in nodes.iter().enumerate() {
            let inst = f.inst(*p);
            if matches!(inst.kind, InstKind::Ret { .. }) {
                is_ret[k] = true;
            }
            if inst.kind.is_terminator() {
                for s in inst.kind.successors() {
                    succ[k].push(index[&Pos::new(s, 0)]);
                }
            } else {
                succ[k].push(index[&Pos::new(p.block, p.index + 1)]);
            }
        }
        Graph {
            nodes,
            index,
            succ,
            is_ret,
        }
    }

    /// Nodes reachable from `starts` without entering `avoid`.
    pub fn reach(&self, starts: &[usize], avoid: Option<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = starts.iter().copied().filter(|&s| Some(s) != avoid).collect();
        while let Some(x) = stack.pop() {
            if seen[x] {
                continue;
            }
            seen[x] = true;
            for &s in &self.succ[x] {
                if Some(s) != avoid && !seen[s] {
                    stack.push(s);
                }
            }
        }
        seen
    }

    pub fn reaches_exit(&self, from: usize, avoid: Option<usize>) -> bool {
        self.reach(&[from], avoid)
            .iter()
            .enumerate()
            .any(|(k, &r)| r && self.is_ret[k])
    }

    pub fn dominates(&self, a: usize, b: usize) -> bool {
        let live = self.reach(&[0], None);
        if !live[b] {
            return false;
        }
        a == b || !self.reach(&[0], Some(a))[b]
    }

    pub fn postdominates(&self, a: usize, b: usize) -> bool {
        let live = self.reach(&[0], None);
        if !live[b] || !self.reaches_exit(b, None) {
            return false;
        }
        a == b || !self.reaches_exit(b, Some(a))
    }

    /// Nodes on some walk from `a` to `b` that leaves `a` and never returns.
    pub fn window(&self, a: usize, b: usize) -> Vec<bool> {
        let fwd = self.reach(&self.succ[a], Some(a));
        (0..self.nodes.len())
            .map(|x| x != a && fwd[x] && self.reach(&self.succ[x], Some(a))[b])
            .collect()
    }

    /// Every walk from `from` reaches `to` through quiet instructions only,
    /// without returning or looping.
    pub fn quiet(&self, f: &Function, from: usize, to: usize) -> bool {
        fn go(g: &Graph, f: &Function, x: usize, to: usize, path: &mut Vec<usize>) -> bool {
            if x == to {
                return true;
            }
            if path.contains(&x) || g.is_ret[x] {
                return false;
            }
            if !heapguard::optimize::window::is_quiet(&f.inst(g.nodes[x]).kind) {
                return false;
            }
            path.push(x);
            let ok = g.succ[x].iter().all(|&s| go(g, f, s, to, path));
            path.pop();
            ok
        }
        if self.is_ret[from] {
            return false;
        }
        let mut path = vec![from];
        self.succ[from].iter().all(|&s| go(self, f, s, to, &mut path))
    }
}

pub fn lifetime_event(f: &Function, p: Pos) -> bool {
    matches!(
        f.inst(p).kind,
        InstKind::Free { .. }
            | InstKind::Call {
                callee: Callee::Func(_),
                ..
            }
    )
}

pub fn brute_pair(f: &Function, g: &Graph, a: &RangeCandidate, b: &RangeCandidate) -> bool {
    if a.pos == b.pos || a.base != b.base || a.offset < b.offset || a.extent() < b.extent() {
        return false;
    }
    let (ia, ib) = (g.index[&a.pos], g.index[&b.pos]);
    let stable = || {
        let w = g.window(ia, ib);
        (0..g.nodes.len()).all(|x| !w[x] || !lifetime_event(f, g.nodes[x]))
    };
    (g.dominates(ia, ib) && stable()) || (g.postdominates(ia, ib) && g.quiet(f, ib, ia))
}

/// Position-level dominance and postdominance of `f` agree with reachability.
pub fn check_dominance(f: &Function) {
    let dom = DominatorInfo::new(f);
    let g = Graph::new(f);
    for a in 0..g.nodes.len() {
        for b in 0..g.nodes.len() {
            let (pa, pb) = (g.nodes[a], g.nodes[b]);
            assert_eq!(dom.dominates(pa, pb), g.dominates(a, b), "@{}: dom {pa:?} {pb:?}", f.name);
            assert_eq!(
                dom.postdominates(pa, pb),
                g.postdominates(a, b),
                "@{}: postdom {pa:?} {pb:?}",
                f.name
            );
        }
    }
}

pub fn dominance_matches_brute_force(rounds: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..rounds {
        check_dominance(&instrumented_f(&random_function(&mut rng, true, 6)));
    }
}

pub fn windows_match_brute_force(rounds: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut unstable = 0;
    for round in 0..rounds {
        let f = instrumented_f(&random_function(&mut rng, true, 6));
        let dom = DominatorInfo::new(&f);
        let g = Graph::new(&f);
        let live = g.reach(&[0], None);
        for a in 0..g.nodes.len() {
            for b in 0..g.nodes.len() {
                if a == b || !live[a] {
                    continue;
                }
                let (pa, pb) = (g.nodes[a], g.nodes[b]);
                let w = between(&f, &dom.cfg, pa, pb);
                let bw = g.window(a, b);
                for x in 0..g.nodes.len() {
                    let px = g.nodes[x];
                    assert_eq!(w[px.block.index()][px.index], bw[x], "round {round} {pa:?}->{pb:?} at {px:?}");
                }
                let stable = (0..g.nodes.len()).all(|x| !bw[x] || !lifetime_event(&f, g.nodes[x]));
                assert_eq!(lifetime_stable(&f, &dom.cfg, pa, pb, false), stable);
                unstable += usize::from(!stable);
                // The quiet window check refuses some loops that still reach
                // the target; it must never accept a walk that fails.
                if quiet_reach(&f, &dom.cfg, pa, pb) {
                    assert!(g.quiet(&f, a, b), "round {round} {pa:?}->{pb:?}");
                }
            }
        }
    }
    assert!(unstable > 100, "{unstable}");
}

pub fn quiet_reach_is_exact_without_loops(rounds: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut hits = [0usize; 2];
    for _ in 0..rounds {
        let f = instrumented_f(&random_function(&mut rng, false, 6));
        let dom = DominatorInfo::new(&f);
        let g = Graph::new(&f);
        let live = g.reach(&[0], None);
        for a in (0..g.nodes.len()).filter(|&a| live[a]) {
            for b in 0..g.nodes.len() {
                if a != b {
                    let q = g.quiet(&f, a, b);
                    assert_eq!(quiet_reach(&f, &dom.cfg, g.nodes[a], g.nodes[b]), q);
                    hits[q as usize] += 1;
                }
            }
        }
    }
    assert!(hits[0] > 100 && hits[1] > 100, "{hits:?}");
}

/// The fixed-point loop restated over the brute-force predicate.
pub fn brute_fixpoint(f: &Function, cands: &[RangeCandidate]) -> Vec<(u32, u64, Vec<u32>)> {
    let g = Graph::new(f);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen_bases = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        match seen_bases.iter().position(|b| *b == c.base) {
            Some(k) => groups[k].push(i),
            None => {
                seen_bases.push(c.base);
                groups.push(vec![i]);
            }
        }
    }
    let mut alive = vec![true; cands.len()];
    let mut absorbed: Vec<Vec<u32>> = vec![Vec::new(); cands.len()];
    let mut offset: Vec<u64> = cands.iter().map(|c| c.offset).collect();
    'outer: loop {
        for grp in &groups {
            for &i in grp.iter().filter(|&&i| alive[i]) {
                for &j in grp.iter() {
                    if j != i && alive[j] && brute_pair(f, &g, &cands[i], &cands[j]) {
                        alive[j] = false;
                        offset[i] = offset[i].max(offset[j]);
                        let moved = std::mem::take(&mut absorbed[j]);
                        absorbed[i].push(cands[j].id);
                        absorbed[i].extend(moved);
                        continue 'outer;
                    }
                }
            }
        }
        break;
    }
    (0..cands.len())
        .filter(|&i| alive[i])
        .map(|i| {
            let mut a = absorbed[i].clone();
            a.sort_unstable();
            (cands[i].id, offset[i], a)
        })
        .collect()
}

/// Block sequences from entry to a return, each block at most once.
pub fn block_paths(f: &Function) -> Vec<Vec<usize>> {
    fn go(f: &Function, b: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if path.contains(&b) {
            return;
        }
        path.push(b);
        let term = &f.blocks[b].insts.last().unwrap().kind;
        if matches!(term, InstKind::Ret { .. }) {
            out.push(path.clone());
        }
        for s in term.successors() {
            go(f, s.index(), path, out);
        }
        path.pop();
    }
    let mut out = Vec::new();
    go(f, 0, &mut Vec::new(), &mut out);
    out
}

pub fn elimination_matches_exhaustive_oracle_on_small_functions(rounds: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut nontrivial = 0;
    for round in 0..rounds {
        let cyclic = round % 3 == 0;
        let f = instrumented_f(&random_function(&mut rng, cyclic, 6));
        let out = remove_redundant(&f);
        assert!(out.candidates.len() <= 6);
        let dom = DominatorInfo::new(&f);
        let g = Graph::new(&f);
        for a in &out.candidates {
            for b in &out.candidates {
                let fast = redundant_pair(&f, &dom, a, b);
                let slow = brute_pair(&f, &g, a, b);
                if cyclic {
                    assert!(!fast || slow, "round {round}: unsound pair {a:?} {b:?}");
                } else {
                    assert_eq!(fast, slow, "round {round}: {a:?} {b:?}");
                }
            }
        }
        if cyclic {
            continue;
        }
        let mut got: Vec<(u32, u64, Vec<u32>)> = out
            .survivors
            .iter()
            .map(|s| {
                let mut a: Vec<u32> = s.absorbed.iter().map(|x| x.0).collect();
                a.sort_unstable();
                (s.id, s.offset, a)
            })
            .collect();
        got.sort();
        let mut want = brute_fixpoint(&f, &out.candidates);
        want.sort();
        assert_eq!(got, want, "round {round}");
        if out.stats.removed > 0 {
            nontrivial += 1;
        }

        // Every path through a removed check also passes a survivor that
        // reaches at least as far.
        let removed: Vec<&RangeCandidate> = out
            .candidates
            .iter()
            .filter(|c| !out.survivors.iter().any(|s| s.id == c.id))
            .collect();
        let survivors: Vec<&RangeCandidate> = out
            .candidates
            .iter()
            .filter(|c| out.survivors.iter().any(|s| s.id == c.id))
            .collect();
        for path in block_paths(&f) {
            let on: HashSet<usize> = path.iter().copied().collect();
            for r in &removed {
                if !on.contains(&r.pos.block.index()) {
                    continue;
                }
                assert!(
                    survivors.iter().any(|s| on.contains(&s.pos.block.index())
                        && s.base == r.base
                        && s.offset >= r.offset
                        && s.extent() >= r.extent()),
                    "round {round}: {r:?} uncovered on {path:?}"
                );
            }
        }
    }
    assert!(nontrivial > 100, "only {nontrivial} functions had removals");
}

pub fn survivor_law_and_termination_bound(rounds: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for round in 0..rounds {
        let f = instrumented_f(&random_function(&mut rng, round % 2 == 0, 16));
        let out = remove_redundant(&f);
        let n = out.candidates.len();
        assert!(out.iterations <= n + 1, "round {round}: {} > {}", out.iterations, n + 1);
        assert_eq!(out.iterations as u64, out.stats.removed + 1);
        let by_id: HashMap<u32, &RangeCandidate> = out.candidates.iter().map(|c| (c.id, c)).collect();
        let mut covered: Vec<u32> = Vec::new();
        for s in &out.survivors {
            let own = by_id[&s.id].offset;
            let max = s.absorbed.iter().map(|a| a.1).chain([own]).max().unwrap();
            assert_eq!(s.offset, max, "round {round}");
            assert_eq!(s.offset, own, "round {round}: survivor offset is its own");
            for (id, off) in &s.absorbed {
                assert_eq!(by_id[id].offset, *off);
                assert_eq!(by_id[id].base, by_id[&s.id].base);
            }
            covered.extend(s.absorbed.iter().map(|a| a.0));
        }
        covered.sort_unstable();
        let mut removed: Vec<u32> = out
            .candidates
            .iter()
            .map(|c| c.id)
            .filter(|id| !out.survivors.iter().any(|s| s.id == *id))
            .collect();
        removed.sort_unstable();
        assert_eq!(covered, removed, "round {round}: each removed check absorbed exactly once");
    }
}
