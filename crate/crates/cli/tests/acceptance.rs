//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#[path = "../../core/tests/oracles/analysis.rs"]
mod analysis;
#[path = "../../core/tests/oracles/runtime.rs"]
mod runtime;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use heapguard::optimize::SiteCounts;
use heapguard::{
    collect_sites, instrument_program, parse_program, print_program, run, run_pipeline,
    InstrumentOptions, OptFlags, Pass, Program, SiteKind, Verdict, VerdictKind, VmConfig,
};
use heapguard_cli::corpus::{run_corpus, CaseResult, CorpusReport, Manifest};
use heapguard_cli::fuzz::{run_fuzz, FuzzConfig};
use heapguard_cli::{bundled_corpus, load_program};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn check(&mut self, label: &str, f: impl FnOnce() -> Outcome) {
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("PASS {label}: {detail}"),
            Err(why) => {
                println!("FAIL {label}: {why}");
                self.failed.push(label.to_string());
            }
        }
    }
}

fn fixture(name: &str) -> Program {
    let path = bundled_corpus().join("fixtures").join(name);
    load_program(&path).unwrap_or_else(|e| panic!("{e}")).0
}

fn instrumented(p: &Program) -> Program {
    instrument_program(p, InstrumentOptions::default()).unwrap().0
}

fn optimized(p: &Program, flags: OptFlags) -> Program {
    run_pipeline(&instrumented(p), flags).unwrap().0
}

fn checks(c: &SiteCounts) -> u64 {
    c.range_checks + c.cast_checks
}

fn corpus_programs() -> Vec<(String, PathBuf)> {
    let dir = bundled_corpus();
    let m = Manifest::load(&dir).unwrap();
    let mut v = Vec::new();
    for c in &m.cases {
        v.push((format!("{} good", c.name), dir.join(&c.good)));
        if let Some(b) = &c.bad {
            v.push((format!("{} bad", c.name), dir.join(b)));
        }
    }
    for f in &m.fixtures {
        v.push((f.name.clone(), dir.join(&f.path)));
    }
    v
}

fn find<'a>(r: &'a CorpusReport, case: &str, variant: &str) -> &'a CaseResult {
    r.results
        .iter()
        .find(|c| c.case == case && c.variant == variant)
        .unwrap_or_else(|| panic!("no {case} {variant} in corpus"))
}

/// Primes below `n`, by trial division.
fn primes_below(n: i64) -> i64 {
    (2..n).filter(|&k| (2..k).take_while(|d| d * d <= k).all(|d| k % d != 0)).count() as i64
}

fn main() {
    let mut s = Suite { failed: Vec::new() };
    let vm = VmConfig::default();
    let dir = bundled_corpus();

    s.check("criterion 1: corpus verdicts under full instrumentation and all passes", || {
        let t = Instant::now();
        let r = run_corpus(&dir, OptFlags::ALL, &vm).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        let bad: Vec<&CaseResult> = r.results.iter().filter(|c| c.variant == "bad").collect();
        let good: Vec<&CaseResult> = r.results.iter().filter(|c| c.variant != "bad").collect();
        for c in &r.results {
            ensure(
                c.passed,
                format!("{} {}: expected {}, got {}", c.case, c.variant, c.expected.name(), c.verdict.name()),
            )?;
        }
        for c in &good {
            if c.variant == "good" {
                ensure(c.verdict == VerdictKind::Ok, format!("{} good gave {}", c.case, c.verdict.name()))?;
            }
        }
        ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
        Ok(format!("{} bad and {} good/fixture programs correct in {elapsed:.2?}", bad.len(), good.len()))
    });

    s.check("criterion 2: non-linear overflow across neighbouring objects", || {
        let p = load_program(&dir.join("cases/non_linear_bad.ir")).map_err(|e| e.to_string())?.0;
        let v = run(&optimized(&p, OptFlags::ALL), &vm).verdict;
        let (dst, b) = match &v {
            Verdict::Oob { dst, bounds: Some(b), .. } | Verdict::AssertFail { dst, bounds: b, .. } => (*dst, *b),
            _ => return Err(format!("expected oob, got {}", v.kind().name())),
        };
        let stride = b.upper - b.lower;
        let skipped = dst - b.lower;
        ensure(skipped >= 2 * stride, format!("jump of {skipped} bytes is under two {stride}-byte strides"))?;
        Ok(format!("oob {skipped} bytes past the start of a {stride}-byte chunk"))
    });

    s.check("criterion 3: in-bound overflow is ok and reported mitigated", || {
        let r = run_corpus(&dir, OptFlags::ALL, &vm).map_err(|e| e.to_string())?;
        let c = find(&r, "in-bound-overflow", "bad");
        ensure(c.verdict == VerdictKind::Ok, format!("got {}", c.verdict.name()))?;
        ensure(c.mitigated, "not flagged mitigated")?;
        let note = c.note.clone().unwrap_or_default();
        ensure(note.contains("mitigated by rounding"), format!("note: {note:?}"))?;
        let text = heapguard_cli::corpus::summary_table(&r);
        ensure(text.contains("mitigated by rounding"), "summary omits the mitigation")?;
        Ok("offset 20 of a 16-byte request lands in its 32-byte chunk".into())
    });

    s.check("criterion 4: fuzz 1000 seeds x 7 configurations", || {
        let t = Instant::now();
        let r = run_fuzz(&FuzzConfig::default());
        let elapsed = t.elapsed();
        ensure(r.configs.len() == 7, format!("{} configs", r.configs.len()))?;
        ensure(r.runs == 7000, format!("{} runs", r.runs))?;
        ensure(r.inequivalences.is_empty(), format!("{:?}", r.inequivalences))?;
        ensure(r.ground_truth_mismatches.is_empty(), format!("{:?}", r.ground_truth_mismatches))?;
        ensure(r.errors.is_empty(), format!("{:?}", r.errors))?;
        ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
        Ok(format!("0 inequivalences in {} runs, {elapsed:.1?}, verdicts {:?}", r.runs, r.verdicts))
    });

    s.check("criterion 5a: struct accessor checks all removed by struct and builtin", || {
        let p = fixture("struct_sum.ir");
        let inst = instrumented(&p);
        for flags in [OptFlags::only(Pass::Struct).with(Pass::Builtin), OptFlags::ALL] {
            let (_, st) = run_pipeline(&inst, flags).unwrap();
            ensure(checks(&st.before) == 3, format!("{} checks before", checks(&st.before)))?;
            ensure(checks(&st.after) == 0, format!("[{flags}] {} checks survive", checks(&st.after)))?;
        }
        Ok("3 -> 0".into())
    });

    s.check("criterion 5b: field cursor keeps one range check at offset 0x100", || {
        let p = fixture("field_cursor.ir");
        let inst = instrumented(&p);
        let before: Vec<_> = collect_sites(&inst).into_iter().filter(|c| c.function == "foo").collect();
        let count = |k: SiteKind| before.iter().filter(|c| c.kind == k).count();
        ensure(count(SiteKind::RangeCheck) == 5, format!("{} range checks in @foo", count(SiteKind::RangeCheck)))?;
        ensure(count(SiteKind::EscapeTrack) == 1, format!("{} escapes in @foo", count(SiteKind::EscapeTrack)))?;
        let opt = run_pipeline(&inst, OptFlags::ALL).unwrap().0;
        let range: Vec<_> = collect_sites(&opt)
            .into_iter()
            .filter(|c| c.kind == SiteKind::RangeCheck && c.function == "foo")
            .collect();
        ensure(range.len() == 1, format!("{} surviving range checks", range.len()))?;
        ensure(range[0].static_offset == Some(0x100), format!("offset {:?}", range[0].static_offset))?;
        let out = run(&opt, &vm);
        ensure(out.verdict == Verdict::Ok && out.output == vec![122], format!("{:?} {:?}", out.verdict, out.output))?;
        Ok("@foo: 4 range checks plus the field check -> 1 at offset 0x100".into())
    });

    s.check("criterion 5c: two-offset access merges into one range init", || {
        let opt = optimized(&fixture("two_offsets.ir"), OptFlags::ALL);
        let c = SiteCounts::of(&opt);
        ensure(c.range_inits == 1 && c.asserts == 2 && c.range_checks == 0, format!("{c:?}"))?;
        Ok(format!("{c:?}"))
    });

    s.check("criterion 5d: sieve range inits per base and runtime-call reduction", || {
        let p = fixture("sieve.ir");
        let inst = instrumented(&p);
        let opt = run_pipeline(&inst, OptFlags::ALL).unwrap().0;
        let mut groups: BTreeMap<(String, Option<String>), usize> = BTreeMap::new();
        for c in collect_sites(&opt).into_iter().filter(|c| c.kind == SiteKind::RangeInit) {
            *groups.entry((c.function, c.base)).or_default() += 1;
        }
        ensure(!groups.is_empty(), "no range inits")?;
        ensure(groups.values().all(|&n| n == 1), format!("{groups:?}"))?;
        let (u, o) = (run(&inst, &vm), run(&opt, &vm));
        let want = primes_below(1000);
        ensure(u.output == vec![want] && o.output == vec![want], format!("{:?} {:?}, want {want}", u.output, o.output))?;
        let cut = 1.0 - o.runtime_calls as f64 / u.runtime_calls as f64;
        ensure(cut >= 0.9, format!("{} -> {} runtime calls", u.runtime_calls, o.runtime_calls))?;
        Ok(format!(
            "{} base groups, {} -> {} runtime calls ({:.1}% fewer)",
            groups.len(),
            u.runtime_calls,
            o.runtime_calls,
            cut * 100.0
        ))
    });

    s.check("criterion 6: range query cost independent of heap size", || {
        let mut best = [Duration::MAX; 2];
        let mut ops = [0.0; 2];
        for _ in 0..5 {
            for (k, n) in [100, 10_000].into_iter().enumerate() {
                let (m, d) = runtime::mean_ops(n);
                ops[k] = m;
                best[k] = best[k].min(d);
            }
        }
        ensure(ops[0] == ops[1], format!("mean ops {} vs {}", ops[0], ops[1]))?;
        let ratio = best[1].as_secs_f64() / best[0].as_secs_f64();
        ensure(ratio < 2.0, format!("wall-time ratio {ratio:.2}"))?;
        Ok(format!("{} ops per query at 10^2 and 10^4 live objects, time ratio {ratio:.2}", ops[0]))
    });

    s.check("criterion 7: neutralization complete and precise on 10^4 sequences", || {
        runtime::neutralization_is_complete_and_precise(10_000);
        Ok("matches the model memory".into())
    });

    s.check("criterion 8: range query agrees with a table on 10^4 addresses", || {
        runtime::range_query_matches_table(10_000);
        Ok("matches".into())
    });

    s.check("criterion 9: redundant-check elimination laws and exhaustive oracle", || {
        analysis::survivor_law_and_termination_bound(1000);
        analysis::elimination_matches_exhaustive_oracle_on_small_functions(1000);
        Ok("survivor offsets, iteration bound, and brute-force fixpoint agree on 10^3 functions".into())
    });

    s.check("reload bugs: one escape, two range checks, both bugs found when optimized", || {
        let p = fixture("reload_bugs.ir");
        let c = SiteCounts::of(&instrumented(&p));
        ensure(c.escapes == 1 && c.range_checks == 2 && c.cast_checks == 0, format!("{c:?}"))?;
        let keep = VmConfig {
            keep_going: true,
            ..VmConfig::default()
        };
        let r = run(&optimized(&p, OptFlags::ALL), &keep);
        let kinds: Vec<VerdictKind> = r.violations.iter().map(|v| v.kind().normalized()).collect();
        ensure(kinds == [VerdictKind::Oob, VerdictKind::Uaf], format!("{kinds:?}"))?;
        Ok("oob then uaf".into())
    });

    s.check("corpus verdicts stable without struct, check counts differ", || {
        let all = run_corpus(&dir, OptFlags::ALL, &vm).map_err(|e| e.to_string())?;
        let off = run_corpus(&dir, OptFlags::ALL.without(Pass::Struct), &vm).map_err(|e| e.to_string())?;
        ensure(off.all_passed(), "a case fails with struct disabled")?;
        let mut differ = 0;
        for (a, b) in all.results.iter().zip(&off.results) {
            ensure(a.verdict == b.verdict, format!("{} {} changed verdict", a.case, a.variant))?;
            differ += usize::from(a.sites_after != b.sites_after);
        }
        ensure(differ > 0, "no check counts changed")?;
        Ok(format!("{differ} programs keep more checks"))
    });

    s.check("counter law: optimized runtime calls never exceed unoptimized", || {
        let mut n = 0;
        for flags in [OptFlags::only(Pass::Merge), OptFlags::ALL, OptFlags::NONE] {
            let r = run_corpus(&dir, flags, &vm).map_err(|e| e.to_string())?;
            for c in &r.results {
                ensure(
                    c.runtime_calls <= c.unoptimized_runtime_calls,
                    format!("[{flags}] {} {}: {} > {}", c.case, c.variant, c.runtime_calls, c.unoptimized_runtime_calls),
                )?;
                n += 1;
            }
        }
        Ok(format!("{n} runs"))
    });

    s.check("instrumentation preserves output of good programs", || {
        let r = run_corpus(&dir, OptFlags::ALL, &vm).map_err(|e| e.to_string())?;
        let mut n = 0;
        for c in r.results.iter().filter(|c| c.expected == VerdictKind::Ok) {
            let p = load_program(&c.path).map_err(|e| e.to_string())?.0;
            let plain = run(&p, &vm);
            for flags in [OptFlags::NONE, OptFlags::ALL] {
                let o = run(&optimized(&p, flags), &vm);
                ensure(plain.output == o.output, format!("{} {} [{flags}]", c.case, c.variant))?;
            }
            n += 1;
        }
        Ok(format!("{n} programs"))
    });

    s.check("print/parse round trip on the corpus", || {
        for (name, path) in corpus_programs() {
            let p = load_program(&path).map_err(|e| e.to_string())?.0;
            let back = parse_program(&print_program(&p)).map_err(|e| format!("{name}: {e}"))?;
            ensure(back == p, format!("{name}: reparsed program differs"))?;
            for q in [p.clone(), instrumented(&p), optimized(&p, OptFlags::ALL)] {
                let text = print_program(&q);
                let back = parse_program(&text).map_err(|e| format!("{name}: {e}"))?;
                ensure(print_program(&back) == text, format!("{name}: text not stable"))?;
            }
        }
        Ok("all programs".into())
    });

    s.check("dominance matches brute force on corpus functions", || {
        let mut n = 0;
        for (_, path) in corpus_programs() {
            let p = instrumented(&load_program(&path).map_err(|e| e.to_string())?.0);
            for f in p.functions.iter().filter(|f| f.blocks.len() <= 8) {
                analysis::check_dominance(f);
                n += 1;
            }
        }
        Ok(format!("{n} functions"))
    });

    println!(
        "acceptance: {} failed{}",
        s.failed.len(),
        if s.failed.is_empty() { String::new() } else { format!(": {:?}", s.failed) }
    );
    if !s.failed.is_empty() {
        std::process::exit(1);
    }
}
