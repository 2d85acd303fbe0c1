use heapguard::{
    gen_random_program, instrument_program, run, BugKind, GenConfig, InstrumentOptions, VerdictKind, VmConfig,
};

fn instrumented_verdict(g: &heapguard::Generated) -> heapguard::Verdict {
    let (q, _) = instrument_program(&g.program, InstrumentOptions::default()).unwrap();
    run(&q, &VmConfig::default()).verdict
}

#[test]
fn seed_one_without_bugs_is_clean() {
    let g = gen_random_program(&GenConfig {
        seed: 1,
        bug_rate: 0.0,
        ..GenConfig::default()
    });
    assert!(g.bug.is_none());
    assert!(heapguard::validate_program(&g.program).is_empty());
    assert_eq!(instrumented_verdict(&g), heapguard::Verdict::Ok);
    let plain = run(&g.program, &VmConfig::default());
    assert_eq!(plain.verdict, heapguard::Verdict::Ok);
    assert_eq!(plain.output.len(), 1);
}

#[test]
fn injected_overflow_faults_at_its_site() {
    let mut seen = 0;
    for seed in 0..200 {
        let g = gen_random_program(&GenConfig {
            seed,
            bug_rate: 1.0,
            ..GenConfig::default()
        });
        let Some(bug) = g.bug.clone() else { continue };
        if bug.kind != BugKind::Overflow {
            continue;
        }
        let v = instrumented_verdict(&g);
        assert_eq!(v.kind(), VerdictKind::Oob, "seed {seed}");
        assert_eq!(v.site(), bug.site, "seed {seed}");
        assert!(bug.site.is_some());
        seen += 1;
    }
    assert!(seen > 5, "{seen}");
}

#[test]
fn same_seed_same_text() {
    for seed in [0, 1, 99, 12345] {
        let cfg = GenConfig { seed, ..GenConfig::default() };
        let (a, b) = (gen_random_program(&cfg), gen_random_program(&cfg));
        assert_eq!(a.text, b.text);
        assert_eq!(a.bug, b.bug);
    }
    let a = gen_random_program(&GenConfig { seed: 1, ..GenConfig::default() });
    let b = gen_random_program(&GenConfig { seed: 2, ..GenConfig::default() });
    assert_ne!(a.text, b.text);
}

#[test]
fn every_bug_kind_is_injected() {
    let mut kinds = std::collections::BTreeSet::new();
    for seed in 0..400 {
        let g = gen_random_program(&GenConfig {
            seed,
            bug_rate: 1.0,
            ..GenConfig::default()
        });
        if let Some(b) = g.bug {
            assert_eq!(serde_json::to_value(b.kind).unwrap(), b.kind.name());
            kinds.insert(b.kind.name());
        }
    }
    assert_eq!(kinds.len(), BugKind::ALL.len(), "{kinds:?}");
}
