use heapguard::optimize::{run_pipeline, OptFlags};
use heapguard::{gen_random_program, instrument_program, parse_program, print_program, GenConfig, InstrumentOptions};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_programs_parse_back(seed in any::<u64>(), bug_rate in 0.0f64..1.0) {
        let g = gen_random_program(&GenConfig { seed, bug_rate, ..GenConfig::default() });
        let text = print_program(&g.program);
        let back = parse_program(&text).unwrap();
        prop_assert_eq!(&back, &g.program);
        prop_assert_eq!(print_program(&back), text);
    }

    #[test]
    fn instrumented_and_optimized_text_is_stable(seed in any::<u64>()) {
        let g = gen_random_program(&GenConfig { seed, ..GenConfig::default() });
        let (inst, _) = instrument_program(&g.program, InstrumentOptions::default()).unwrap();
        let (opt, _) = run_pipeline(&inst, OptFlags::ALL).unwrap();
        for p in [&inst, &opt] {
            let text = print_program(p);
            let back = parse_program(&text).unwrap();
            prop_assert_eq!(print_program(&back), text);
        }
    }
}
