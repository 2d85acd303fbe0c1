//! Shared fixtures for the benchmarks.

use heapguard::{gen_random_program, instrument_program, GenConfig, InstrumentOptions, Program, Runtime, RuntimeConfig};

/// Runtime with `live` objects of assorted sizes, and their addresses.
pub fn populated_heap(live: usize) -> (Runtime, Vec<u64>) {
    let mut rt = Runtime::new(RuntimeConfig::default());
    let addrs = (0..live)
        .map(|i| rt.alloc((i as u64 * 2654435761) % 3000 + 1).expect("heap has room"))
        .collect();
    (rt, addrs)
}

/// Instrumented generated programs for seeds `0..n`.
pub fn instrumented_programs(n: u64) -> Vec<Program> {
    (0..n)
        .map(|seed| {
            let g = gen_random_program(&GenConfig { seed, ..GenConfig::default() });
            instrument_program(&g.program, InstrumentOptions::default())
                .expect("generated programs instrument")
                .0
        })
        .collect()
}

/// Byte sieve up to `n`, counting the primes it finds.
pub fn sieve_program(n: u64) -> Program {
    let text = format!(
        "fn @main() {{
entry:
  %f = alloc {n}
  br outer
outer:
  %i = phi i64 [2, entry], [%i2, next]
  %c = cmp lt i64 %i, {n}
  condbr %c, test, done
test:
  %p = ptradd i8, %f, %i
  %v = load i8, %p
  %z = cmp eq i8 %v, 0
  condbr %z, mark, next
mark:
  %j0 = binop add i64 %i, %i
  br inner
inner:
  %j = phi i64 [%j0, mark], [%j2, body]
  %cj = cmp lt i64 %j, {n}
  condbr %cj, body, next
body:
  %q = ptradd i8, %f, %j
  store i8 1, %q
  %j2 = binop add i64 %j, %i
  br inner
next:
  %i2 = binop add i64 %i, 1
  br outer
done:
  free %f
  ret
}}
"
    );
    let p = heapguard::parse_program(&text).expect("sieve parses");
    instrument_program(&p, InstrumentOptions::default()).expect("sieve instruments").0
}
