use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::FalseyValueParser;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use heapguard::gen::GenConfig;
use heapguard::instrument::collect_sites;
use heapguard::optimize::OptStats;
use heapguard::runtime::DEFAULT_CACHE_CAP;
use heapguard::vm::DEFAULT_STEP_LIMIT;
use heapguard::{
    instrument_program, print_program, run, run_differential, run_pipeline, InstrumentOptions,
    OptFlags, Program, RuntimeConfig, Verdict, VmConfig,
};
use heapguard_cli::corpus::{run_corpus, summary_table};
use heapguard_cli::fuzz::{default_configs, run_fuzz, FuzzConfig};
use heapguard_cli::{bundled_corpus, load_program, LoadError, EXIT_FAILED, EXIT_INVALID, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "heapguard", version, about = "Heap bounds checking and dangling-pointer neutralization for a small SSA IR")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Optimization passes: `all`, `none`, or a comma list such as
    /// `unsat,struct` or `all,-merge`.
    #[arg(long, global = true, env = "HEAPGUARD_OPT", default_value = "all")]
    opt: String,
    /// Report every violation instead of stopping at the first.
    #[arg(long, global = true, env = "HEAPGUARD_KEEP_GOING", value_parser = FalseyValueParser::new())]
    keep_going: bool,
    /// Emit JSON on stdout.
    #[arg(long, global = true, env = "HEAPGUARD_JSON", value_parser = FalseyValueParser::new())]
    json: bool,
    /// First generator seed (fuzz).
    #[arg(long, global = true, env = "HEAPGUARD_SEED", default_value_t = 0)]
    seed: u64,
    /// Capacity of the per-object escape cache.
    #[arg(long, global = true, env = "HEAPGUARD_CACHE_CAP", default_value_t = DEFAULT_CACHE_CAP)]
    cache_cap: usize,
    /// Executed program instructions before a run is cut off.
    #[arg(long, global = true, env = "HEAPGUARD_STEP_LIMIT", default_value_t = DEFAULT_STEP_LIMIT)]
    step_limit: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Instrument and optimize a program, printing the result.
    Instrument {
        file: PathBuf,
        /// Write the program here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Execute a program. Uninstrumented input is instrumented and
    /// optimized first unless `--plain` is given.
    Run {
        file: PathBuf,
        #[arg(long)]
        plain: bool,
    },
    /// Run a program plain, instrumented, and optimized, and compare.
    Diff { file: PathBuf },
    /// Run the good/bad case corpus.
    Corpus {
        /// Corpus directory holding `manifest.toml`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Differential fuzzing over generated programs.
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        count: u64,
        /// Probability that a generated program carries an injected bug.
        #[arg(long)]
        bug_rate: Option<f64>,
        /// Only fuzz the pass set given by `--opt` instead of `all` plus
        /// each single-pass-off set.
        #[arg(long)]
        single: bool,
        /// Directory for reproducers of inequivalent programs.
        #[arg(long)]
        reproducers: Option<PathBuf>,
    },
    /// Check counts and per-pass optimizer statistics.
    Stats { file: PathBuf },
}

struct Failure {
    code: i32,
    message: String,
    diagnostics: Vec<heapguard::ir::Diagnostic>,
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure {
            code: e.exit_code(),
            message: e.to_string(),
            diagnostics: e.diagnostics().to_vec(),
        }
    }
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
        diagnostics: Vec::new(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.global.json;
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            if json {
                emit(&json!({ "error": f.message, "diagnostics": f.diagnostics }));
            } else {
                eprintln!("heapguard: {}", f.message);
                for d in &f.diagnostics {
                    eprintln!("  {d}");
                }
            }
            ExitCode::from(f.code as u8)
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn out(s: &str) {
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

macro_rules! outln {
    ($($t:tt)*) => {
        out(&format!("{}\n", format_args!($($t)*)))
    };
}

fn emit<T: Serialize>(v: &T) {
    outln!("{}", serde_json::to_string_pretty(v).expect("serializable report"));
}

fn dispatch(cli: Cli) -> Result<i32, Failure> {
    let g = &cli.global;
    let flags: OptFlags = g.opt.parse().map_err(|e| fail(EXIT_USAGE, format!("--opt: {e}")))?;
    let vm = VmConfig {
        step_limit: g.step_limit,
        keep_going: g.keep_going,
        runtime: RuntimeConfig {
            cache_cap: g.cache_cap,
            ..RuntimeConfig::default()
        },
    };
    match &cli.command {
        Command::Instrument { file, output } => cmd_instrument(file, output.as_deref(), flags, g.json),
        Command::Run { file, plain } => cmd_run(file, *plain, flags, &vm, g.json),
        Command::Diff { file } => cmd_diff(file, flags, &vm, g.json),
        Command::Corpus { dir } => {
            let dir = dir.clone().unwrap_or_else(bundled_corpus);
            let report = run_corpus(&dir, flags, &vm).map_err(|e| fail(EXIT_FAILED, e.to_string()))?;
            if g.json {
                emit(&report);
            } else {
                out(&summary_table(&report));
            }
            Ok(if report.all_passed() { 0 } else { EXIT_FAILED })
        }
        Command::Fuzz {
            count,
            bug_rate,
            single,
            reproducers,
        } => {
            if *count == 0 {
                return Err(fail(EXIT_USAGE, "--count must be at least 1"));
            }
            let mut gen = GenConfig::default();
            if let Some(r) = bug_rate {
                if !(0.0..=1.0).contains(r) {
                    return Err(fail(EXIT_USAGE, "--bug-rate must be within 0..=1"));
                }
                gen.bug_rate = *r;
            }
            let cfg = FuzzConfig {
                seed: g.seed,
                count: *count,
                gen,
                configs: if *single { vec![flags] } else { default_configs() },
                reproducer_dir: reproducers.clone(),
                vm,
            };
            let report = run_fuzz(&cfg);
            if g.json {
                emit(&report);
            } else {
                outln!(
                    "fuzz seeds {}..{}: {} runs over {} configs",
                    report.seed,
                    report.seed + report.count,
                    report.runs,
                    report.configs.len()
                );
                for (k, n) in &report.verdicts {
                    outln!("  {k:<14} {n}");
                }
                outln!("  inequivalences {}", report.inequivalences.len());
                for i in &report.inequivalences {
                    let at = i.reproducer.as_ref().map(|p| format!(" -> {}", p.display())).unwrap_or_default();
                    outln!("    seed {} [{}]: {}{at}", i.seed, i.config, i.mismatches.join("; "));
                }
                outln!("  ground-truth mismatches {}", report.ground_truth_mismatches.len());
                for m in &report.ground_truth_mismatches {
                    outln!(
                        "    seed {} {}: expected {} at {:?}, got {} at {:?}",
                        m.seed,
                        m.bug,
                        m.expected.name(),
                        m.expected_site,
                        m.got.name(),
                        m.got_site
                    );
                }
                for e in &report.errors {
                    outln!("  error seed {}: {}", e.seed, e.message);
                }
            }
            Ok(if report.clean() { 0 } else { EXIT_FAILED })
        }
        Command::Stats { file } => cmd_stats(file, flags, g.json),
    }
}

fn instrument_and_optimize(p: &Program, flags: OptFlags) -> Result<(Program, Program, OptStats), Failure> {
    let inst = if p.instrumented {
        p.clone()
    } else {
        instrument_program(p, InstrumentOptions::default())
            .map_err(|e| fail(EXIT_INVALID, e.to_string()))?
            .0
    };
    let (opt, stats) = run_pipeline(&inst, flags).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    Ok((inst, opt, stats))
}

fn checks(c: &heapguard::optimize::SiteCounts) -> u64 {
    c.range_checks + c.cast_checks
}

fn cmd_instrument(file: &Path, output: Option<&Path>, flags: OptFlags, json: bool) -> Result<i32, Failure> {
    let (program, warnings) = load_program(file)?;
    let (_, opt, stats) = instrument_and_optimize(&program, flags)?;
    let text = print_program(&opt);
    let removed = checks(&stats.before) - checks(&stats.after);
    if let Some(out) = output {
        std::fs::write(out, &text).map_err(|e| fail(EXIT_USAGE, format!("cannot write {}: {e}", out.display())))?;
    }
    if json {
        emit(&json!({
            "file": file,
            "flags": flags.to_string(),
            "checks_removed": removed,
            "stats": stats,
            "sites": collect_sites(&opt),
            "warnings": warnings,
            "program": if output.is_none() { Some(&text) } else { None },
        }));
    } else {
        if output.is_none() {
            out(&text);
        }
        for w in &warnings {
            eprintln!("{w}");
        }
        eprintln!(
            "[{flags}] {removed} checks removed; range {} -> {}, cast {} -> {}, escape {} -> {}, range-init {}, assert {}",
            stats.before.range_checks,
            stats.after.range_checks,
            stats.before.cast_checks,
            stats.after.cast_checks,
            stats.before.escapes,
            stats.after.escapes,
            stats.after.range_inits,
            stats.after.asserts
        );
    }
    Ok(0)
}

fn describe(v: &Verdict) -> String {
    match v {
        Verdict::Ok => "ok".into(),
        Verdict::LimitExceeded => "limit-exceeded".into(),
        Verdict::Oob {
            function, dst, size, bounds, ..
        } => {
            let b = bounds.map(|b| format!(" outside [{:#x}, {:#x})", b.lower, b.upper)).unwrap_or_default();
            format!("oob in @{function}: {size} bytes at {dst:#x}{b}{}", site_suffix(v))
        }
        Verdict::AssertFail {
            function, dst, size, bounds, ..
        } => format!(
            "assert-fail in @{function}: {size} bytes at {dst:#x} outside [{:#x}, {:#x}){}",
            bounds.lower,
            bounds.upper,
            site_suffix(v)
        ),
        Verdict::Uaf { function, addr, .. }
        | Verdict::DoubleFree { function, addr, .. }
        | Verdict::InvalidFree { function, addr, .. } => {
            format!("{} in @{function} at {addr:#x}{}", v.kind().name(), site_suffix(v))
        }
    }
}

fn site_suffix(v: &Verdict) -> String {
    match v.sites() {
        [] => String::new(),
        [s] => format!(" (site !{s})"),
        [s, rest @ ..] => format!(" (site !{s}, covering {rest:?})"),
    }
}

fn cmd_run(file: &Path, plain: bool, flags: OptFlags, vm: &VmConfig, json: bool) -> Result<i32, Failure> {
    let (program, _) = load_program(file)?;
    let (mode, prog) = if plain || program.instrumented {
        (if program.instrumented { "as-given" } else { "plain" }, program)
    } else {
        ("instrumented", instrument_and_optimize(&program, flags)?.1)
    };
    let report = run(&prog, vm);
    if json {
        emit(&json!({
            "file": file,
            "mode": mode,
            "flags": if mode == "instrumented" { Some(flags.to_string()) } else { None },
            "exit_code": report.verdict.exit_code(),
            "report": report,
        }));
    } else {
        for x in &report.output {
            outln!("{x}");
        }
        if report.violations.len() > 1 {
            for v in &report.violations {
                outln!("violation: {}", describe(v));
            }
        }
        outln!("verdict: {}", describe(&report.verdict));
        outln!("runtime calls: {}, steps: {}", report.runtime_calls, report.steps);
    }
    Ok(report.verdict.exit_code())
}

fn cmd_diff(file: &Path, flags: OptFlags, vm: &VmConfig, json: bool) -> Result<i32, Failure> {
    let (program, _) = load_program(file)?;
    if program.instrumented {
        return Err(fail(EXIT_USAGE, "diff needs an uninstrumented program"));
    }
    let (inst, opt, _) = instrument_and_optimize(&program, flags)?;
    let d = run_differential(&program, &opt, &inst, vm);
    if json {
        emit(&json!({ "file": file, "flags": flags.to_string(), "diff": d }));
    } else {
        outln!("plain:        {}", describe(&d.plain.verdict));
        outln!("instrumented: {} ({} runtime calls)", describe(&d.unoptimized.verdict), d.unoptimized.runtime_calls);
        outln!("optimized:    {} ({} runtime calls)", describe(&d.optimized.verdict), d.optimized.runtime_calls);
        if d.equivalent {
            outln!("equivalent");
        }
        for m in &d.mismatches {
            outln!("mismatch: {m}");
        }
    }
    Ok(if d.equivalent { 0 } else { EXIT_FAILED })
}

fn cmd_stats(file: &Path, flags: OptFlags, json: bool) -> Result<i32, Failure> {
    let (program, _) = load_program(file)?;
    let (_, _, stats) = instrument_and_optimize(&program, flags)?;
    if json {
        emit(&json!({ "file": file, "stats": stats }));
        return Ok(0);
    }
    let (b, a) = (&stats.before, &stats.after);
    outln!("[{}]", stats.flags);
    outln!("  {:<12} {:>7} {:>7}", "", "before", "after");
    for (name, x, y) in [
        ("range", b.range_checks, a.range_checks),
        ("cast", b.cast_checks, a.cast_checks),
        ("escape", b.escapes, a.escapes),
        ("range-init", b.range_inits, a.range_inits),
        ("assert", b.asserts, a.asserts),
    ] {
        outln!("  {name:<12} {x:>7} {y:>7}");
    }
    outln!("  {:<12} {:>8} {:>7} {:>7} {:>9}", "pass", "examined", "removed", "merged", "rewritten");
    for (p, s) in &stats.passes {
        outln!("  {:<12} {:>8} {:>7} {:>7} {:>9}", p.name(), s.examined, s.removed, s.merged, s.rewritten);
    }
    for v in &stats.static_violations {
        outln!(
            "  static violation in @{} at !{}: extent {} exceeds object size {}",
            v.function, v.site, v.extent, v.object_size
        );
    }
    Ok(0)
}
