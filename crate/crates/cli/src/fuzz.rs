//! Differential fuzzing: generated programs run plain, instrumented, and
//! optimized under several pass sets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use heapguard::{
    gen_random_program, instrument_program, run_differential, run_pipeline, GenConfig,
    InstrumentOptions, OptFlags, Pass, Program, VerdictKind, VmConfig,
};

/// `all` followed by `all` minus each single pass.
pub fn default_configs() -> Vec<OptFlags> {
    let mut v = vec![OptFlags::ALL];
    v.extend(Pass::ALL.iter().map(|&p| OptFlags::ALL.without(p)));
    v
}

/// Short file-name-safe label for a pass set.
pub fn config_label(flags: OptFlags) -> String {
    if let Some(p) = Pass::ALL.iter().find(|&&p| flags == OptFlags::ALL.without(p)) {
        return format!("no-{p}");
    }
    flags.to_string().replace(',', "+")
}

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub seed: u64,
    pub count: u64,
    /// Template for the generator; its seed is replaced per program.
    pub gen: GenConfig,
    pub configs: Vec<OptFlags>,
    /// Where reproducers of inequivalent programs are written.
    pub reproducer_dir: Option<PathBuf>,
    pub vm: VmConfig,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            seed: 0,
            count: 1000,
            gen: GenConfig::default(),
            configs: default_configs(),
            reproducer_dir: None,
            vm: VmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inequivalence {
    pub seed: u64,
    pub config: String,
    pub mismatches: Vec<String>,
    pub reproducer: Option<PathBuf>,
}

/// The unoptimized instrumented run disagrees with the generator's record of
/// the injected bug.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMismatch {
    pub seed: u64,
    pub bug: String,
    pub expected: VerdictKind,
    pub expected_site: Option<u32>,
    pub got: VerdictKind,
    pub got_site: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzError {
    pub seed: u64,
    pub config: Option<String>,
    pub message: String,
}

/// Deterministic for a given configuration: no timings, sorted entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub seed: u64,
    pub count: u64,
    pub configs: Vec<String>,
    pub runs: u64,
    /// Unoptimized verdicts over all programs.
    pub verdicts: BTreeMap<String, u64>,
    pub injected: BTreeMap<String, u64>,
    pub inequivalences: Vec<Inequivalence>,
    pub ground_truth_mismatches: Vec<GroundTruthMismatch>,
    pub errors: Vec<FuzzError>,
}

impl FuzzReport {
    pub fn clean(&self) -> bool {
        self.inequivalences.is_empty() && self.ground_truth_mismatches.is_empty() && self.errors.is_empty()
    }
}

/// Optimizer under test. The default is [`run_pipeline`]; tests substitute a
/// broken one to check that the campaign notices.
pub type Optimizer = dyn Fn(&Program, OptFlags) -> Result<Program, String> + Sync;

pub fn run_fuzz(cfg: &FuzzConfig) -> FuzzReport {
    run_fuzz_with(cfg, &|p: &Program, flags: OptFlags| {
        run_pipeline(p, flags).map(|(o, _)| o).map_err(|e| e.to_string())
    })
}

#[derive(Default)]
struct SeedOutcome {
    verdict: Option<VerdictKind>,
    injected: Option<String>,
    inequivalences: Vec<Inequivalence>,
    ground_truth: Option<GroundTruthMismatch>,
    errors: Vec<FuzzError>,
    runs: u64,
}

pub fn run_fuzz_with(cfg: &FuzzConfig, optimize: &Optimizer) -> FuzzReport {
    if let Some(dir) = &cfg.reproducer_dir {
        let _ = std::fs::create_dir_all(dir);
    }
    let outcomes: Vec<SeedOutcome> = (cfg.seed..cfg.seed.saturating_add(cfg.count))
        .into_par_iter()
        .map(|seed| fuzz_one(cfg, seed, optimize))
        .collect();
    let mut report = FuzzReport {
        seed: cfg.seed,
        count: cfg.count,
        configs: cfg.configs.iter().map(|f| f.to_string()).collect(),
        runs: 0,
        verdicts: BTreeMap::new(),
        injected: BTreeMap::new(),
        inequivalences: Vec::new(),
        ground_truth_mismatches: Vec::new(),
        errors: Vec::new(),
    };
    for o in outcomes {
        report.runs += o.runs;
        if let Some(v) = o.verdict {
            *report.verdicts.entry(v.name().to_string()).or_default() += 1;
        }
        *report.injected.entry(o.injected.unwrap_or_else(|| "none".into())).or_default() += 1;
        report.inequivalences.extend(o.inequivalences);
        report.ground_truth_mismatches.extend(o.ground_truth);
        report.errors.extend(o.errors);
    }
    report
}

fn fuzz_one(cfg: &FuzzConfig, seed: u64, optimize: &Optimizer) -> SeedOutcome {
    let mut out = SeedOutcome::default();
    let g = gen_random_program(&GenConfig { seed, ..cfg.gen.clone() });
    out.injected = g.bug.as_ref().map(|b| b.kind.name().to_string());
    let inst = match instrument_program(&g.program, InstrumentOptions::default()) {
        Ok((p, _)) => p,
        Err(e) => {
            out.errors.push(FuzzError {
                seed,
                config: None,
                message: e.to_string(),
            });
            return out;
        }
    };
    for &flags in &cfg.configs {
        let config = flags.to_string();
        let opt = match optimize(&inst, flags) {
            Ok(p) => p,
            Err(message) => {
                out.errors.push(FuzzError {
                    seed,
                    config: Some(config),
                    message,
                });
                continue;
            }
        };
        let d = run_differential(&g.program, &opt, &inst, &cfg.vm);
        out.runs += 1;
        if out.verdict.is_none() {
            let v = &d.unoptimized.verdict;
            out.verdict = Some(v.kind().normalized());
            let (expected, expected_site) = match &g.bug {
                Some(b) => (b.expected, b.site),
                None => (VerdictKind::Ok, None),
            };
            if v.kind() != expected || v.site() != expected_site {
                out.ground_truth = Some(GroundTruthMismatch {
                    seed,
                    bug: out.injected.clone().unwrap_or_else(|| "none".into()),
                    expected,
                    expected_site,
                    got: v.kind(),
                    got_site: v.site(),
                });
            }
        }
        if !d.equivalent {
            let reproducer = cfg
                .reproducer_dir
                .as_deref()
                .and_then(|dir| save_reproducer(dir, seed, flags, &d.mismatches, &g.text));
            out.inequivalences.push(Inequivalence {
                seed,
                config,
                mismatches: d.mismatches,
                reproducer,
            });
        }
    }
    out
}

fn save_reproducer(dir: &Path, seed: u64, flags: OptFlags, mismatches: &[String], text: &str) -> Option<PathBuf> {
    let path = dir.join(format!("seed-{seed}-{}.ir", config_label(flags)));
    let mut body = format!("// heapguard fuzz seed {seed}, --opt {flags}\n");
    for m in mismatches {
        body += &format!("// {m}\n");
    }
    body += text;
    std::fs::write(&path, body).ok()?;
    Some(path)
}
