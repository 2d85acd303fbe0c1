//! Good/bad case corpus with expected verdicts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use heapguard::optimize::{run_pipeline, OptFlags, SiteCounts};
use heapguard::{instrument_program, run, verdicts_equivalent, InstrumentOptions, VerdictKind, VmConfig};

use crate::{load_program, LoadError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    HeapOverflow,
    NonLinearOverflow,
    Uaf,
    DoubleFree,
    InvalidFree,
    InBoundOverflow,
    Clean,
    Fixture,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::HeapOverflow => "heap-overflow",
            Category::NonLinearOverflow => "non-linear-overflow",
            Category::Uaf => "uaf",
            Category::DoubleFree => "double-free",
            Category::InvalidFree => "invalid-free",
            Category::InBoundOverflow => "in-bound-overflow",
            Category::Clean => "clean",
            Category::Fixture => "fixture",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCase {
    pub name: String,
    pub category: Category,
    pub good: PathBuf,
    #[serde(default)]
    pub bad: Option<PathBuf>,
    /// Expected verdict of the bad variant.
    #[serde(default)]
    pub expected: Option<VerdictKind>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub path: PathBuf,
    pub expected: VerdictKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, rename = "case")]
    pub cases: Vec<CorpusCase>,
    #[serde(default, rename = "fixture")]
    pub fixtures: Vec<Fixture>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("case {case}: {reason}")]
    Mismatch { case: String, reason: String },
    #[error(transparent)]
    Load(#[from] LoadError),
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest, CorpusError> {
        let path = dir.join("manifest.toml");
        let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        let m: Manifest = toml::from_str(&text).map_err(|source| CorpusError::Manifest {
            path: path.clone(),
            source,
        })?;
        for c in &m.cases {
            let mismatch = |reason: &str| CorpusError::Mismatch {
                case: c.name.clone(),
                reason: reason.into(),
            };
            match (c.category, &c.bad, c.expected) {
                (Category::Clean, None, None) => {}
                (Category::Clean, _, _) => return Err(mismatch("clean cases have no bad variant")),
                (_, Some(_), Some(_)) => {}
                _ => return Err(mismatch("bad variant and expected verdict are required")),
            }
        }
        Ok(m)
    }
}

/// One program of the corpus run under one configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: String,
    pub category: Category,
    /// `good`, `bad`, or `fixture`.
    pub variant: String,
    pub path: PathBuf,
    pub expected: VerdictKind,
    pub verdict: VerdictKind,
    pub site: Option<u32>,
    /// Verdict of the same program instrumented without optimization.
    pub unoptimized: VerdictKind,
    /// Optimized and unoptimized runs agree on kind and site.
    pub equivalent: bool,
    pub passed: bool,
    /// An out-of-bounds write that the allocator's rounding absorbs.
    pub mitigated: bool,
    pub note: Option<String>,
    pub runtime_calls: u64,
    pub unoptimized_runtime_calls: u64,
    pub sites_before: SiteCounts,
    pub sites_after: SiteCounts,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub passed: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub flags: String,
    pub results: Vec<CaseResult>,
    pub categories: BTreeMap<String, Tally>,
    pub passed: u64,
    pub total: u64,
}

impl CorpusReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

struct Job<'a> {
    case: &'a str,
    category: Category,
    variant: &'static str,
    path: PathBuf,
    expected: VerdictKind,
    note: Option<&'a String>,
}

pub fn run_corpus(dir: &Path, flags: OptFlags, vm: &VmConfig) -> Result<CorpusReport, CorpusError> {
    let manifest = Manifest::load(dir)?;
    let mut jobs = Vec::new();
    for c in &manifest.cases {
        jobs.push(Job {
            case: &c.name,
            category: c.category,
            variant: "good",
            path: dir.join(&c.good),
            expected: VerdictKind::Ok,
            note: None,
        });
        if let (Some(bad), Some(expected)) = (&c.bad, c.expected) {
            jobs.push(Job {
                case: &c.name,
                category: c.category,
                variant: "bad",
                path: dir.join(bad),
                expected,
                note: c.note.as_ref(),
            });
        }
    }
    for f in &manifest.fixtures {
        jobs.push(Job {
            case: &f.name,
            category: Category::Fixture,
            variant: "fixture",
            path: dir.join(&f.path),
            expected: f.expected,
            note: None,
        });
    }
    let results = jobs
        .par_iter()
        .map(|j| run_job(j, flags, vm))
        .collect::<Result<Vec<_>, _>>()?;
    let mut categories: BTreeMap<String, Tally> = BTreeMap::new();
    for r in &results {
        let t = categories.entry(r.category.name().to_string()).or_default();
        t.total += 1;
        t.passed += u64::from(r.passed);
    }
    let passed = results.iter().filter(|r| r.passed).count() as u64;
    Ok(CorpusReport {
        flags: flags.to_string(),
        total: results.len() as u64,
        passed,
        results,
        categories,
    })
}

fn run_job(j: &Job<'_>, flags: OptFlags, vm: &VmConfig) -> Result<CaseResult, CorpusError> {
    let (program, _) = load_program(&j.path)?;
    let mismatch = |reason: String| CorpusError::Mismatch {
        case: j.case.to_string(),
        reason,
    };
    let (inst, _) = instrument_program(&program, InstrumentOptions::default())
        .map_err(|e| mismatch(e.to_string()))?;
    let (opt, _) = run_pipeline(&inst, flags).map_err(|e| mismatch(e.to_string()))?;
    let unopt_report = run(&inst, vm);
    let report = run(&opt, vm);
    let verdict = report.verdict.kind().normalized();
    let equivalent = verdicts_equivalent(&unopt_report.verdict, &report.verdict);
    let passed = verdict == j.expected && equivalent;
    let mitigated = j.category == Category::InBoundOverflow && j.variant == "bad" && verdict == VerdictKind::Ok;
    Ok(CaseResult {
        case: j.case.to_string(),
        category: j.category,
        variant: j.variant.to_string(),
        path: j.path.clone(),
        expected: j.expected,
        verdict,
        site: report.verdict.site(),
        unoptimized: unopt_report.verdict.kind().normalized(),
        equivalent,
        passed,
        mitigated,
        note: j.note.cloned(),
        runtime_calls: report.runtime_calls,
        unoptimized_runtime_calls: unopt_report.runtime_calls,
        sites_before: SiteCounts::of(&inst),
        sites_after: SiteCounts::of(&opt),
    })
}

/// Plain-text summary: one line per category, then failures.
pub fn summary_table(r: &CorpusReport) -> String {
    let mut out = format!("corpus [{}]\n", r.flags);
    for (cat, t) in &r.categories {
        out += &format!("  {cat:<20} {}/{}\n", t.passed, t.total);
    }
    for c in r.results.iter().filter(|c| c.mitigated) {
        out += &format!("  note: {} ({}) mitigated by rounding\n", c.case, c.variant);
    }
    for c in r.results.iter().filter(|c| !c.passed) {
        out += &format!(
            "  FAIL {} ({}): expected {}, got {} (unoptimized {})\n",
            c.case,
            c.variant,
            c.expected.name(),
            c.verdict.name(),
            c.unoptimized.name()
        );
    }
    out += &format!("  total {}/{}\n", r.passed, r.total);
    out
}
