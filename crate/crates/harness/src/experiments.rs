//! Runs systems over pilots and computes the aggregate views: the main table,
//! threshold and budget sweeps, hard-case selection, multi-seed pilots and the
//! per-case-type diagnostic.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use maplaw_core::controller::{run_case, run_maybe_hard, RunTrace, SystemConfig, SystemKind};
use maplaw_core::corpus::Corpus;
use maplaw_core::dataset::{generate_pilot, hard_case_subset, CaseType, PilotManifest, TemplateSet};
use maplaw_core::policy::{ExternalSelector, HttpTransport};

use crate::error::HarnessError;

/// Corpus plus templates: everything a run needs besides the pilot.
#[derive(Debug, Clone)]
pub struct Env {
    pub templates: TemplateSet,
    pub corpus: Corpus,
}

impl Env {
    pub fn reference() -> Self {
        Env {
            templates: TemplateSet::reference(),
            corpus: Corpus::reference(),
        }
    }
}

/// Parses a system name as accepted on the command line.
pub fn parse_system(name: &str) -> Result<SystemConfig, HarnessError> {
    let key = name.trim().strip_prefix("map-").unwrap_or(name.trim());
    let cfg = match key {
        "rule" => SystemConfig::new("map-rule", SystemKind::MapRule),
        "oracle" => SystemConfig::new("map-oracle", SystemKind::MapOracle),
        "external" => SystemConfig::new("map-external", SystemKind::MapExternal),
        "no-threshold-stop" => SystemConfig::new("map-no-threshold-stop", SystemKind::MapNoThresholdStop),
        "no-graph" => SystemConfig::new("map-no-graph", SystemKind::MapNoGraph),
        other => {
            let n = other
                .strip_prefix("fixed-")
                .and_then(|n| n.parse::<usize>().ok())
                .ok_or_else(|| HarnessError::Usage(format!("unknown system {name:?}")))?;
            SystemConfig::fixed(n)
        }
    };
    cfg.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn parse_systems(list: &str) -> Result<Vec<SystemConfig>, HarnessError> {
    let systems = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_system)
        .collect::<Result<Vec<_>, _>>()?;
    if systems.is_empty() {
        return Err(HarnessError::Usage("no systems given".into()));
    }
    Ok(systems)
}

fn run_one(env: &Env, case: &maplaw_core::Case, system: &SystemConfig) -> Result<RunTrace, HarnessError> {
    let schema = env.templates.schema(case.case_type);
    if system.kind == SystemKind::MapExternal {
        let transport = HttpTransport::from_env()?;
        return Ok(run_maybe_hard(
            case,
            schema,
            &env.corpus,
            system,
            ExternalSelector::new(transport),
        )?);
    }
    Ok(run_case(case, schema, &env.corpus, system)?)
}

/// Runs one system over every case, in manifest order. `jobs > 1` runs
/// cases in parallel; results are identical either way.
pub fn run_system(
    env: &Env,
    manifest: &PilotManifest,
    system: &SystemConfig,
    jobs: usize,
) -> Result<Vec<RunTrace>, HarnessError> {
    system.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
    let results: Vec<Result<RunTrace, HarnessError>> = if jobs <= 1 {
        manifest.cases.iter().map(|c| run_one(env, c, system)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        pool.install(|| manifest.cases.par_iter().map(|c| run_one(env, c, system)).collect())
    };
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub system: String,
    pub cases: usize,
    pub ec_mean: f64,
    pub evc_mean: f64,
    pub rounds_mean: f64,
    pub evidence_mean: f64,
    pub tokens_mean: Option<f64>,
    pub latency_mean: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn optional_mean(values: Vec<Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    (!present.is_empty()).then(|| mean(present.into_iter()))
}

/// Per-case means. Tokens and latency are averaged over the cases that report them.
pub fn aggregate(system: &str, traces: &[RunTrace]) -> AggregateRow {
    let per_case_tokens = traces
        .iter()
        .map(|t| {
            let ts: Vec<u64> = t.rounds.iter().filter_map(|r| r.tokens).collect();
            (!ts.is_empty()).then(|| ts.iter().sum::<u64>() as f64)
        })
        .collect();
    let per_case_latency = traces
        .iter()
        .map(|t| {
            let ls: Vec<f64> = t.rounds.iter().filter_map(|r| r.latency_s).collect();
            (!ls.is_empty()).then(|| ls.iter().sum::<f64>())
        })
        .collect();
    AggregateRow {
        system: system.to_string(),
        cases: traces.len(),
        ec_mean: mean(traces.iter().map(|t| t.final_coverage.ec)),
        evc_mean: mean(traces.iter().map(|t| t.final_coverage.evc)),
        rounds_mean: mean(traces.iter().map(|t| t.round_count() as f64)),
        evidence_mean: mean(traces.iter().map(|t| t.evidence_total as f64)),
        tokens_mean: optional_mean(per_case_tokens),
        latency_mean: optional_mean(per_case_latency),
    }
}

pub struct SystemRun {
    pub system: SystemConfig,
    pub traces: Vec<RunTrace>,
    pub row: AggregateRow,
}

pub fn run_systems(
    env: &Env,
    manifest: &PilotManifest,
    systems: &[SystemConfig],
    jobs: usize,
) -> Result<Vec<SystemRun>, HarnessError> {
    if systems.is_empty() {
        return Err(HarnessError::Usage("no systems given".into()));
    }
    systems
        .iter()
        .map(|s| {
            let traces = run_system(env, manifest, s, jobs)?;
            let row = aggregate(&s.name, &traces);
            Ok(SystemRun {
                system: s.clone(),
                traces,
                row,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub delta: f64,
    pub row: AggregateRow,
}

/// Re-runs one policy for each marginal-gain threshold.
pub fn threshold_sweep(
    env: &Env,
    manifest: &PilotManifest,
    base: &SystemConfig,
    deltas: &[f64],
    jobs: usize,
) -> Result<Vec<ThresholdRow>, HarnessError> {
    if deltas.is_empty() {
        return Err(HarnessError::Usage("empty threshold grid".into()));
    }
    deltas
        .iter()
        .map(|&delta| {
            let mut system = base.clone();
            system.stop.delta = delta;
            let traces = run_system(env, manifest, &system, jobs)?;
            Ok(ThresholdRow {
                delta,
                row: aggregate(&system.name, &traces),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: usize,
    pub hard_no_stop: bool,
    pub row: AggregateRow,
}

/// Re-runs each policy with `r_max` set to every budget in the grid.
pub fn budget_sweep(
    env: &Env,
    manifest: &PilotManifest,
    policies: &[SystemConfig],
    budgets: &[usize],
    hard_no_stop: bool,
    jobs: usize,
) -> Result<Vec<BudgetRow>, HarnessError> {
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(HarnessError::Usage("budgets must be a non-empty list of positive integers".into()));
    }
    let mut rows = Vec::new();
    for policy in policies {
        for &budget in budgets {
            let mut system = policy.clone();
            system.stop.r_max = budget;
            system.hard_no_stop = hard_no_stop;
            if hard_no_stop {
                system.name = format!("{}-hard-no-stop", policy.name);
            }
            let traces = run_system(env, manifest, &system, jobs)?;
            rows.push(BudgetRow {
                budget,
                hard_no_stop,
                row: aggregate(&system.name, &traces),
            });
        }
    }
    Ok(rows)
}

pub fn ec_by_case(traces: &[RunTrace]) -> BTreeMap<String, f64> {
    traces
        .iter()
        .map(|t| (t.case_id.clone(), t.final_coverage.ec))
        .collect()
}

/// Cases the given policy leaves below full element coverage.
pub fn hard_cases(
    env: &Env,
    manifest: &PilotManifest,
    policy: &SystemConfig,
    jobs: usize,
) -> Result<PilotManifest, HarnessError> {
    let traces = run_system(env, manifest, policy, jobs)?;
    Ok(hard_case_subset(manifest, &ec_by_case(&traces))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub row: AggregateRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub system: String,
    pub ec_mean: f64,
    pub ec_variance: f64,
    pub ec_min: f64,
    pub ec_max: f64,
}

pub fn multi_seed(
    env: &Env,
    seeds: &[u64],
    n_cases: usize,
    systems: &[SystemConfig],
    jobs: usize,
) -> Result<(Vec<SeedRow>, Vec<SeedSummary>), HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Usage("empty seed list".into()));
    }
    if n_cases == 0 {
        return Err(HarnessError::Usage("n must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for system in systems {
        for &seed in seeds {
            let pilot = generate_pilot(&env.templates, seed, n_cases)?;
            let traces = run_system(env, &pilot, system, jobs)?;
            rows.push(SeedRow {
                seed,
                row: aggregate(&system.name, &traces),
            });
        }
    }
    let summaries = systems
        .iter()
        .map(|s| {
            let ecs: Vec<f64> = rows
                .iter()
                .filter(|r| r.row.system == s.name)
                .map(|r| r.row.ec_mean)
                .collect();
            let m = mean(ecs.iter().copied());
            SeedSummary {
                system: s.name.clone(),
                ec_mean: m,
                ec_variance: mean(ecs.iter().map(|e| (e - m) * (e - m))),
                ec_min: ecs.iter().copied().fold(f64::INFINITY, f64::min),
                ec_max: ecs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok((rows, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticCell {
    pub case_type: CaseType,
    pub system: String,
    pub cases: usize,
    pub ec_mean: f64,
    pub rounds_mean: f64,
}

/// Per (case type, system) EC and rounds, case types in their fixed order.
pub fn diagnose(traces: &[RunTrace]) -> Vec<DiagnosticCell> {
    let mut systems: Vec<&str> = Vec::new();
    for t in traces {
        if !systems.contains(&t.system_name.as_str()) {
            systems.push(&t.system_name);
        }
    }
    let mut cells = Vec::new();
    for case_type in CaseType::ALL {
        for system in &systems {
            let group: Vec<&RunTrace> = traces
                .iter()
                .filter(|t| t.case_type == case_type && t.system_name == *system)
                .collect();
            if group.is_empty() {
                continue;
            }
            cells.push(DiagnosticCell {
                case_type,
                system: system.to_string(),
                cases: group.len(),
                ec_mean: mean(group.iter().map(|t| t.final_coverage.ec)),
                rounds_mean: mean(group.iter().map(|t| t.round_count() as f64)),
            });
        }
    }
    cells
}
