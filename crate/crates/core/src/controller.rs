//! Round loop: stop checks, action selection, execution, alignment, audit.
//!
//! Also hosts the two non-map baselines (fixed-N retrieval and three rounds of
//! case retrieval over the raw query) so every system produces the same
//! [`RunTrace`] shape.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::dataset::{Case, CaseType};
use crate::error::{MapError, SchemaError, SelectorError};
use crate::map::{AuditRecord, ConsultationMap, ElementNode, ElementSchema, EvidenceCandidate, SourceKind};
use crate::matching::{align_round, coverage_snapshot, marginal_gain, CoverageSnapshot};
use crate::policy::{
    Action, HardNoStop, OracleSelector, RuleSelector, SelectionInput, Selector, SelectorDecision,
    SelectorState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopConfig {
    pub theta_e: f64,
    pub theta_ev: f64,
    pub delta: f64,
    pub r_max: usize,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig {
            theta_e: 0.85,
            theta_ev: 0.70,
            delta: 0.05,
            r_max: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    LowGain,
    Budget,
    ConclusionAction,
    Error,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::Threshold => "threshold",
            StopReason::LowGain => "low_gain",
            StopReason::Budget => "budget",
            StopReason::ConclusionAction => "conclusion_action",
            StopReason::Error => "error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    MapRule,
    MapOracle,
    MapExternal,
    MapNoThresholdStop,
    MapNoGraph,
    FixedN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub name: String,
    pub kind: SystemKind,
    pub stop: StopConfig,
    /// Round count for [`SystemKind::FixedN`].
    #[serde(default)]
    pub n: Option<usize>,
    /// Forbid conclusions and disable every stop check, so only the budget ends a run.
    #[serde(default)]
    pub hard_no_stop: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("fixed-N system {0} needs n >= 1")]
    MissingN(String),
    #[error("system {name}: n = {n} exceeds the round budget {r_max}")]
    NOverBudget { name: String, n: usize, r_max: usize },
    #[error("system {0}: r_max must be at least 1")]
    ZeroBudget(String),
}

/// Rounds executed by the query-only baseline.
pub const NO_GRAPH_ROUNDS: usize = 3;

impl SystemConfig {
    pub fn new(name: impl Into<String>, kind: SystemKind) -> Self {
        SystemConfig {
            name: name.into(),
            kind,
            stop: StopConfig::default(),
            n: None,
            hard_no_stop: false,
        }
    }

    pub fn fixed(n: usize) -> Self {
        SystemConfig {
            n: Some(n),
            ..SystemConfig::new(format!("fixed-{n}"), SystemKind::FixedN)
        }
    }

    pub fn with_stop(mut self, stop: StopConfig) -> Self {
        self.stop = stop;
        self
    }

    pub fn hard_no_stop(mut self) -> Self {
        self.hard_no_stop = true;
        self
    }

    /// Lineup in the order results are reported.
    pub fn standard_lineup() -> Vec<SystemConfig> {
        vec![
            SystemConfig::new("map-rule", SystemKind::MapRule),
            SystemConfig::new("map-oracle", SystemKind::MapOracle),
            SystemConfig::new("map-no-threshold-stop", SystemKind::MapNoThresholdStop),
            SystemConfig::new("map-no-graph", SystemKind::MapNoGraph),
            SystemConfig::fixed(3),
            SystemConfig::fixed(5),
            SystemConfig::fixed(7),
        ]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stop.r_max == 0 {
            return Err(ConfigError::ZeroBudget(self.name.clone()));
        }
        if self.kind == SystemKind::FixedN {
            let n = self
                .n
                .filter(|n| *n >= 1)
                .ok_or_else(|| ConfigError::MissingN(self.name.clone()))?;
            if n > self.stop.r_max {
                return Err(ConfigError::NOverBudget {
                    name: self.name.clone(),
                    n,
                    r_max: self.stop.r_max,
                });
            }
        }
        Ok(())
    }

    fn stop_checks_enabled(&self) -> bool {
        !self.hard_no_stop && self.kind != SystemKind::MapNoThresholdStop
    }

    fn conclusions_allowed(&self) -> bool {
        !self.hard_no_stop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub decision: SelectorDecision,
    pub evidence_added: Vec<String>,
    pub facts_added: Vec<String>,
    pub duplicates_dropped: Vec<String>,
    pub new_links: usize,
    /// Links created this round that point at the decision's target element.
    pub target_new_links: usize,
    pub marginal_gain: f64,
    pub coverage: CoverageSnapshot,
    pub tokens: Option<u64>,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub case_id: String,
    pub case_type: CaseType,
    pub system_name: String,
    pub rounds: Vec<RoundRecord>,
    pub stop_reason: StopReason,
    #[serde(rename = "final")]
    pub final_coverage: CoverageSnapshot,
    pub evidence_total: usize,
    /// Raw selector reply for runs that ended on a protocol error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub audit: Vec<AuditRecord>,
    pub map: ConsultationMap,
}

impl RunTrace {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    /// Same behaviour, ignoring the system name and how the run ended.
    pub fn same_behaviour(&self, other: &RunTrace) -> bool {
        self.case_id == other.case_id
            && self.rounds == other.rounds
            && self.final_coverage == other.final_coverage
            && self.evidence_total == other.evidence_total
            && self.audit == other.audit
            && self.map == other.map
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Writes traces as JSON lines.
pub fn write_jsonl<W: Write>(mut out: W, traces: &[RunTrace]) -> std::io::Result<()> {
    for t in traces {
        writeln!(out, "{}", t.to_json_line())?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<RunTrace>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Map(#[from] MapError),
    /// The selector failed mid-run; the partial trace is kept.
    #[error("case {}: {source}", trace.case_id)]
    Selector {
        trace: Box<RunTrace>,
        #[source]
        source: SelectorError,
    },
    #[error("system {0} needs an external selector")]
    NoExternalSelector(String),
}

fn source_for(action: Action) -> Option<SourceKind> {
    match action {
        Action::RetrieveStatute => Some(SourceKind::Statute),
        Action::RetrieveCase => Some(SourceKind::Case),
        Action::SearchWeb => Some(SourceKind::Web),
        _ => None,
    }
}

fn retrieve_into(
    map: &mut ConsultationMap,
    corpus: &Corpus,
    query: &str,
    kind: SourceKind,
    round: usize,
) -> Result<(Vec<String>, Vec<String>), MapError> {
    let seen: BTreeSet<String> = map.retrieved_doc_ids();
    let items: Vec<EvidenceCandidate> = corpus
        .retrieve_excluding(query, kind, &seen)
        .into_iter()
        .map(|hit| EvidenceCandidate {
            doc_id: hit.doc.id.clone(),
            source_kind: hit.doc.kind,
            text: hit.doc.text.clone(),
            relevance_score: hit.score.value(),
        })
        .collect();
    let added = map.add_evidence(items, round)?;
    Ok((added.ids, added.duplicates))
}

struct Loop<'a> {
    case: &'a Case,
    corpus: &'a Corpus,
    map: ConsultationMap,
    rounds: Vec<RoundRecord>,
    audit: Vec<AuditRecord>,
}

impl<'a> Loop<'a> {
    fn new(case: &'a Case, schema: &ElementSchema, corpus: &'a Corpus) -> Result<Self, SchemaError> {
        let map = ConsultationMap::init_from_schema(schema)?;
        let audit = vec![map.audit_snapshot(&[])];
        Ok(Loop {
            case,
            corpus,
            map,
            rounds: Vec::new(),
            audit,
        })
    }

    /// Runs one decision as round `map.round + 1`.
    fn execute(
        &mut self,
        decision: SelectorDecision,
        tokens: Option<u64>,
        latency_s: Option<f64>,
    ) -> Result<(), MapError> {
        let round = self.map.round + 1;
        let unresolved_before: Vec<ElementNode> =
            self.map.unresolved_elements().into_iter().cloned().collect();
        self.map.begin_round(round)?;
        let mut evidence_added = Vec::new();
        let mut facts_added = Vec::new();
        let mut duplicates_dropped = Vec::new();
        if let Some(kind) = source_for(decision.action) {
            let query = decision
                .query
                .clone()
                .unwrap_or_else(|| self.case.user_query.clone());
            let (ids, dups) = retrieve_into(&mut self.map, self.corpus, &query, kind, round)?;
            evidence_added = ids;
            duplicates_dropped = dups;
        } else {
            match decision.action {
                Action::RequestClarification => {
                    let answered = self.map.facts.len().saturating_sub(self.extracted_query());
                    if let Some(text) = self.case.clarifications.get(answered) {
                        facts_added.push(self.map.add_fact(text.clone(), round));
                    }
                }
                Action::ExtractFact if self.extracted_query() == 0 => {
                    facts_added.push(self.map.add_fact(self.case.user_query.clone(), round));
                }
                _ => {}
            }
        }
        let mut items = evidence_added.clone();
        items.extend(facts_added.iter().cloned());
        let links = align_round(&mut self.map, &items);
        let target_new_links = links
            .iter()
            .filter(|l| Some(&l.element_id) == decision.target_element.as_ref())
            .count();
        let mg = marginal_gain(&self.map, &evidence_added, &unresolved_before);
        let coverage = coverage_snapshot(&self.map).expect("validated schema has elements");
        self.audit.push(self.map.audit_snapshot(&evidence_added));
        self.rounds.push(RoundRecord {
            round,
            decision,
            evidence_added,
            facts_added,
            duplicates_dropped,
            new_links: links.len(),
            target_new_links,
            marginal_gain: mg,
            coverage,
            tokens,
            latency_s,
        });
        Ok(())
    }

    /// Facts taken from the user query itself (at most one).
    fn extracted_query(&self) -> usize {
        self.map
            .facts
            .iter()
            .filter(|f| f.text == self.case.user_query)
            .count()
            .min(1)
    }

    fn finish(
        self,
        system: &SystemConfig,
        stop_reason: StopReason,
        report_ec: bool,
        error: Option<String>,
    ) -> RunTrace {
        let mut final_coverage =
            coverage_snapshot(&self.map).expect("validated schema has elements");
        let mut rounds = self.rounds;
        if !report_ec {
            final_coverage.ec = 0.0;
            for r in &mut rounds {
                r.coverage.ec = 0.0;
            }
        }
        RunTrace {
            case_id: self.case.id.clone(),
            case_type: self.case.case_type,
            system_name: system.name.clone(),
            evidence_total: self.map.evidence.len(),
            rounds,
            stop_reason,
            final_coverage,
            error,
            audit: self.audit,
            map: self.map,
        }
    }
}

/// Runs a map-based system with the given selector.
pub fn run_with_selector(
    case: &Case,
    schema: &ElementSchema,
    corpus: &Corpus,
    system: &SystemConfig,
    selector: &mut dyn Selector,
) -> Result<RunTrace, RunError> {
    system.validate()?;
    let mut lp = Loop::new(case, schema, corpus)?;
    let stop = system.stop;
    let mut gains: Vec<f64> = Vec::new();
    let reason = loop {
        let t = lp.rounds.len();
        if t >= stop.r_max {
            break StopReason::Budget;
        }
        let cov = coverage_snapshot(&lp.map).expect("validated schema has elements");
        if system.stop_checks_enabled() {
            if cov.ec >= stop.theta_e && cov.evc >= stop.theta_ev {
                break StopReason::Threshold;
            }
            if gains.len() >= 2 && gains[gains.len() - 2..].iter().all(|g| *g < stop.delta) {
                break StopReason::LowGain;
            }
        }
        let state = SelectorState::from_map(&lp.map, &case.user_query);
        let input = SelectionInput {
            state: &state,
            map: &lp.map,
            schema,
            history: &lp.rounds,
            allow_conclusion: system.conclusions_allowed(),
        };
        let output = match selector.select(&input) {
            Ok(o) => o,
            Err(source) => {
                let raw = source.raw_payload().map(str::to_string);
                let trace = lp.finish(system, StopReason::Error, true, raw);
                return Err(RunError::Selector {
                    trace: Box::new(trace),
                    source,
                });
            }
        };
        if output.decision.action == Action::GenerateConclusion {
            break StopReason::ConclusionAction;
        }
        lp.execute(output.decision, output.tokens, output.latency_s)?;
        gains.push(lp.rounds.last().map(|r| r.marginal_gain).unwrap_or(0.0));
    };
    Ok(lp.finish(system, reason, true, None))
}

fn scheduled(action: Action, query: String, why: &str) -> SelectorDecision {
    SelectorDecision {
        action,
        reasoning: why.to_string(),
        target_element: None,
        query: Some(query),
    }
}

/// Fixed-N baseline: alternate statute and case retrieval with a query built
/// from every element label. EC is not reported; EVC is computed afterwards
/// against the schema.
pub fn run_fixed_n(
    case: &Case,
    schema: &ElementSchema,
    corpus: &Corpus,
    system: &SystemConfig,
) -> Result<RunTrace, RunError> {
    system.validate()?;
    let n = system.n.unwrap_or(0);
    let query = schema
        .elements
        .iter()
        .map(|e| e.label.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let mut lp = Loop::new(case, schema, corpus)?;
    for i in 0..n {
        let action = if i % 2 == 0 {
            Action::RetrieveStatute
        } else {
            Action::RetrieveCase
        };
        lp.execute(scheduled(action, query.clone(), "fixed schedule"), None, None)?;
    }
    Ok(lp.finish(system, StopReason::Budget, false, None))
}

/// Query-only baseline: three rounds of case retrieval on the user query.
pub fn run_no_graph(
    case: &Case,
    schema: &ElementSchema,
    corpus: &Corpus,
    system: &SystemConfig,
) -> Result<RunTrace, RunError> {
    system.validate()?;
    let mut lp = Loop::new(case, schema, corpus)?;
    for _ in 0..NO_GRAPH_ROUNDS.min(system.stop.r_max) {
        lp.execute(
            scheduled(Action::RetrieveCase, case.user_query.clone(), "query-only schedule"),
            None,
            None,
        )?;
    }
    Ok(lp.finish(system, StopReason::Budget, false, None))
}

/// Runs any built-in system. External systems must go through
/// [`run_with_selector`] with a configured selector.
pub fn run_case(
    case: &Case,
    schema: &ElementSchema,
    corpus: &Corpus,
    system: &SystemConfig,
) -> Result<RunTrace, RunError> {
    match system.kind {
        SystemKind::FixedN => run_fixed_n(case, schema, corpus, system),
        SystemKind::MapNoGraph => run_no_graph(case, schema, corpus, system),
        SystemKind::MapRule | SystemKind::MapNoThresholdStop => {
            run_maybe_hard(case, schema, corpus, system, RuleSelector)
        }
        SystemKind::MapOracle => run_maybe_hard(
            case,
            schema,
            corpus,
            system,
            OracleSelector::new(corpus.synonyms().clone()),
        ),
        SystemKind::MapExternal => Err(RunError::NoExternalSelector(system.name.clone())),
    }
}

/// Runs a selector, wrapped in [`HardNoStop`] when the system asks for it.
pub fn run_maybe_hard<S: Selector>(
    case: &Case,
    schema: &ElementSchema,
    corpus: &Corpus,
    system: &SystemConfig,
    selector: S,
) -> Result<RunTrace, RunError> {
    if system.hard_no_stop {
        run_with_selector(case, schema, corpus, system, &mut HardNoStop::new(selector))
    } else {
        let mut selector = selector;
        run_with_selector(case, schema, corpus, system, &mut selector)
    }
}
