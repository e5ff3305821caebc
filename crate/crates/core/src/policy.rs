//! Action selection over the consultation map.
//!
//! Every selector sees the same [`SelectionInput`]: the serialized selector
//! state (what an external model would receive), the live map, the fixed
//! schema and the rounds executed so far.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::controller::RoundRecord;
use crate::corpus::SynonymTable;
use crate::error::SelectorError;
use crate::map::{ConsultationMap, ElementSchema, RequirementKind, SupportStatus};
use crate::matching::{element_coverage, evidence_validity_coverage};

/// Element coverage at which the oracle selector is willing to conclude.
pub const CONCLUSION_EC: f64 = 0.7;
/// Sampling temperature forwarded to external selectors.
pub const SELECTOR_TEMPERATURE: f64 = 0.3;
pub const ENV_ENDPOINT: &str = "SELECTOR_ENDPOINT";
pub const ENV_API_KEY: &str = "SELECTOR_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    RetrieveStatute,
    RetrieveCase,
    SearchWeb,
    ExtractFact,
    RequestClarification,
    GenerateConclusion,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::RetrieveStatute,
        Action::RetrieveCase,
        Action::SearchWeb,
        Action::ExtractFact,
        Action::RequestClarification,
        Action::GenerateConclusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::RetrieveStatute => "retrieve_statute",
            Action::RetrieveCase => "retrieve_case",
            Action::SearchWeb => "search_web",
            Action::ExtractFact => "extract_fact",
            Action::RequestClarification => "request_clarification",
            Action::GenerateConclusion => "generate_conclusion",
        }
    }

    pub fn is_retrieval(self) -> bool {
        matches!(
            self,
            Action::RetrieveStatute | Action::RetrieveCase | Action::SearchWeb
        )
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorDecision {
    pub action: Action,
    pub reasoning: String,
    pub target_element: Option<String>,
    pub query: Option<String>,
}

impl SelectorDecision {
    pub fn conclude(reasoning: impl Into<String>) -> Self {
        SelectorDecision {
            action: Action::GenerateConclusion,
            reasoning: reasoning.into(),
            target_element: None,
            query: None,
        }
    }

    /// Retrieval actions need a target and a non-empty query; a conclusion
    /// carries neither.
    pub fn validate(&self) -> Result<(), String> {
        let has_query = self.query.as_deref().is_some_and(|q| !q.trim().is_empty());
        if self.action.is_retrieval() {
            if self.target_element.is_none() {
                return Err(format!("{} without target_element", self.action));
            }
            if !has_query {
                return Err(format!("{} without query", self.action));
            }
        }
        if self.action == Action::GenerateConclusion
            && (self.target_element.is_some() || self.query.is_some())
        {
            return Err("generate_conclusion must not carry target or query".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Selector state (the wire request body)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueState {
    pub id: String,
    pub label: String,
    pub status: SupportStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementState {
    pub kind: RequirementKind,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementState {
    pub id: String,
    pub label: String,
    pub status: SupportStatus,
    pub missing_evidence: Vec<String>,
    pub requirements: Vec<RequirementState>,
}

impl ElementState {
    pub fn unsatisfied(&self) -> usize {
        self.requirements.iter().filter(|r| !r.satisfied).count()
    }

    fn first_unsatisfied_kind(&self) -> Option<RequirementKind> {
        self.requirements.iter().find(|r| !r.satisfied).map(|r| r.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSummary {
    pub id: String,
    pub kind: String,
    pub summary: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub id: String,
    pub element_id: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorState {
    pub user_query: String,
    pub round: usize,
    pub ec: f64,
    pub evc: f64,
    pub issues: Vec<IssueState>,
    pub elements: Vec<ElementState>,
    pub evidence: Vec<EvidenceSummary>,
    pub goals: Vec<GoalState>,
}

const SUMMARY_CHARS: usize = 48;

impl SelectorState {
    pub fn from_map(map: &ConsultationMap, user_query: &str) -> Self {
        let elements: Vec<ElementState> = map
            .elements
            .iter()
            .map(|e| ElementState {
                id: e.id.clone(),
                label: e.label.clone(),
                status: e.support_status,
                missing_evidence: e.missing_evidence.clone(),
                requirements: e
                    .requirements
                    .iter()
                    .map(|r| RequirementState {
                        kind: r.kind,
                        satisfied: r.is_satisfied(),
                    })
                    .collect(),
            })
            .collect();
        let issues = map
            .issues
            .iter()
            .map(|i| {
                let statuses: Vec<SupportStatus> = elements
                    .iter()
                    .filter(|e| i.element_ids.contains(&e.id))
                    .map(|e| e.status)
                    .collect();
                let status = if statuses.iter().all(|s| *s == SupportStatus::FullySupported) {
                    SupportStatus::FullySupported
                } else if statuses.iter().any(|s| *s != SupportStatus::Unsupported) {
                    SupportStatus::PartiallySupported
                } else {
                    SupportStatus::Unsupported
                };
                IssueState {
                    id: i.id.clone(),
                    label: i.label.clone(),
                    status,
                }
            })
            .collect();
        SelectorState {
            user_query: user_query.to_string(),
            round: map.round,
            ec: element_coverage(map).unwrap_or(0.0),
            evc: evidence_validity_coverage(map),
            issues,
            elements,
            evidence: map
                .evidence
                .iter()
                .map(|ev| EvidenceSummary {
                    id: ev.id.clone(),
                    kind: ev.source_kind.as_str().to_string(),
                    summary: ev.text.chars().take(SUMMARY_CHARS).collect(),
                    score: ev.relevance_score,
                })
                .collect(),
            goals: map
                .retrieval_goals
                .iter()
                .filter(|g| !g.resolved)
                .map(|g| GoalState {
                    id: g.id.clone(),
                    element_id: g.element_id.clone(),
                    description: g.description.clone(),
                })
                .collect(),
        }
    }

    pub fn unresolved(&self) -> impl Iterator<Item = &ElementState> {
        self.elements
            .iter()
            .filter(|e| e.status != SupportStatus::FullySupported)
    }
}

// ---------------------------------------------------------------------------
// Selector plumbing

pub struct SelectionInput<'a> {
    pub state: &'a SelectorState,
    pub map: &'a ConsultationMap,
    pub schema: &'a ElementSchema,
    pub history: &'a [RoundRecord],
    pub allow_conclusion: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorOutput {
    pub decision: SelectorDecision,
    pub tokens: Option<u64>,
    pub latency_s: Option<f64>,
}

impl From<SelectorDecision> for SelectorOutput {
    fn from(decision: SelectorDecision) -> Self {
        SelectorOutput {
            decision,
            tokens: None,
            latency_s: None,
        }
    }
}

pub trait Selector {
    fn name(&self) -> &str;
    fn select(&mut self, input: &SelectionInput<'_>) -> Result<SelectorOutput, SelectorError>;
}

fn rule_action(kind: RequirementKind) -> Action {
    match kind {
        RequirementKind::Statute | RequirementKind::Any => Action::RetrieveStatute,
        RequirementKind::Case => Action::RetrieveCase,
        RequirementKind::Fact => Action::RequestClarification,
    }
}

fn label_query(element: &ElementState) -> String {
    match element.missing_evidence.first() {
        Some(m) => format!("{} {}", element.label, m),
        None => element.label.clone(),
    }
}

fn decision_for(element: &ElementState, action: Action, query: String, why: String) -> SelectorDecision {
    SelectorDecision {
        action,
        reasoning: why,
        target_element: Some(element.id.clone()),
        query: Some(query),
    }
}

// ---------------------------------------------------------------------------
// Rule policy

/// Fruitless attempts on one element before the rule policy moves on.
pub const FRUITLESS_LIMIT: usize = 2;

/// Deterministic fallback policy: first unresolved element in schema order,
/// its first unsatisfied requirement, queried by label plus missing evidence.
pub fn rule_select(
    state: &SelectorState,
    history: &[RoundRecord],
    allow_conclusion: bool,
) -> SelectorDecision {
    let unresolved: Vec<&ElementState> = state.unresolved().collect();
    if unresolved.is_empty() {
        if allow_conclusion {
            return SelectorDecision::conclude("all elements fully supported");
        }
        let first = &state.elements[0];
        let kind = first.requirements.first().map(|r| r.kind).unwrap_or(RequirementKind::Any);
        return decision_for(
            first,
            rule_action(kind),
            label_query(first),
            "conclusion withheld; continuing on first element".into(),
        );
    }

    let target = pick_rule_target(&unresolved, history);
    let kind = target
        .first_unsatisfied_kind()
        .unwrap_or(RequirementKind::Any);
    decision_for(
        target,
        rule_action(kind),
        label_query(target),
        format!("first unresolved element {} needs {:?} evidence", target.id, kind),
    )
}

fn pick_rule_target<'s>(unresolved: &[&'s ElementState], history: &[RoundRecord]) -> &'s ElementState {
    let last_target = history
        .last()
        .and_then(|r| r.decision.target_element.as_deref());
    let Some(last) = last_target else {
        return unresolved[0];
    };
    let Some(pos) = unresolved.iter().position(|e| e.id == last) else {
        return unresolved[0];
    };
    let streak = history
        .iter()
        .rev()
        .take_while(|r| r.decision.target_element.as_deref() == Some(last) && r.target_new_links == 0)
        .count();
    if streak >= FRUITLESS_LIMIT {
        unresolved[(pos + 1) % unresolved.len()]
    } else {
        unresolved[pos]
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleSelector;

impl Selector for RuleSelector {
    fn name(&self) -> &str {
        "rule"
    }

    fn select(&mut self, input: &SelectionInput<'_>) -> Result<SelectorOutput, SelectorError> {
        Ok(rule_select(input.state, input.history, input.allow_conclusion).into())
    }
}

// ---------------------------------------------------------------------------
// Oracle policy

fn oracle_action(kind: RequirementKind) -> Action {
    match kind {
        RequirementKind::Statute => Action::RetrieveStatute,
        RequirementKind::Case | RequirementKind::Any => Action::RetrieveCase,
        RequirementKind::Fact => Action::RequestClarification,
    }
}

/// Rewrites an element's keywords into corpus-aligned variants.
pub fn expand_query(keywords: &[String], synonyms: &SynonymTable, fallback: &str) -> String {
    let mut terms: Vec<&str> = Vec::new();
    for kw in keywords {
        if let Some(variants) = synonyms.get(kw) {
            for v in variants {
                if !terms.contains(&v.as_str()) {
                    terms.push(v);
                }
            }
        }
    }
    if terms.is_empty() {
        fallback.to_string()
    } else {
        terms.join(" ")
    }
}

/// Element-aware selection: most unsatisfied requirements first, queries
/// rewritten through the synonym table, conclusion once EC reaches 0.7.
pub fn oracle_select(
    state: &SelectorState,
    schema: &ElementSchema,
    synonyms: &SynonymTable,
    allow_conclusion: bool,
) -> SelectorDecision {
    let unresolved: Vec<&ElementState> = state.unresolved().collect();
    if allow_conclusion && (unresolved.is_empty() || state.ec >= CONCLUSION_EC) {
        return SelectorDecision::conclude(format!("element coverage {:.3} is sufficient", state.ec));
    }
    let target = unresolved
        .iter()
        .copied()
        // max_by_key keeps the last maximum; iterate reversed to keep schema order on ties
        .rev()
        .max_by_key(|e| e.unsatisfied())
        .unwrap_or(&state.elements[0]);
    let kind = target
        .first_unsatisfied_kind()
        .or_else(|| target.requirements.first().map(|r| r.kind))
        .unwrap_or(RequirementKind::Any);
    let keywords = schema
        .element(&target.id)
        .map(|e| e.keywords.clone())
        .unwrap_or_default();
    let query = expand_query(&keywords, synonyms, &label_query(target));
    decision_for(
        target,
        oracle_action(kind),
        query,
        format!(
            "{} has {} unsatisfied requirement(s); rewriting query with aligned terms",
            target.id,
            target.unsatisfied()
        ),
    )
}

#[derive(Debug, Clone)]
pub struct OracleSelector {
    synonyms: SynonymTable,
}

impl OracleSelector {
    pub fn new(synonyms: SynonymTable) -> Self {
        OracleSelector { synonyms }
    }
}

impl Selector for OracleSelector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn select(&mut self, input: &SelectionInput<'_>) -> Result<SelectorOutput, SelectorError> {
        Ok(oracle_select(input.state, input.schema, &self.synonyms, input.allow_conclusion).into())
    }
}

// ---------------------------------------------------------------------------
// Scripted replay

/// Replays a fixed decision sequence, then concludes.
#[derive(Debug, Clone)]
pub struct ScriptedSelector {
    decisions: Vec<SelectorDecision>,
    cursor: usize,
}

impl ScriptedSelector {
    pub fn new(decisions: Vec<SelectorDecision>) -> Self {
        ScriptedSelector {
            decisions,
            cursor: 0,
        }
    }
}

impl Selector for ScriptedSelector {
    fn name(&self) -> &str {
        "scripted"
    }

    fn select(&mut self, _input: &SelectionInput<'_>) -> Result<SelectorOutput, SelectorError> {
        let decision = self
            .decisions
            .get(self.cursor)
            .cloned()
            .unwrap_or_else(|| SelectorDecision::conclude("script exhausted"));
        self.cursor += 1;
        Ok(decision.into())
    }
}

// ---------------------------------------------------------------------------
// Hard-no-stop wrapper

/// Forbids `generate_conclusion`: a conclusion from the inner selector is
/// replaced by its decision recomputed with conclusions disallowed, or by the
/// rule policy's top retrieval if it still concludes.
pub struct HardNoStop<S> {
    inner: S,
    name: String,
}

impl<S: Selector> HardNoStop<S> {
    pub fn new(inner: S) -> Self {
        let name = format!("{}-hard-no-stop", inner.name());
        HardNoStop { inner, name }
    }
}

impl<S: Selector> Selector for HardNoStop<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&mut self, input: &SelectionInput<'_>) -> Result<SelectorOutput, SelectorError> {
        let first = self.inner.select(input)?;
        if first.decision.action != Action::GenerateConclusion {
            return Ok(first);
        }
        let retry_input = SelectionInput {
            state: input.state,
            map: input.map,
            schema: input.schema,
            history: input.history,
            allow_conclusion: false,
        };
        let mut second = self.inner.select(&retry_input)?;
        if second.decision.action == Action::GenerateConclusion {
            second.decision = rule_select(input.state, input.history, false);
        }
        second.tokens = sum_opt(first.tokens, second.tokens);
        second.latency_s = sum_opt(first.latency_s, second.latency_s);
        Ok(second)
    }
}

fn sum_opt<T: std::ops::Add<Output = T>>(a: Option<T>, b: Option<T>) -> Option<T> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        (a, None) => a,
        (None, b) => b,
    }
}

// ---------------------------------------------------------------------------
// External selector protocol

/// Request body sent to an external selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRequest {
    #[serde(flatten)]
    pub state: SelectorState,
    pub conclusion_allowed: bool,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportReply {
    pub body: String,
    pub tokens: Option<u64>,
}

/// One request/response exchange with an external selector endpoint.
pub trait Transport {
    fn post(&self, body: &str) -> Result<TransportReply, String>;
}

/// Header carrying the token count of a reply, when the endpoint reports it.
pub const TOKENS_HEADER: &str = "x-selector-tokens";

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self, SelectorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| SelectorError::Config(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint: endpoint.into(),
            api_key,
        })
    }

    /// Reads `SELECTOR_ENDPOINT` and optional `SELECTOR_API_KEY`.
    pub fn from_env() -> Result<Self, SelectorError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| SelectorError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        HttpTransport::new(endpoint, std::env::var(ENV_API_KEY).ok())
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str) -> Result<TransportReply, String> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let tokens = resp
            .headers()
            .get(TOKENS_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let body = resp.text().map_err(|e| e.to_string())?;
        if status.is_server_error() {
            return Err(format!("server returned {status}"));
        }
        Ok(TransportReply { body, tokens })
    }
}

const REPLY_FIELDS: [&str; 4] = ["action", "reasoning", "target_element", "query"];

/// Parses a reply body that must contain exactly the four decision fields.
pub fn parse_reply(raw: &str) -> Result<SelectorDecision, SelectorError> {
    let protocol = |message: String| SelectorError::Protocol {
        message,
        raw: raw.to_string(),
    };
    let value: Value =
        serde_json::from_str(raw).map_err(|e| protocol(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| protocol("reply is not an object".into()))?;
    for field in REPLY_FIELDS {
        if !obj.contains_key(field) {
            return Err(protocol(format!("missing field {field}")));
        }
    }
    if let Some(extra) = obj.keys().find(|k| !REPLY_FIELDS.contains(&k.as_str())) {
        return Err(protocol(format!("unexpected field {extra}")));
    }
    let text = |field: &str| -> Result<Option<String>, SelectorError> {
        match &obj[field] {
            Value::Null => Ok(None),
            Value::String(s) => Ok(Some(s.clone())),
            other => Err(protocol(format!("{field} must be a string, got {other}"))),
        }
    };
    let action: Action = text("action")?
        .ok_or_else(|| protocol("action is null".into()))?
        .parse()
        .map_err(protocol)?;
    let decision = SelectorDecision {
        action,
        reasoning: text("reasoning")?.unwrap_or_default(),
        target_element: text("target_element")?.filter(|s| !s.is_empty()),
        query: text("query")?.filter(|s| !s.is_empty()),
    };
    decision.validate().map_err(protocol)?;
    Ok(decision)
}

/// Transport retries after the first failed attempt.
pub const MAX_RETRIES: usize = 2;

pub struct ExternalSelector<T> {
    transport: T,
}

impl<T: Transport> ExternalSelector<T> {
    pub fn new(transport: T) -> Self {
        ExternalSelector { transport }
    }
}

impl<T: Transport> Selector for ExternalSelector<T> {
    fn name(&self) -> &str {
        "external"
    }

    fn select(&mut self, input: &SelectionInput<'_>) -> Result<SelectorOutput, SelectorError> {
        let request = SelectorRequest {
            state: input.state.clone(),
            conclusion_allowed: input.allow_conclusion,
            temperature: SELECTOR_TEMPERATURE,
        };
        let body = serde_json::to_string(&request).expect("request serializes");
        let started = Instant::now();
        let mut last_err = String::new();
        for _ in 0..=MAX_RETRIES {
            match self.transport.post(&body) {
                Ok(reply) => {
                    let decision = parse_reply(&reply.body)?;
                    return Ok(SelectorOutput {
                        decision,
                        tokens: reply.tokens,
                        latency_s: Some(started.elapsed().as_secs_f64()),
                    });
                }
                Err(e) => last_err = e,
            }
        }
        Err(SelectorError::Unavailable {
            attempts: MAX_RETRIES + 1,
            message: last_err,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    fn el(id: &str, status: SupportStatus, reqs: &[(RequirementKind, bool)]) -> ElementState {
        ElementState {
            id: id.into(),
            label: format!("{id}标签"),
            status,
            missing_evidence: vec![format!("{id}缺失")],
            requirements: reqs
                .iter()
                .map(|(k, s)| RequirementState {
                    kind: *k,
                    satisfied: *s,
                })
                .collect(),
        }
    }

    fn state(elements: Vec<ElementState>, ec: f64) -> SelectorState {
        SelectorState {
            user_query: "q".into(),
            round: 0,
            ec,
            evc: 1.0,
            issues: vec![],
            elements,
            evidence: vec![],
            goals: vec![],
        }
    }

    #[test]
    fn action_names_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.as_str().parse::<Action>().unwrap(), a);
        }
        assert!("retrieve_statutes".parse::<Action>().is_err());
    }

    #[test]
    fn rule_targets_first_unresolved() {
        use RequirementKind::*;
        let s = state(
            vec![
                el("e1", SupportStatus::FullySupported, &[(Statute, true)]),
                el("e2", SupportStatus::PartiallySupported, &[(Statute, true), (Case, false)]),
                el("e3", SupportStatus::Unsupported, &[(Fact, false)]),
            ],
            0.33,
        );
        let d = rule_select(&s, &[], true);
        assert_eq!(d.action, Action::RetrieveCase);
        assert_eq!(d.target_element.as_deref(), Some("e2"));
        assert_eq!(d.query.as_deref(), Some("e2标签 e2缺失"));
    }

    #[test]
    fn rule_concludes_when_everything_covered() {
        use RequirementKind::*;
        let s = state(vec![el("e1", SupportStatus::FullySupported, &[(Any, true)])], 1.0);
        assert_eq!(rule_select(&s, &[], true).action, Action::GenerateConclusion);
        let forced = rule_select(&s, &[], false);
        assert_eq!(forced.action, Action::RetrieveStatute);
        forced.validate().unwrap();
    }

    #[test]
    fn oracle_prefers_most_unsatisfied_and_gates_conclusion() {
        use RequirementKind::*;
        let schema = ElementSchema {
            issues: vec![],
            elements: vec![],
        };
        let s = state(
            vec![
                el("e1", SupportStatus::Unsupported, &[(Statute, false)]),
                el("e2", SupportStatus::Unsupported, &[(Case, false), (Any, false)]),
                el("e3", SupportStatus::Unsupported, &[(Case, false), (Any, false)]),
            ],
            0.0,
        );
        let d = oracle_select(&s, &schema, &SynonymTable::new(), true);
        assert_eq!(d.target_element.as_deref(), Some("e2"));
        assert_eq!(d.action, Action::RetrieveCase);
        let mut high = s.clone();
        high.ec = 0.7;
        assert_eq!(
            oracle_select(&high, &schema, &SynonymTable::new(), true).action,
            Action::GenerateConclusion
        );
        high.ec = 0.69;
        assert_ne!(
            oracle_select(&high, &schema, &SynonymTable::new(), true).action,
            Action::GenerateConclusion
        );
    }

    #[test]
    fn expansion_uses_variants_then_falls_back() {
        let mut syn = SynonymTable::new();
        syn.insert("社保".into(), vec!["社会保险费".into(), "缴费基数".into()]);
        assert_eq!(
            expand_query(&["社保".into(), "无".into()], &syn, "fb"),
            "社会保险费 缴费基数"
        );
        assert_eq!(expand_query(&["无".into()], &syn, "fb"), "fb");
    }

    #[test]
    fn parse_well_formed_reply() {
        let d = parse_reply(
            r#"{"action":"retrieve_statute","reasoning":"need law","target_element":"e2","query":"工资 支付"}"#,
        )
        .unwrap();
        assert_eq!(d.action, Action::RetrieveStatute);
        assert_eq!(d.target_element.as_deref(), Some("e2"));
    }

    #[test]
    fn malformed_replies_carry_raw_payload() {
        let raw = r#"{"action":"retrieve_statutes","reasoning":"x","target_element":"e1","query":"q"}"#;
        let err = parse_reply(raw).unwrap_err();
        assert!(matches!(err, SelectorError::Protocol { .. }));
        assert_eq!(err.raw_payload(), Some(raw));
        for bad in [
            r#"{"action":"retrieve_case","reasoning":"x","query":"q"}"#,
            r#"{"action":"retrieve_case","reasoning":"x","target_element":"e1","query":"q","extra":1}"#,
            r#"{"action":"retrieve_case","reasoning":"x","target_element":null,"query":"q"}"#,
            "not json",
            "[]",
        ] {
            let err = parse_reply(bad).unwrap_err();
            assert_eq!(err.raw_payload(), Some(bad));
        }
    }

    struct Flaky {
        failures: RefCell<usize>,
        reply: String,
    }

    impl Transport for Flaky {
        fn post(&self, _body: &str) -> Result<TransportReply, String> {
            let mut f = self.failures.borrow_mut();
            if *f > 0 {
                *f -= 1;
                return Err("connection reset".into());
            }
            Ok(TransportReply {
                body: self.reply.clone(),
                tokens: Some(12),
            })
        }
    }

    fn dummy_input<'a>(
        state: &'a SelectorState,
        map: &'a ConsultationMap,
        schema: &'a ElementSchema,
    ) -> SelectionInput<'a> {
        SelectionInput {
            state,
            map,
            schema,
            history: &[],
            allow_conclusion: true,
        }
    }

    fn empty_map() -> (ConsultationMap, ElementSchema) {
        let schema = ElementSchema {
            issues: vec![],
            elements: vec![],
        };
        let map = ConsultationMap {
            issues: vec![],
            elements: vec![],
            retrieval_goals: vec![],
            facts: vec![],
            evidence: vec![],
            links: vec![],
            round: 0,
        };
        (map, schema)
    }

    #[test]
    fn transport_retries_then_gives_up() {
        let (map, schema) = empty_map();
        let s = state(vec![], 0.0);
        let reply = r#"{"action":"generate_conclusion","reasoning":"done","target_element":null,"query":null}"#;
        let mut ok = ExternalSelector::new(Flaky {
            failures: RefCell::new(2),
            reply: reply.into(),
        });
        let out = ok.select(&dummy_input(&s, &map, &schema)).unwrap();
        assert_eq!(out.decision.action, Action::GenerateConclusion);
        assert_eq!(out.tokens, Some(12));
        assert!(out.latency_s.is_some());

        let mut down = ExternalSelector::new(Flaky {
            failures: RefCell::new(3),
            reply: reply.into(),
        });
        let err = down.select(&dummy_input(&s, &map, &schema)).unwrap_err();
        assert!(matches!(err, SelectorError::Unavailable { attempts: 3, .. }));
    }
}
