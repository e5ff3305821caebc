//! Consultation map: issues, elements, retrieval goals, facts, evidence and
//! the links between them, plus per-round audit snapshots.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MapError, SchemaError};

/// Inclusive lower bound on a link's match score.
pub const LINK_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportStatus {
    Unsupported,
    PartiallySupported,
    FullySupported,
}

impl fmt::Display for SupportStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupportStatus::Unsupported => "unsupported",
            SupportStatus::PartiallySupported => "partially_supported",
            SupportStatus::FullySupported => "fully_supported",
        })
    }
}

/// What an element requirement can be satisfied by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementKind {
    Statute,
    Case,
    Fact,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Statute,
    Case,
    Web,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Statute => "statute",
            SourceKind::Case => "case",
            SourceKind::Web => "web",
        }
    }
}

impl RequirementKind {
    fn accepts(self, item: ItemKind) -> bool {
        matches!(
            (self, item),
            (RequirementKind::Any, _)
                | (RequirementKind::Statute, ItemKind::Evidence(SourceKind::Statute))
                | (RequirementKind::Case, ItemKind::Evidence(SourceKind::Case))
                | (RequirementKind::Fact, ItemKind::Fact)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ItemKind {
    Evidence(SourceKind),
    Fact,
}

// ---------------------------------------------------------------------------
// Schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueSpec {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementSpec {
    pub kind: RequirementKind,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub id: String,
    pub issue_id: String,
    pub label: String,
    pub keywords: Vec<String>,
    pub missing_evidence: Vec<String>,
    pub requirements: Vec<RequirementSpec>,
}

/// Fixed legal-element initialization for one case type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSchema {
    pub issues: Vec<IssueSpec>,
    pub elements: Vec<ElementSpec>,
}

impl ElementSchema {
    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.issues.is_empty() {
            return Err(SchemaError::NoIssues);
        }
        let mut issue_ids = BTreeSet::new();
        for issue in &self.issues {
            if !issue_ids.insert(issue.id.as_str()) {
                return Err(SchemaError::DuplicateId(issue.id.clone()));
            }
        }
        let mut element_ids = BTreeSet::new();
        for el in &self.elements {
            if !element_ids.insert(el.id.as_str()) || issue_ids.contains(el.id.as_str()) {
                return Err(SchemaError::DuplicateId(el.id.clone()));
            }
            if !issue_ids.contains(el.issue_id.as_str()) {
                return Err(SchemaError::DanglingIssue {
                    element: el.id.clone(),
                    issue: el.issue_id.clone(),
                });
            }
            if el.keywords.iter().all(|k| k.trim().is_empty()) {
                return Err(SchemaError::EmptyKeywords(el.id.clone()));
            }
            if el.missing_evidence.is_empty() || el.missing_evidence.len() > 3 {
                return Err(SchemaError::MissingEvidenceCount {
                    element: el.id.clone(),
                    count: el.missing_evidence.len(),
                });
            }
            if el.requirements.is_empty() {
                return Err(SchemaError::NoRequirements(el.id.clone()));
            }
            if el
                .requirements
                .iter()
                .any(|r| r.keywords.iter().all(|k| k.trim().is_empty()))
            {
                return Err(SchemaError::EmptyKeywords(el.id.clone()));
            }
        }
        for issue in &self.issues {
            if !self.elements.iter().any(|e| e.issue_id == issue.id) {
                return Err(SchemaError::IssueWithoutElements(issue.id.clone()));
            }
        }
        Ok(())
    }

    pub fn element(&self, id: &str) -> Option<&ElementSpec> {
        self.elements.iter().find(|e| e.id == id)
    }
}

// ---------------------------------------------------------------------------
// Nodes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueNode {
    pub id: String,
    pub label: String,
    pub element_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRequirement {
    pub kind: RequirementKind,
    pub keywords: Vec<String>,
    pub satisfied_by: Vec<String>,
}

impl EvidenceRequirement {
    pub fn is_satisfied(&self) -> bool {
        !self.satisfied_by.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementNode {
    pub id: String,
    pub issue_id: String,
    pub label: String,
    pub keywords: Vec<String>,
    pub requirements: Vec<EvidenceRequirement>,
    pub missing_evidence: Vec<String>,
    pub support_status: SupportStatus,
}

impl ElementNode {
    /// Status implied by the requirements' satisfaction sets.
    pub fn derived_status(&self) -> SupportStatus {
        let satisfied = self.requirements.iter().filter(|r| r.is_satisfied()).count();
        if satisfied == 0 {
            SupportStatus::Unsupported
        } else if satisfied == self.requirements.len() {
            SupportStatus::FullySupported
        } else {
            SupportStatus::PartiallySupported
        }
    }

    pub fn unsatisfied_count(&self) -> usize {
        self.requirements.iter().filter(|r| !r.is_satisfied()).count()
    }

    pub fn first_unsatisfied(&self) -> Option<&EvidenceRequirement> {
        self.requirements.iter().find(|r| !r.is_satisfied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalGoalNode {
    pub id: String,
    pub element_id: String,
    pub description: String,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactNode {
    pub id: String,
    pub text: String,
    pub source_turn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceNode {
    pub id: String,
    pub doc_id: String,
    pub source_kind: SourceKind,
    pub text: String,
    pub retrieval_round: usize,
    pub relevance_score: f64,
}

/// An item offered to [`ConsultationMap::add_evidence`]; the map assigns ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceCandidate {
    pub doc_id: String,
    pub source_kind: SourceKind,
    pub text: String,
    pub relevance_score: f64,
}

/// A fact- or evidence-to-element link. `evidence_id` may name a fact node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub evidence_id: String,
    pub element_id: String,
    pub score: f64,
}

/// Result of an `add_evidence` call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AddedEvidence {
    pub ids: Vec<String>,
    pub duplicates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementStatusEntry {
    pub element_id: String,
    pub status: SupportStatus,
}

/// Immutable per-round view of the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub round: usize,
    pub statuses: Vec<ElementStatusEntry>,
    pub pending_goals: Vec<String>,
    pub evidence_added: Vec<String>,
}

impl AuditRecord {
    /// Element coverage recomputed from the recorded statuses.
    pub fn element_coverage(&self) -> Option<f64> {
        if self.statuses.is_empty() {
            return None;
        }
        let full = self
            .statuses
            .iter()
            .filter(|s| s.status == SupportStatus::FullySupported)
            .count();
        Some(full as f64 / self.statuses.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Map

/// The consultation state. Field names are the serialized contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultationMap {
    pub issues: Vec<IssueNode>,
    pub elements: Vec<ElementNode>,
    pub retrieval_goals: Vec<RetrievalGoalNode>,
    pub facts: Vec<FactNode>,
    pub evidence: Vec<EvidenceNode>,
    pub links: Vec<Link>,
    pub round: usize,
}

impl ConsultationMap {
    pub fn init_from_schema(schema: &ElementSchema) -> Result<Self, SchemaError> {
        schema.validate()?;
        let issues = schema
            .issues
            .iter()
            .map(|i| IssueNode {
                id: i.id.clone(),
                label: i.label.clone(),
                element_ids: schema
                    .elements
                    .iter()
                    .filter(|e| e.issue_id == i.id)
                    .map(|e| e.id.clone())
                    .collect(),
            })
            .collect();
        let elements = schema
            .elements
            .iter()
            .map(|e| ElementNode {
                id: e.id.clone(),
                issue_id: e.issue_id.clone(),
                label: e.label.clone(),
                keywords: e.keywords.clone(),
                requirements: e
                    .requirements
                    .iter()
                    .map(|r| EvidenceRequirement {
                        kind: r.kind,
                        keywords: r.keywords.clone(),
                        satisfied_by: Vec::new(),
                    })
                    .collect(),
                missing_evidence: e.missing_evidence.clone(),
                support_status: SupportStatus::Unsupported,
            })
            .collect();
        let retrieval_goals = schema
            .elements
            .iter()
            .map(|e| RetrievalGoalNode {
                id: format!("goal:{}", e.id),
                element_id: e.id.clone(),
                description: e.missing_evidence.join("; "),
                resolved: false,
            })
            .collect();
        Ok(ConsultationMap {
            issues,
            elements,
            retrieval_goals,
            facts: Vec::new(),
            evidence: Vec::new(),
            links: Vec::new(),
            round: 0,
        })
    }

    pub fn element(&self, id: &str) -> Option<&ElementNode> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn evidence_node(&self, id: &str) -> Option<&EvidenceNode> {
        self.evidence.iter().find(|e| e.id == id)
    }

    pub fn has_doc(&self, doc_id: &str) -> bool {
        self.evidence.iter().any(|e| e.doc_id == doc_id)
    }

    pub fn retrieved_doc_ids(&self) -> BTreeSet<String> {
        self.evidence.iter().map(|e| e.doc_id.clone()).collect()
    }

    /// Marks a round as started. Rounds only move forward one at a time.
    pub fn begin_round(&mut self, round: usize) -> Result<(), MapError> {
        if round != self.round + 1 {
            return Err(MapError::RoundOutOfOrder {
                current: self.round,
                requested: round,
            });
        }
        self.round = round;
        Ok(())
    }

    /// Appends evidence for `round`, dropping documents already in the map
    /// (or repeated within `items`). Returns the new ids in input order.
    pub fn add_evidence(
        &mut self,
        items: Vec<EvidenceCandidate>,
        round: usize,
    ) -> Result<AddedEvidence, MapError> {
        if round == 0 || (round != self.round && round != self.round + 1) {
            return Err(MapError::RoundOutOfOrder {
                current: self.round,
                requested: round,
            });
        }
        let mut added = AddedEvidence::default();
        if items.is_empty() {
            return Ok(added);
        }
        self.round = round;
        for item in items {
            if self.has_doc(&item.doc_id) {
                added.duplicates.push(item.doc_id);
                continue;
            }
            let id = format!("ev{}", self.evidence.len() + 1);
            self.evidence.push(EvidenceNode {
                id: id.clone(),
                doc_id: item.doc_id,
                source_kind: item.source_kind,
                text: item.text,
                retrieval_round: round,
                relevance_score: item.relevance_score.clamp(0.0, 1.0),
            });
            added.ids.push(id);
        }
        Ok(added)
    }

    /// Appends a user fact observed at `turn`.
    pub fn add_fact(&mut self, text: impl Into<String>, turn: usize) -> String {
        let id = format!("fact{}", self.facts.len() + 1);
        self.facts.push(FactNode {
            id: id.clone(),
            text: text.into(),
            source_turn: turn,
        });
        id
    }

    fn item_kind_and_text(&self, id: &str) -> Option<(ItemKind, &str)> {
        if let Some(ev) = self.evidence_node(id) {
            return Some((ItemKind::Evidence(ev.source_kind), ev.text.as_str()));
        }
        self.facts
            .iter()
            .find(|f| f.id == id)
            .map(|f| (ItemKind::Fact, f.text.as_str()))
    }

    /// Records a link and credits every requirement of the element whose kind
    /// accepts the item and whose keywords match its text.
    pub fn link_evidence(
        &mut self,
        evidence_id: &str,
        element_id: &str,
        score: f64,
    ) -> Result<Link, MapError> {
        if score.is_nan() || score < LINK_THRESHOLD {
            return Err(MapError::RejectedLink {
                evidence_id: evidence_id.to_string(),
                element_id: element_id.to_string(),
                score,
            });
        }
        let (kind, text) = self
            .item_kind_and_text(evidence_id)
            .map(|(k, t)| (k, t.to_string()))
            .ok_or_else(|| MapError::UnknownNode(evidence_id.to_string()))?;
        let element_idx = self
            .elements
            .iter()
            .position(|e| e.id == element_id)
            .ok_or_else(|| MapError::UnknownNode(element_id.to_string()))?;

        let link = Link {
            evidence_id: evidence_id.to_string(),
            element_id: element_id.to_string(),
            score: score.min(1.0),
        };
        if self
            .links
            .iter()
            .any(|l| l.evidence_id == evidence_id && l.element_id == element_id)
        {
            return Ok(link);
        }
        self.links.push(link.clone());

        let element = &mut self.elements[element_idx];
        for req in &mut element.requirements {
            if req.kind.accepts(kind)
                && crate::text::keyword_score(&text, &req.keywords).value() >= LINK_THRESHOLD
                && !req.satisfied_by.iter().any(|s| s == evidence_id)
            {
                req.satisfied_by.push(evidence_id.to_string());
            }
        }
        Ok(link)
    }

    pub fn is_linked(&self, evidence_id: &str, element_id: &str) -> bool {
        self.links
            .iter()
            .any(|l| l.evidence_id == evidence_id && l.element_id == element_id)
    }

    /// Recomputes the element's status from its requirements and resolves its
    /// goal once it leaves `unsupported`.
    pub fn update_support_status(&mut self, element_id: &str) -> Result<SupportStatus, MapError> {
        let element = self
            .elements
            .iter_mut()
            .find(|e| e.id == element_id)
            .ok_or_else(|| MapError::UnknownNode(element_id.to_string()))?;
        let status = element.derived_status();
        element.support_status = status;
        let resolved = status != SupportStatus::Unsupported;
        for goal in self
            .retrieval_goals
            .iter_mut()
            .filter(|g| g.element_id == element_id)
        {
            goal.resolved = resolved;
        }
        Ok(status)
    }

    /// Elements not yet fully supported, in schema order.
    pub fn unresolved_elements(&self) -> Vec<&ElementNode> {
        self.elements
            .iter()
            .filter(|e| e.support_status != SupportStatus::FullySupported)
            .collect()
    }

    pub fn audit_snapshot(&self, evidence_added: &[String]) -> AuditRecord {
        AuditRecord {
            round: self.round,
            statuses: self
                .elements
                .iter()
                .map(|e| ElementStatusEntry {
                    element_id: e.id.clone(),
                    status: e.support_status,
                })
                .collect(),
            pending_goals: self
                .retrieval_goals
                .iter()
                .filter(|g| !g.resolved)
                .map(|g| g.id.clone())
                .collect(),
            evidence_added: evidence_added.to_vec(),
        }
    }

    /// Checks referential integrity and status consistency.
    pub fn check_integrity(&self) -> Result<(), MapError> {
        let known = |id: &str| {
            self.evidence.iter().any(|e| e.id == id) || self.facts.iter().any(|f| f.id == id)
        };
        for link in &self.links {
            if !known(&link.evidence_id) || self.element(&link.element_id).is_none() {
                return Err(MapError::Integrity(format!(
                    "link {} -> {} references a missing node",
                    link.evidence_id, link.element_id
                )));
            }
            if link.score < LINK_THRESHOLD {
                return Err(MapError::Integrity(format!(
                    "link {} -> {} below threshold",
                    link.evidence_id, link.element_id
                )));
            }
        }
        for el in &self.elements {
            if el.support_status != el.derived_status() {
                return Err(MapError::Integrity(format!("stale status on {}", el.id)));
            }
            for req in &el.requirements {
                if let Some(bad) = req.satisfied_by.iter().find(|id| !known(id)) {
                    return Err(MapError::Integrity(format!(
                        "requirement of {} satisfied by missing node {bad}",
                        el.id
                    )));
                }
            }
        }
        for ev in &self.evidence {
            if ev.retrieval_round > self.round || ev.retrieval_round == 0 {
                return Err(MapError::Integrity(format!(
                    "evidence {} has round {} (map round {})",
                    ev.id, ev.retrieval_round, self.round
                )));
            }
        }
        Ok(())
    }
}
