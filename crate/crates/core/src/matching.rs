//! Evidence-to-element alignment and the three control metrics:
//! element coverage (EC), evidence validity coverage (EVC) and marginal gain (MG).

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::map::{ConsultationMap, ElementNode, Link, SupportStatus, LINK_THRESHOLD};
use crate::text::{keyword_score, OverlapScore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSnapshot {
    pub ec: f64,
    pub evc: f64,
    pub round: usize,
}

/// Score of an item's text against an element's keywords.
pub fn match_score(text: &str, element: &ElementNode) -> OverlapScore {
    keyword_score(text, &element.keywords)
}

/// Links each listed item to every element it matches at or above the link
/// threshold, then refreshes the status of every touched element. Ids may name
/// evidence or fact nodes. Re-running on the same ids is a no-op.
pub fn align_round(map: &mut ConsultationMap, item_ids: &[String]) -> Vec<Link> {
    let mut created = Vec::new();
    let mut touched: Vec<String> = Vec::new();
    for id in item_ids {
        let text = match map
            .evidence_node(id)
            .map(|e| e.text.clone())
            .or_else(|| map.facts.iter().find(|f| &f.id == id).map(|f| f.text.clone()))
        {
            Some(t) => t,
            None => continue,
        };
        let scored: Vec<(String, f64)> = map
            .elements
            .iter()
            .map(|el| (el.id.clone(), match_score(&text, el).value()))
            .filter(|(_, s)| *s >= LINK_THRESHOLD)
            .collect();
        for (element_id, score) in scored {
            if map.is_linked(id, &element_id) {
                continue;
            }
            let link = map
                .link_evidence(id, &element_id, score)
                .expect("score filtered against link threshold");
            created.push(link);
            if !touched.contains(&element_id) {
                touched.push(element_id);
            }
        }
    }
    for element_id in &touched {
        map.update_support_status(element_id)
            .expect("touched element exists");
    }
    created
}

/// Fraction of elements that are fully supported.
pub fn element_coverage(map: &ConsultationMap) -> Result<f64, MetricError> {
    if map.elements.is_empty() {
        return Err(MetricError::UndefinedCoverage);
    }
    let covered = map
        .elements
        .iter()
        .filter(|e| e.support_status == SupportStatus::FullySupported)
        .count();
    Ok(covered as f64 / map.elements.len() as f64)
}

/// Fraction of evidence nodes with at least one link; 1.0 when there is no
/// evidence at all.
pub fn evidence_validity_coverage(map: &ConsultationMap) -> f64 {
    if map.evidence.is_empty() {
        return 1.0;
    }
    let linked = map
        .evidence
        .iter()
        .filter(|ev| map.links.iter().any(|l| l.evidence_id == ev.id))
        .count();
    linked as f64 / map.evidence.len() as f64
}

/// Mean, over the round's evidence, of the best match against the elements
/// that were unresolved when the round started.
pub fn marginal_gain(
    map: &ConsultationMap,
    round_evidence_ids: &[String],
    unresolved_before: &[ElementNode],
) -> f64 {
    if unresolved_before.is_empty() {
        return 0.0;
    }
    let scores: Vec<f64> = round_evidence_ids
        .iter()
        .filter_map(|id| map.evidence_node(id))
        .map(|ev| {
            unresolved_before
                .iter()
                .map(|el| match_score(&ev.text, el).value())
                .fold(0.0, f64::max)
        })
        .collect();
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn coverage_snapshot(map: &ConsultationMap) -> Result<CoverageSnapshot, MetricError> {
    Ok(CoverageSnapshot {
        ec: element_coverage(map)?,
        evc: evidence_validity_coverage(map),
        round: map.round,
    })
}
