//! Case templates, the canonical 50-case pilot and seeded synthetic pilots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DataError;
use crate::map::ElementSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseType {
    WrongfulDismissal,
    WageArrears,
    WorkInjury,
    ContractBreach,
    NonCompete,
    Overtime,
    SocialInsurance,
    YearEndBonus,
}

impl CaseType {
    pub const ALL: [CaseType; 8] = [
        CaseType::WrongfulDismissal,
        CaseType::WageArrears,
        CaseType::WorkInjury,
        CaseType::ContractBreach,
        CaseType::NonCompete,
        CaseType::Overtime,
        CaseType::SocialInsurance,
        CaseType::YearEndBonus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseType::WrongfulDismissal => "wrongful_dismissal",
            CaseType::WageArrears => "wage_arrears",
            CaseType::WorkInjury => "work_injury",
            CaseType::ContractBreach => "contract_breach",
            CaseType::NonCompete => "non_compete",
            CaseType::Overtime => "overtime",
            CaseType::SocialInsurance => "social_insurance",
            CaseType::YearEndBonus => "year_end_bonus",
        }
    }
}

impl fmt::Display for CaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CaseType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown case type {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTemplate {
    pub case_type: CaseType,
    pub schema: ElementSchema,
    pub key_statutes: Vec<String>,
    pub query_variants: Vec<String>,
    pub clarification_pool: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TemplateFile {
    templates: Vec<CaseTemplate>,
}

/// All eight templates, one per case type.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: BTreeMap<CaseType, CaseTemplate>,
}

pub const REFERENCE_TEMPLATES: &str = include_str!("../data/templates.json");
pub const CANONICAL_PILOT: &str = include_str!("../data/pilot_canonical.json");
pub const CHECKSUM_LOCK: &str = include_str!("../data/checksums.lock");

impl TemplateSet {
    pub fn from_json(json: &str) -> Result<Self, DataError> {
        let file: TemplateFile = serde_json::from_str(json).map_err(|source| DataError::Parse {
            what: "templates".into(),
            source,
        })?;
        let mut templates = BTreeMap::new();
        for t in file.templates {
            t.schema.validate()?;
            if t.query_variants.is_empty() || t.clarification_pool.is_empty() {
                return Err(DataError::Invalid {
                    id: t.case_type.to_string(),
                    reason: "template needs query variants and clarifications".into(),
                });
            }
            if templates.insert(t.case_type, t).is_some() {
                return Err(DataError::DuplicateId("template".into()));
            }
        }
        if let Some(missing) = CaseType::ALL.iter().find(|t| !templates.contains_key(t)) {
            return Err(DataError::Invalid {
                id: missing.to_string(),
                reason: "no template for case type".into(),
            });
        }
        Ok(TemplateSet { templates })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        TemplateSet::from_json(&read(path)?)
    }

    pub fn reference() -> Self {
        TemplateSet::from_json(REFERENCE_TEMPLATES).expect("shipped templates are valid")
    }

    pub fn get(&self, case_type: CaseType) -> &CaseTemplate {
        &self.templates[&case_type]
    }

    pub fn schema(&self, case_type: CaseType) -> &ElementSchema {
        &self.get(case_type).schema
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    pub case_type: CaseType,
    pub user_query: String,
    pub ground_truth_elements: Vec<String>,
    pub key_statutes: Vec<String>,
    pub clarifications: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotManifest {
    pub name: String,
    pub seed: Option<u64>,
    pub composition: BTreeMap<CaseType, usize>,
    pub cases: Vec<Case>,
}

impl PilotManifest {
    pub fn new(name: impl Into<String>, seed: Option<u64>, cases: Vec<Case>) -> Self {
        let mut composition = BTreeMap::new();
        for c in &cases {
            *composition.entry(c.case_type).or_insert(0) += 1;
        }
        PilotManifest {
            name: name.into(),
            seed,
            composition,
            cases,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self, DataError> {
        let m: PilotManifest = serde_json::from_str(json).map_err(|source| DataError::Parse {
            what: "manifest".into(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        PilotManifest::from_json(&read(path)?)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let total: usize = self.composition.values().sum();
        if total != self.cases.len() {
            return Err(DataError::Invalid {
                id: self.name.clone(),
                reason: format!("composition sums to {total}, {} cases", self.cases.len()),
            });
        }
        let mut ids = BTreeSet::new();
        for c in &self.cases {
            if !ids.insert(c.id.as_str()) {
                return Err(DataError::DuplicateId(c.id.clone()));
            }
            if c.clarifications.is_empty() || c.clarifications.len() > 3 {
                return Err(DataError::Invalid {
                    id: c.id.clone(),
                    reason: "expected 1-3 clarification turns".into(),
                });
            }
        }
        Ok(())
    }

    /// Checks that each case's ground truth matches its template schema.
    pub fn check_against(&self, templates: &TemplateSet) -> Result<(), DataError> {
        for c in &self.cases {
            let ids: Vec<&str> = templates
                .schema(c.case_type)
                .elements
                .iter()
                .map(|e| e.id.as_str())
                .collect();
            if c.ground_truth_elements.iter().map(String::as_str).ne(ids.iter().copied()) {
                return Err(DataError::Invalid {
                    id: c.id.clone(),
                    reason: "ground-truth elements differ from template schema".into(),
                });
            }
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Expected digest of a shipped data file, from the lockfile.
pub fn locked_checksum(file_name: &str) -> Option<&'static str> {
    CHECKSUM_LOCK.lines().find_map(|line| {
        let mut parts = line.split_whitespace();
        let digest = parts.next()?;
        (parts.next()? == file_name).then_some(digest)
    })
}

fn verify(what: &str, bytes: &str) -> Result<(), DataError> {
    let found = sha256_hex(bytes.as_bytes());
    let expected = locked_checksum(what).unwrap_or("<missing>");
    if expected != found {
        return Err(DataError::Checksum {
            what: what.into(),
            expected: expected.into(),
            found,
        });
    }
    Ok(())
}

/// Verifies every shipped data file against the lockfile.
pub fn verify_shipped_data() -> Result<(), DataError> {
    verify("corpus.json", crate::corpus::REFERENCE_CORPUS)?;
    verify("synonyms.json", crate::corpus::REFERENCE_SYNONYMS)?;
    verify("templates.json", REFERENCE_TEMPLATES)?;
    verify("pilot_canonical.json", CANONICAL_PILOT)
}

/// The checked-in 50-case pilot.
pub fn canonical_pilot() -> Result<PilotManifest, DataError> {
    canonical_pilot_from(CANONICAL_PILOT)
}

pub fn canonical_pilot_from(json: &str) -> Result<PilotManifest, DataError> {
    verify("pilot_canonical.json", json)?;
    PilotManifest::from_json(json)
}

/// Seeded pilot: uniform over the eight templates, uniform query variant,
/// 1-3 distinct clarification turns.
pub fn generate_pilot(
    templates: &TemplateSet,
    seed: u64,
    n_cases: usize,
) -> Result<PilotManifest, DataError> {
    if n_cases == 0 {
        return Err(DataError::Invalid {
            id: "generate".into(),
            reason: "n_cases must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = (1..=n_cases)
        .map(|i| {
            let case_type = CaseType::ALL[rng.gen_range(0..CaseType::ALL.len())];
            let t = templates.get(case_type);
            let user_query = t.query_variants[rng.gen_range(0..t.query_variants.len())].clone();
            let max_turns = t.clarification_pool.len().min(3);
            let turns = rng.gen_range(1..=max_turns);
            let clarifications = t
                .clarification_pool
                .choose_multiple(&mut rng, turns)
                .cloned()
                .collect();
            Case {
                id: format!("s{seed}-{i:03}"),
                case_type,
                user_query,
                ground_truth_elements: t.schema.elements.iter().map(|e| e.id.clone()).collect(),
                key_statutes: t.key_statutes.clone(),
                clarifications,
            }
        })
        .collect();
    Ok(PilotManifest::new(
        format!("seed-{seed}-n{n_cases}"),
        Some(seed),
        cases,
    ))
}

/// Cases whose per-case EC is below 1.0, sorted by (case type, id).
pub fn hard_case_subset(
    manifest: &PilotManifest,
    ec_by_case: &BTreeMap<String, f64>,
) -> Result<PilotManifest, DataError> {
    let mut hard = Vec::new();
    for c in &manifest.cases {
        let ec = ec_by_case.get(&c.id).ok_or_else(|| DataError::Invalid {
            id: c.id.clone(),
            reason: "no trace for case".into(),
        })?;
        if *ec < 1.0 {
            hard.push(c.clone());
        }
    }
    hard.sort_by(|a, b| (a.case_type, &a.id).cmp(&(b.case_type, &b.id)));
    Ok(PilotManifest::new(
        format!("{}-hard", manifest.name),
        manifest.seed,
        hard,
    ))
}

/// Round-robin over case types (fixed type order), ids ascending within type.
pub fn stratified_subset(manifest: &PilotManifest, k: usize) -> Result<PilotManifest, DataError> {
    if k == 0 || k > manifest.cases.len() {
        return Err(DataError::Invalid {
            id: manifest.name.clone(),
            reason: format!("subset size {k} outside 1..={}", manifest.cases.len()),
        });
    }
    let mut buckets: BTreeMap<CaseType, Vec<&Case>> = BTreeMap::new();
    for c in &manifest.cases {
        buckets.entry(c.case_type).or_default().push(c);
    }
    for bucket in buckets.values_mut() {
        bucket.sort_by(|a, b| a.id.cmp(&b.id));
    }
    let mut picked = Vec::with_capacity(k);
    let mut depth = 0;
    while picked.len() < k {
        for bucket in buckets.values() {
            if let Some(c) = bucket.get(depth) {
                picked.push((*c).clone());
                if picked.len() == k {
                    break;
                }
            }
        }
        depth += 1;
    }
    Ok(PilotManifest::new(
        format!("{}-strat{k}", manifest.name),
        manifest.seed,
        picked,
    ))
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_composition() {
        let pilot = canonical_pilot().unwrap();
        assert_eq!(pilot.cases.len(), 50);
        assert_eq!(pilot.composition.values().sum::<usize>(), 50);
        let count = |t| pilot.composition.get(&t).copied().unwrap_or(0);
        assert_eq!(count(CaseType::ContractBreach), 11);
        assert_eq!(count(CaseType::WorkInjury), 10);
        assert_eq!(count(CaseType::WageArrears), 10);
        assert_eq!(count(CaseType::SocialInsurance), 8);
        assert_eq!(count(CaseType::WrongfulDismissal), 5);
        assert_eq!(count(CaseType::YearEndBonus), 3);
        assert_eq!(count(CaseType::NonCompete), 3);
        assert_eq!(count(CaseType::Overtime), 0);
        pilot.check_against(&TemplateSet::reference()).unwrap();
    }

    #[test]
    fn canonical_checksum_stable() {
        let a = canonical_pilot().unwrap();
        let b = canonical_pilot().unwrap();
        assert_eq!(a.checksum(), b.checksum());
        verify_shipped_data().unwrap();
    }

    #[test]
    fn corrupt_manifest_fails_integrity() {
        let tampered = CANONICAL_PILOT.replacen("case-001", "case-901", 1);
        assert!(matches!(
            canonical_pilot_from(&tampered),
            Err(DataError::Checksum { .. })
        ));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let t = TemplateSet::reference();
        let a = generate_pilot(&t, 42, 30).unwrap();
        let b = generate_pilot(&t, 42, 30).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_pilot(&t, 7, 30).unwrap();
        assert_ne!(a.to_json(), c.to_json());
        a.check_against(&t).unwrap();
        a.validate().unwrap();
    }

    #[test]
    fn single_case_and_zero_cases() {
        let t = TemplateSet::reference();
        let one = generate_pilot(&t, 1, 1).unwrap();
        assert_eq!(one.cases.len(), 1);
        one.validate().unwrap();
        assert!(generate_pilot(&t, 1, 0).is_err());
    }

    #[test]
    fn stratified_round_robin() {
        let pilot = canonical_pilot().unwrap();
        let s7 = stratified_subset(&pilot, 7).unwrap();
        assert_eq!(s7.composition.len(), 7);
        assert!(s7.composition.values().all(|&n| n == 1));
        let s20 = stratified_subset(&pilot, 20).unwrap();
        assert_eq!(s20.cases.len(), 20);
        assert_eq!(s20.composition.len(), 7);
        let all = stratified_subset(&pilot, 50).unwrap();
        let mut ids: Vec<_> = all.cases.iter().map(|c| c.id.clone()).collect();
        ids.sort();
        let mut orig: Vec<_> = pilot.cases.iter().map(|c| c.id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
        assert!(stratified_subset(&pilot, 0).is_err());
        assert!(stratified_subset(&pilot, 51).is_err());
    }

    #[test]
    fn hard_subset_filters_and_sorts() {
        let pilot = canonical_pilot().unwrap();
        let all_ok: BTreeMap<String, f64> =
            pilot.cases.iter().map(|c| (c.id.clone(), 1.0)).collect();
        assert!(hard_case_subset(&pilot, &all_ok).unwrap().cases.is_empty());
        let mut some = all_ok.clone();
        some.insert(pilot.cases[3].id.clone(), 0.5);
        assert_eq!(hard_case_subset(&pilot, &some).unwrap().cases.len(), 1);
        let mut missing = all_ok;
        missing.remove(&pilot.cases[0].id);
        assert!(hard_case_subset(&pilot, &missing).is_err());
    }
}
