//! Simulated legal corpus and the linear-scan retriever shared by every system.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::CaseType;
use crate::error::DataError;
use crate::map::SourceKind;
use crate::text::{char_bigrams, contains_term, dice, query_terms, OverlapScore, LEGAL_TERM_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub id: String,
    pub kind: SourceKind,
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub tags: BTreeSet<CaseType>,
}

impl CorpusDoc {
    fn searchable(&self) -> String {
        format!("{} {}", self.title, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusFile {
    #[serde(default)]
    manifest_count: Option<usize>,
    docs: Vec<CorpusDoc>,
}

/// Keyword to corpus-aligned variants.
pub type SynonymTable = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc<'a> {
    pub doc: &'a CorpusDoc,
    pub score: OverlapScore,
}

/// Immutable after load. Docs are held sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    docs: Vec<CorpusDoc>,
    /// Bigrams of each doc's title and text, parallel to `docs`.
    bigrams: Vec<BTreeSet<(char, char)>>,
    synonyms: SynonymTable,
}

pub const REFERENCE_CORPUS: &str = include_str!("../data/corpus.json");
pub const REFERENCE_SYNONYMS: &str = include_str!("../data/synonyms.json");

/// Per-action item cap.
pub fn cap(kind: SourceKind) -> usize {
    match kind {
        SourceKind::Statute => 3,
        SourceKind::Case | SourceKind::Web => 2,
    }
}

/// Query-to-document score: bigram overlap against title and text, raised to
/// the legal-term floor when any query term occurs verbatim in the document.
pub fn query_score(query: &str, doc: &CorpusDoc) -> OverlapScore {
    score_against(query, &char_bigrams(query), doc, &char_bigrams(&doc.searchable()))
}

fn score_against(
    query: &str,
    query_bigrams: &BTreeSet<(char, char)>,
    doc: &CorpusDoc,
    doc_bigrams: &BTreeSet<(char, char)>,
) -> OverlapScore {
    let body = doc.searchable();
    let base = dice(query_bigrams, doc_bigrams);
    if query_terms(query).iter().any(|t| contains_term(&body, t)) {
        OverlapScore::new(base.value().max(LEGAL_TERM_FLOOR))
    } else {
        base
    }
}

impl Corpus {
    pub fn new(docs: Vec<CorpusDoc>, synonyms: SynonymTable) -> Result<Self, DataError> {
        let mut docs = docs;
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in docs.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(DataError::DuplicateId(pair[0].id.clone()));
            }
        }
        if let Some(doc) = docs.iter().find(|d| d.text.trim().is_empty()) {
            return Err(DataError::Invalid {
                id: doc.id.clone(),
                reason: "empty text".into(),
            });
        }
        let bigrams = docs.iter().map(|d| char_bigrams(&d.searchable())).collect();
        Ok(Corpus {
            docs,
            bigrams,
            synonyms,
        })
    }

    pub fn from_json(corpus: &str, synonyms: &str) -> Result<Self, DataError> {
        let file: CorpusFile = serde_json::from_str(corpus).map_err(|source| DataError::Parse {
            what: "corpus".into(),
            source,
        })?;
        let synonyms: SynonymTable =
            serde_json::from_str(synonyms).map_err(|source| DataError::Parse {
                what: "synonym table".into(),
                source,
            })?;
        if let Some(expected) = file.manifest_count {
            if expected != file.docs.len() {
                return Err(DataError::Invalid {
                    id: "corpus".into(),
                    reason: format!(
                        "manifest_count {expected} but {} docs present",
                        file.docs.len()
                    ),
                });
            }
        }
        Corpus::new(file.docs, synonyms)
    }

    /// Loads `path` and its sibling `synonyms.json` (empty table if absent).
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let corpus = read(path)?;
        let syn_path = path.with_file_name("synonyms.json");
        let synonyms = if syn_path.exists() {
            read(&syn_path)?
        } else {
            "{}".to_string()
        };
        Corpus::from_json(&corpus, &synonyms)
    }

    pub fn reference() -> Self {
        Corpus::from_json(REFERENCE_CORPUS, REFERENCE_SYNONYMS)
            .expect("shipped reference corpus is valid")
    }

    pub fn docs(&self) -> &[CorpusDoc] {
        &self.docs
    }

    pub fn doc(&self, id: &str) -> Option<&CorpusDoc> {
        self.docs
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.docs[i])
    }

    pub fn synonyms(&self) -> &SynonymTable {
        &self.synonyms
    }

    /// Ranked docs of `kind` with a positive score, truncated to the kind's cap.
    pub fn retrieve(&self, query: &str, kind: SourceKind) -> Vec<ScoredDoc<'_>> {
        self.retrieve_excluding(query, kind, &BTreeSet::new())
    }

    /// As [`Corpus::retrieve`], skipping documents whose id is in `exclude`.
    pub fn retrieve_excluding(
        &self,
        query: &str,
        kind: SourceKind,
        exclude: &BTreeSet<String>,
    ) -> Vec<ScoredDoc<'_>> {
        self.ranked(query, kind, exclude)
            .into_iter()
            .take(cap(kind))
            .collect()
    }

    /// Full ranking without the cap; ties broken by ascending id.
    pub fn ranked(
        &self,
        query: &str,
        kind: SourceKind,
        exclude: &BTreeSet<String>,
    ) -> Vec<ScoredDoc<'_>> {
        if query.trim().is_empty() {
            return Vec::new();
        }
        let query_bigrams = char_bigrams(query);
        let mut hits: Vec<ScoredDoc<'_>> = self
            .docs
            .iter()
            .zip(&self.bigrams)
            .filter(|(d, _)| d.kind == kind && !exclude.contains(&d.id))
            .map(|(doc, doc_bigrams)| ScoredDoc {
                doc,
                score: score_against(query, &query_bigrams, doc, doc_bigrams),
            })
            .filter(|s| s.score.value() > 0.0)
            .collect();
        // docs are id-sorted and the sort is stable
        hits.sort_by(|a, b| b.score.value().total_cmp(&a.score.value()));
        hits
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
