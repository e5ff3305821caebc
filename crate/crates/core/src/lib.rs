//! Consultation-map core: the structured state, evidence alignment and
//! coverage metrics, corpus retrieval, case data, action selection and the
//! round controller.

pub mod controller;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod map;
pub mod matching;
pub mod policy;
pub mod text;

pub use controller::{run_case, RunTrace, StopConfig, StopReason, SystemConfig, SystemKind};
pub use corpus::Corpus;
pub use dataset::{Case, CaseType, PilotManifest, TemplateSet};
pub use map::ConsultationMap;
