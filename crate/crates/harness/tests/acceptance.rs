//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails the
//! test if any criterion failed. Run with `cargo test --test acceptance -- --nocapture`.

use std::cell::RefCell;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use maplaw_core::controller::{run_case, run_with_selector, RunError, RunTrace, StopReason, SystemConfig, SystemKind};
use maplaw_core::dataset::{canonical_pilot, CaseType, PilotManifest};
use maplaw_core::error::SelectorError;
use maplaw_core::map::{ConsultationMap, EvidenceCandidate, RequirementKind, SupportStatus};
use maplaw_core::matching::align_round;
use maplaw_core::policy::{
    oracle_select, rule_select, Action, ElementState, ExternalSelector, RequirementState, ScriptedSelector,
    SelectorDecision, SelectorState, Transport, TransportReply, CONCLUSION_EC,
};
use maplaw_core::text::overlap;
use maplaw_harness::experiments::{
    budget_sweep, diagnose, hard_cases, multi_seed, parse_system, run_systems, threshold_sweep, AggregateRow, Env,
};

type Outcome = Result<(), String>;

const EXACT: f64 = 1e-9;

fn close(what: &str, got: f64, want: f64, tol: f64) -> Outcome {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} ± {tol}"))
    }
}

fn check_row(row: &AggregateRow, ec: f64, evc: f64, rounds: Option<f64>, evidence: f64) -> Outcome {
    close(&format!("{} EC", row.system), row.ec_mean, ec, EXACT)?;
    close(&format!("{} EVC", row.system), row.evc_mean, evc, EXACT)?;
    if let Some(r) = rounds {
        close(&format!("{} rounds", row.system), row.rounds_mean, r, EXACT)?;
    }
    close(&format!("{} evidence", row.system), row.evidence_mean, evidence, EXACT)
}

fn system(name: &str) -> SystemConfig {
    parse_system(name).unwrap()
}

fn main_rows(env: &Env, pilot: &PilotManifest) -> Outcome {
    let names = ["rule", "no-threshold-stop", "no-graph", "fixed-3", "fixed-5", "fixed-7"];
    let systems: Vec<SystemConfig> = names.iter().map(|n| system(n)).collect();
    let runs = run_systems(env, pilot, &systems, 4).map_err(|e| e.to_string())?;
    let rows: Vec<&AggregateRow> = runs.iter().map(|r| &r.row).collect();
    check_row(rows[0], 0.780, 1.0, Some(4.66), 11.64)?;
    let (a, b) = (rows[0], rows[1]);
    if (a.ec_mean, a.evc_mean, a.rounds_mean, a.evidence_mean) != (b.ec_mean, b.evc_mean, b.rounds_mean, b.evidence_mean) {
        return Err(format!("no-threshold-stop row {b:?} differs from rule {a:?}"));
    }
    check_row(rows[2], 0.0, 0.600, Some(3.00), 6.00)?;
    check_row(rows[3], 0.0, 1.0, None, 8.00)?;
    check_row(rows[4], 0.0, 1.0, None, 13.00)?;
    check_row(rows[5], 0.0, 1.0, None, 18.00)
}

fn oracle_row(env: &Env, pilot: &PilotManifest) -> Outcome {
    let runs = run_systems(env, pilot, &[system("oracle")], 4).map_err(|e| e.to_string())?;
    let row = &runs[0].row;
    close("oracle EC", row.ec_mean, 1.0, EXACT)?;
    close("oracle EVC", row.evc_mean, 1.0, EXACT)?;
    close("oracle rounds", row.rounds_mean, 3.36, 0.10)?;
    close("oracle evidence", row.evidence_mean, 7.08, 0.20)
}

fn budget_rows(env: &Env, pilot: &PilotManifest) -> Outcome {
    let hard = hard_cases(env, pilot, &system("rule"), 4).map_err(|e| e.to_string())?;
    if hard.cases.is_empty() {
        return Err("hard-case subset is empty".into());
    }
    let budgets = [1, 2, 3, 5, 7];
    let policies = [system("rule"), system("oracle")];
    let soft = budget_sweep(env, &hard, &policies, &budgets, false, 4).map_err(|e| e.to_string())?;
    for r in &soft {
        let b = r.budget as f64;
        match r.row.system.as_str() {
            "map-rule" => {
                close(&format!("rule EC r={}", r.budget), r.row.ec_mean, 0.0, EXACT)?;
                close(&format!("rule evidence r={}", r.budget), r.row.evidence_mean, 3.0 * b, EXACT)?;
            }
            _ if r.budget == 1 => close("oracle EC r=1", r.row.ec_mean, 0.545, 0.05)?,
            _ => close(&format!("oracle EC r={}", r.budget), r.row.ec_mean, 1.0, EXACT)?,
        }
    }
    let forced = budget_sweep(env, &hard, &[system("oracle")], &budgets, true, 4).map_err(|e| e.to_string())?;
    for r in &forced {
        close(
            &format!("hard-no-stop evidence r={}", r.budget),
            r.row.evidence_mean,
            3.0 * r.budget as f64,
            EXACT,
        )?;
    }
    Ok(())
}

fn threshold_rows(env: &Env, pilot: &PilotManifest) -> Outcome {
    let deltas = [0.0, 0.01, 0.03, 0.05, 0.08];
    let rows = threshold_sweep(env, pilot, &system("rule"), &deltas, 4).map_err(|e| e.to_string())?;
    let first = &rows[0].row;
    close("rule EC", first.ec_mean, 0.780, EXACT)?;
    for r in &rows[1..] {
        if &r.row != first {
            return Err(format!("delta {} gives {:?}, delta 0 gives {:?}", r.delta, r.row, first));
        }
    }
    Ok(())
}

fn diagnostic(env: &Env, pilot: &PilotManifest) -> Outcome {
    let runs = run_systems(env, pilot, &[system("rule"), system("oracle")], 4).map_err(|e| e.to_string())?;
    let traces: Vec<RunTrace> = runs.into_iter().flat_map(|r| r.traces).collect();
    let cells = diagnose(&traces);
    for c in &cells {
        let label = format!("{} {}", c.system, c.case_type);
        let specialized = matches!(c.case_type, CaseType::SocialInsurance | CaseType::NonCompete);
        match (c.system.as_str(), specialized) {
            ("map-rule", false) => {
                close(&format!("{label} EC"), c.ec_mean, 1.0, EXACT)?;
                close(&format!("{label} rounds"), c.rounds_mean, 4.0, EXACT)?;
            }
            ("map-rule", true) => {
                close(&format!("{label} EC"), c.ec_mean, 0.0, EXACT)?;
                close(&format!("{label} rounds"), c.rounds_mean, 7.0, EXACT)?;
            }
            _ => close(&format!("{label} EC"), c.ec_mean, 1.0, EXACT)?,
        }
    }
    let types: std::collections::BTreeSet<CaseType> = cells.iter().map(|c| c.case_type).collect();
    let required = [
        CaseType::WageArrears,
        CaseType::WorkInjury,
        CaseType::WrongfulDismissal,
        CaseType::YearEndBonus,
        CaseType::ContractBreach,
        CaseType::SocialInsurance,
        CaseType::NonCompete,
    ];
    match required.iter().find(|t| !types.contains(t)) {
        Some(t) => Err(format!("no {t} cases in diagnostic")),
        None => Ok(()),
    }
}

fn seeds(env: &Env) -> Outcome {
    let (rows, summaries) =
        multi_seed(env, &[42, 7, 21, 84], 30, &[system("rule"), system("oracle")], 4).map_err(|e| e.to_string())?;
    for r in &rows {
        let label = format!("{} seed {}", r.row.system, r.seed);
        if r.row.system == "map-oracle" {
            close(&format!("{label} EC"), r.row.ec_mean, 1.0, EXACT)?;
            close(&format!("{label} EVC"), r.row.evc_mean, 1.0, EXACT)?;
        } else if r.row.ec_mean >= 1.0 {
            return Err(format!("{label} EC reached 1.000"));
        }
    }
    let rule = summaries.iter().find(|s| s.system == "map-rule").ok_or("no rule summary")?;
    if rule.ec_variance > 0.0 {
        Ok(())
    } else {
        Err("rule EC has zero cross-seed variance".into())
    }
}

fn status_rank(s: SupportStatus) -> u8 {
    match s {
        SupportStatus::Unsupported => 0,
        SupportStatus::PartiallySupported => 1,
        SupportStatus::FullySupported => 2,
    }
}

fn run_consistent(trace: &RunTrace, sys: &SystemConfig) -> Outcome {
    for w in trace.audit.windows(2) {
        if w[0].statuses.iter().zip(&w[1].statuses).any(|(a, b)| status_rank(b.status) < status_rank(a.status)) {
            return Err(format!("{}: element status regressed", trace.case_id));
        }
    }
    let ids: Vec<&String> = trace.rounds.iter().flat_map(|r| &r.evidence_added).collect();
    if ids.len() != trace.map.evidence.len() || ids.iter().zip(&trace.map.evidence).any(|(a, b)| **a != b.id) {
        return Err(format!("{}: evidence is not append-only", trace.case_id));
    }
    if trace.rounds.windows(2).any(|w| w[1].coverage.ec < w[0].coverage.ec) {
        return Err(format!("{}: EC decreased", trace.case_id));
    }
    let n = trace.rounds.len();
    let stop = sys.stop;
    let ok = match trace.stop_reason {
        StopReason::Threshold => trace.final_coverage.ec >= stop.theta_e && trace.final_coverage.evc >= stop.theta_ev,
        StopReason::LowGain => n >= 2 && trace.rounds[n - 2..].iter().all(|r| r.marginal_gain < stop.delta),
        StopReason::Budget => match sys.kind {
            SystemKind::FixedN => Some(n) == sys.n,
            SystemKind::MapNoGraph => n == 3,
            _ => n == stop.r_max,
        },
        StopReason::ConclusionAction => n < stop.r_max,
        StopReason::Error => false,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{} / {}: stop reason {} not backed by state", trace.case_id, sys.name, trace.stop_reason))
    }
}

fn random_state() -> impl Strategy<Value = SelectorState> {
    let req = (
        prop::sample::select(vec![RequirementKind::Statute, RequirementKind::Case, RequirementKind::Fact, RequirementKind::Any]),
        any::<bool>(),
    )
        .prop_map(|(kind, satisfied)| RequirementState { kind, satisfied });
    prop::collection::vec(prop::collection::vec(req, 1..4), 1..6).prop_map(|els| {
        let elements: Vec<ElementState> = els
            .into_iter()
            .enumerate()
            .map(|(i, requirements)| {
                let full = requirements.iter().all(|r| r.satisfied);
                ElementState {
                    id: format!("e{}", i + 1),
                    label: format!("要件{i}"),
                    status: if full { SupportStatus::FullySupported } else { SupportStatus::Unsupported },
                    missing_evidence: vec!["材料".into()],
                    requirements,
                }
            })
            .collect();
        let ec = elements.iter().filter(|e| e.status == SupportStatus::FullySupported).count() as f64
            / elements.len() as f64;
        SelectorState {
            user_query: "咨询".into(),
            round: 0,
            ec,
            evc: 1.0,
            issues: vec![],
            elements,
            evidence: vec![],
            goals: vec![],
        }
    })
}

fn properties(env: &Env, pilot: &PilotManifest) -> Outcome {
    let mut systems: Vec<SystemConfig> = ["rule", "oracle", "no-threshold-stop", "no-graph", "fixed-3", "fixed-7"]
        .iter()
        .map(|n| system(n))
        .collect();
    systems.push(system("oracle").hard_no_stop());
    let rule = system("rule");
    let nts = system("no-threshold-stop");
    for case in &pilot.cases {
        let schema = env.templates.schema(case.case_type);
        for sys in &systems {
            let a = run_case(case, schema, &env.corpus, sys).map_err(|e| e.to_string())?;
            let b = run_case(case, schema, &env.corpus, sys).map_err(|e| e.to_string())?;
            if a.to_json_line() != b.to_json_line() {
                return Err(format!("{} / {}: repeated run differs", case.id, sys.name));
            }
            run_consistent(&a, sys)?;
        }
        let a = run_case(case, schema, &env.corpus, &rule).map_err(|e| e.to_string())?;
        let b = run_case(case, schema, &env.corpus, &nts).map_err(|e| e.to_string())?;
        if !a.same_behaviour(&b) {
            return Err(format!("{}: rule and no-threshold-stop diverge", case.id));
        }
    }

    let mut runner = TestRunner::new(Config::with_cases(128));
    let text = "[a-c 工资拖欠用人单位，]{0,10}";
    runner
        .run(&(text, text), |(a, b)| {
            let (ab, ba) = (overlap(&a, &b).value(), overlap(&b, &a).value());
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            let aa = overlap(&a, &a).value();
            prop_assert!(aa == 0.0 || aa == 1.0);
            Ok(())
        })
        .map_err(|e| format!("overlap: {e}"))?;

    let docs = env.corpus.docs();
    runner
        .run(&(prop::collection::vec(0..docs.len(), 1..6), 0..CaseType::ALL.len()), |(picks, t)| {
            let mut map = ConsultationMap::init_from_schema(env.templates.schema(CaseType::ALL[t])).unwrap();
            let items = picks
                .iter()
                .map(|&i| EvidenceCandidate {
                    doc_id: docs[i].id.clone(),
                    source_kind: docs[i].kind,
                    text: docs[i].text.clone(),
                    relevance_score: 0.5,
                })
                .collect();
            let ids = map.add_evidence(items, 1).unwrap().ids;
            align_round(&mut map, &ids);
            let before = map.clone();
            prop_assert!(align_round(&mut map, &ids).is_empty());
            prop_assert_eq!(before, map);
            Ok(())
        })
        .map_err(|e| format!("align_round: {e}"))?;

    let schema = env.templates.schema(CaseType::SocialInsurance);
    let synonyms = env.corpus.synonyms().clone();
    runner
        .run(&(random_state(), any::<bool>()), |(state, allow)| {
            for d in [rule_select(&state, &[], allow), oracle_select(&state, schema, &synonyms, allow)] {
                prop_assert!(d.validate().is_ok());
                prop_assert!(allow || d.action != Action::GenerateConclusion);
            }
            let d = oracle_select(&state, schema, &synonyms, true);
            prop_assert!(state.ec >= CONCLUSION_EC || d.action != Action::GenerateConclusion);
            Ok(())
        })
        .map_err(|e| format!("selector: {e}"))?;
    Ok(())
}

struct Replay(RefCell<Vec<String>>);

impl Transport for &Replay {
    fn post(&self, _: &str) -> Result<TransportReply, String> {
        let body = self.0.borrow_mut().pop().ok_or("replay exhausted")?;
        Ok(TransportReply { body, tokens: None })
    }
}

fn replay(bodies: &[String]) -> Replay {
    Replay(RefCell::new(bodies.iter().rev().cloned().collect()))
}

fn protocol(env: &Env, pilot: &PilotManifest) -> Outcome {
    let external = system("external");
    let oracle = system("oracle");
    for case in &pilot.cases {
        let schema = env.templates.schema(case.case_type);
        let recorded = run_case(case, schema, &env.corpus, &oracle).map_err(|e| e.to_string())?;
        let mut decisions: Vec<SelectorDecision> = recorded.rounds.iter().map(|r| r.decision.clone()).collect();
        decisions.push(SelectorDecision::conclude("done"));
        let bodies: Vec<String> = decisions.iter().map(|d| serde_json::to_string(d).unwrap()).collect();

        let mut scripted = ScriptedSelector::new(decisions);
        let want = run_with_selector(case, schema, &env.corpus, &external, &mut scripted).map_err(|e| e.to_string())?;
        let stub = replay(&bodies);
        let mut got = run_with_selector(case, schema, &env.corpus, &external, &mut ExternalSelector::new(&stub))
            .map_err(|e| e.to_string())?;
        for r in &mut got.rounds {
            r.latency_s = None;
        }
        if got != want {
            return Err(format!("{}: replayed trace differs from scripted trace", case.id));
        }
    }

    let case = &pilot.cases[0];
    let schema = env.templates.schema(case.case_type);
    let bad = r#"{"action":"retrieve_case","reasoning":"x"}"#.to_string();
    let stub = replay(std::slice::from_ref(&bad));
    match run_with_selector(case, schema, &env.corpus, &external, &mut ExternalSelector::new(&stub)) {
        Err(RunError::Selector {
            trace,
            source: SelectorError::Protocol { raw, .. },
        }) if raw == bad && trace.error.as_deref() == Some(bad.as_str()) => Ok(()),
        other => Err(format!("malformed reply not reported with payload: {other:?}")),
    }
}

#[test]
fn acceptance() {
    let env = Env::reference();
    let pilot = canonical_pilot().unwrap();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("deterministic main rows", main_rows(&env, &pilot)),
        ("oracle selector row", oracle_row(&env, &pilot)),
        ("hard-case budget sweep", budget_rows(&env, &pilot)),
        ("threshold sweep invariance", threshold_rows(&env, &pilot)),
        ("case-type diagnostic", diagnostic(&env, &pilot)),
        ("multi-seed pattern", seeds(&env)),
        ("property suites", properties(&env, &pilot)),
        ("selector protocol conformance", protocol(&env, &pilot)),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in criteria.iter().enumerate() {
        match outcome {
            Ok(()) => println!("PASS {}: {name}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}: {name}: {why}", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
