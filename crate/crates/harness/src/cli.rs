//! Command-line verbs. Exit codes: 0 success, 1 runtime or selector failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use maplaw_core::controller::{read_jsonl, write_jsonl, RunTrace, SystemConfig};
use maplaw_core::corpus::Corpus;
use maplaw_core::dataset::{
    canonical_pilot, generate_pilot, stratified_subset, PilotManifest, TemplateSet, CANONICAL_PILOT,
};

use crate::error::HarnessError;
use crate::experiments::{
    budget_sweep, diagnose, hard_cases, multi_seed, parse_system, parse_systems, run_systems,
    threshold_sweep, Env,
};
use crate::render::{
    aggregate_table, budget_table, diagnostic_table, seed_summary_table, seed_table, threshold_table,
    Table,
};

const DEFAULT_SYSTEMS: &str = "rule,oracle,no-threshold-stop,no-graph,fixed-3,fixed-5,fixed-7";
const DEFAULT_DELTAS: &str = "0,0.01,0.03,0.05,0.08";
const DEFAULT_BUDGETS: &str = "1,2,3,5,7";
const DEFAULT_SEEDS: &str = "42,7,21,84";

#[derive(Debug, Parser)]
#[command(name = "maplaw", version, about = "Coverage-driven legal consultation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Inputs {
    /// Pilot manifest (defaults to the shipped 50-case pilot).
    #[arg(long)]
    pilot: Option<PathBuf>,
    /// Corpus file; a sibling synonyms.json is loaded when present.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Template file (defaults to the shipped templates).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Cases run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory for tables and traces.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit the canonical pilot or a seeded synthetic pilot.
    Generate {
        #[arg(long)]
        canonical: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        templates: Option<PathBuf>,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run systems over a pilot and print the aggregate table.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = DEFAULT_SYSTEMS)]
        systems: String,
        /// Run only the map controller with this selector (oracle, rule or external).
        #[arg(long)]
        selector: Option<String>,
    },
    /// Re-run one policy across marginal-gain thresholds.
    SweepThreshold {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = DEFAULT_DELTAS)]
        deltas: String,
        #[arg(long, default_value = "rule")]
        selector: String,
    },
    /// Re-run policies across round budgets.
    SweepBudget {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = DEFAULT_BUDGETS)]
        budgets: String,
        #[arg(long, default_value = "rule,oracle")]
        systems: String,
        /// Forbid conclusions and disable stop checks so only the budget ends a run.
        #[arg(long)]
        no_stop: bool,
        /// Case subset: hard (rule-policy failures), all, or strat:K.
        #[arg(long, default_value = "hard")]
        subset: String,
    },
    /// Write the cases the rule policy leaves below full coverage.
    HardCases {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "rule")]
        selector: String,
    },
    /// Run systems over independently seeded pilots.
    MultiSeed {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = DEFAULT_SEEDS)]
        seeds: String,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value = "rule,oracle")]
        systems: String,
    },
    /// Per case-type EC and rounds, from traces or fresh runs.
    Diagnose {
        #[command(flatten)]
        inputs: Inputs,
        /// JSON-lines trace file(s), comma separated.
        #[arg(long)]
        traces: Option<String>,
        #[arg(long, default_value = "rule,oracle")]
        systems: String,
    },
    /// Run every experiment with default settings and write all outputs.
    Report {
        #[command(flatten)]
        inputs: Inputs,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, list: &str) -> Result<Vec<T>, HarnessError> {
    let items = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| HarnessError::Usage(format!("bad {what} value {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err(HarnessError::Usage(format!("empty {what} list")));
    }
    Ok(items)
}

fn load_env(inputs: &Inputs) -> Result<Env, HarnessError> {
    let templates = match &inputs.templates {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::reference(),
    };
    let corpus = match &inputs.corpus {
        Some(p) => Corpus::load(p)?,
        None => Corpus::reference(),
    };
    Ok(Env { templates, corpus })
}

fn load_pilot(inputs: &Inputs, env: &Env) -> Result<PilotManifest, HarnessError> {
    let pilot = match &inputs.pilot {
        Some(p) => PilotManifest::load(p)?,
        None => canonical_pilot()?,
    };
    pilot.check_against(&env.templates)?;
    Ok(pilot)
}

fn check_jobs(inputs: &Inputs) -> Result<(), HarnessError> {
    if inputs.jobs == 0 {
        return Err(HarnessError::Usage("--jobs must be at least 1".into()));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn emit(out: Option<&Path>, stem: &str, table: &Table) -> Result<(), HarnessError> {
    print!("{}", table.to_text());
    if let Some(dir) = out {
        write_file(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
        write_file(&dir.join(format!("{stem}.txt")), &table.to_text())?;
    }
    Ok(())
}

fn write_traces(out: Option<&Path>, system: &str, traces: &[RunTrace]) -> Result<(), HarnessError> {
    let Some(dir) = out else {
        return Ok(());
    };
    let path = dir.join("traces").join(format!("{system}.jsonl"));
    let mut buf = Vec::new();
    write_jsonl(&mut buf, traces).map_err(|e| HarnessError::io(&path, e))?;
    write_file(&path, &String::from_utf8(buf).expect("json is utf-8"))
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Generate {
            canonical,
            seed,
            n,
            templates,
            out,
        } => cmd_generate(canonical, seed, n, templates, out),
        Command::Run {
            inputs,
            systems,
            selector,
        } => {
            check_jobs(&inputs)?;
            let systems = match selector {
                Some(s) => vec![parse_system(&s)?],
                None => parse_systems(&systems)?,
            };
            let env = load_env(&inputs)?;
            let pilot = load_pilot(&inputs, &env)?;
            cmd_run(&env, &pilot, &systems, &inputs)
        }
        Command::SweepThreshold {
            inputs,
            deltas,
            selector,
        } => {
            check_jobs(&inputs)?;
            let deltas: Vec<f64> = parse_list("delta", &deltas)?;
            let policy = parse_system(&selector)?;
            let env = load_env(&inputs)?;
            let pilot = load_pilot(&inputs, &env)?;
            let rows = threshold_sweep(&env, &pilot, &policy, &deltas, inputs.jobs)?;
            emit(inputs.out.as_deref(), "threshold_sweep", &threshold_table(&rows))
        }
        Command::SweepBudget {
            inputs,
            budgets,
            systems,
            no_stop,
            subset,
        } => {
            check_jobs(&inputs)?;
            let budgets: Vec<usize> = parse_list("budget", &budgets)?;
            let policies = parse_systems(&systems)?;
            let env = load_env(&inputs)?;
            let pilot = load_pilot(&inputs, &env)?;
            let cases = select_subset(&env, &pilot, &subset, inputs.jobs)?;
            let rows = budget_sweep(&env, &cases, &policies, &budgets, no_stop, inputs.jobs)?;
            let stem = if no_stop { "budget_sweep_no_stop" } else { "budget_sweep" };
            emit(inputs.out.as_deref(), stem, &budget_table(&rows))
        }
        Command::HardCases { inputs, selector } => {
            check_jobs(&inputs)?;
            let policy = parse_system(&selector)?;
            let env = load_env(&inputs)?;
            let pilot = load_pilot(&inputs, &env)?;
            let hard = hard_cases(&env, &pilot, &policy, inputs.jobs)?;
            for c in &hard.cases {
                println!("{}\t{}", c.id, c.case_type);
            }
            if let Some(dir) = &inputs.out {
                write_file(&dir.join("hard_cases.json"), &hard.to_json())?;
            }
            Ok(())
        }
        Command::MultiSeed {
            inputs,
            seeds,
            n,
            systems,
        } => {
            check_jobs(&inputs)?;
            let seeds: Vec<u64> = parse_list("seed", &seeds)?;
            let systems = parse_systems(&systems)?;
            let env = load_env(&inputs)?;
            let (rows, summary) = multi_seed(&env, &seeds, n, &systems, inputs.jobs)?;
            emit(inputs.out.as_deref(), "multi_seed", &seed_table(&rows))?;
            println!();
            emit(inputs.out.as_deref(), "multi_seed_summary", &seed_summary_table(&summary))
        }
        Command::Diagnose {
            inputs,
            traces,
            systems,
        } => {
            check_jobs(&inputs)?;
            let traces = match traces {
                Some(files) => read_trace_files(&files)?,
                None => {
                    let systems = parse_systems(&systems)?;
                    let env = load_env(&inputs)?;
                    let pilot = load_pilot(&inputs, &env)?;
                    run_systems(&env, &pilot, &systems, inputs.jobs)?
                        .into_iter()
                        .flat_map(|r| r.traces)
                        .collect()
                }
            };
            emit(inputs.out.as_deref(), "diagnostic", &diagnostic_table(&diagnose(&traces)))
        }
        Command::Report { inputs } => cmd_report(&inputs),
    }
}

fn cmd_generate(
    canonical: bool,
    seed: Option<u64>,
    n: Option<usize>,
    templates: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let json = match (canonical, seed, n) {
        (true, None, None) => {
            canonical_pilot()?;
            CANONICAL_PILOT.to_string()
        }
        (true, _, _) => {
            return Err(HarnessError::Usage("--canonical takes no --seed or --n".into()))
        }
        (false, Some(seed), n) => {
            let n = n.unwrap_or(30);
            if n == 0 {
                return Err(HarnessError::Usage("--n must be at least 1".into()));
            }
            let templates = match &templates {
                Some(p) => TemplateSet::load(p)?,
                None => TemplateSet::reference(),
            };
            generate_pilot(&templates, seed, n)?.to_json()
        }
        (false, None, _) => {
            return Err(HarnessError::Usage("give --canonical or --seed".into()))
        }
    };
    match out {
        Some(path) => write_file(&path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn cmd_run(
    env: &Env,
    pilot: &PilotManifest,
    systems: &[SystemConfig],
    inputs: &Inputs,
) -> Result<(), HarnessError> {
    let runs = run_systems(env, pilot, systems, inputs.jobs)?;
    for r in &runs {
        write_traces(inputs.out.as_deref(), &r.system.name, &r.traces)?;
    }
    let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
    emit(inputs.out.as_deref(), "aggregate", &aggregate_table(&rows))
}

fn select_subset(
    env: &Env,
    pilot: &PilotManifest,
    subset: &str,
    jobs: usize,
) -> Result<PilotManifest, HarnessError> {
    match subset {
        "hard" => hard_cases(env, pilot, &parse_system("rule")?, jobs),
        "all" => Ok(pilot.clone()),
        other => {
            let k = other
                .strip_prefix("strat:")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| HarnessError::Usage(format!("unknown subset {other:?}")))?;
            stratified_subset(pilot, k).map_err(|e| HarnessError::Usage(e.to_string()))
        }
    }
}

fn read_trace_files(files: &str) -> Result<Vec<RunTrace>, HarnessError> {
    let mut traces = Vec::new();
    for f in files.split(',').filter(|f| !f.trim().is_empty()) {
        let path = Path::new(f.trim());
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        traces.extend(
            read_jsonl(&text).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?,
        );
    }
    Ok(traces)
}

fn cmd_report(inputs: &Inputs) -> Result<(), HarnessError> {
    check_jobs(inputs)?;
    let out = inputs.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    let out = Some(out.as_path());
    let env = load_env(inputs)?;
    let pilot = load_pilot(inputs, &env)?;
    let jobs = inputs.jobs;

    println!("== main systems ==");
    let systems = parse_systems(DEFAULT_SYSTEMS)?;
    let runs = run_systems(&env, &pilot, &systems, jobs)?;
    for r in &runs {
        write_traces(out, &r.system.name, &r.traces)?;
    }
    let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
    emit(out, "aggregate", &aggregate_table(&rows))?;

    println!("\n== case-type diagnostic ==");
    let traces: Vec<RunTrace> = runs
        .iter()
        .filter(|r| matches!(r.system.name.as_str(), "map-rule" | "map-oracle"))
        .flat_map(|r| r.traces.iter().cloned())
        .collect();
    emit(out, "diagnostic", &diagnostic_table(&diagnose(&traces)))?;

    println!("\n== threshold sweep ==");
    let deltas: Vec<f64> = parse_list("delta", DEFAULT_DELTAS)?;
    let rows = threshold_sweep(&env, &pilot, &parse_system("rule")?, &deltas, jobs)?;
    emit(out, "threshold_sweep", &threshold_table(&rows))?;

    println!("\n== hard-case budget sweep ==");
    let hard = hard_cases(&env, &pilot, &parse_system("rule")?, jobs)?;
    if let Some(dir) = out {
        write_file(&dir.join("hard_cases.json"), &hard.to_json())?;
    }
    let budgets: Vec<usize> = parse_list("budget", DEFAULT_BUDGETS)?;
    let policies = parse_systems("rule,oracle")?;
    let mut rows = budget_sweep(&env, &hard, &policies, &budgets, false, jobs)?;
    rows.extend(budget_sweep(&env, &hard, &parse_systems("oracle")?, &budgets, true, jobs)?);
    emit(out, "budget_sweep", &budget_table(&rows))?;

    println!("\n== stratified 20-case budget sweep, no stop ==");
    let strat = stratified_subset(&pilot, 20.min(pilot.cases.len()))?;
    let rows = budget_sweep(&env, &strat, &policies, &budgets, true, jobs)?;
    emit(out, "budget_sweep_strat20_no_stop", &budget_table(&rows))?;

    println!("\n== multi-seed ==");
    let seeds: Vec<u64> = parse_list("seed", DEFAULT_SEEDS)?;
    let (rows, summary) = multi_seed(&env, &seeds, 30, &policies, jobs)?;
    emit(out, "multi_seed", &seed_table(&rows))?;
    emit(out, "multi_seed_summary", &seed_summary_table(&summary))
}
