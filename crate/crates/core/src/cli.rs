//! Command-line surface. Exit codes: 0 ok, 1 usage or other failure, 2 bad
//! environment, 3 non-convergence, 4 missing task, 5 run did not terminate.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use taskalg::algebra::{compile, Compiled, TaskKey, TaskLibrary};
use taskalg::formula::{Semantics, TaskSpec};
use taskalg::mdp::{barrier_env, example_env, load_env, Action, Cell, LabeledMdp};
use taskalg::oracle::{min_violation_path, OracleResult};
use taskalg::penalty::{penalty_multiplier, PenaltyConfig, RewardSpec, DEFAULT_R_GOAL, DEFAULT_R_STEP};
use taskalg::persist::{load_library, load_table, save_table, StoredTable};
use taskalg::planner::{extract_policy, value_iterate, value_iterate_safety, QTable, DEFAULT_SUBSET_CAP, DEFAULT_TOL};
use taskalg::render::{policy_svg, render_report, render_table, report_svg};
use taskalg::runtime::{attach_classification, attach_score, default_max_steps, replay, report_json, rollout, transcript, TrajectoryReport};
use taskalg::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_ENV: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_MISSING_TASK: i32 = 4;
pub const EXIT_NON_TERMINATION: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "taskalg", version, about = "Safety-aware Boolean task composition on labeled grid worlds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the penalty multiplier and the region pair that sets it.
    Cp {
        #[command(flatten)]
        env: EnvArg,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Value-iterate task tables into a library directory or a file.
    Train(TrainArgs),
    /// Compose a formula from library tables into a new table file.
    Compose(ComposeArgs),
    /// Roll out a composed formula or a stored table and classify the run.
    Run(RunArgs),
    /// Classify a fixed action sequence or a saved report.
    Classify(ClassifyArgs),
    /// Minimum-violation paths computed by exhaustive search.
    Oracle(OracleArgs),
    /// Draw a policy or a run as text or SVG.
    Render(RenderArgs),
}

#[derive(Args, Debug, Clone)]
pub struct EnvArg {
    /// Environment JSON file, or `builtin:example` / `builtin:barrier`.
    #[arg(long)]
    pub env: String,
}

#[derive(Args, Debug, Clone)]
pub struct PenaltyArgs {
    #[arg(long, allow_hyphen_values = true, default_value_t = DEFAULT_R_STEP)]
    pub r_step: f64,
    #[arg(long, default_value_t = DEFAULT_R_GOAL)]
    pub r_goal: f64,
    /// Penalty multiplier; derived from the environment when omitted.
    #[arg(long)]
    pub cp: Option<u32>,
    /// Put bad termination one tier above worst pass-through.
    #[arg(long)]
    pub extra_tier: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TaskArg {
    /// Boolean formula over the environment's propositions.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value = "min-violation")]
    pub semantics: Semantics,
}

#[derive(Args, Debug, Clone)]
pub struct LibArg {
    /// Library directory of `<key>.qtab` files.
    #[arg(long, env = "TASKALG_LIB")]
    pub lib: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub env: EnvArg,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    /// Comma-separated task keys: `p`, `not-p`, `not-p+q`, `U`, `EMPTY`, or
    /// `basis` for U, EMPTY and every proposition.
    #[arg(long)]
    pub task: String,
    /// Train `G_ok` slices for every region subset of size at most k.
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[command(flatten)]
    pub lib: LibArg,
    /// Single-table output file (instead of the library).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Lift the cap on the number of `G_ok` subsets.
    #[arg(long)]
    pub all_subsets: bool,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    #[command(flatten)]
    pub env: EnvArg,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub task: TaskArg,
    #[command(flatten)]
    pub lib: LibArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub env: EnvArg,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub task: TaskArg,
    #[command(flatten)]
    pub lib: LibArg,
    /// Stored table to follow instead of composing `--task`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub start: Option<Cell>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub env: EnvArg,
    #[command(flatten)]
    pub task: TaskArg,
    #[arg(long)]
    pub start: Option<Cell>,
    /// Comma-separated actions (`up`, `down`, `left`, `right`, `stay` or
    /// their initials).
    #[arg(long)]
    pub actions: Option<String>,
    /// Structured report written by `run --format structured`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub env: EnvArg,
    #[command(flatten)]
    pub task: TaskArg,
    /// Start cell; every cell when omitted.
    #[arg(long)]
    pub start: Option<Cell>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub env: EnvArg,
    #[command(flatten)]
    pub penalty: PenaltyArgs,
    #[command(flatten)]
    pub task: TaskArg,
    #[command(flatten)]
    pub lib: LibArg,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    /// Shade text renders by value (ANSI colours).
    #[arg(long)]
    pub color: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Structured,
    Svg,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidEnvironment(_) | Error::EnvironmentDisconnected(_) => EXIT_ENV,
        Error::NonConvergence { .. } => EXIT_CONVERGENCE,
        Error::MissingTask(_) => EXIT_MISSING_TASK,
        _ => EXIT_OTHER,
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_OTHER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Cp { env, format } => cmd_cp(&env, format),
        Command::Train(a) => cmd_train(&a),
        Command::Compose(a) => cmd_compose(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Classify(a) => cmd_classify(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Render(a) => cmd_render(&a),
    }
}

pub fn load_environment(arg: &EnvArg) -> Result<LabeledMdp> {
    match arg.env.as_str() {
        "builtin:example" => Ok(example_env()),
        "builtin:barrier" => Ok(barrier_env()),
        path => load_env(Path::new(path)),
    }
}

fn penalty_config(p: &PenaltyArgs, mdp: &LabeledMdp) -> Result<PenaltyConfig> {
    let c_p = match p.cp {
        Some(c) => c,
        None => penalty_multiplier(mdp)?.c_p,
    };
    let cfg = PenaltyConfig { r_step: p.r_step, r_goal: p.r_goal, c_p, extra_tier: p.extra_tier };
    cfg.validate()?;
    Ok(cfg)
}

fn require_task(t: &TaskArg) -> Result<TaskSpec> {
    let f = t.task.as_deref().ok_or_else(|| Error::Parse { offset: 0, message: "--task is required".into() })?;
    TaskSpec::parse(f, t.semantics)
}

fn start_cell(start: Option<Cell>, mdp: &LabeledMdp) -> Result<Cell> {
    let c = start
        .or(mdp.start())
        .ok_or_else(|| Error::InvalidEnvironment("no --start given and the environment names no start cell".into()))?;
    mdp.check_cell(c)?;
    Ok(c)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn cmd_cp(env: &EnvArg, format: Format) -> Result<i32> {
    let mdp = load_environment(env)?;
    let report = penalty_multiplier(&mdp)?;
    let text = match format {
        Format::Structured => serde_json::to_string_pretty(&report)? + "\n",
        _ => {
            let mut s = format!("C_p = {}\n", report.c_p);
            if let Some(w) = &report.witness {
                s += &format!("set by region {} -> region {} with literal {}: {} steps\n", w.from, w.to, w.literal, w.steps);
            }
            s
        }
    };
    emit(None, &text)?;
    Ok(EXIT_OK)
}

fn train_keys(spec: &str, mdp: &LabeledMdp) -> Result<Vec<TaskKey>> {
    let mut keys = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if part == "basis" {
            keys.push(TaskKey::BoundaryU);
            keys.push(TaskKey::BoundaryEmpty);
            keys.extend(mdp.propositions().iter().map(|p| TaskKey::positive(p)));
        } else {
            keys.push(part.parse()?);
        }
    }
    if keys.is_empty() {
        return Err(Error::Parse { offset: 0, message: "--task names no task".into() });
    }
    Ok(keys)
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mdp = load_environment(&a.env)?;
    let cfg = penalty_config(&a.penalty, &mdp)?;
    let keys = train_keys(&a.task, &mdp)?;
    if a.out.is_some() && keys.len() != 1 {
        return Err(Error::Parse { offset: 0, message: "--out takes exactly one task".into() });
    }
    let dir = match (&a.out, &a.lib.lib) {
        (Some(_), _) => None,
        (None, Some(d)) => Some(d.clone()),
        (None, None) => return Err(Error::Parse { offset: 0, message: "give --lib (or TASKALG_LIB) or --out".into() }),
    };
    if let Some(d) = &dir {
        // Refuse to mix configurations in one library.
        let lib = load_library(d, &mdp, cfg)?;
        if lib.keys().next().is_some() && lib.config != cfg {
            return Err(Error::IncompatibleTables(format!("library {} was trained with a different penalty configuration", d.display())));
        }
        std::fs::create_dir_all(d)?;
    }
    for key in keys {
        let spec = RewardSpec::new(key.reward_kind(), cfg);
        let table = if a.k == 0 {
            value_iterate(&mdp, &spec, a.tol, a.max_sweeps)?
        } else {
            let cap = if a.all_subsets { None } else { Some(DEFAULT_SUBSET_CAP) };
            value_iterate_safety(&mdp, &spec, a.k, a.tol, a.max_sweeps, cap)?
        };
        let table = table.require_converged()?;
        let path = match (&a.out, &dir) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => d.join(key.file_name()),
            (None, None) => unreachable!("checked above"),
        };
        save_table(&path, &StoredTable::new(table.clone(), None))?;
        println!("trained {key}: {} sweeps, residual {:e}, {} slice(s) -> {}", table.sweeps, table.residual, table.slices(), path.display());
    }
    Ok(EXIT_OK)
}

/// Library from `--lib`, or an in-memory one that trains whatever the
/// formula needs when no directory is given.
fn compose_task(mdp: &LabeledMdp, cfg: PenaltyConfig, lib: &LibArg, task: &TaskSpec) -> Result<Compiled> {
    if let Some(dir) = &lib.lib {
        return compile(task, &load_library(dir, mdp, cfg)?);
    }
    let mut lib = TaskLibrary::new(mdp, cfg);
    loop {
        match compile(task, &lib) {
            Err(Error::MissingTask(k)) => {
                lib.train(mdp, k.parse()?, 0)?;
            }
            other => return other,
        }
    }
}

fn print_warnings(c: &Compiled) {
    for w in &c.warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_compose(a: &ComposeArgs) -> Result<i32> {
    let mdp = load_environment(&a.env)?;
    let cfg = penalty_config(&a.penalty, &mdp)?;
    let task = require_task(&a.task)?;
    if task.contradictory {
        eprintln!("warning: a conjunct of `{}` both requires and forbids a proposition", task.formula);
    }
    let compiled = compose_task(&mdp, cfg, &a.lib, &task)?;
    print_warnings(&compiled);
    let provenance = compiled.provenance.to_string();
    if let Some(out) = &a.out {
        save_table(out, &StoredTable::new(compiled.table.clone(), Some(provenance.clone())))?;
    }
    let text = match a.format {
        Format::Structured => {
            serde_json::to_string_pretty(&json!({
                "task": compiled.table.task,
                "provenance": provenance,
                "warnings": compiled.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
                "slices": compiled.table.slices(),
                "out": a.out.as_ref().map(|p| p.display().to_string()),
            }))? + "\n"
        }
        _ => format!("task: {}\nprovenance: {provenance}\n", compiled.table.task),
    };
    emit(None, &text)?;
    Ok(EXIT_OK)
}

/// Reads back the task a composed table was built for (`φ [semantics]`).
fn task_of_table(t: &QTable) -> Option<TaskSpec> {
    let (f, sem) = t.task.rsplit_once(" [")?;
    let sem: Semantics = sem.strip_suffix(']')?.parse().ok()?;
    TaskSpec::parse(f, sem).ok()
}

fn table_for_run(mdp: &LabeledMdp, penalty: &PenaltyArgs, task: &TaskArg, lib: &LibArg, table: Option<&Path>) -> Result<(QTable, Option<TaskSpec>)> {
    let spec = task.task.as_deref().map(|f| TaskSpec::parse(f, task.semantics)).transpose()?;
    match table {
        Some(p) => {
            let t = load_table(p)?.table;
            t.matches_env(mdp)?;
            let spec = spec.or_else(|| task_of_table(&t));
            Ok((t, spec))
        }
        None => {
            let spec = spec.ok_or_else(|| Error::Parse { offset: 0, message: "give --task or --table".into() })?;
            let cfg = penalty_config(penalty, mdp)?;
            let compiled = compose_task(mdp, cfg, lib, &spec)?;
            print_warnings(&compiled);
            Ok((compiled.table, Some(spec)))
        }
    }
}

fn finish_report(mdp: &LabeledMdp, report: &mut TrajectoryReport, task: Option<&TaskSpec>, cfg: PenaltyConfig) -> Result<()> {
    if let Some(task) = task {
        if task.semantics == Semantics::MinimumViolation {
            attach_score(mdp, report, &RewardSpec::positive(task.formula.clone(), cfg))?;
        }
        attach_classification(mdp, report, task)?;
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let mdp = load_environment(&a.env)?;
    let (table, task) = table_for_run(&mdp, &a.penalty, &a.task, &a.lib, a.table.as_deref())?;
    let start = start_cell(a.start, &mdp)?;
    let max_steps = a.max_steps.unwrap_or_else(|| default_max_steps(table.config.c_p, &mdp));
    let mut report = rollout(&mdp, &extract_policy(&table), start, max_steps)?;
    finish_report(&mdp, &mut report, task.as_ref(), table.config)?;
    let text = match a.format {
        Format::Text => transcript(&mdp, &report),
        Format::Structured => serde_json::to_string_pretty(&report_json(&mdp, &report))? + "\n",
        Format::Svg => report_svg(&mdp, &report),
    };
    emit(a.out.as_deref(), &text)?;
    if !report.terminated() {
        eprintln!("run did not terminate{}", if report.chatter { " (chatter)" } else { "" });
        return Ok(EXIT_NON_TERMINATION);
    }
    Ok(EXIT_OK)
}

fn parse_actions(s: &str) -> Result<Vec<Action>> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
}

fn read_report(path: &Path) -> Result<(Cell, Vec<Action>)> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let bad = || Error::Format(format!("{} is not a run report", path.display()));
    let start = v["start"].as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
    let coord = |i: usize| start[i].as_u64().map(|n| n as usize).ok_or_else(bad);
    let start = Cell::new(coord(0)?, coord(1)?);
    let actions = v["actions"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|a| a.as_str().ok_or_else(bad).and_then(str::parse))
        .collect::<Result<Vec<Action>>>()?;
    Ok((start, actions))
}

fn replayed(mdp: &LabeledMdp, start: Option<Cell>, actions: Option<&str>, report: Option<&Path>) -> Result<TrajectoryReport> {
    let (start, actions) = match (report, actions) {
        (Some(p), None) => read_report(p)?,
        (None, Some(s)) => (start_cell(start, mdp)?, parse_actions(s)?),
        _ => return Err(Error::Parse { offset: 0, message: "give exactly one of --actions and --report".into() }),
    };
    replay(mdp, start, &actions)
}

fn cmd_classify(a: &ClassifyArgs) -> Result<i32> {
    let mdp = load_environment(&a.env)?;
    let task = require_task(&a.task)?;
    let mut report = replayed(&mdp, a.start, a.actions.as_deref(), a.report.as_deref())?;
    attach_classification(&mdp, &mut report, &task)?;
    let c = report.classification.as_ref().expect("classification attached");
    let text = match a.format {
        Format::Structured => serde_json::to_string_pretty(c)? + "\n",
        _ => {
            let labels: Vec<String> = report.nonempty_projection.iter().map(|l| mdp.format_labels(*l)).collect();
            format!(
                "class: {:?}\nsatisfied: {}\nviolations: {}\noracle minimum: {}\nlabels: {}\n",
                c.class,
                c.satisfied,
                c.violations,
                c.oracle_min.map_or("-".to_string(), |m| m.to_string()),
                labels.join(" ")
            )
        }
    };
    emit(None, &text)?;
    Ok(EXIT_OK)
}

fn oracle_json(mdp: &LabeledMdp, start: Cell, r: &OracleResult) -> serde_json::Value {
    let witness = r.witness.as_ref().map(|w| {
        json!({
            "cells": w.steps.iter().map(|s| [s.cell.x, s.cell.y]).collect::<Vec<_>>(),
            "labels": w.steps.iter().filter(|s| !s.emitted.is_empty()).map(|s| mdp.label_names(s.emitted)).collect::<Vec<_>>(),
        })
    });
    json!({
        "start": [start.x, start.y],
        "feasible": r.feasible,
        "min_violations": r.feasible.then_some(r.min_violations),
        "steps": r.feasible.then_some(r.min_steps_at_min_violations),
        "terminal_region": r.terminal_region(),
        "witness": witness,
    })
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32> {
    let mdp = load_environment(&a.env)?;
    let task = require_task(&a.task)?;
    let avoid = task.avoid_mask(&mdp)?;
    let starts: Vec<Cell> = match a.start {
        Some(c) => vec![c],
        None => mdp.cells().collect(),
    };
    let mut rows = Vec::new();
    for s in starts {
        let r = if avoid.is_empty() {
            min_violation_path(&mdp, s, &task.formula)?
        } else {
            taskalg::oracle::safe_min_violation_path(&mdp, s, &task.formula, avoid)?
        };
        rows.push((s, r));
    }
    let text = match a.format {
        Format::Structured => {
            let v = json!({
                "schema_version": 1,
                "task": task.formula.to_string(),
                "semantics": task.semantics.to_string(),
                "results": rows.iter().map(|(s, r)| oracle_json(&mdp, *s, r)).collect::<Vec<_>>(),
            });
            serde_json::to_string_pretty(&v)? + "\n"
        }
        _ => {
            let mut out = String::new();
            for (s, r) in &rows {
                if !r.feasible {
                    out += &format!("{s}: infeasible\n");
                    continue;
                }
                let labels: Vec<String> = r
                    .witness
                    .as_ref()
                    .map(|w| w.steps.iter().filter(|x| !x.emitted.is_empty()).map(|x| mdp.format_labels(x.emitted)).collect())
                    .unwrap_or_default();
                out += &format!(
                    "{s}: {} violation(s), {} step(s), region {}, labels {}\n",
                    r.min_violations,
                    r.min_steps_at_min_violations,
                    r.terminal_region().map_or("-".into(), |g| g.to_string()),
                    labels.join(" ")
                );
            }
            out
        }
    };
    emit(None, &text)?;
    Ok(EXIT_OK)
}

fn cmd_render(a: &RenderArgs) -> Result<i32> {
    let mdp = load_environment(&a.env)?;
    let text = if let Some(report) = &a.report {
        let (start, actions) = read_report(report)?;
        let r = replay(&mdp, start, &actions)?;
        match a.format {
            Format::Svg => report_svg(&mdp, &r),
            Format::Structured => serde_json::to_string_pretty(&report_json(&mdp, &r))? + "\n",
            Format::Text => render_report(&mdp, &r),
        }
    } else {
        let (table, _) = table_for_run(&mdp, &a.penalty, &a.task, &a.lib, a.table.as_deref())?;
        match a.format {
            Format::Svg => policy_svg(&mdp, &extract_policy(&table)),
            Format::Structured => {
                let p = extract_policy(&table);
                serde_json::to_string_pretty(&json!({
                    "width": p.width,
                    "height": p.height,
                    "actions": p.actions.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
                    "values": p.values,
                }))? + "\n"
            }
            Format::Text => render_table(&mdp, &table, a.color),
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

