//! Rollouts, path statistics, scoring and path classification.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::TaskSpec;
use crate::mdp::{project, project_nonempty, Action, Cell, Execution, LabelSet, LabeledMdp, RegionId};
use crate::oracle::{min_violation_path_capped, OracleResult, DEFAULT_STATE_CAP};
use crate::penalty::{RewardCase, RewardModel, RewardSpec};
use crate::planner::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathClass {
    Pure,
    MinimumViolation,
    PrioritizedSafety,
    SafetyOnly,
    Violating,
    NonTerminating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    Goal,
    BadTerm,
    WorstTerm,
    NeverTerm,
}

/// Transition counts by reward tier. The terminating `Stay` is not counted;
/// it is described by `termination`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStats {
    pub l_unlabeled: usize,
    pub l_bad_label: usize,
    pub l_worst_pass_through: usize,
    pub termination: Termination,
}

impl PathStats {
    pub fn l_max(&self) -> usize {
        self.l_unlabeled + self.l_bad_label + self.l_worst_pass_through
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: PathClass,
    pub satisfied: bool,
    /// `|↾⁺| - 1`, or 0 for an execution that never leaves its goal.
    pub violations: usize,
    /// Oracle minimum the run was compared against, if it was needed.
    pub oracle_min: Option<usize>,
    /// The oracle gave up; `class` is only a bound.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub start: Cell,
    pub execution: Execution,
    pub actions: Vec<Action>,
    pub projection: Vec<LabelSet>,
    pub nonempty_projection: Vec<LabelSet>,
    pub chatter: bool,
    pub stats: Option<PathStats>,
    pub rewards: Vec<f64>,
    pub total_reward: Option<f64>,
    pub classification: Option<Classification>,
}

impl TrajectoryReport {
    fn new(start: Cell, execution: Execution, actions: Vec<Action>, chatter: bool) -> Self {
        TrajectoryReport {
            start,
            projection: project(&execution),
            nonempty_projection: project_nonempty(&execution),
            execution,
            actions,
            chatter,
            stats: None,
            rewards: Vec::new(),
            total_reward: None,
            classification: None,
        }
    }

    pub fn terminated(&self) -> bool {
        self.execution.terminated
    }

    pub fn terminal_region(&self) -> Option<RegionId> {
        self.execution.terminal_region
    }

    pub fn path_class(&self) -> Option<PathClass> {
        self.classification.as_ref().map(|c| c.class)
    }
}

/// Follows `policy` from `s0` until it terminates, revisits a cell
/// (a deterministic loop, reported as chatter) or takes `max_steps` steps.
pub fn rollout(mdp: &LabeledMdp, policy: &Policy, s0: Cell, max_steps: usize) -> Result<TrajectoryReport> {
    mdp.check_cell(s0)?;
    if (policy.width, policy.height) != (mdp.width(), mdp.height()) {
        return Err(Error::IncompatibleTables("policy and environment sizes differ".into()));
    }
    run(mdp, s0, max_steps, |c| policy.action(c))
}

/// Replays a fixed action sequence; stops early on termination.
pub fn replay(mdp: &LabeledMdp, s0: Cell, actions: &[Action]) -> Result<TrajectoryReport> {
    mdp.check_cell(s0)?;
    let mut execution = Execution::start(s0);
    let mut taken = Vec::new();
    let mut c = s0;
    for &a in actions {
        let t = mdp.step(c, a);
        execution.push(&t);
        taken.push(a);
        c = t.to;
        if t.done {
            break;
        }
    }
    Ok(TrajectoryReport::new(s0, execution, taken, false))
}

fn run(mdp: &LabeledMdp, s0: Cell, max_steps: usize, mut choose: impl FnMut(Cell) -> Action) -> Result<TrajectoryReport> {
    let mut execution = Execution::start(s0);
    let mut actions = Vec::new();
    let mut visited = vec![false; mdp.num_cells()];
    visited[mdp.index(s0)] = true;
    let mut c = s0;
    let mut chatter = false;
    for _ in 0..max_steps {
        let a = choose(c);
        let t = mdp.step(c, a);
        execution.push(&t);
        actions.push(a);
        if t.done {
            break;
        }
        let j = mdp.index(t.to);
        if visited[j] {
            chatter = true;
            break;
        }
        visited[j] = true;
        c = t.to;
    }
    Ok(TrajectoryReport::new(s0, execution, actions, chatter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub total: f64,
    pub closed_form: f64,
    pub stats: PathStats,
    pub rewards: Vec<f64>,
}

/// Scores the report against the goal it terminated in. Unterminated runs
/// are scored against no goal, so every label entry counts as a bad pass.
pub fn score(mdp: &LabeledMdp, report: &TrajectoryReport, spec: &RewardSpec) -> Result<Score> {
    score_for_goal(mdp, report, spec, report.terminal_region())
}

pub fn score_for_goal(mdp: &LabeledMdp, report: &TrajectoryReport, spec: &RewardSpec, g: Option<RegionId>) -> Result<Score> {
    let model = RewardModel::new(mdp, spec)?;
    let goal = g.unwrap_or(usize::MAX);
    let mut stats =
        PathStats { l_unlabeled: 0, l_bad_label: 0, l_worst_pass_through: 0, termination: Termination::NeverTerm };
    let mut rewards = Vec::with_capacity(report.actions.len());
    let mut c = report.start;
    for &a in &report.actions {
        let t = mdp.step(c, a);
        let case = model.case(&t, goal);
        rewards.push(model.value(case));
        match case {
            RewardCase::Step => stats.l_unlabeled += 1,
            RewardCase::BadStep => stats.l_bad_label += 1,
            RewardCase::WorstStep => stats.l_worst_pass_through += 1,
            RewardCase::Goal => stats.termination = Termination::Goal,
            RewardCase::BadTerm => stats.termination = Termination::BadTerm,
            RewardCase::WorstTerm => stats.termination = Termination::WorstTerm,
        }
        c = t.to;
    }
    let cfg = &spec.config;
    let mut total: f64 = rewards.iter().sum();
    if stats.termination == Termination::NeverTerm {
        total += cfg.floor();
    }
    let indicator = |t: Termination| if stats.termination == t { 1.0 } else { 0.0 };
    let closed_form = cfg.r_goal * indicator(Termination::Goal)
        + cfg.badterm() * indicator(Termination::BadTerm)
        + cfg.worstterm() * indicator(Termination::WorstTerm)
        + cfg.floor() * indicator(Termination::NeverTerm)
        + cfg.r_step * stats.l_unlabeled as f64
        + cfg.badstep() * stats.l_bad_label as f64
        + cfg.worststep() * stats.l_worst_pass_through as f64;
    Ok(Score { total, closed_form, stats, rewards })
}

/// Attaches rewards, statistics and the total to the report.
pub fn attach_score(mdp: &LabeledMdp, report: &mut TrajectoryReport, spec: &RewardSpec) -> Result<Score> {
    let s = score(mdp, report, spec)?;
    report.stats = Some(s.stats);
    report.rewards = s.rewards.clone();
    report.total_reward = Some(s.total);
    Ok(s)
}

fn violations(report: &TrajectoryReport) -> usize {
    report.nonempty_projection.len().saturating_sub(1)
}

/// Classifies a run against the task, consulting the oracle only when the
/// answer depends on a minimum. Oracle searches above `state_cap` cells are
/// skipped and the class is reported as a bound.
pub fn classify_capped(mdp: &LabeledMdp, report: &TrajectoryReport, task: &TaskSpec, state_cap: usize) -> Result<Classification> {
    let phi = task.formula.resolve(mdp)?;
    let avoid = task.avoid_mask(mdp)?;
    let v = violations(report);
    let done = |class, satisfied, oracle_min, degraded| Classification { class, satisfied, violations: v, oracle_min, degraded };

    let Some(g) = report.terminal_region().filter(|_| report.terminated()) else {
        return Ok(done(PathClass::NonTerminating, false, None, false));
    };
    let satisfied = phi.eval(mdp.region(g).label);
    if !satisfied {
        return Ok(done(PathClass::Violating, false, None, false));
    }
    if !avoid.is_empty() && report.projection.iter().any(|l| l.intersects(avoid)) {
        return Ok(done(PathClass::Violating, true, None, false));
    }
    if v == 0 {
        return Ok(done(PathClass::Pure, true, None, false));
    }
    let oracle: Result<OracleResult> = min_violation_path_capped(mdp, report.start, &task.formula, avoid, state_cap);
    match oracle {
        Ok(r) if r.feasible => {
            let class = match (avoid.is_empty(), v == r.min_violations) {
                (false, true) => PathClass::PrioritizedSafety,
                (true, true) => PathClass::MinimumViolation,
                (_, false) => PathClass::SafetyOnly,
            };
            Ok(done(class, true, Some(r.min_violations), false))
        }
        // The run itself is a satisfying avoiding execution, so the search
        // cannot come back empty.
        Ok(_) => Err(Error::InvalidEnvironment("oracle found no path although the run satisfies the task".into())),
        Err(Error::OracleTimeout { .. }) => Ok(done(PathClass::SafetyOnly, true, None, true)),
        Err(e) => Err(e),
    }
}

pub fn classify(mdp: &LabeledMdp, report: &TrajectoryReport, task: &TaskSpec) -> Result<Classification> {
    classify_capped(mdp, report, task, DEFAULT_STATE_CAP)
}

pub fn attach_classification(mdp: &LabeledMdp, report: &mut TrajectoryReport, task: &TaskSpec) -> Result<PathClass> {
    let c = classify(mdp, report, task)?;
    let class = c.class;
    report.classification = Some(c);
    Ok(class)
}

/// Default step budget: generous enough for any path the penalty tiers
/// would prefer.
pub fn default_max_steps(c_p: u32, mdp: &LabeledMdp) -> usize {
    ((c_p as usize).pow(2)).max(mdp.num_cells() + 1)
}

/// One line per step: index, cell, action, next cell, emitted labels and,
/// when scored, the reward.
pub fn transcript(mdp: &LabeledMdp, report: &TrajectoryReport) -> String {
    let mut out = String::new();
    let steps = &report.execution.steps;
    let _ = writeln!(out, "start {}", report.start);
    for (i, a) in report.actions.iter().enumerate() {
        let (from, to) = (steps[i].cell, steps[i + 1].cell);
        let _ = write!(out, "{:>3} {} {:<5} -> {} {}", i + 1, from, a.to_string(), to, mdp.format_labels(steps[i + 1].emitted));
        if let Some(r) = report.rewards.get(i) {
            let _ = write!(out, " r={r}");
        }
        out.push('\n');
    }
    let labels: Vec<String> = report.nonempty_projection.iter().map(|l| mdp.format_labels(*l)).collect();
    let _ = writeln!(out, "labels: {}", if labels.is_empty() { "-".to_string() } else { labels.join(" ") });
    match report.terminal_region() {
        Some(g) if report.terminated() => {
            let _ = writeln!(out, "terminated in region {g} {}", mdp.format_labels(mdp.region(g).label));
        }
        _ => {
            let _ = writeln!(out, "did not terminate{}", if report.chatter { " (chatter)" } else { "" });
        }
    }
    if let Some(t) = report.total_reward {
        let _ = writeln!(out, "total reward: {t}");
    }
    if let Some(c) = &report.classification {
        let _ = writeln!(out, "class: {:?}{}", c.class, if c.degraded { " (oracle skipped)" } else { "" });
    }
    out
}

/// Structured record with label sets spelled out as proposition names.
pub fn report_json(mdp: &LabeledMdp, report: &TrajectoryReport) -> serde_json::Value {
    let names = |l: &LabelSet| mdp.label_names(*l);
    serde_json::json!({
        "schema_version": 1,
        "start": [report.start.x, report.start.y],
        "cells": report.execution.steps.iter().map(|s| [s.cell.x, s.cell.y]).collect::<Vec<_>>(),
        "actions": report.actions.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        "projection": report.projection.iter().map(names).collect::<Vec<_>>(),
        "nonempty_projection": report.nonempty_projection.iter().map(names).collect::<Vec<_>>(),
        "terminated": report.terminated(),
        "terminal_region": report.terminal_region(),
        "chatter": report.chatter,
        "stats": report.stats,
        "rewards": report.rewards,
        "total_reward": report.total_reward,
        "classification": report.classification,
    })
}
