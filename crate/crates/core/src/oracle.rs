//! Brute-force ground truth, written independently of the planner.
//!
//! The shortest-path searches minimize `(violations, steps)`
//! lexicographically, where a violation is a non-empty emission whose label
//! does not satisfy the formula. Termination is a `Stay` inside a satisfying
//! region and counts as a step.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::mdp::{Action, Cell, Execution, LabelSet, LabeledMdp, RegionId};
use crate::penalty::{Literal, RewardModel, RewardSpec};

/// Searches over more cells than this give up with `OracleTimeout`.
pub const DEFAULT_STATE_CAP: usize = 1 << 20;
pub const DEFAULT_NODE_CAP: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub feasible: bool,
    pub min_violations: usize,
    pub min_steps_at_min_violations: usize,
    /// A lexicographically optimal terminating execution, when feasible.
    pub witness: Option<Execution>,
}

impl OracleResult {
    fn infeasible() -> Self {
        OracleResult { feasible: false, min_violations: 0, min_steps_at_min_violations: 0, witness: None }
    }

    pub fn terminal_region(&self) -> Option<RegionId> {
        self.witness.as_ref().and_then(|w| w.terminal_region)
    }
}

fn search(mdp: &LabeledMdp, s0: Cell, formula: &Formula, avoid: LabelSet, state_cap: usize) -> Result<OracleResult> {
    mdp.check_cell(s0)?;
    let n = mdp.num_cells();
    if n > state_cap {
        return Err(Error::OracleTimeout { cap: state_cap });
    }
    let phi = formula.resolve(mdp)?;
    let satisfying: Vec<bool> = mdp.regions().iter().map(|g| phi.eval(g.label)).collect();

    // Node n is the terminated sink.
    let sink = n;
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n + 1];
    let mut pred: Vec<Option<(usize, Action)>> = vec![None; n + 1];
    let mut heap = BinaryHeap::new();
    let src = mdp.index(s0);
    best[src] = Some((0, 0));
    heap.push(Reverse((0usize, 0usize, src)));
    while let Some(Reverse((v, s, i))) = heap.pop() {
        if best[i] != Some((v, s)) || i == sink {
            continue;
        }
        let c = mdp.cell(i);
        for a in Action::ALL {
            let t = mdp.step(c, a);
            let (j, cost) = if a == Action::Stay {
                match mdp.region_at(c) {
                    Some(g) if satisfying[g] => (sink, (v, s + 1)),
                    _ => continue,
                }
            } else {
                let j = mdp.index(t.to);
                if j == i || t.emitted.intersects(avoid) {
                    continue;
                }
                let violation = !t.emitted.is_empty() && !phi.eval(t.emitted);
                (j, (v + usize::from(violation), s + 1))
            };
            if best[j].is_none_or(|b| cost < b) {
                best[j] = Some(cost);
                pred[j] = Some((i, a));
                heap.push(Reverse((cost.0, cost.1, j)));
            }
        }
    }

    let Some((violations, steps)) = best[sink] else {
        return Ok(OracleResult::infeasible());
    };
    let mut actions = Vec::new();
    let mut at = sink;
    while let Some((p, a)) = pred[at] {
        actions.push(a);
        at = p;
    }
    actions.reverse();
    let mut witness = Execution::start(s0);
    let mut c = s0;
    for a in actions {
        let t = mdp.step(c, a);
        witness.push(&t);
        c = t.to;
    }
    debug_assert!(witness.terminated);
    Ok(OracleResult { feasible: true, min_violations: violations, min_steps_at_min_violations: steps, witness: Some(witness) })
}

/// Fewest non-satisfying emissions over all satisfying executions from `s0`.
pub fn min_violation_path(mdp: &LabeledMdp, s0: Cell, formula: &Formula) -> Result<OracleResult> {
    search(mdp, s0, formula, LabelSet::EMPTY, DEFAULT_STATE_CAP)
}

/// As [`min_violation_path`], restricted to executions that never emit an
/// avoided proposition.
pub fn safe_min_violation_path(mdp: &LabeledMdp, s0: Cell, formula: &Formula, avoid: LabelSet) -> Result<OracleResult> {
    search(mdp, s0, formula, avoid, DEFAULT_STATE_CAP)
}

pub fn min_violation_path_capped(
    mdp: &LabeledMdp,
    s0: Cell,
    formula: &Formula,
    avoid: LabelSet,
    state_cap: usize,
) -> Result<OracleResult> {
    search(mdp, s0, formula, avoid, state_cap)
}

struct Enumerator<'a> {
    mdp: &'a LabeledMdp,
    model: RewardModel,
    floor: f64,
    step_bound: usize,
    node_cap: usize,
    nodes: usize,
    visited: Vec<bool>,
}

impl Enumerator<'_> {
    /// Best floored return from `c` for every goal, over simple paths using
    /// at most `budget` more steps.
    fn best(&mut self, c: Cell, budget: usize) -> Result<Vec<f64>> {
        self.nodes += 1;
        if self.nodes > self.node_cap {
            return Err(Error::ExplosionGuard { cap: self.node_cap });
        }
        let goals = self.mdp.regions().len();
        let mut out = vec![self.floor; goals];
        if budget == 0 {
            return Ok(out);
        }
        for a in Action::ALL {
            let t = self.mdp.step(c, a);
            if t.done {
                for (g, o) in out.iter_mut().enumerate() {
                    *o = o.max(self.model.reward(&t, g));
                }
                continue;
            }
            let j = self.mdp.index(t.to);
            if self.visited[j] {
                continue;
            }
            self.visited[j] = true;
            let rest = self.best(t.to, budget - 1);
            self.visited[j] = false;
            let rest = rest?;
            for (g, o) in out.iter_mut().enumerate() {
                *o = o.max((self.model.reward(&t, g) + rest[g]).max(self.floor));
            }
        }
        Ok(out)
    }
}

/// Highest total reward from `s0` for every goal region, by exhaustive
/// enumeration of simple paths of at most `step_bound` steps. Cycles only
/// add step penalties, so simple paths suffice. Values below the
/// never-terminate floor are clamped to it.
pub fn optimal_returns(mdp: &LabeledMdp, spec: &RewardSpec, s0: Cell, step_bound: usize, node_cap: usize) -> Result<Vec<f64>> {
    mdp.check_cell(s0)?;
    let mut e = Enumerator {
        mdp,
        model: RewardModel::new(mdp, spec)?,
        floor: spec.config.floor(),
        step_bound,
        node_cap,
        nodes: 0,
        visited: vec![false; mdp.num_cells()],
    };
    e.visited[mdp.index(s0)] = true;
    let bound = e.step_bound;
    e.best(s0, bound)
}

pub fn optimal_return(mdp: &LabeledMdp, spec: &RewardSpec, s0: Cell, g: RegionId, step_bound: usize) -> Result<f64> {
    if g >= mdp.regions().len() {
        return Err(Error::InvalidEnvironment(format!("no region {g}")));
    }
    Ok(optimal_returns(mdp, spec, s0, step_bound, DEFAULT_NODE_CAP)?[g])
}

/// Penalty multiplier recomputed with a label-correcting (Bellman-Ford
/// style) relaxation instead of a priority queue.
pub fn penalty_multiplier_by_relaxation(mdp: &LabeledMdp) -> Result<u32> {
    if mdp.regions().is_empty() {
        return Err(Error::EnvironmentDisconnected("environment has no goal regions".into()));
    }
    let n = mdp.num_cells();
    let edges: Vec<(usize, usize, Option<RegionId>)> = mdp
        .cells()
        .flat_map(|c| {
            [Action::Up, Action::Down, Action::Left, Action::Right].into_iter().filter_map(move |a| {
                let t = mdp.step(c, a);
                (t.to != c).then(|| (mdp.index(c), mdp.index(t.to), t.entered))
            })
        })
        .collect();
    let mut longest = 0usize;
    for p in 0..mdp.propositions().len() {
        for negated in [false, true] {
            let obstacle: Vec<bool> = mdp.regions().iter().map(|g| g.label.contains(p) != negated).collect();
            for g1 in mdp.regions() {
                for &c1 in &g1.cells {
                    let mut dist: Vec<Option<(usize, usize)>> = vec![None; n];
                    dist[mdp.index(c1)] = Some((0, 0));
                    loop {
                        let mut changed = false;
                        for &(u, v, entered) in &edges {
                            if let Some((k, s)) = dist[u] {
                                let cand = (k + usize::from(entered.is_some_and(|r| obstacle[r])), s + 1);
                                if dist[v].is_none_or(|d| cand < d) {
                                    dist[v] = Some(cand);
                                    changed = true;
                                }
                            }
                        }
                        if !changed {
                            break;
                        }
                    }
                    for g2 in mdp.regions() {
                        if g2.id == g1.id {
                            continue;
                        }
                        for &c2 in &g2.cells {
                            if let Some((_, s)) = dist[mdp.index(c2)] {
                                longest = longest.max(s);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(u32::try_from(longest.max(1)).unwrap_or(u32::MAX))
}

/// Literals used by the multiplier, for reports.
pub fn literals(mdp: &LabeledMdp) -> Vec<Literal> {
    mdp.propositions()
        .iter()
        .flat_map(|p| [false, true].map(|negated| Literal { prop: p.clone(), negated }))
        .collect()
}
