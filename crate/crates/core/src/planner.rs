//! Exact undiscounted value iteration for extended Q-value functions.
//!
//! A table holds `Q(s, g, slice, a)`: the best total reward of taking `a` in
//! cell `s` and then acting optimally until terminating in region `g`. Plain
//! task tables have one slice; safety-extended tables carry one slice per
//! tolerated subset `G_ok`. Everything downstream treats the pair
//! `(g, slice)` as a single goal index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, Cell, LabeledMdp, RegionId, Transition};
use crate::penalty::{PenaltyConfig, RewardKind, RewardModel, RewardSpec};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_SUBSET_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub width: usize,
    pub height: usize,
    pub regions: usize,
    /// `G_ok` per slice. Plain tables have the single slice `[]`.
    pub subsets: Vec<Vec<RegionId>>,
    pub config: PenaltyConfig,
    pub fingerprint: u64,
    pub task: String,
    pub converged: bool,
    pub residual: f64,
    pub sweeps: usize,
    pub values: Vec<f64>,
}

/// A trained or composed table over `S × 𝒢 × A`.
pub type ExtendedQ = QTable;
/// A table with additional `G_ok` slices.
pub type SafetyExtendedQ = QTable;

impl QTable {
    pub fn filled(mdp: &LabeledMdp, subsets: Vec<Vec<RegionId>>, config: PenaltyConfig, task: String, v: f64) -> Self {
        let len = mdp.num_cells() * mdp.regions().len() * subsets.len() * Action::COUNT;
        QTable {
            width: mdp.width(),
            height: mdp.height(),
            regions: mdp.regions().len(),
            subsets,
            config,
            fingerprint: mdp.fingerprint(),
            task,
            converged: true,
            residual: 0.0,
            sweeps: 0,
            values: vec![v; len],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn slices(&self) -> usize {
        self.subsets.len()
    }

    /// Number of `(g, slice)` goal indices.
    pub fn goal_count(&self) -> usize {
        self.regions * self.slices()
    }

    pub fn goal_index(&self, g: RegionId, slice: usize) -> usize {
        g * self.slices() + slice
    }

    /// Region and slice of a goal index.
    pub fn split_goal(&self, goal: usize) -> (RegionId, usize) {
        (goal / self.slices(), goal % self.slices())
    }

    pub fn offset(&self, cell: usize, goal: usize) -> usize {
        (cell * self.goal_count() + goal) * Action::COUNT
    }

    pub fn q(&self, cell: usize, g: RegionId, slice: usize, a: Action) -> f64 {
        self.values[self.offset(cell, self.goal_index(g, slice)) + a.index()]
    }

    /// The five action values at `(cell, goal)`.
    pub fn action_values(&self, cell: usize, goal: usize) -> &[f64] {
        let o = self.offset(cell, goal);
        &self.values[o..o + Action::COUNT]
    }

    pub fn value(&self, cell: usize, goal: usize) -> f64 {
        self.action_values(cell, goal).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn matches_env(&self, mdp: &LabeledMdp) -> Result<()> {
        if self.width != mdp.width() || self.height != mdp.height() || self.regions != mdp.regions().len() {
            return Err(Error::IncompatibleTables(format!(
                "table is {}x{} with {} regions, environment is {}x{} with {}",
                self.width,
                self.height,
                self.regions,
                mdp.width(),
                mdp.height(),
                mdp.regions().len()
            )));
        }
        if self.fingerprint != mdp.fingerprint() {
            return Err(Error::IncompatibleTables("table was trained on a different labeling".into()));
        }
        Ok(())
    }

    /// Checks that two tables can be combined entrywise, allowing a plain
    /// table to be broadcast across the slices of a safety-extended one.
    pub fn check_compatible(&self, other: &QTable) -> Result<()> {
        if (self.width, self.height, self.regions) != (other.width, other.height, other.regions) {
            return Err(Error::IncompatibleTables(format!(
                "dimensions differ: {}x{}/{} vs {}x{}/{}",
                self.width, self.height, self.regions, other.width, other.height, other.regions
            )));
        }
        if self.fingerprint != other.fingerprint {
            return Err(Error::IncompatibleTables("tables come from different environments".into()));
        }
        if self.config != other.config {
            return Err(Error::IncompatibleTables("penalty configurations differ".into()));
        }
        if self.subsets != other.subsets && self.slices() != 1 && other.slices() != 1 {
            return Err(Error::IncompatibleTables("G_ok slice layouts differ".into()));
        }
        Ok(())
    }

    /// Slice whose `G_ok` equals `subset` (order-insensitive).
    pub fn subset_index(&self, subset: &[RegionId]) -> Option<usize> {
        let mut want = subset.to_vec();
        want.sort_unstable();
        want.dedup();
        self.subsets.iter().position(|s| *s == want)
    }

    /// One slice as a plain table, for deploying a fixed `G_ok`.
    pub fn slice_table(&self, slice: usize) -> Result<QTable> {
        if slice >= self.slices() {
            return Err(Error::IncompatibleTables(format!("slice {slice} out of range ({} slices)", self.slices())));
        }
        let mut out = self.clone();
        out.subsets = vec![self.subsets[slice].clone()];
        out.values = Vec::with_capacity(self.num_cells() * self.regions * Action::COUNT);
        for cell in 0..self.num_cells() {
            for g in 0..self.regions {
                out.values.extend_from_slice(self.action_values(cell, self.goal_index(g, slice)));
            }
        }
        out.task = format!("{} [ok={:?}]", self.task, self.subsets[slice]);
        Ok(out)
    }

    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence { sweeps: self.sweeps, residual: self.residual })
        }
    }
}

pub fn default_max_sweeps(mdp: &LabeledMdp, config: &PenaltyConfig) -> usize {
    let n = mdp.num_cells();
    (n * mdp.regions().len() * config.c_p as usize).max(n + 2)
}

struct Block {
    values: Vec<f64>,
    residual: f64,
    sweeps: usize,
    converged: bool,
}

fn transition_table(mdp: &LabeledMdp) -> Vec<Transition> {
    mdp.cells().flat_map(|c| Action::ALL.map(|a| mdp.step(c, a))).collect()
}

/// Solves every `(g, slice)` block independently; blocks run in parallel but
/// each is a deterministic sequential computation, so results do not depend
/// on the worker count.
fn solve(
    mdp: &LabeledMdp,
    models: &[RewardModel],
    subsets: Vec<Vec<RegionId>>,
    config: PenaltyConfig,
    task: String,
    tol: f64,
    max_sweeps: usize,
) -> QTable {
    let n = mdp.num_cells();
    let transitions = transition_table(mdp);
    let succ: Vec<usize> = transitions.iter().map(|t| mdp.index(t.to)).collect();
    let regions = mdp.regions().len();
    let slices = models.len();
    let floor = config.floor();
    let blocks: Vec<Block> = (0..regions * slices)
        .into_par_iter()
        .map(|goal| {
            let (g, slice) = (goal / slices, goal % slices);
            let rewards: Vec<f64> = transitions.iter().map(|t| models[slice].reward(t, g)).collect();
            jacobi(&transitions, &succ, &rewards, n, floor, tol, max_sweeps)
        })
        .collect();

    let mut table = QTable::filled(mdp, subsets, config, task, floor);
    table.converged = blocks.iter().all(|b| b.converged);
    table.residual = blocks.iter().map(|b| b.residual).fold(0.0, f64::max);
    table.sweeps = blocks.iter().map(|b| b.sweeps).max().unwrap_or(0);
    for (goal, b) in blocks.iter().enumerate() {
        for cell in 0..n {
            let o = table.offset(cell, goal);
            table.values[o..o + Action::COUNT].copy_from_slice(&b.values[cell * Action::COUNT..(cell + 1) * Action::COUNT]);
        }
    }
    table
}

/// Jacobi iteration for one goal block, from the floor upwards.
fn jacobi(
    transitions: &[Transition],
    succ: &[usize],
    rewards: &[f64],
    n: usize,
    floor: f64,
    tol: f64,
    max_sweeps: usize,
) -> Block {
    let mut q = vec![floor; n * Action::COUNT];
    let mut next = q.clone();
    let mut v = vec![floor; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        residual = 0.0;
        for i in 0..q.len() {
            let backed = if transitions[i].done { rewards[i] } else { rewards[i] + v[succ[i]] };
            let val = backed.max(floor);
            residual = residual.max((val - q[i]).abs());
            next[i] = val;
        }
        std::mem::swap(&mut q, &mut next);
        for (c, vc) in v.iter_mut().enumerate() {
            *vc = q[c * Action::COUNT..(c + 1) * Action::COUNT].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        if residual <= tol {
            return Block { values: q, residual, sweeps, converged: true };
        }
    }
    Block { values: q, residual, sweeps, converged: false }
}

/// Value-iterates one task. A table that fails to converge within
/// `max_sweeps` is still returned with `converged = false`; use
/// [`QTable::require_converged`] to turn that into an error.
pub fn value_iterate(mdp: &LabeledMdp, spec: &RewardSpec, tol: f64, max_sweeps: Option<usize>) -> Result<ExtendedQ> {
    check_tol(tol)?;
    let model = RewardModel::new(mdp, spec)?;
    let max_sweeps = max_sweeps.unwrap_or_else(|| default_max_sweeps(mdp, &spec.config));
    Ok(solve(mdp, &[model], vec![vec![]], spec.config, spec.kind.to_string(), tol, max_sweeps))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidEnvironment(format!("tolerance must be positive, got {tol}")))
    }
}

/// `(Q̄_𝒰, Q̄_∅)`: every termination at the conditioned goal rewarded, or
/// every one penalized.
pub fn boundary_tables(mdp: &LabeledMdp, config: PenaltyConfig) -> Result<(ExtendedQ, ExtendedQ)> {
    let u = value_iterate(mdp, &RewardSpec::new(RewardKind::BoundaryU, config), DEFAULT_TOL, None)?;
    let e = value_iterate(mdp, &RewardSpec::new(RewardKind::BoundaryEmpty, config), DEFAULT_TOL, None)?;
    Ok((u.require_converged()?, e.require_converged()?))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Subsets of `0..n` with at most `k` members: empty set, then singletons,
/// then pairs, and so on, each size in lexicographic order.
pub fn enumerate_subsets(n: usize, k: usize) -> Vec<Vec<RegionId>> {
    let mut out = vec![vec![]];
    for size in 1..=k.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let mut i = size;
            while i > 0 && idx[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

pub fn subset_count(n: usize, k: usize) -> usize {
    (0..=k.min(n)).map(|i| binomial(n, i)).fold(0usize, usize::saturating_add)
}

/// Trains one slice per `G_ok` subset of size at most `k`. `subset_cap =
/// None` lifts the cap on the number of slices.
pub fn value_iterate_safety(
    mdp: &LabeledMdp,
    base: &RewardSpec,
    k: usize,
    tol: f64,
    max_sweeps: Option<usize>,
    subset_cap: Option<usize>,
) -> Result<SafetyExtendedQ> {
    check_tol(tol)?;
    if matches!(base.kind, RewardKind::SafetyExtended { .. }) {
        return Err(Error::InvalidEnvironment("base task is already safety-extended".into()));
    }
    let n = mdp.regions().len();
    let count = subset_count(n, k);
    if let Some(cap) = subset_cap {
        if count > cap {
            return Err(Error::SubsetExplosion { count, cap });
        }
    }
    let subsets = enumerate_subsets(n, k);
    let models = subsets
        .iter()
        .map(|s| {
            let kind = if s.is_empty() {
                base.kind.clone()
            } else {
                RewardKind::SafetyExtended { base: Box::new(base.kind.clone()), g_ok: s.iter().copied().collect() }
            };
            RewardModel::new(mdp, &RewardSpec::new(kind, base.config))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_sweeps = max_sweeps.unwrap_or_else(|| default_max_sweeps(mdp, &base.config));
    let task = if k == 0 { base.kind.to_string() } else { format!("{} [k={k}]", base.kind) };
    Ok(solve(mdp, &models, subsets, base.config, task, tol, max_sweeps))
}

/// Largest one-step Bellman error of `table` under `spec`, recomputed from
/// scratch. Only meaningful for single-slice tables.
pub fn bellman_residual(mdp: &LabeledMdp, spec: &RewardSpec, table: &QTable) -> Result<f64> {
    table.matches_env(mdp)?;
    let model = RewardModel::new(mdp, spec)?;
    let floor = spec.config.floor();
    let mut worst: f64 = 0.0;
    for s in mdp.cells() {
        let i = mdp.index(s);
        for g in 0..table.regions {
            for a in Action::ALL {
                let t = mdp.step(s, a);
                let next = if t.done { 0.0 } else { table.value(mdp.index(t.to), table.goal_index(g, 0)) };
                let target = (model.reward(&t, g) + next).max(floor);
                worst = worst.max((target - table.q(i, g, 0, a)).abs());
            }
        }
    }
    Ok(worst)
}

/// Greedy deterministic policy: per cell, the action maximizing the value
/// over all goal indices. Ties go to the earlier action, then the lower goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub width: usize,
    pub height: usize,
    pub actions: Vec<Action>,
    /// Goal index (see [`QTable::goal_index`]) that supplied each cell's value.
    pub goals: Vec<usize>,
    pub values: Vec<f64>,
}

impl Policy {
    pub fn action(&self, c: Cell) -> Action {
        self.actions[c.y * self.width + c.x]
    }

    pub fn uniform(width: usize, height: usize, a: Action) -> Self {
        Policy { width, height, actions: vec![a; width * height], goals: vec![0; width * height], values: vec![0.0; width * height] }
    }
}

/// Best action at `(cell, goal)` with ties to the earlier action.
pub fn greedy_action(table: &QTable, cell: usize, goal: usize) -> (Action, f64) {
    let vals = table.action_values(cell, goal);
    let mut best = (Action::Up, vals[0]);
    for a in &Action::ALL[1..] {
        if vals[a.index()] > best.1 {
            best = (*a, vals[a.index()]);
        }
    }
    best
}

pub fn extract_policy(table: &QTable) -> Policy {
    let n = table.num_cells();
    let mut actions = Vec::with_capacity(n);
    let mut goals = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for cell in 0..n {
        let mut best: Option<(f64, Action, usize)> = None;
        for a in Action::ALL {
            for goal in 0..table.goal_count() {
                let v = table.action_values(cell, goal)[a.index()];
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, a, goal));
                }
            }
        }
        let (v, a, goal) = best.unwrap_or((0.0, Action::Stay, 0));
        actions.push(a);
        goals.push(goal);
        values.push(v);
    }
    Policy { width: table.width, height: table.height, actions, goals, values }
}
