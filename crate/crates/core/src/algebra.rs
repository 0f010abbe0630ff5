//! Zero-shot Boolean composition of extended Q tables.
//!
//! `neg(Q) = (Q_U + Q_E) - Q`, `conj` is the entrywise minimum and `disj`
//! the entrywise maximum. Formulas compile to folds of these operators; under
//! prioritized safety, negative literals are looked up as learned tables
//! instead of being built with `neg`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::formula::{Formula, Semantics, TaskSpec};
use crate::mdp::{Action, LabeledMdp};
use crate::penalty::{PenaltyConfig, RewardKind, RewardSpec};
use crate::planner::{greedy_action, value_iterate, value_iterate_safety, Policy, QTable, DEFAULT_SUBSET_CAP, DEFAULT_TOL};

/// Name of a table in a library.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKey {
    Positive(String),
    /// Learned negation; several members mean a pre-trained conjunction of
    /// negations.
    Negated(BTreeSet<String>),
    BoundaryU,
    BoundaryEmpty,
}

impl TaskKey {
    pub fn positive(p: &str) -> Self {
        TaskKey::Positive(p.to_string())
    }

    pub fn negated<'a>(props: impl IntoIterator<Item = &'a str>) -> Self {
        TaskKey::Negated(props.into_iter().map(str::to_string).collect())
    }

    pub fn reward_kind(&self) -> RewardKind {
        match self {
            TaskKey::Positive(p) => RewardKind::Positive(Formula::Prop(p.clone())),
            TaskKey::Negated(ps) => RewardKind::Negated(ps.clone()),
            TaskKey::BoundaryU => RewardKind::BoundaryU,
            TaskKey::BoundaryEmpty => RewardKind::BoundaryEmpty,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{self}.qtab")
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKey::Positive(p) => f.write_str(p),
            TaskKey::Negated(ps) => write!(f, "not-{}", ps.iter().cloned().collect::<Vec<_>>().join("+")),
            TaskKey::BoundaryU => f.write_str("U"),
            TaskKey::BoundaryEmpty => f.write_str("EMPTY"),
        }
    }
}

impl FromStr for TaskKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { offset: 0, message: format!("`{s}` is not a task key (expected p, not-p, not-p+q, U or EMPTY)") };
        match s {
            "U" => return Ok(TaskKey::BoundaryU),
            "EMPTY" => return Ok(TaskKey::BoundaryEmpty),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("not-") {
            let props: BTreeSet<String> = rest.split('+').map(str::to_string).collect();
            if props.iter().any(|p| !crate::formula::is_identifier(p)) {
                return Err(bad());
            }
            return Ok(TaskKey::Negated(props));
        }
        if crate::formula::is_identifier(s) {
            Ok(TaskKey::Positive(s.to_string()))
        } else {
            Err(bad())
        }
    }
}

/// Tables trained on one environment with one penalty configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLibrary {
    pub config: PenaltyConfig,
    pub fingerprint: u64,
    pub width: usize,
    pub height: usize,
    pub regions: usize,
    tables: BTreeMap<TaskKey, QTable>,
}

impl TaskLibrary {
    pub fn new(mdp: &LabeledMdp, config: PenaltyConfig) -> Self {
        TaskLibrary {
            config,
            fingerprint: mdp.fingerprint(),
            width: mdp.width(),
            height: mdp.height(),
            regions: mdp.regions().len(),
            tables: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: TaskKey, table: QTable) -> Result<()> {
        if (table.width, table.height, table.regions) != (self.width, self.height, self.regions) {
            return Err(Error::IncompatibleTables(format!("`{key}` has different dimensions from the library")));
        }
        if table.fingerprint != self.fingerprint {
            return Err(Error::IncompatibleTables(format!("`{key}` was trained on a different environment")));
        }
        if table.config != self.config {
            return Err(Error::IncompatibleTables(format!("`{key}` uses a different penalty configuration")));
        }
        self.tables.insert(key, table);
        Ok(())
    }

    pub fn get(&self, key: &TaskKey) -> Result<&QTable> {
        self.tables.get(key).ok_or_else(|| Error::MissingTask(key.to_string()))
    }

    pub fn contains(&self, key: &TaskKey) -> bool {
        self.tables.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &TaskKey> {
        self.tables.keys()
    }

    pub fn tables(&self) -> impl Iterator<Item = (&TaskKey, &QTable)> {
        self.tables.iter()
    }

    /// Value-iterates `key` and stores it. `k > 0` trains `G_ok` slices.
    /// Fails with `NonConvergence` if the table does not converge.
    pub fn train(&mut self, mdp: &LabeledMdp, key: TaskKey, k: usize) -> Result<&QTable> {
        let spec = RewardSpec::new(key.reward_kind(), self.config);
        let table = if k == 0 {
            value_iterate(mdp, &spec, DEFAULT_TOL, None)?
        } else {
            value_iterate_safety(mdp, &spec, k, DEFAULT_TOL, None, Some(DEFAULT_SUBSET_CAP))?
        }
        .require_converged()?;
        self.insert(key.clone(), table)?;
        self.get(&key)
    }

    /// Trains the boundary tables and one table per proposition.
    pub fn train_positive_basis(&mut self, mdp: &LabeledMdp) -> Result<()> {
        for key in [TaskKey::BoundaryU, TaskKey::BoundaryEmpty] {
            self.train(mdp, key, 0)?;
        }
        for p in mdp.propositions() {
            self.train(mdp, TaskKey::positive(p), 0)?;
        }
        Ok(())
    }
}

fn zip_with(q1: &QTable, q2: &QTable, f: impl Fn(f64, f64) -> f64) -> Result<QTable> {
    q1.check_compatible(q2)?;
    let wide = if q1.slices() >= q2.slices() { q1 } else { q2 };
    let mut out = wide.clone();
    let (s1, s2) = (q1.slices(), q2.slices());
    let slices = wide.slices();
    for cell in 0..wide.num_cells() {
        for g in 0..wide.regions {
            for slice in 0..slices {
                let o = out.offset(cell, out.goal_index(g, slice));
                let o1 = q1.offset(cell, q1.goal_index(g, slice.min(s1 - 1)));
                let o2 = q2.offset(cell, q2.goal_index(g, slice.min(s2 - 1)));
                for a in 0..Action::COUNT {
                    out.values[o + a] = f(q1.values[o1 + a], q2.values[o2 + a]);
                }
            }
        }
    }
    out.converged = q1.converged && q2.converged;
    out.residual = q1.residual.max(q2.residual);
    out.sweeps = 0;
    Ok(out)
}

/// `(Q_U + Q_E) - Q`, entrywise.
pub fn neg(q: &QTable, q_u: &QTable, q_empty: &QTable) -> Result<QTable> {
    let sum = zip_with(q_u, q_empty, |u, e| u + e)?;
    let mut out = zip_with(&sum, q, |s, x| s - x)?;
    out.task = format!("neg({})", q.task);
    Ok(out)
}

pub fn conj(q1: &QTable, q2: &QTable) -> Result<QTable> {
    let mut out = zip_with(q1, q2, f64::min)?;
    out.task = format!("conj({}, {})", q1.task, q2.task);
    Ok(out)
}

pub fn disj(q1: &QTable, q2: &QTable) -> Result<QTable> {
    let mut out = zip_with(q1, q2, f64::max)?;
    out.task = format!("disj({}, {})", q1.task, q2.task);
    Ok(out)
}

/// Which operator produced a composed table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Table(String),
    Neg(Box<Provenance>),
    Conj(Box<Provenance>, Box<Provenance>),
    Disj(Box<Provenance>, Box<Provenance>),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Table(k) => f.write_str(k),
            Provenance::Neg(x) => write!(f, "neg({x})"),
            Provenance::Conj(a, b) => write!(f, "conj({a}, {b})"),
            Provenance::Disj(a, b) => write!(f, "disj({a}, {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    pub table: QTable,
    pub provenance: Provenance,
    pub warnings: Vec<Warning>,
}

struct Compiler<'a> {
    lib: &'a TaskLibrary,
    negated_used: BTreeSet<TaskKey>,
    all_negated_sliced: bool,
}

impl Compiler<'_> {
    fn lookup(&mut self, key: TaskKey) -> Result<(QTable, Provenance)> {
        let t = self.lib.get(&key)?.clone();
        if matches!(key, TaskKey::Negated(_)) {
            self.all_negated_sliced &= t.slices() > 1;
            self.negated_used.insert(key.clone());
        }
        Ok((t, Provenance::Table(key.to_string())))
    }

    fn min_violation(&mut self, f: &Formula) -> Result<(QTable, Provenance)> {
        match f {
            Formula::Prop(p) => self.lookup(TaskKey::positive(p)),
            Formula::Not(x) => {
                let (q, pq) = self.min_violation(x)?;
                let u = self.lib.get(&TaskKey::BoundaryU)?;
                let e = self.lib.get(&TaskKey::BoundaryEmpty)?;
                Ok((neg(&q, u, e)?, Provenance::Neg(Box::new(pq))))
            }
            Formula::And(l, r) => {
                let (a, pa) = self.min_violation(l)?;
                let (b, pb) = self.min_violation(r)?;
                Ok((conj(&a, &b)?, Provenance::Conj(Box::new(pa), Box::new(pb))))
            }
            Formula::Or(l, r) => {
                let (a, pa) = self.min_violation(l)?;
                let (b, pb) = self.min_violation(r)?;
                Ok((disj(&a, &b)?, Provenance::Disj(Box::new(pa), Box::new(pb))))
            }
        }
    }

    fn prioritized(&mut self, f: &Formula) -> Result<(QTable, Provenance)> {
        match f {
            Formula::Prop(p) => self.lookup(TaskKey::positive(p)),
            Formula::Not(x) => match &**x {
                Formula::Prop(p) => self.lookup(TaskKey::negated([p.as_str()])),
                other => Err(Error::NegationUnavailable(format!(
                    "`!({other})` needs analytic negation, which prioritized safety does not allow; rewrite in negation normal form"
                ))),
            },
            Formula::And(..) => {
                let conjuncts = f.conjuncts();
                let negs: BTreeSet<&str> = conjuncts.iter().filter_map(|c| c.negative_literal()).collect();
                let joint = TaskKey::negated(negs.iter().copied());
                let mut parts: Vec<(QTable, Provenance)> = Vec::new();
                let use_joint = negs.len() >= 2 && self.lib.contains(&joint);
                if use_joint {
                    parts.push(self.lookup(joint)?);
                }
                for c in conjuncts {
                    if use_joint && c.negative_literal().is_some() {
                        continue;
                    }
                    parts.push(self.prioritized(c)?);
                }
                let mut iter = parts.into_iter();
                let (mut acc, mut prov) = iter.next().expect("a conjunction has conjuncts");
                for (q, p) in iter {
                    acc = conj(&acc, &q)?;
                    prov = Provenance::Conj(Box::new(prov), Box::new(p));
                }
                Ok((acc, prov))
            }
            Formula::Or(l, r) => {
                let (a, pa) = self.prioritized(l)?;
                let (b, pb) = self.prioritized(r)?;
                Ok((disj(&a, &b)?, Provenance::Disj(Box::new(pa), Box::new(pb))))
            }
        }
    }
}

/// Compiles a task into a composed table. Under prioritized safety the
/// formula must be in negation normal form (as [`TaskSpec::new`] stores it).
pub fn compile(task: &TaskSpec, lib: &TaskLibrary) -> Result<Compiled> {
    let mut c = Compiler { lib, negated_used: BTreeSet::new(), all_negated_sliced: true };
    let (mut table, provenance) = match task.semantics {
        Semantics::MinimumViolation => c.min_violation(&task.formula)?,
        Semantics::PrioritizedSafety => c.prioritized(&task.formula)?,
    };
    let mut warnings = Vec::new();
    if c.negated_used.len() > 1 && !c.all_negated_sliced {
        warnings.push(Warning::AssumptionViolated { negated_tables: c.negated_used.iter().map(|k| k.to_string()).collect() });
    }
    table.task = format!("{} [{}]", task.formula, task.semantics);
    Ok(Compiled { table, provenance, warnings })
}

/// Per-goal greedy policy and its value, abstracted from how it was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOracle {
    pub width: usize,
    pub height: usize,
    pub goals: usize,
    /// Indexed by `cell * goals + goal`.
    pub actions: Vec<Action>,
    pub values: Vec<f64>,
}

impl PolicyOracle {
    pub fn from_table(table: &QTable) -> Self {
        let goals = table.goal_count();
        let mut actions = Vec::with_capacity(table.num_cells() * goals);
        let mut values = Vec::with_capacity(table.num_cells() * goals);
        for cell in 0..table.num_cells() {
            for goal in 0..goals {
                let (a, v) = greedy_action(table, cell, goal);
                actions.push(a);
                values.push(v);
            }
        }
        PolicyOracle { width: table.width, height: table.height, goals, actions, values }
    }

    fn check(&self, other: &PolicyOracle) -> Result<()> {
        if (self.width, self.height, self.goals) != (other.width, other.height, other.goals) {
            return Err(Error::IncompatibleTables("policy oracles cover different goal sets".into()));
        }
        Ok(())
    }

    /// Per cell: the goal with the highest value; among equal values the
    /// earliest action, then the lowest goal. Same tie-break as
    /// [`crate::planner::extract_policy`].
    pub fn to_policy(&self) -> Policy {
        let n = self.width * self.height;
        let mut actions = Vec::with_capacity(n);
        let mut goals = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for cell in 0..n {
            let mut best: Option<(f64, Action, usize)> = None;
            for goal in 0..self.goals {
                let i = cell * self.goals + goal;
                let (v, a) = (self.values[i], self.actions[i]);
                let better = match best {
                    None => true,
                    Some((bv, ba, _)) => v > bv || (v == bv && a < ba),
                };
                if better {
                    best = Some((v, a, goal));
                }
            }
            let (v, a, g) = best.unwrap_or((0.0, Action::Stay, 0));
            actions.push(a);
            goals.push(g);
            values.push(v);
        }
        Policy { width: self.width, height: self.height, actions, goals, values }
    }
}

fn select(o1: &PolicyOracle, o2: &PolicyOracle, pick_first: impl Fn(f64, f64) -> bool) -> Result<PolicyOracle> {
    o1.check(o2)?;
    let mut out = o1.clone();
    for i in 0..o1.values.len() {
        if !pick_first(o1.values[i], o2.values[i]) {
            out.actions[i] = o2.actions[i];
            out.values[i] = o2.values[i];
        }
    }
    Ok(out)
}

/// Per goal, follow whichever policy reports the lower value; ties keep `o1`.
pub fn policy_select_conj(o1: &PolicyOracle, o2: &PolicyOracle) -> Result<PolicyOracle> {
    select(o1, o2, |a, b| a <= b)
}

/// Per goal, follow whichever policy reports the higher value; ties keep `o1`.
pub fn policy_select_disj(o1: &PolicyOracle, o2: &PolicyOracle) -> Result<PolicyOracle> {
    select(o1, o2, |a, b| a >= b)
}
