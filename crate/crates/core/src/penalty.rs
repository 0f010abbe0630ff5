//! Penalty hierarchy, task rewards, and the penalty multiplier `C_p`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{Formula, ResolvedFormula};
use crate::mdp::{Action, LabelSet, LabeledMdp, RegionId, Transition};

pub const DEFAULT_R_STEP: f64 = -0.1;
pub const DEFAULT_R_GOAL: f64 = 2.0;

/// Step and goal rewards plus the multiplier that spaces the penalty tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub r_step: f64,
    pub r_goal: f64,
    pub c_p: u32,
    /// Separates bad termination from worst pass-through by one more factor
    /// of `C_p`, shifting the termination tiers and the floor up by one.
    #[serde(default)]
    pub extra_tier: bool,
}

impl PenaltyConfig {
    pub fn new(c_p: u32) -> Self {
        PenaltyConfig { r_step: DEFAULT_R_STEP, r_goal: DEFAULT_R_GOAL, c_p, extra_tier: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_step < 0.0 && self.r_step.is_finite()) {
            return Err(Error::InvalidConfig(format!("r_step must be negative, got {}", self.r_step)));
        }
        if !(self.r_goal > 0.0 && self.r_goal.is_finite()) {
            return Err(Error::InvalidConfig(format!("r_goal must be positive, got {}", self.r_goal)));
        }
        if self.c_p == 0 {
            return Err(Error::InvalidConfig("c_p must be at least 1".into()));
        }
        Ok(())
    }

    fn tier(&self, power: i32) -> f64 {
        f64::from(self.c_p).powi(power) * self.r_step
    }

    fn shift(&self) -> i32 {
        i32::from(self.extra_tier)
    }

    pub fn badstep(&self) -> f64 {
        self.tier(1)
    }

    pub fn worststep(&self) -> f64 {
        self.tier(2)
    }

    pub fn badterm(&self) -> f64 {
        self.tier(2 + self.shift())
    }

    pub fn worstterm(&self) -> f64 {
        self.tier(3 + self.shift())
    }

    /// Value assigned to never terminating.
    pub fn floor(&self) -> f64 {
        self.tier(4 + self.shift())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    Positive(Formula),
    /// Learned negation of one proposition, or of a conjunction of
    /// negations when the set has several members.
    Negated(BTreeSet<String>),
    BoundaryU,
    BoundaryEmpty,
    SafetyExtended { base: Box<RewardKind>, g_ok: BTreeSet<RegionId> },
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardKind::Positive(phi) => write!(f, "positive({phi})"),
            RewardKind::Negated(props) => {
                write!(f, "negated({})", props.iter().cloned().collect::<Vec<_>>().join(","))
            }
            RewardKind::BoundaryU => f.write_str("boundary-u"),
            RewardKind::BoundaryEmpty => f.write_str("boundary-empty"),
            RewardKind::SafetyExtended { base, g_ok } => {
                let ids: Vec<String> = g_ok.iter().map(|g| g.to_string()).collect();
                write!(f, "safety({base}; ok={{{}}})", ids.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub config: PenaltyConfig,
}

impl RewardSpec {
    pub fn new(kind: RewardKind, config: PenaltyConfig) -> Self {
        RewardSpec { kind, config }
    }

    pub fn positive(phi: Formula, config: PenaltyConfig) -> Self {
        RewardSpec::new(RewardKind::Positive(phi), config)
    }

    pub fn negated<'a>(props: impl IntoIterator<Item = &'a str>, config: PenaltyConfig) -> Self {
        RewardSpec::new(RewardKind::Negated(props.into_iter().map(str::to_string).collect()), config)
    }
}

/// Which row of the reward case table fired for a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardCase {
    Goal,
    Step,
    BadStep,
    WorstStep,
    BadTerm,
    WorstTerm,
}

/// A reward spec resolved against one environment: per-region satisfaction,
/// the avoided propositions, and the regions whose pass-through is lightened.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub config: PenaltyConfig,
    satisfied: Vec<bool>,
    avoid: LabelSet,
    lightened: Vec<bool>,
}

impl RewardModel {
    pub fn new(mdp: &LabeledMdp, spec: &RewardSpec) -> Result<Self> {
        spec.config.validate()?;
        let n = mdp.regions().len();
        let mut lightened = vec![false; n];
        let base = match &spec.kind {
            RewardKind::SafetyExtended { base, g_ok } => {
                for &g in g_ok {
                    if g >= n {
                        return Err(Error::InvalidEnvironment(format!("G_ok names region {g}, environment has {n}")));
                    }
                    lightened[g] = true;
                }
                if matches!(**base, RewardKind::SafetyExtended { .. }) {
                    return Err(Error::InvalidEnvironment("safety-extended rewards cannot be nested".into()));
                }
                &**base
            }
            k => k,
        };
        let (satisfied, avoid) = match base {
            RewardKind::Positive(phi) => {
                let r: ResolvedFormula = phi.resolve(mdp)?;
                (mdp.regions().iter().map(|g| r.eval(g.label)).collect(), LabelSet::EMPTY)
            }
            RewardKind::Negated(props) => {
                let mask = mdp.prop_mask(props.iter().map(String::as_str))?;
                (mdp.regions().iter().map(|g| !g.label.intersects(mask)).collect(), mask)
            }
            RewardKind::BoundaryU => (vec![true; n], LabelSet::EMPTY),
            RewardKind::BoundaryEmpty => (vec![false; n], LabelSet::EMPTY),
            RewardKind::SafetyExtended { .. } => unreachable!("rejected above"),
        };
        Ok(RewardModel { config: spec.config, satisfied, avoid, lightened })
    }

    pub fn satisfied(&self, g: RegionId) -> bool {
        self.satisfied[g]
    }

    pub fn avoid(&self) -> LabelSet {
        self.avoid
    }

    /// Case selection, in this order: wrong-region termination, avoided
    /// emission, pass-through of another region, termination at `g`.
    pub fn case(&self, t: &Transition, g: RegionId) -> RewardCase {
        if t.done {
            return match t.terminal {
                Some(r) if r == g => {
                    if self.satisfied[g] {
                        RewardCase::Goal
                    } else {
                        RewardCase::BadTerm
                    }
                }
                _ => RewardCase::WorstTerm,
            };
        }
        if t.emitted.is_empty() {
            return RewardCase::Step;
        }
        if t.emitted.intersects(self.avoid) {
            return RewardCase::WorstStep;
        }
        match t.entered {
            Some(r) if r != g && !self.lightened[r] => RewardCase::BadStep,
            _ => RewardCase::Step,
        }
    }

    pub fn value(&self, case: RewardCase) -> f64 {
        let c = &self.config;
        match case {
            RewardCase::Goal => c.r_goal,
            RewardCase::Step => c.r_step,
            RewardCase::BadStep => c.badstep(),
            RewardCase::WorstStep => c.worststep(),
            RewardCase::BadTerm => c.badterm(),
            RewardCase::WorstTerm => c.worstterm(),
        }
    }

    pub fn reward(&self, t: &Transition, g: RegionId) -> f64 {
        self.value(self.case(t, g))
    }
}

fn reward_of_kind(mdp: &LabeledMdp, spec: &RewardSpec, t: &Transition, g: RegionId) -> Result<f64> {
    Ok(RewardModel::new(mdp, spec)?.reward(t, g))
}

/// Positive task reward for goal `g`.
pub fn reward_positive(mdp: &LabeledMdp, spec: &RewardSpec, t: &Transition, g: RegionId) -> Result<f64> {
    debug_assert!(matches!(spec.kind, RewardKind::Positive(_)));
    reward_of_kind(mdp, spec, t, g)
}

/// Learned-negation reward for goal `g`.
pub fn reward_negated(mdp: &LabeledMdp, spec: &RewardSpec, t: &Transition, g: RegionId) -> Result<f64> {
    debug_assert!(matches!(spec.kind, RewardKind::Negated(_)));
    reward_of_kind(mdp, spec, t, g)
}

pub fn reward_boundary(mdp: &LabeledMdp, spec: &RewardSpec, t: &Transition, g: RegionId) -> Result<f64> {
    debug_assert!(matches!(spec.kind, RewardKind::BoundaryU | RewardKind::BoundaryEmpty));
    reward_of_kind(mdp, spec, t, g)
}

pub fn reward_safety_extended(mdp: &LabeledMdp, spec: &RewardSpec, t: &Transition, g: RegionId) -> Result<f64> {
    debug_assert!(matches!(spec.kind, RewardKind::SafetyExtended { .. }));
    reward_of_kind(mdp, spec, t, g)
}

/// A proposition or its negation; the obstacles for `q` are the regions
/// containing `q`, for `!q` the regions that lack it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub prop: String,
    pub negated: bool,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!{}", self.prop)
        } else {
            f.write_str(&self.prop)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathLen {
    Finite(usize),
    Infinite,
}

fn obstacle_regions(mdp: &LabeledMdp, lit: &Literal) -> Result<Vec<bool>> {
    let p = mdp.prop_index(&lit.prop).ok_or_else(|| Error::UnknownProposition(lit.prop.clone()))?;
    Ok(mdp.regions().iter().map(|g| g.label.contains(p) != lit.negated).collect())
}

/// Lexicographic (obstacle entries, steps) single-source search over cells.
/// Returns the step count of the lexicographic optimum for every cell.
fn lex_steps_from(mdp: &LabeledMdp, src: usize, obstacle: &[bool]) -> Vec<Option<(usize, usize)>> {
    let n = mdp.num_cells();
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    best[src] = Some((0, 0));
    heap.push(Reverse((0usize, 0usize, src)));
    while let Some(Reverse((v, s, i))) = heap.pop() {
        if best[i] != Some((v, s)) {
            continue;
        }
        let c = mdp.cell(i);
        for a in Action::ALL {
            if a == Action::Stay {
                continue;
            }
            let t = mdp.step(c, a);
            let j = mdp.index(t.to);
            if j == i {
                continue;
            }
            let entry = t.entered.is_some_and(|r| obstacle[r]);
            let cost = (v + usize::from(entry), s + 1);
            if best[j].is_none_or(|b| cost < b) {
                best[j] = Some(cost);
                heap.push(Reverse((cost.0, cost.1, j)));
            }
        }
    }
    best
}

fn avoid_lengths_from(mdp: &LabeledMdp, g1: RegionId, obstacle: &[bool]) -> Vec<PathLen> {
    let mut out = vec![PathLen::Finite(0); mdp.regions().len()];
    let mut seen_unreachable = vec![false; mdp.regions().len()];
    for &c1 in &mdp.region(g1).cells {
        let dist = lex_steps_from(mdp, mdp.index(c1), obstacle);
        for g2 in mdp.regions() {
            if g2.id == g1 {
                continue;
            }
            for &c2 in &g2.cells {
                match dist[mdp.index(c2)] {
                    Some((_, steps)) => {
                        if let PathLen::Finite(cur) = out[g2.id] {
                            out[g2.id] = PathLen::Finite(cur.max(steps));
                        }
                    }
                    None => seen_unreachable[g2.id] = true,
                }
            }
        }
    }
    for (g2, bad) in seen_unreachable.into_iter().enumerate() {
        if bad {
            out[g2] = PathLen::Infinite;
        }
    }
    out
}

/// Longest, over cell pairs of `g1 × g2`, of the step length of the path
/// that enters the fewest obstacle regions and is shortest among those.
pub fn avoid_path_len(mdp: &LabeledMdp, g1: RegionId, g2: RegionId, lit: &Literal) -> Result<PathLen> {
    let n = mdp.regions().len();
    if g1 >= n || g2 >= n {
        return Err(Error::InvalidEnvironment(format!("region id out of range (environment has {n})")));
    }
    if g1 == g2 {
        return Ok(PathLen::Finite(0));
    }
    let obstacle = obstacle_regions(mdp, lit)?;
    Ok(avoid_lengths_from(mdp, g1, &obstacle)[g2])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpWitness {
    pub from: RegionId,
    pub to: RegionId,
    pub literal: Literal,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpReport {
    pub c_p: u32,
    /// The first (region pair, literal) attaining the maximum, if any pair
    /// needed a positive number of steps.
    pub witness: Option<CpWitness>,
}

/// Smallest `N ≥ 1` that covers every avoiding path length between goals.
pub fn penalty_multiplier(mdp: &LabeledMdp) -> Result<CpReport> {
    if mdp.regions().is_empty() {
        return Err(Error::EnvironmentDisconnected("environment has no goal regions".into()));
    }
    let mut lits = Vec::new();
    for p in mdp.propositions() {
        for negated in [false, true] {
            lits.push(Literal { prop: p.clone(), negated });
        }
    }
    let jobs: Vec<(RegionId, usize)> =
        (0..mdp.regions().len()).flat_map(|g| (0..lits.len()).map(move |l| (g, l))).collect();
    let results: Vec<Result<Vec<PathLen>>> = jobs
        .par_iter()
        .map(|&(g1, l)| Ok(avoid_lengths_from(mdp, g1, &obstacle_regions(mdp, &lits[l])?)))
        .collect();

    let mut best: Option<CpWitness> = None;
    let mut any_finite = false;
    let mut any_pair = false;
    // Deterministic scan order: g1, literal, g2.
    for (&(g1, l), res) in jobs.iter().zip(results) {
        for (g2, len) in res?.into_iter().enumerate() {
            if g2 == g1 {
                continue;
            }
            any_pair = true;
            if let PathLen::Finite(steps) = len {
                any_finite = true;
                if best.as_ref().is_none_or(|b| steps > b.steps) {
                    best = Some(CpWitness { from: g1, to: g2, literal: lits[l].clone(), steps });
                }
            }
        }
    }
    if any_pair && !any_finite {
        return Err(Error::EnvironmentDisconnected("no pair of goal regions is mutually reachable".into()));
    }
    let steps = best.as_ref().map_or(0, |b| b.steps);
    let c_p = u32::try_from(steps.max(1)).map_err(|_| Error::InvalidEnvironment("C_p overflows u32".into()))?;
    Ok(CpReport { c_p, witness: best.filter(|b| b.steps > 0) })
}
