//! Labeled deterministic grid MDPs.
//!
//! Cells are addressed as `(x, y)` with `y` growing upwards, so `Up` increments
//! `y`. Cell indices are row-major from the bottom row: `index = y * width + x`.
//! Labels are emitted only when the labeling function changes along a path, and
//! the first emitted label of every execution is the empty set.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENV_SCHEMA_VERSION: u32 = 1;
pub const MAX_PROPOSITIONS: usize = 64;

pub type RegionId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Parses `x,y`, optionally in parentheses.
impl std::str::FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix('(').and_then(|t| t.strip_suffix(')')).unwrap_or(t);
        let bad = || Error::Parse { offset: 0, message: format!("`{s}` is not a cell (expected x,y)") };
        let (x, y) = t.split_once(',').ok_or_else(bad)?;
        Ok(Cell::new(x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    /// Fixed action order; also the tie-break order for greedy policies.
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    pub fn glyph(self) -> char {
        match self {
            Action::Up => '↑',
            Action::Down => '↓',
            Action::Left => '←',
            Action::Right => '→',
            Action::Stay => '●',
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stay => "stay",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    /// Accepts full names or their first letter (`s` for Stay).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" | "u" => Ok(Action::Up),
            "down" | "d" => Ok(Action::Down),
            "left" | "l" => Ok(Action::Left),
            "right" | "r" => Ok(Action::Right),
            "stay" | "s" => Ok(Action::Stay),
            other => Err(Error::Parse { offset: 0, message: format!("unknown action `{other}`") }),
        }
    }
}

/// A set of propositions, stored as a bitmask over the environment's
/// proposition order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LabelSet(pub u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, prop: usize) -> bool {
        prop < 64 && self.0 & (1 << prop) != 0
    }

    pub fn with(self, prop: usize) -> LabelSet {
        LabelSet(self.0 | (1 << prop))
    }

    pub fn intersects(self, other: LabelSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.contains(i))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: RegionId,
    pub cells: Vec<Cell>,
    pub label: LabelSet,
}

/// Result of a single deterministic transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: Cell,
    pub action: Action,
    pub to: Cell,
    pub emitted: LabelSet,
    pub done: bool,
    /// Region entered by this step, present only when a label was emitted.
    pub entered: Option<RegionId>,
    /// Region the episode terminated in, present only when `done`.
    pub terminal: Option<RegionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecStep {
    pub cell: Cell,
    pub emitted: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub steps: Vec<ExecStep>,
    pub terminated: bool,
    pub terminal_region: Option<RegionId>,
}

impl Execution {
    pub fn start(cell: Cell) -> Self {
        Execution { steps: vec![ExecStep { cell, emitted: LabelSet::EMPTY }], terminated: false, terminal_region: None }
    }

    pub fn push(&mut self, t: &Transition) {
        self.steps.push(ExecStep { cell: t.to, emitted: t.emitted });
        if t.done {
            self.terminated = true;
            self.terminal_region = t.terminal;
        }
    }

    pub fn transitions(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn last_cell(&self) -> Cell {
        self.steps.last().map(|s| s.cell).expect("execution has a start state")
    }
}

/// `↾_L(x)`: the emitted label per step; the first entry is always empty.
pub fn project(x: &Execution) -> Vec<LabelSet> {
    x.steps.iter().map(|s| s.emitted).collect()
}

/// `↾⁺_L(x)`: the non-empty emitted labels, in order.
pub fn project_nonempty(x: &Execution) -> Vec<LabelSet> {
    x.steps.iter().map(|s| s.emitted).filter(|l| !l.is_empty()).collect()
}

/// Immutable labeled grid MDP. Regions are the maximal 4-connected components
/// of cells sharing the same non-empty label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledMdp {
    width: usize,
    height: usize,
    propositions: Vec<String>,
    labels: Vec<LabelSet>,
    regions: Vec<Region>,
    region_of: Vec<Option<RegionId>>,
    start: Option<Cell>,
}

impl LabeledMdp {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn propositions(&self) -> &[String] {
        &self.propositions
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, id: RegionId) -> &Region {
        &self.regions[id]
    }

    pub fn start(&self) -> Option<Cell> {
        self.start
    }

    pub fn with_start(mut self, start: Cell) -> Result<Self> {
        self.check_cell(start)?;
        self.start = Some(start);
        Ok(self)
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_cells()).map(move |i| self.cell(i))
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn check_cell(&self, c: Cell) -> Result<()> {
        if self.in_bounds(c) {
            Ok(())
        } else {
            Err(Error::InvalidEnvironment(format!("cell {c} outside {}x{} grid", self.width, self.height)))
        }
    }

    pub fn label(&self, c: Cell) -> LabelSet {
        self.labels[self.index(c)]
    }

    pub fn region_at(&self, c: Cell) -> Option<RegionId> {
        self.region_of[self.index(c)]
    }

    pub fn prop_index(&self, name: &str) -> Option<usize> {
        self.propositions.iter().position(|p| p == name)
    }

    pub fn prop_mask<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<LabelSet> {
        let mut set = LabelSet::EMPTY;
        for n in names {
            let i = self.prop_index(n).ok_or_else(|| Error::UnknownProposition(n.to_string()))?;
            set = set.with(i);
        }
        Ok(set)
    }

    pub fn label_names(&self, set: LabelSet) -> Vec<&str> {
        set.iter().filter_map(|i| self.propositions.get(i).map(String::as_str)).collect()
    }

    /// `{A,B}` style rendering; `∅` for the empty set.
    pub fn format_labels(&self, set: LabelSet) -> String {
        if set.is_empty() {
            "∅".to_string()
        } else {
            format!("{{{}}}", self.label_names(set).join(","))
        }
    }

    pub fn successor(&self, s: Cell, a: Action) -> Cell {
        match a {
            Action::Up if s.y + 1 < self.height => Cell::new(s.x, s.y + 1),
            Action::Down if s.y > 0 => Cell::new(s.x, s.y - 1),
            Action::Left if s.x > 0 => Cell::new(s.x - 1, s.y),
            Action::Right if s.x + 1 < self.width => Cell::new(s.x + 1, s.y),
            _ => s,
        }
    }

    /// Deterministic transition. `Stay` inside a region terminates the episode;
    /// `Stay` anywhere else and moves off the grid are no-ops.
    pub fn step(&self, s: Cell, a: Action) -> Transition {
        let to = self.successor(s, a);
        let (from_label, to_label) = (self.label(s), self.label(to));
        let emitted = if to_label != from_label { to_label } else { LabelSet::EMPTY };
        let done = a == Action::Stay && self.region_at(s).is_some();
        Transition {
            from: s,
            action: a,
            to,
            emitted,
            done,
            entered: if emitted.is_empty() { None } else { self.region_at(to) },
            terminal: if done { self.region_at(s) } else { None },
        }
    }

    /// Stable digest of the grid and labeling, used to check that tables were
    /// trained on the same environment.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        for p in &self.propositions {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        for l in &self.labels {
            h.update(l.0.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
    }

    pub fn to_file(&self) -> EnvFile {
        let cells = self
            .cells()
            .filter(|&c| !self.label(c).is_empty())
            .map(|c| CellLabels {
                x: c.x,
                y: c.y,
                labels: self.label_names(self.label(c)).into_iter().map(str::to_string).collect(),
            })
            .collect();
        EnvFile {
            schema_version: ENV_SCHEMA_VERSION,
            width: self.width,
            height: self.height,
            propositions: self.propositions.clone(),
            cells,
            start: self.start.map(|c| [c.x, c.y]),
        }
    }
}

/// Builds an MDP and derives its regions. Region ids follow the row-major
/// order of each region's minimum cell index.
pub fn build_mdp<S: AsRef<str>>(
    width: usize,
    height: usize,
    propositions: &[S],
    labels: &[(Cell, Vec<S>)],
) -> Result<LabeledMdp> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidEnvironment("width and height must be at least 1".into()));
    }
    if propositions.len() > MAX_PROPOSITIONS {
        return Err(Error::InvalidEnvironment(format!("at most {MAX_PROPOSITIONS} propositions are supported")));
    }
    let props: Vec<String> = propositions.iter().map(|p| p.as_ref().to_string()).collect();
    let mut seen = BTreeSet::new();
    for p in &props {
        if !crate::formula::is_identifier(p) {
            return Err(Error::InvalidEnvironment(format!("proposition `{p}` is not an identifier")));
        }
        if !seen.insert(p.as_str()) {
            return Err(Error::InvalidEnvironment(format!("proposition `{p}` declared twice")));
        }
    }

    let mut cell_labels = vec![LabelSet::EMPTY; width * height];
    let mut assigned = BTreeSet::new();
    for (c, names) in labels {
        if c.x >= width || c.y >= height {
            return Err(Error::InvalidEnvironment(format!("cell {c} outside {width}x{height} grid")));
        }
        if !assigned.insert(*c) {
            return Err(Error::InvalidEnvironment(format!("cell {c} labeled twice")));
        }
        if names.is_empty() {
            return Err(Error::InvalidEnvironment(format!("cell {c} listed with an empty label set")));
        }
        let mut set = LabelSet::EMPTY;
        for n in names {
            let n = n.as_ref();
            let i = props
                .iter()
                .position(|p| p == n)
                .ok_or_else(|| Error::InvalidEnvironment(format!("cell {c} uses undeclared proposition `{n}`")))?;
            set = set.with(i);
        }
        cell_labels[c.y * width + c.x] = set;
    }

    let mut region_of = vec![None; width * height];
    let mut regions = Vec::new();
    for start in 0..width * height {
        let label = cell_labels[start];
        if label.is_empty() || region_of[start].is_some() {
            continue;
        }
        let id = regions.len();
        let mut cells = Vec::new();
        let mut queue = VecDeque::from([start]);
        region_of[start] = Some(id);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % width, i / width);
            cells.push(Cell::new(x, y));
            let mut neighbours = Vec::with_capacity(4);
            if y + 1 < height {
                neighbours.push(i + width);
            }
            if y > 0 {
                neighbours.push(i - width);
            }
            if x > 0 {
                neighbours.push(i - 1);
            }
            if x + 1 < width {
                neighbours.push(i + 1);
            }
            for n in neighbours {
                if region_of[n].is_none() && cell_labels[n] == label {
                    region_of[n] = Some(id);
                    queue.push_back(n);
                }
            }
        }
        cells.sort_by_key(|c| c.y * width + c.x);
        regions.push(Region { id, cells, label });
    }

    Ok(LabeledMdp { width, height, propositions: props, labels: cell_labels, regions, region_of, start: None })
}

/// On-disk environment description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvFile {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    pub propositions: Vec<String>,
    #[serde(default)]
    pub cells: Vec<CellLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[usize; 2]>,
}

fn default_schema_version() -> u32 {
    ENV_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLabels {
    pub x: usize,
    pub y: usize,
    pub labels: Vec<String>,
}

impl EnvFile {
    pub fn build(&self) -> Result<LabeledMdp> {
        if self.schema_version != ENV_SCHEMA_VERSION {
            return Err(Error::InvalidEnvironment(format!(
                "unsupported schema_version {} (expected {ENV_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let labels: Vec<(Cell, Vec<String>)> =
            self.cells.iter().map(|c| (Cell::new(c.x, c.y), c.labels.clone())).collect();
        let mdp = build_mdp(self.width, self.height, &self.propositions, &labels)?;
        match self.start {
            Some([x, y]) => mdp.with_start(Cell::new(x, y)),
            None => Ok(mdp),
        }
    }
}

pub fn parse_env(text: &str) -> Result<LabeledMdp> {
    let file: EnvFile =
        serde_json::from_str(text).map_err(|e| Error::InvalidEnvironment(format!("malformed environment file: {e}")))?;
    file.build()
}

pub fn load_env(path: &Path) -> Result<LabeledMdp> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidEnvironment(format!("cannot read {}: {e}", path.display())))?;
    parse_env(&text)
}

/// The running example: a 5x4 grid over `{A, B, C}` with six regions.
pub fn example_env() -> LabeledMdp {
    let labels: Vec<(Cell, Vec<&str>)> = vec![
        (Cell::new(1, 2), vec!["A"]),
        (Cell::new(1, 1), vec!["A", "B"]),
        (Cell::new(1, 0), vec!["A"]),
        (Cell::new(2, 3), vec!["B"]),
        (Cell::new(2, 2), vec!["B"]),
        (Cell::new(2, 1), vec!["A", "B", "C"]),
        (Cell::new(3, 1), vec!["C"]),
    ];
    build_mdp(5, 4, &["A", "B", "C"], &labels).expect("example environment is well formed")
}

/// A 5x5 grid split by a barrier row `A A B B D` at `y = 2`, with `C` at
/// `(2,0)` and the start at `(2,4)`. For `C & !A & !B` the only safe route
/// crosses the `D` cell, which neither `not-A` nor `not-B` prefers on its
/// own: composing the two stalls, a `G_ok = {D}` slice does not.
pub fn barrier_env() -> LabeledMdp {
    let labels: Vec<(Cell, Vec<&str>)> = vec![
        (Cell::new(0, 2), vec!["A"]),
        (Cell::new(1, 2), vec!["A"]),
        (Cell::new(2, 2), vec!["B"]),
        (Cell::new(3, 2), vec!["B"]),
        (Cell::new(4, 2), vec!["D"]),
        (Cell::new(2, 0), vec!["C"]),
    ];
    build_mdp(5, 5, &["A", "B", "C", "D"], &labels)
        .and_then(|m| m.with_start(Cell::new(2, 4)))
        .expect("barrier environment is well formed")
}

/// Groups regions by label set; handy for reports.
pub fn regions_by_label(mdp: &LabeledMdp) -> BTreeMap<LabelSet, Vec<RegionId>> {
    let mut out: BTreeMap<LabelSet, Vec<RegionId>> = BTreeMap::new();
    for r in mdp.regions() {
        out.entry(r.label).or_default().push(r.id);
    }
    out
}
