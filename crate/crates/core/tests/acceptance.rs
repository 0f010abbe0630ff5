//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use taskalg::algebra::{compile, conj, disj, neg, policy_select_conj, policy_select_disj, PolicyOracle, TaskKey, TaskLibrary};
use taskalg::formula::{Formula, Semantics, TaskSpec};
use taskalg::generate::{random_env, GenParams};
use taskalg::mdp::{barrier_env, build_mdp, example_env, Action, Cell, LabeledMdp};
use taskalg::oracle::{min_violation_path, optimal_returns, safe_min_violation_path, DEFAULT_NODE_CAP};
use taskalg::penalty::{penalty_multiplier, PenaltyConfig, RewardSpec};
use taskalg::planner::{boundary_tables, extract_policy, value_iterate, QTable, DEFAULT_TOL};
use taskalg::runtime::{classify, default_max_steps, replay, rollout, score, transcript, PathClass, TrajectoryReport};
use taskalg::Warning;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn multiplier(mdp: &LabeledMdp) -> u32 {
    penalty_multiplier(mdp).expect("test environments have regions").c_p
}

/// Boundary tables, one table per proposition and one learned negation per
/// proposition.
fn library(mdp: &LabeledMdp, c_p: u32) -> TaskLibrary {
    let mut lib = TaskLibrary::new(mdp, PenaltyConfig::new(c_p));
    lib.train_positive_basis(mdp).expect("basis converges");
    for p in mdp.propositions() {
        lib.train(mdp, TaskKey::negated([p.as_str()]), 0).expect("negation converges");
    }
    lib
}

fn random_envs(first_seed: u64, n: u64) -> Vec<LabeledMdp> {
    (first_seed..first_seed + n).map(|s| random_env(s, GenParams::default())).collect()
}

fn labels(mdp: &LabeledMdp, r: &TrajectoryReport) -> Vec<String> {
    r.nonempty_projection.iter().map(|l| mdp.format_labels(*l)).collect()
}

fn run(mdp: &LabeledMdp, table: &QTable, s: Cell) -> TrajectoryReport {
    rollout(mdp, &extract_policy(table), s, default_max_steps(table.config.c_p, mdp)).expect("start is in bounds")
}

fn satisfied_at_end(mdp: &LabeledMdp, r: &TrajectoryReport, f: &Formula) -> Option<bool> {
    let phi = f.resolve(mdp).expect("formula uses known propositions");
    r.terminal_region().filter(|_| r.terminated()).map(|g| phi.eval(mdp.region(g).label))
}

fn criterion_1() -> Outcome {
    let mdp = example_env();
    let c_p = multiplier(&mdp);
    check(c_p == 8, || format!("example grid multiplier is {c_p}, expected 8"))?;
    let mut lib = TaskLibrary::new(&mdp, PenaltyConfig::new(c_p));
    lib.train_positive_basis(&mdp).map_err(|e| e.to_string())?;
    lib.train(&mdp, TaskKey::negated(["A"]), 0).map_err(|e| e.to_string())?;

    let go = |f: &str, sem, s: Cell| {
        let task = TaskSpec::parse(f, sem).unwrap();
        let r = run(&mdp, &compile(&task, &lib).unwrap().table, s);
        let class = classify(&mdp, &r, &task).unwrap().class;
        (r, class)
    };

    let (r, class) = go("!A & C", Semantics::MinimumViolation, Cell::new(0, 0));
    check(labels(&mdp, &r) == ["{A}", "{C}"] && class == PathClass::MinimumViolation, || {
        format!("(a) got {:?} {class:?}", labels(&mdp, &r))
    })?;

    let (r, class) = go("!A & C", Semantics::PrioritizedSafety, Cell::new(0, 0));
    let a = mdp.prop_mask(["A"]).unwrap();
    check(
        labels(&mdp, &r) == ["{B}", "{C}"] && !r.projection.iter().any(|l| l.intersects(a)) && class == PathClass::PrioritizedSafety,
        || format!("(b) got {:?} {class:?}", labels(&mdp, &r)),
    )?;

    // The {C} cell is region id 3.
    let (r, class) = go("C", Semantics::MinimumViolation, Cell::new(4, 3));
    let g = r.terminal_region();
    check(
        class == PathClass::Pure && g == Some(3) && mdp.format_labels(mdp.region(3).label) == "{C}",
        || format!("(c) got {class:?} ending in {g:?}"),
    )?;
    Ok("(a) {A},{C} MinimumViolation; (b) {B},{C} PrioritizedSafety; (c) Pure in the {C} region".into())
}

fn criterion_2() -> Outcome {
    let mut envs = vec![example_env()];
    envs.extend(random_envs(0, 50));
    let (mut runs, mut pure, mut skipped) = (0, 0, 0);
    for (i, mdp) in envs.iter().enumerate() {
        let lib = library(mdp, multiplier(mdp));
        for p in mdp.propositions() {
            {
                let f = p.clone();
                let task = TaskSpec::parse(&f, Semantics::MinimumViolation).unwrap();
                let table = compile(&task, &lib).unwrap().table;
                let policy = extract_policy(&table);
                for s in mdp.cells() {
                    let o = min_violation_path(mdp, s, &task.formula).unwrap();
                    if !o.feasible {
                        skipped += 1;
                        continue;
                    }
                    let r = rollout(mdp, &policy, s, default_max_steps(table.config.c_p, mdp)).unwrap();
                    let c = classify(mdp, &r, &task).unwrap();
                    check(c.satisfied && c.violations == o.min_violations, || {
                        format!("env {i} task {f} from {s}: {:?} with {} violations, oracle {}", c.class, c.violations, o.min_violations)
                    })?;
                    if o.min_violations == 0 {
                        check(c.class == PathClass::Pure, || format!("env {i} task {f} from {s}: {:?}, expected Pure", c.class))?;
                        pure += 1;
                    }
                    runs += 1;
                }
            }
        }
    }
    Ok(format!("{runs} rollouts match the oracle minimum ({pure} pure); {skipped} starts with no satisfying region skipped"))
}

const COMPOSITE_FORMULAS: [&str; 12] = [
    "A",
    "!A",
    "A & B",
    "A | B",
    "!A & C",
    "(A | B) & !C",
    "!(A | B) & C",
    "!(A & B)",
    "A & !B & !C",
    "!!C",
    "(A & C) | (B & !A)",
    "!(!A | C) | B",
];

fn criterion_3() -> Outcome {
    let mut envs = vec![example_env()];
    envs.extend(random_envs(100, 10));
    let mut runs = 0;
    for (i, mdp) in envs.iter().enumerate() {
        let c_p = multiplier(mdp);
        let lib = library(mdp, c_p);
        for f in COMPOSITE_FORMULAS {
            let task = TaskSpec::parse(f, Semantics::MinimumViolation).unwrap();
            let composed = compile(&task, &lib).unwrap().table;
            let direct = value_iterate(mdp, &RewardSpec::positive(task.formula.clone(), PenaltyConfig::new(c_p)), DEFAULT_TOL, None)
                .and_then(QTable::require_converged)
                .map_err(|e| e.to_string())?;
            for s in mdp.cells() {
                let a = run(mdp, &composed, s);
                let b = run(mdp, &direct, s);
                check(
                    a.nonempty_projection.len() == b.nonempty_projection.len()
                        && satisfied_at_end(mdp, &a, &task.formula) == satisfied_at_end(mdp, &b, &task.formula),
                    || format!("env {i} `{f}` from {s}: composed {:?} vs direct {:?}", labels(mdp, &a), labels(mdp, &b)),
                )?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} composed/direct rollout pairs agree"))
}

const SAFETY_TASKS: [&str; 10] =
    ["!A", "!B", "!C", "C & !A", "A & !B", "(A | B) & !C", "!A & !B", "C & !A & !B", "A & !B & !C", "!B & !C"];

fn criterion_4() -> Outcome {
    let mut envs = vec![example_env()];
    envs.extend(random_envs(200, 10));
    let (mut safe, mut flagged) = (0, 0);
    for (i, mdp) in envs.iter().enumerate() {
        let mut lib = library(mdp, multiplier(mdp));
        for pair in [["A", "B"], ["A", "C"], ["B", "C"]] {
            lib.train(mdp, TaskKey::negated(pair), 0).map_err(|e| e.to_string())?;
        }
        for f in SAFETY_TASKS {
            let task = TaskSpec::parse(f, Semantics::PrioritizedSafety).unwrap();
            let compiled = compile(&task, &lib).unwrap();
            check(compiled.warnings.is_empty(), || format!("`{f}` should use a single learned negation"))?;
            let avoid = task.avoid_mask(mdp).unwrap();
            let policy = extract_policy(&compiled.table);
            for s in mdp.cells() {
                let o = safe_min_violation_path(mdp, s, &task.formula, avoid).unwrap();
                let r = rollout(mdp, &policy, s, default_max_steps(compiled.table.config.c_p, mdp)).unwrap();
                let c = classify(mdp, &r, &task).unwrap();
                if o.feasible {
                    check(!r.projection.iter().any(|l| l.intersects(avoid)) && c.satisfied && c.violations == o.min_violations, || {
                        format!("env {i} `{f}` from {s}: {:?} labels {:?}", c.class, labels(mdp, &r))
                    })?;
                    safe += 1;
                } else {
                    check(r.chatter || matches!(c.class, PathClass::Violating | PathClass::NonTerminating), || {
                        format!("env {i} `{f}` from {s}: no safe path but run classified {:?}", c.class)
                    })?;
                    flagged += 1;
                }
            }
        }
    }
    Ok(format!("{safe} runs avoid every avoided label; {flagged} runs without a safe path are flagged"))
}

fn criterion_5() -> Outcome {
    let mut envs = vec![example_env()];
    envs.extend(random_envs(300, 10));
    let mut runs = 0;
    for (i, mdp) in envs.iter().enumerate() {
        let lib = library(mdp, multiplier(mdp));
        let u = lib.get(&TaskKey::BoundaryU).unwrap();
        let e = lib.get(&TaskKey::BoundaryEmpty).unwrap();
        let mut tables = Vec::new();
        for p in mdp.propositions() {
            let q = lib.get(&TaskKey::positive(p)).unwrap().clone();
            tables.push(neg(&q, u, e).unwrap());
            tables.push(q);
        }
        for (x, q1) in tables.iter().enumerate() {
            for q2 in &tables[x + 1..] {
                let (o1, o2) = (PolicyOracle::from_table(q1), PolicyOracle::from_table(q2));
                let pairs = [
                    (conj(q1, q2).unwrap(), policy_select_conj(&o1, &o2).unwrap()),
                    (disj(q1, q2).unwrap(), policy_select_disj(&o1, &o2).unwrap()),
                ];
                for (table, oracle) in pairs {
                    let (pa, pb) = (extract_policy(&table), oracle.to_policy());
                    for s in mdp.cells() {
                        let steps = default_max_steps(table.config.c_p, mdp);
                        let a = transcript(mdp, &rollout(mdp, &pa, s, steps).unwrap());
                        let b = transcript(mdp, &rollout(mdp, &pb, s, steps).unwrap());
                        check(a == b, || format!("env {i} from {s}:\n{a}\nvs\n{b}"))?;
                        runs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{runs} transcript pairs identical"))
}

/// All 3x3 labelings over {∅, {A}, {B}} and all 4x4 labelings with at most
/// three labeled cells, with one to three regions, up to grid symmetry.
fn small_corpus() -> Vec<LabeledMdp> {
    fn canonical(n: usize, lab: &[u8]) -> bool {
        (1..8).all(|k| {
            let mut t = vec![0u8; n * n];
            for y in 0..n {
                for x in 0..n {
                    let (a, b) = if k & 4 != 0 { (y, x) } else { (x, y) };
                    let a = if k & 1 != 0 { n - 1 - a } else { a };
                    let b = if k & 2 != 0 { n - 1 - b } else { b };
                    t[b * n + a] = lab[y * n + x];
                }
            }
            t.as_slice() >= lab
        })
    }
    let mut out = Vec::new();
    for (n, max_labeled) in [(3usize, 9usize), (4, 3)] {
        let mut lab = vec![0u8; n * n];
        loop {
            let labeled = lab.iter().filter(|&&l| l != 0).count();
            if (1..=max_labeled).contains(&labeled) && canonical(n, &lab) {
                let cells: Vec<(Cell, Vec<&str>)> = lab
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l != 0)
                    .map(|(i, &l)| (Cell::new(i % n, i / n), vec![if l == 1 { "A" } else { "B" }]))
                    .collect();
                let mdp = build_mdp(n, n, &["A", "B"], &cells).unwrap();
                if mdp.regions().len() <= 3 {
                    out.push(mdp);
                }
            }
            let Some(i) = lab.iter().position(|&l| l < 2) else { break };
            lab[..i].fill(0);
            lab[i] += 1;
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let corpus = small_corpus();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (i, mdp) in corpus.iter().enumerate() {
        let cfg = PenaltyConfig::new(multiplier(mdp));
        for spec in [RewardSpec::positive(Formula::prop("A"), cfg), RewardSpec::negated(["A"], cfg)] {
            let q = value_iterate(mdp, &spec, DEFAULT_TOL, None).unwrap();
            check(q.converged, || format!("instance {i} did not converge"))?;
            for s in mdp.cells() {
                let brute = optimal_returns(mdp, &spec, s, mdp.num_cells(), DEFAULT_NODE_CAP).map_err(|e| e.to_string())?;
                for (g, b) in brute.iter().enumerate() {
                    let d = (b - q.value(mdp.index(s), q.goal_index(g, 0))).abs();
                    worst = worst.max(d);
                    check(d <= 1e-9, || format!("instance {i} {} at {s}, goal {g}: off by {d:e}", spec.kind))?;
                    entries += 1;
                }
            }
        }
    }
    Ok(format!("{} instances, {entries} (s, g) values, max error {worst:e}", corpus.len()))
}

fn dyadic_table(base: &QTable, seed: Vec<i32>) -> QTable {
    let mut t = base.clone();
    for (v, k) in t.values.iter_mut().zip(seed.iter().cycle()) {
        *v = f64::from(*k) / 8.0;
    }
    t
}

fn criterion_7() -> Outcome {
    let mdp = example_env();
    let dyadic = PenaltyConfig { r_step: -0.125, ..PenaltyConfig::new(8) };
    let (u, e) = boundary_tables(&mdp, dyadic).map_err(|e| e.to_string())?;
    let mut runner = TestRunner::new(Config { cases: 64, failure_persistence: None, ..Config::default() });
    let values = prop::collection::vec(-4096i32..4096, 1..40);

    // Lattice laws and De Morgan hold exactly on arbitrary tables.
    runner
        .run(&(values.clone(), values.clone(), values.clone()), |(a, b, c)| {
            let (a, b, c) = (dyadic_table(&u, a), dyadic_table(&u, b), dyadic_table(&u, c));
            let eq = |x: &QTable, y: &QTable| x.values == y.values;
            prop_assert!(eq(&conj(&a, &b).unwrap(), &conj(&b, &a).unwrap()));
            prop_assert!(eq(&disj(&a, &b).unwrap(), &disj(&b, &a).unwrap()));
            prop_assert!(eq(&conj(&conj(&a, &b).unwrap(), &c).unwrap(), &conj(&a, &conj(&b, &c).unwrap()).unwrap()));
            prop_assert!(eq(&disj(&disj(&a, &b).unwrap(), &c).unwrap(), &disj(&a, &disj(&b, &c).unwrap()).unwrap()));
            prop_assert!(eq(&conj(&a, &disj(&a, &b).unwrap()).unwrap(), &a));
            prop_assert!(eq(&disj(&a, &conj(&a, &b).unwrap()).unwrap(), &a));
            prop_assert!(eq(&conj(&a, &a).unwrap(), &a));
            prop_assert!(eq(
                &conj(&a, &disj(&b, &c).unwrap()).unwrap(),
                &disj(&conj(&a, &b).unwrap(), &conj(&a, &c).unwrap()).unwrap()
            ));
            prop_assert!(eq(&neg(&neg(&a, &u, &e).unwrap(), &u, &e).unwrap(), &a));
            prop_assert!(eq(
                &neg(&conj(&a, &b).unwrap(), &u, &e).unwrap(),
                &disj(&neg(&a, &u, &e).unwrap(), &neg(&b, &u, &e).unwrap()).unwrap()
            ));
            Ok(())
        })
        .map_err(|e| format!("lattice laws: {e}"))?;

    // Trained tables on random grids: involution, the boundary sandwich and
    // closed-form scoring of random runs.
    let mut runner = TestRunner::new(Config { cases: 24, failure_persistence: None, ..Config::default() });
    runner
        .run(&(0u64..10_000, prop::collection::vec(0usize..5, 1..30), 0usize..64), |(seed, acts, start)| {
            let mdp = random_env(seed, GenParams::default());
            let c_p = multiplier(&mdp);
            for cfg in [PenaltyConfig::new(c_p), PenaltyConfig { r_step: -0.125, ..PenaltyConfig::new(c_p) }] {
                let exact = cfg.r_step == -0.125;
                let (u, e) = boundary_tables(&mdp, cfg).unwrap();
                for p in mdp.propositions() {
                    for spec in [RewardSpec::positive(Formula::prop(p), cfg), RewardSpec::negated([p.as_str()], cfg)] {
                        let q = value_iterate(&mdp, &spec, DEFAULT_TOL, None).unwrap();
                        let back = neg(&neg(&q, &u, &e).unwrap(), &u, &e).unwrap();
                        for (x, y) in back.values.iter().zip(&q.values) {
                            prop_assert!(if exact { x == y } else { (x - y).abs() <= 1e-12 }, "involution off: {x} vs {y}");
                        }
                    }
                }
                // The sandwich bounds the algebra: positive tables and anything
                // composed from them. Tables trained on negated-proposition
                // rewards live on a different scale and are not bounded by E/U.
                let pos: Vec<QTable> = mdp
                    .propositions()
                    .iter()
                    .map(|p| value_iterate(&mdp, &RewardSpec::positive(Formula::prop(p), cfg), DEFAULT_TOL, None).unwrap())
                    .collect();
                let mut bounded = pos.clone();
                for q in &pos {
                    bounded.push(neg(q, &u, &e).unwrap());
                    bounded.push(conj(q, &pos[0]).unwrap());
                    bounded.push(disj(q, &neg(&pos[0], &u, &e).unwrap()).unwrap());
                }
                for q in &bounded {
                    for ((lo, x), hi) in e.values.iter().zip(&q.values).zip(&u.values) {
                        let slack = if exact { 0.0 } else { 1e-9 };
                        prop_assert!(lo - slack <= *x && *x <= hi + slack, "sandwich broken: {lo} <= {x} <= {hi}");
                    }
                }
                let s = Cell::new(start % mdp.width(), start / mdp.width());
                let actions: Vec<Action> = acts.iter().map(|&i| Action::from_index(i)).collect();
                let r = replay(&mdp, s, &actions).unwrap();
                let spec = RewardSpec::positive(Formula::prop(&mdp.propositions()[0]), cfg);
                let sc = score(&mdp, &r, &spec).unwrap();
                prop_assert!((sc.total - sc.closed_form).abs() <= 1e-9, "score {} vs closed form {}", sc.total, sc.closed_form);
            }
            Ok(())
        })
        .map_err(|e| format!("trained tables: {e}"))?;
    Ok("lattice laws, De Morgan and involution exact on dyadic tables; sandwich and closed-form scores on random grids".into())
}

fn criterion_8() -> Outcome {
    let mdp = barrier_env();
    let star = mdp.start().expect("barrier layout names its start");
    let cfg = PenaltyConfig::new(multiplier(&mdp));
    let task = TaskSpec::parse("C & !A & !B", Semantics::PrioritizedSafety).unwrap();
    let avoid = task.avoid_mask(&mdp).unwrap();
    check(safe_min_violation_path(&mdp, star, &task.formula, avoid).unwrap().feasible, || "no safe path from the start".into())?;

    let mut plain = TaskLibrary::new(&mdp, cfg);
    let mut sliced = TaskLibrary::new(&mdp, cfg);
    for key in [TaskKey::positive("C"), TaskKey::negated(["A"]), TaskKey::negated(["B"])] {
        plain.train(&mdp, key.clone(), 0).map_err(|e| e.to_string())?;
        sliced.train(&mdp, key, 1).map_err(|e| e.to_string())?;
    }

    let composed = compile(&task, &plain).unwrap();
    check(composed.warnings.iter().any(|w| matches!(w, Warning::AssumptionViolated { .. })), || "missing assumption warning".into())?;
    let r = run(&mdp, &composed.table, star);
    check(r.chatter && !r.terminated(), || format!("independent negations did not chatter: {:?}", r.actions))?;

    let composed = compile(&task, &sliced).unwrap();
    let ok = mdp.region_at(Cell::new(4, 2)).expect("D cell is a region");
    let slice = composed.table.subset_index(&[ok]).expect("k=1 has a slice per region");
    let safe = |r: &TrajectoryReport| {
        r.terminated() && !r.projection.iter().any(|l| l.intersects(avoid)) && satisfied_at_end(&mdp, r, &task.formula) == Some(true)
    };
    let r_slice = run(&mdp, &composed.table.slice_table(slice).unwrap(), star);
    check(safe(&r_slice), || format!("G_ok slice run is unsafe or stuck: {:?}", r_slice.actions))?;
    let r_full = run(&mdp, &composed.table, star);
    check(safe(&r_full), || format!("sliced table run is unsafe or stuck: {:?}", r_full.actions))?;
    Ok(format!(
        "plain composition stalls after {:?}; G_ok={{{ok}}} slice reaches C in {} steps via {}",
        r.actions,
        r_slice.actions.len(),
        labels(&mdp, &r_slice).join(",")
    ))
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 example grid runs", criterion_1, Some(Duration::from_secs(1))),
        ("2 minimum violation on single tasks", criterion_2, Some(Duration::from_secs(30))),
        ("3 composed vs directly trained", criterion_3, Some(Duration::from_secs(60))),
        ("4 learned-negation avoidance", criterion_4, Some(Duration::from_secs(30))),
        ("5 policy selection vs table algebra", criterion_5, Some(Duration::from_secs(10))),
        ("6 planner vs brute force", criterion_6, None),
        ("7 algebraic exactness", criterion_7, None),
        ("8 chattering and G_ok slices", criterion_8, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = t.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {took:.2?}, limit {l:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {name} [{took:.2?}]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} [{took:.2?}]: {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
