//! The penalty multiplier is load-bearing: below the derived value, greedy
//! runs on the example grid stop matching the fewest-violation paths.

use taskalg::algebra::{compile, TaskLibrary};
use taskalg::formula::{Semantics, TaskSpec};
use taskalg::mdp::example_env;
use taskalg::oracle::min_violation_path;
use taskalg::penalty::{penalty_multiplier, PenaltyConfig};
use taskalg::planner::extract_policy;
use taskalg::runtime::{classify, default_max_steps, rollout};

const FORMULAS: [&str; 7] = ["A", "B", "C", "!A & C", "!B & C", "!A & !B", "(A | B) & !C"];

fn mismatches(c_p: u32) -> usize {
    let mdp = example_env();
    let mut lib = TaskLibrary::new(&mdp, PenaltyConfig::new(c_p));
    lib.train_positive_basis(&mdp).unwrap();
    let mut bad = 0;
    for f in FORMULAS {
        let task = TaskSpec::parse(f, Semantics::MinimumViolation).unwrap();
        let table = compile(&task, &lib).unwrap().table;
        assert!(table.converged);
        let policy = extract_policy(&table);
        for s in mdp.cells() {
            let o = min_violation_path(&mdp, s, &task.formula).unwrap();
            if !o.feasible {
                continue;
            }
            let r = rollout(&mdp, &policy, s, default_max_steps(c_p, &mdp)).unwrap();
            let c = classify(&mdp, &r, &task).unwrap();
            if !c.satisfied || c.violations != o.min_violations {
                bad += 1;
            }
        }
    }
    bad
}

#[test]
fn derived_multiplier_is_enough() {
    let c_p = penalty_multiplier(&example_env()).unwrap().c_p;
    assert_eq!(c_p, 8);
    assert_eq!(mismatches(c_p), 0);
}

#[test]
fn multiplier_of_one_converges_but_misleads() {
    assert!(mismatches(1) > 0);
}
