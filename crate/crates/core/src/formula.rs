//! Boolean task formulas over propositions.
//!
//! Concrete syntax: identifiers `[A-Za-z_][A-Za-z0-9_]*`, unary `!` (or `~`),
//! infix `&` and `|`, parentheses. Precedence is `!` > `&` > `|`; binary
//! operators associate to the left.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::mdp::{LabelSet, LabeledMdp, RegionId};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    Prop(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn prop(name: &str) -> Formula {
        Formula::Prop(name.to_string())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(l: Formula, r: Formula) -> Formula {
        Formula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Formula, r: Formula) -> Formula {
        Formula::Or(Box::new(l), Box::new(r))
    }

    pub fn props(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_props(&mut out);
        out
    }

    fn collect_props<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Formula::Prop(p) => {
                out.insert(p);
            }
            Formula::Not(f) => f.collect_props(out),
            Formula::And(l, r) | Formula::Or(l, r) => {
                l.collect_props(out);
                r.collect_props(out);
            }
        }
    }

    pub fn is_nnf(&self) -> bool {
        match self {
            Formula::Prop(_) => true,
            Formula::Not(f) => matches!(**f, Formula::Prop(_)),
            Formula::And(l, r) | Formula::Or(l, r) => l.is_nnf() && r.is_nnf(),
        }
    }

    /// Evaluates against a set of true propositions.
    pub fn eval(&self, holds: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Formula::Prop(p) => holds(p),
            Formula::Not(f) => !f.eval(holds),
            Formula::And(l, r) => l.eval(holds) && r.eval(holds),
            Formula::Or(l, r) => l.eval(holds) || r.eval(holds),
        }
    }

    /// Resolves proposition names against an environment for fast evaluation
    /// on label sets.
    pub fn resolve(&self, mdp: &LabeledMdp) -> Result<ResolvedFormula> {
        Ok(match self {
            Formula::Prop(p) => {
                ResolvedFormula::Prop(mdp.prop_index(p).ok_or_else(|| Error::UnknownProposition(p.clone()))?)
            }
            Formula::Not(f) => ResolvedFormula::Not(Box::new(f.resolve(mdp)?)),
            Formula::And(l, r) => ResolvedFormula::And(Box::new(l.resolve(mdp)?), Box::new(r.resolve(mdp)?)),
            Formula::Or(l, r) => ResolvedFormula::Or(Box::new(l.resolve(mdp)?), Box::new(r.resolve(mdp)?)),
        })
    }

    pub fn eval_labels(&self, mdp: &LabeledMdp, labels: LabelSet) -> Result<bool> {
        Ok(self.resolve(mdp)?.eval(labels))
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(..) => 1,
            Formula::And(..) => 2,
            Formula::Not(_) => 3,
            Formula::Prop(_) => 4,
        }
    }

    /// Flattens a chain of conjunctions into its conjuncts, left to right.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        match self {
            Formula::And(l, r) => {
                let mut out = l.conjuncts();
                out.extend(r.conjuncts());
                out
            }
            f => vec![f],
        }
    }

    /// Negated proposition if this node is a negative literal.
    pub fn negative_literal(&self) -> Option<&str> {
        match self {
            Formula::Not(f) => match &**f {
                Formula::Prop(p) => Some(p),
                _ => None,
            },
            _ => None,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Formula, min_prec: u8) -> fmt::Result {
    if child.precedence() < min_prec {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

/// Canonical rendering; parses back to a structurally identical tree.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Prop(p) => f.write_str(p),
            Formula::Not(c) => {
                f.write_str("!")?;
                write_child(f, c, 3)
            }
            Formula::And(l, r) => {
                write_child(f, l, 2)?;
                f.write_str(" & ")?;
                write_child(f, r, 3)
            }
            Formula::Or(l, r) => {
                write_child(f, l, 1)?;
                f.write_str(" | ")?;
                write_child(f, r, 2)
            }
        }
    }
}

impl std::str::FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedFormula {
    Prop(usize),
    Not(Box<ResolvedFormula>),
    And(Box<ResolvedFormula>, Box<ResolvedFormula>),
    Or(Box<ResolvedFormula>, Box<ResolvedFormula>),
}

impl ResolvedFormula {
    pub fn eval(&self, labels: LabelSet) -> bool {
        match self {
            ResolvedFormula::Prop(i) => labels.contains(*i),
            ResolvedFormula::Not(f) => !f.eval(labels),
            ResolvedFormula::And(l, r) => l.eval(labels) && r.eval(labels),
            ResolvedFormula::Or(l, r) => l.eval(labels) || r.eval(labels),
        }
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Not,
    And,
    Or,
    LParen,
    RParen,
    End,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'!' | b'~' => Tok::Not,
            b'&' => Tok::And,
            b'|' => Tok::Or,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let ident = &text[start..i];
                if ident == "not" && bytes.get(i) == Some(&b'-') {
                    return Err(Error::Parse {
                        offset: start,
                        message: "`not-` task keys are not formula syntax; write negation as `!`".into(),
                    });
                }
                out.push((Tok::Ident(ident.to_string()), start));
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(Error::Parse { offset: i, message: format!("unexpected character `{ch}`") });
            }
        };
        out.push((tok, i));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn or(&mut self) -> Result<Formula> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Formula::not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula> {
        let offset = self.offset();
        match self.bump() {
            Tok::Ident(name) => Ok(Formula::Prop(name)),
            Tok::LParen => {
                let inner = self.or()?;
                if *self.peek() != Tok::RParen {
                    return Err(Error::Parse { offset: self.offset(), message: "expected `)`".into() });
                }
                self.bump();
                Ok(inner)
            }
            Tok::End => Err(Error::Parse { offset, message: "unexpected end of formula".into() }),
            t => Err(Error::Parse { offset, message: format!("expected a proposition or `(`, found {}", describe(&t)) }),
        }
    }
}

fn describe(t: &Tok) -> &'static str {
    match t {
        Tok::Ident(_) => "identifier",
        Tok::Not => "`!`",
        Tok::And => "`&`",
        Tok::Or => "`|`",
        Tok::LParen => "`(`",
        Tok::RParen => "`)`",
        Tok::End => "end of input",
    }
}

pub fn parse(text: &str) -> Result<Formula> {
    if text.trim().is_empty() {
        return Err(Error::Parse { offset: 0, message: "empty formula".into() });
    }
    let mut p = Parser { toks: tokenize(text)?, pos: 0 };
    let f = p.or()?;
    if *p.peek() != Tok::End {
        return Err(Error::Parse { offset: p.offset(), message: format!("unexpected {}", describe(p.peek())) });
    }
    Ok(f)
}

/// Negation normal form: negation only directly above propositions.
pub fn to_nnf(f: &Formula) -> Formula {
    fn go(f: &Formula, negate: bool) -> Formula {
        match f {
            Formula::Prop(_) if negate => Formula::not(f.clone()),
            Formula::Prop(_) => f.clone(),
            Formula::Not(inner) => go(inner, !negate),
            Formula::And(l, r) if negate => Formula::or(go(l, true), go(r, true)),
            Formula::And(l, r) => Formula::and(go(l, false), go(r, false)),
            Formula::Or(l, r) if negate => Formula::and(go(l, true), go(r, true)),
            Formula::Or(l, r) => Formula::or(go(l, false), go(r, false)),
        }
    }
    go(f, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Semantics {
    MinimumViolation,
    PrioritizedSafety,
}

impl fmt::Display for Semantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Semantics::MinimumViolation => "min-violation",
            Semantics::PrioritizedSafety => "prioritized-safety",
        })
    }
}

impl std::str::FromStr for Semantics {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "min-violation" | "minimum-violation" => Ok(Semantics::MinimumViolation),
            "prioritized-safety" | "prioritized" => Ok(Semantics::PrioritizedSafety),
            _ => Err(format!("unknown semantics `{s}` (expected min-violation or prioritized-safety)")),
        }
    }
}

/// A formula together with the safety semantics it is composed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub formula: Formula,
    pub semantics: Semantics,
    /// Propositions that must never be emitted. Empty under minimum-violation
    /// semantics; the negated propositions of the NNF otherwise.
    pub avoid: BTreeSet<String>,
    /// Some conjunct both requires and avoids the same proposition.
    pub contradictory: bool,
}

impl TaskSpec {
    pub fn new(formula: Formula, semantics: Semantics) -> TaskSpec {
        match semantics {
            Semantics::MinimumViolation => {
                TaskSpec { formula, semantics, avoid: BTreeSet::new(), contradictory: false }
            }
            Semantics::PrioritizedSafety => {
                let nnf = to_nnf(&formula);
                let mut avoid = BTreeSet::new();
                collect_negated(&nnf, &mut avoid);
                let contradictory = has_contradictory_conjunct(&nnf);
                TaskSpec { formula: nnf, semantics, avoid, contradictory }
            }
        }
    }

    pub fn parse(text: &str, semantics: Semantics) -> Result<TaskSpec> {
        Ok(TaskSpec::new(parse(text)?, semantics))
    }

    pub fn avoid_mask(&self, mdp: &LabeledMdp) -> Result<LabelSet> {
        mdp.prop_mask(self.avoid.iter().map(String::as_str))
    }
}

fn collect_negated(f: &Formula, out: &mut BTreeSet<String>) {
    match f {
        Formula::Prop(_) => {}
        Formula::Not(inner) => {
            if let Formula::Prop(p) = &**inner {
                out.insert(p.clone());
            } else {
                collect_negated(inner, out);
            }
        }
        Formula::And(l, r) | Formula::Or(l, r) => {
            collect_negated(l, out);
            collect_negated(r, out);
        }
    }
}

fn has_contradictory_conjunct(f: &Formula) -> bool {
    let conjuncts = f.conjuncts();
    let pos: BTreeSet<&str> = conjuncts
        .iter()
        .filter_map(|c| match c {
            Formula::Prop(p) => Some(p.as_str()),
            _ => None,
        })
        .collect();
    if conjuncts.iter().filter_map(|c| c.negative_literal()).any(|p| pos.contains(p)) {
        return true;
    }
    conjuncts.iter().any(|c| match c {
        Formula::Or(l, r) => has_contradictory_conjunct(l) || has_contradictory_conjunct(r),
        _ => false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalPartition {
    pub satisfying: Vec<RegionId>,
    pub non_satisfying: Vec<RegionId>,
    pub warning: Option<Warning>,
}

/// Splits the goal regions by whether their label satisfies `f`.
pub fn partition_goals(f: &Formula, mdp: &LabeledMdp) -> Result<GoalPartition> {
    let resolved = f.resolve(mdp)?;
    let (satisfying, non_satisfying): (Vec<_>, Vec<_>) =
        mdp.regions().iter().map(|r| r.id).partition(|&id| resolved.eval(mdp.region(id).label));
    let warning = satisfying.is_empty().then(|| Warning::SemanticallyEmpty { formula: f.to_string() });
    Ok(GoalPartition { satisfying, non_satisfying, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{example_env, Cell};
    use proptest::prelude::*;

    fn p(s: &str) -> Formula {
        Formula::prop(s)
    }

    #[test]
    fn parses_with_precedence() {
        assert_eq!(parse("!A & C").unwrap(), Formula::and(Formula::not(p("A")), p("C")));
        assert_eq!(parse("A | B & C").unwrap(), Formula::or(p("A"), Formula::and(p("B"), p("C"))));
        assert_eq!(parse("!(A | B)").unwrap(), Formula::not(Formula::or(p("A"), p("B"))));
        assert_eq!(parse("~A").unwrap(), Formula::not(p("A")));
        assert_eq!(parse("A & B & C").unwrap(), Formula::and(Formula::and(p("A"), p("B")), p("C")));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match parse("A & ") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse("A $ B") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
        match parse("(A | B") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("   "), Err(Error::Parse { .. })));
        assert!(matches!(parse("A B"), Err(Error::Parse { offset: 2, .. })));
    }

    #[test]
    fn rejects_not_dash_keys() {
        match parse("not-A & C") {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("not-"));
            }
            other => panic!("{other:?}"),
        }
        // A plain identifier named `not` is still a proposition.
        assert_eq!(parse("not").unwrap(), p("not"));
    }

    #[test]
    fn nnf_examples() {
        assert_eq!(to_nnf(&parse("!(A | B)").unwrap()), parse("!A & !B").unwrap());
        assert_eq!(to_nnf(&parse("!!A").unwrap()), p("A"));
        assert_eq!(to_nnf(&parse("!(A & (B | C))").unwrap()), parse("!A | !B & !C").unwrap());
    }

    #[test]
    fn nnf_truth_table_for_nested_example() {
        let f = parse("!(A & (B | C))").unwrap();
        let g = to_nnf(&f);
        for bits in 0..8u32 {
            let holds = |name: &str| match name {
                "A" => bits & 1 != 0,
                "B" => bits & 2 != 0,
                "C" => bits & 4 != 0,
                _ => false,
            };
            assert_eq!(f.eval(&holds), g.eval(&holds), "assignment {bits:03b}");
        }
    }

    #[test]
    fn eval_on_example_labels() {
        let mdp = example_env();
        let f = parse("!A & C").unwrap();
        let c = mdp.prop_mask(["C"]).unwrap();
        let abc = mdp.prop_mask(["A", "B", "C"]).unwrap();
        assert!(f.eval_labels(&mdp, c).unwrap());
        assert!(!f.eval_labels(&mdp, abc).unwrap());
        assert!(!parse("A | B").unwrap().eval_labels(&mdp, LabelSet::EMPTY).unwrap());
        assert!(matches!(parse("Z").unwrap().eval_labels(&mdp, c), Err(Error::UnknownProposition(_))));
    }

    #[test]
    fn partition_goals_on_example() {
        let mdp = example_env();
        let abc = mdp.region_at(Cell::new(2, 1)).unwrap();
        let c_only = mdp.region_at(Cell::new(3, 1)).unwrap();

        let part = partition_goals(&parse("C").unwrap(), &mdp).unwrap();
        assert_eq!(part.satisfying, vec![abc, c_only]);
        assert_eq!(part.non_satisfying.len(), 4);
        assert!(part.warning.is_none());

        let part = partition_goals(&parse("!A & C").unwrap(), &mdp).unwrap();
        assert_eq!(part.satisfying, vec![c_only]);

        let part = partition_goals(&parse("A & !A").unwrap(), &mdp).unwrap();
        assert!(part.satisfying.is_empty());
        assert!(matches!(part.warning, Some(Warning::SemanticallyEmpty { .. })));
    }

    #[test]
    fn task_spec_avoid_sets() {
        let spec = TaskSpec::parse("!(A | B) & C", Semantics::PrioritizedSafety).unwrap();
        assert!(spec.formula.is_nnf());
        assert_eq!(spec.avoid, ["A", "B"].iter().map(|s| s.to_string()).collect());
        assert!(!spec.contradictory);

        let spec = TaskSpec::parse("!A & C", Semantics::MinimumViolation).unwrap();
        assert!(spec.avoid.is_empty());

        let spec = TaskSpec::parse("A & !A", Semantics::PrioritizedSafety).unwrap();
        assert!(spec.contradictory);
    }

    fn arb_formula() -> impl Strategy<Value = Formula> {
        let leaf = prop::sample::select(vec!["A", "B", "C", "D"]).prop_map(Formula::prop);
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                (inner.clone(), inner.clone()).prop_map(|(l, r)| Formula::and(l, r)),
                (inner.clone(), inner).prop_map(|(l, r)| Formula::or(l, r)),
            ]
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(f in arb_formula()) {
            let text = f.to_string();
            prop_assert_eq!(parse(&text).unwrap(), f);
        }

        #[test]
        fn nnf_preserves_truth_table(f in arb_formula()) {
            let g = to_nnf(&f);
            prop_assert!(g.is_nnf());
            for bits in 0..16u32 {
                let holds = |name: &str| match name {
                    "A" => bits & 1 != 0,
                    "B" => bits & 2 != 0,
                    "C" => bits & 4 != 0,
                    "D" => bits & 8 != 0,
                    _ => false,
                };
                prop_assert_eq!(f.eval(&holds), g.eval(&holds));
            }
        }
    }
}
