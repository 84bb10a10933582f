//! BAN-style belief logic: formulas, pattern-based inference rules, a
//! bounded forward-chaining prover, and the two message-exchange steps of
//! the protocol encoded as proof obligations.
//!
//! Rules are declared as formula patterns whose principal, term and key
//! names starting with `?` are variables. Internally formulas are lowered
//! to a small term language so every rule application is a unification
//! against its declared pattern.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Principal(pub String);

impl Principal {
    pub fn new(s: &str) -> Self {
        Principal(s.to_string())
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Message terms. Principals may appear as terms (a principal can be
/// believed fresh).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Atom(String),
    Enc(Box<Term>, String),
}

impl Term {
    pub fn atom(s: &str) -> Self {
        Term::Atom(s.to_string())
    }

    pub fn enc(body: Term, key: &str) -> Self {
        Term::Enc(Box::new(body), key.to_string())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(a) => f.write_str(a),
            Term::Enc(body, key) => write!(f, "{{{body}}}_{key}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula {
    Believes(Principal, Box<Formula>),
    Fresh(Term),
    Sees(Principal, Term),
    Said(Principal, Term),
    /// Said recently, i.e. within the current run.
    Says(Principal, Term),
    SharedKey(Principal, Principal, String),
    OnlyKnownTo(Term, Principal, Principal),
    ReceivedFresh(Principal, Term, Principal),
    Controls(Principal, Box<Formula>),
}

impl Formula {
    pub fn believes(p: &str, f: Formula) -> Self {
        Formula::Believes(Principal::new(p), Box::new(f))
    }

    pub fn fresh(t: &str) -> Self {
        Formula::Fresh(Term::atom(t))
    }

    pub fn only_known_to(m: &str, p: &str, q: &str) -> Self {
        Formula::OnlyKnownTo(Term::atom(m), Principal::new(p), Principal::new(q))
    }

    pub fn received_fresh(receiver: &str, m: &str, sender: &str) -> Self {
        Formula::ReceivedFresh(Principal::new(receiver), Term::atom(m), Principal::new(sender))
    }

    pub fn shared_key(p: &str, q: &str, k: &str) -> Self {
        Formula::SharedKey(Principal::new(p), Principal::new(q), k.to_string())
    }

    pub fn sees(p: &str, t: Term) -> Self {
        Formula::Sees(Principal::new(p), t)
    }

    pub fn said(p: &str, t: &str) -> Self {
        Formula::Said(Principal::new(p), Term::atom(t))
    }

    pub fn says(p: &str, t: &str) -> Self {
        Formula::Says(Principal::new(p), Term::atom(t))
    }

    pub fn controls(p: &str, f: Formula) -> Self {
        Formula::Controls(Principal::new(p), Box::new(f))
    }

    fn depth(&self) -> usize {
        match self {
            Formula::Believes(_, f) | Formula::Controls(_, f) => 1 + f.depth(),
            _ => 1,
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Believes(p, x) => write!(f, "{p} believes ({x})"),
            Formula::Fresh(t) => write!(f, "fresh({t})"),
            Formula::Sees(p, t) => write!(f, "{p} sees {t}"),
            Formula::Said(p, t) => write!(f, "{p} said {t}"),
            Formula::Says(p, t) => write!(f, "{p} says {t}"),
            Formula::SharedKey(p, q, k) => write!(f, "{p} <-{k}-> {q}"),
            Formula::OnlyKnownTo(t, p, q) => write!(f, "{t} only known to {{{p}, {q}}}"),
            Formula::ReceivedFresh(r, t, s) => write!(f, "{r} receives {t} from {s} in fresh state"),
            Formula::Controls(p, x) => write!(f, "{p} controls ({x})"),
        }
    }
}

/// Lowered form used for matching. Unordered pairs are `Node("set", [a, b])`
/// with children sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Expr {
    Const(String),
    Var(String),
    Node(&'static str, Vec<Expr>),
}

fn name(s: &str) -> Expr {
    match s.strip_prefix('?') {
        Some(v) => Expr::Var(v.to_string()),
        None => Expr::Const(s.to_string()),
    }
}

fn set(a: Expr, b: Expr) -> Expr {
    let mut pair = vec![a, b];
    pair.sort();
    Expr::Node("set", pair)
}

fn lower_term(t: &Term) -> Expr {
    match t {
        Term::Atom(a) => name(a),
        Term::Enc(body, key) => Expr::Node("enc", vec![lower_term(body), name(key)]),
    }
}

fn lower(f: &Formula) -> Expr {
    use Formula::*;
    match f {
        Believes(p, x) => Expr::Node("believes", vec![name(&p.0), lower(x)]),
        Fresh(t) => Expr::Node("fresh", vec![lower_term(t)]),
        Sees(p, t) => Expr::Node("sees", vec![name(&p.0), lower_term(t)]),
        Said(p, t) => Expr::Node("said", vec![name(&p.0), lower_term(t)]),
        Says(p, t) => Expr::Node("says", vec![name(&p.0), lower_term(t)]),
        SharedKey(p, q, k) => Expr::Node("shared_key", vec![set(name(&p.0), name(&q.0)), name(k)]),
        OnlyKnownTo(t, p, q) => Expr::Node("only_known_to", vec![lower_term(t), set(name(&p.0), name(&q.0))]),
        ReceivedFresh(r, t, s) => Expr::Node("received_fresh", vec![name(&r.0), lower_term(t), name(&s.0)]),
        Controls(p, x) => Expr::Node("controls", vec![name(&p.0), lower(x)]),
    }
}

fn atom_of(e: &Expr) -> String {
    match e {
        Expr::Const(s) => s.clone(),
        Expr::Var(v) => format!("?{v}"),
        Expr::Node(..) => panic!("expected a name, found {e:?}"),
    }
}

fn raise_term(e: &Expr) -> Term {
    match e {
        Expr::Node("enc", args) => Term::Enc(Box::new(raise_term(&args[0])), atom_of(&args[1])),
        other => Term::Atom(atom_of(other)),
    }
}

fn pair_of(e: &Expr) -> (Principal, Principal) {
    match e {
        Expr::Node("set", args) => (Principal(atom_of(&args[0])), Principal(atom_of(&args[1]))),
        _ => panic!("expected a pair, found {e:?}"),
    }
}

fn raise(e: &Expr) -> Formula {
    let Expr::Node(head, args) = e else {
        panic!("expected a formula, found {e:?}");
    };
    let p = |i: usize| Principal(atom_of(&args[i]));
    match *head {
        "believes" => Formula::Believes(p(0), Box::new(raise(&args[1]))),
        "fresh" => Formula::Fresh(raise_term(&args[0])),
        "sees" => Formula::Sees(p(0), raise_term(&args[1])),
        "said" => Formula::Said(p(0), raise_term(&args[1])),
        "says" => Formula::Says(p(0), raise_term(&args[1])),
        "shared_key" => {
            let (a, b) = pair_of(&args[0]);
            Formula::SharedKey(a, b, atom_of(&args[1]))
        }
        "only_known_to" => {
            let (a, b) = pair_of(&args[1]);
            Formula::OnlyKnownTo(raise_term(&args[0]), a, b)
        }
        "received_fresh" => Formula::ReceivedFresh(p(0), raise_term(&args[1]), p(2)),
        "controls" => Formula::Controls(p(0), Box::new(raise(&args[1]))),
        other => panic!("unknown head {other}"),
    }
}

type Bindings = BTreeMap<String, Expr>;

/// All ways `pattern` matches the ground `fact`, extending `b`.
fn unify(pattern: &Expr, fact: &Expr, b: &Bindings) -> Vec<Bindings> {
    match (pattern, fact) {
        (Expr::Var(v), _) => match b.get(v) {
            Some(bound) if bound == fact => vec![b.clone()],
            Some(_) => vec![],
            None => {
                let mut nb = b.clone();
                nb.insert(v.clone(), fact.clone());
                vec![nb]
            }
        },
        (Expr::Const(a), Expr::Const(c)) if a == c => vec![b.clone()],
        (Expr::Node("set", ps), Expr::Node("set", fs)) if ps.len() == 2 && fs.len() == 2 => {
            let mut out = Vec::new();
            for (x, y) in [(0, 1), (1, 0)] {
                for b1 in unify(&ps[0], &fs[x], b) {
                    out.extend(unify(&ps[1], &fs[y], &b1));
                }
            }
            out.sort();
            out.dedup();
            out
        }
        (Expr::Node(h1, ps), Expr::Node(h2, fs)) if h1 == h2 && ps.len() == fs.len() => {
            let mut frontier = vec![b.clone()];
            for (p, f) in ps.iter().zip(fs) {
                frontier = frontier.iter().flat_map(|bb| unify(p, f, bb)).collect();
                if frontier.is_empty() {
                    break;
                }
            }
            frontier
        }
        _ => vec![],
    }
}

fn instantiate(pattern: &Expr, b: &Bindings) -> Option<Expr> {
    Some(match pattern {
        Expr::Var(v) => b.get(v)?.clone(),
        Expr::Const(_) => pattern.clone(),
        Expr::Node("set", args) => {
            let a = instantiate(&args[0], b)?;
            let c = instantiate(&args[1], b)?;
            set(a, c)
        }
        Expr::Node(h, args) => Expr::Node(h, args.iter().map(|a| instantiate(a, b)).collect::<Option<_>>()?),
    })
}

#[derive(Clone, Debug)]
pub struct Rule {
    pub name: &'static str,
    pub premises: Vec<Formula>,
    pub conclusion: Formula,
}

#[derive(Clone, Debug)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    /// Classical message-meaning, nonce-verification, jurisdiction and
    /// decryption rules, plus the composite freshness-of-receipt rule.
    pub fn standard() -> Self {
        let b = Formula::believes;
        let rules = vec![
            Rule {
                name: "fresh-receipt",
                premises: vec![Formula::only_known_to("?M", "?A", "?B"), b("?A", Formula::fresh("?B"))],
                conclusion: Formula::received_fresh("?B", "?M", "?A"),
            },
            Rule {
                name: "message-meaning",
                premises: vec![
                    b("?P", Formula::shared_key("?P", "?Q", "?K")),
                    Formula::sees("?P", Term::enc(Term::atom("?X"), "?K")),
                ],
                conclusion: b("?P", Formula::said("?Q", "?X")),
            },
            Rule {
                name: "nonce-verification",
                premises: vec![b("?P", Formula::fresh("?X")), b("?P", Formula::said("?Q", "?X"))],
                conclusion: b("?P", Formula::says("?Q", "?X")),
            },
            Rule {
                name: "jurisdiction",
                premises: vec![
                    b("?P", Formula::controls("?Q", Formula::fresh("?X"))),
                    b("?P", b("?Q", Formula::fresh("?X"))),
                ],
                conclusion: b("?P", Formula::fresh("?X")),
            },
            Rule {
                name: "decryption",
                premises: vec![
                    b("?P", Formula::shared_key("?P", "?Q", "?K")),
                    Formula::sees("?P", Term::enc(Term::atom("?X"), "?K")),
                ],
                conclusion: Formula::sees("?P", Term::atom("?X")),
            },
        ];
        RuleSet { rules }
    }

    pub fn get(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

/// A proof tree. Leaves are assumptions (`rule == None`).
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub conclusion: Formula,
    pub rule: Option<&'static str>,
    pub premises: Vec<Derivation>,
}

impl Derivation {
    /// Indented dump, one line per node.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0);
        out
    }

    fn render_into(&self, out: &mut String, indent: usize) {
        let tag = self.rule.unwrap_or("assumption");
        let _ = writeln!(out, "{}{}   [{}]", "  ".repeat(indent), self.conclusion, tag);
        for p in &self.premises {
            p.render_into(out, indent + 1);
        }
    }

    pub fn steps(&self) -> usize {
        self.rule.map_or(0, |_| 1) + self.premises.iter().map(Derivation::steps).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProofOutcome {
    Proved(Derivation),
    NotProved,
}

impl ProofOutcome {
    pub fn is_proved(&self) -> bool {
        matches!(self, ProofOutcome::Proved(_))
    }
}

pub const DEFAULT_DEPTH_LIMIT: usize = 8;

#[derive(Clone, Debug)]
enum Why {
    Assumption,
    Rule(&'static str, Vec<usize>),
}

/// Forward-chains from `assumptions` for at most `depth_limit` rounds of
/// rule application. Rules fire in declaration order and facts are
/// scanned in insertion order, so the result is deterministic.
pub fn derive(assumptions: &[Formula], rules: &RuleSet, goal: &Formula, depth_limit: usize) -> ProofOutcome {
    assert!(depth_limit >= 1, "depth limit must be at least 1");
    let patterns: Vec<(&'static str, Vec<Expr>, Expr)> = rules
        .rules
        .iter()
        .map(|r| (r.name, r.premises.iter().map(lower).collect(), lower(&r.conclusion)))
        .collect();
    let mut facts: Vec<Expr> = Vec::new();
    let mut why: Vec<Why> = Vec::new();
    let mut index: HashMap<Expr, usize> = HashMap::new();
    for a in assumptions {
        let e = lower(a);
        if !index.contains_key(&e) {
            index.insert(e.clone(), facts.len());
            facts.push(e);
            why.push(Why::Assumption);
        }
    }
    let goal_expr = lower(goal);
    // Facts deeper than this cannot help and would let jurisdiction-style
    // rules grow formulas without bound.
    let max_depth = assumptions.iter().chain([goal]).map(Formula::depth).max().unwrap_or(1) + 1;

    for _ in 0..depth_limit {
        if index.contains_key(&goal_expr) {
            break;
        }
        let snapshot = facts.len();
        let mut fresh: Vec<(Expr, Why)> = Vec::new();
        for (rule_name, premises, conclusion) in &patterns {
            let mut partial: Vec<(Bindings, Vec<usize>)> = vec![(Bindings::new(), Vec::new())];
            for prem in premises {
                let mut next = Vec::new();
                for (b, used) in &partial {
                    for (i, fact) in facts[..snapshot].iter().enumerate() {
                        for nb in unify(prem, fact, b) {
                            let mut u = used.clone();
                            u.push(i);
                            next.push((nb, u));
                        }
                    }
                }
                partial = next;
            }
            for (b, used) in partial {
                let Some(c) = instantiate(conclusion, &b) else { continue };
                if index.contains_key(&c) || fresh.iter().any(|(e, _)| *e == c) {
                    continue;
                }
                if raise(&c).depth() > max_depth {
                    continue;
                }
                fresh.push((c, Why::Rule(rule_name, used)));
            }
        }
        if fresh.is_empty() {
            break;
        }
        for (e, w) in fresh {
            index.insert(e.clone(), facts.len());
            facts.push(e);
            why.push(w);
        }
    }

    match index.get(&goal_expr) {
        Some(&i) => ProofOutcome::Proved(build_tree(i, &facts, &why)),
        None => ProofOutcome::NotProved,
    }
}

fn build_tree(i: usize, facts: &[Expr], why: &[Why]) -> Derivation {
    match &why[i] {
        Why::Assumption => Derivation {
            conclusion: raise(&facts[i]),
            rule: None,
            premises: vec![],
        },
        Why::Rule(name, used) => Derivation {
            conclusion: raise(&facts[i]),
            rule: Some(name),
            premises: used.iter().map(|&j| build_tree(j, facts, why)).collect(),
        },
    }
}

/// True iff every rule step in `tree` is an exact instance of its declared
/// rule and every leaf is among `assumptions`.
pub fn check_derivation(tree: &Derivation, rules: &RuleSet, assumptions: &[Formula]) -> bool {
    let leaf_ok = |f: &Formula| assumptions.iter().any(|a| lower(a) == lower(f));
    match tree.rule {
        None => tree.premises.is_empty() && leaf_ok(&tree.conclusion),
        Some(name) => {
            let Some(rule) = rules.get(name) else { return false };
            if rule.premises.len() != tree.premises.len() {
                return false;
            }
            let mut frontier = vec![Bindings::new()];
            for (pat, child) in rule.premises.iter().zip(&tree.premises) {
                let fact = lower(&child.conclusion);
                frontier = frontier.iter().flat_map(|b| unify(&lower(pat), &fact, b)).collect();
            }
            let concl = lower(&tree.conclusion);
            let matched = frontier
                .iter()
                .any(|b| instantiate(&lower(&rule.conclusion), b).as_ref() == Some(&concl));
            matched && tree.premises.iter().all(|p| check_derivation(p, rules, assumptions))
        }
    }
}

/// One proof obligation with its assumptions.
#[derive(Clone, Debug)]
pub struct ProtocolInstance {
    pub name: &'static str,
    pub assumptions: Vec<Formula>,
    pub goal: Formula,
}

/// Upload of encrypted weights from a sender `S` to the oracle network `O`.
pub fn weight_upload_instance() -> ProtocolInstance {
    ProtocolInstance {
        name: "weight-upload (S -> O)",
        assumptions: vec![
            Formula::believes("S", Formula::fresh("O")),
            Formula::only_known_to("M", "S", "O"),
        ],
        goal: Formula::received_fresh("O", "M", "S"),
    }
}

/// Correctness proof from computation oracle `O_i` to the chain `B`.
pub fn proof_delivery_instance() -> ProtocolInstance {
    ProtocolInstance {
        name: "proof-delivery (O_i -> B)",
        assumptions: vec![
            Formula::believes("O_i", Formula::fresh("B")),
            Formula::only_known_to("M", "O_i", "B"),
        ],
        goal: Formula::received_fresh("B", "M", "O_i"),
    }
}

/// The weight upload restated with classical rules: a shared key, an
/// encrypted message and a fresh nonce give `O believes S says N`.
pub fn weight_upload_classical_instance() -> ProtocolInstance {
    ProtocolInstance {
        name: "weight-upload, classical rules",
        assumptions: vec![
            Formula::believes("O", Formula::shared_key("O", "S", "K_SO")),
            Formula::sees("O", Term::enc(Term::atom("N"), "K_SO")),
            Formula::believes("O", Formula::fresh("N")),
        ],
        goal: Formula::believes("O", Formula::says("S", "N")),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BanCase {
    pub instance: String,
    /// `None` for the full assumption set, otherwise the removed assumption.
    pub removed: Option<String>,
    pub goal: String,
    pub proved: bool,
    #[serde(skip)]
    pub derivation: Option<Derivation>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BanReport {
    pub cases: Vec<BanCase>,
}

impl BanReport {
    /// Both protocol goals (and the classical restatement) proved from
    /// their full assumption sets.
    pub fn goals_proved(&self) -> bool {
        self.cases.iter().filter(|c| c.removed.is_none()).all(|c| c.proved)
    }

    /// No single-assumption ablation proves its goal.
    pub fn ablations_unproved(&self) -> bool {
        self.cases.iter().filter(|c| c.removed.is_some()).all(|c| !c.proved)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for case in &self.cases {
            let variant = match &case.removed {
                None => "full assumptions".to_string(),
                Some(r) => format!("without: {r}"),
            };
            let verdict = if case.proved { "Proved" } else { "NotProved" };
            let _ = writeln!(
                out,
                "== {} | {} | goal: {} | {}",
                case.instance, variant, case.goal, verdict
            );
            if let Some(d) = &case.derivation {
                out.push_str(&d.render());
            }
        }
        out
    }
}

/// Runs each instance with its full assumptions and with every single
/// assumption removed.
pub fn check_protocols() -> BanReport {
    let rules = RuleSet::standard();
    let mut cases = Vec::new();
    for inst in [
        weight_upload_instance(),
        proof_delivery_instance(),
        weight_upload_classical_instance(),
    ] {
        let mut variants: Vec<(Option<String>, Vec<Formula>)> = vec![(None, inst.assumptions.clone())];
        for (i, removed) in inst.assumptions.iter().enumerate() {
            let mut rest = inst.assumptions.clone();
            rest.remove(i);
            variants.push((Some(removed.to_string()), rest));
        }
        for (removed, assumptions) in variants {
            let outcome = derive(&assumptions, &rules, &inst.goal, DEFAULT_DEPTH_LIMIT);
            let derivation = match outcome {
                ProofOutcome::Proved(d) => Some(d),
                ProofOutcome::NotProved => None,
            };
            cases.push(BanCase {
                instance: inst.name.to_string(),
                removed,
                goal: inst.goal.to_string(),
                proved: derivation.is_some(),
                derivation,
            });
        }
    }
    BanReport { cases }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn upload_goal_is_proved() {
        let inst = weight_upload_instance();
        let rules = RuleSet::standard();
        let ProofOutcome::Proved(tree) = derive(&inst.assumptions, &rules, &inst.goal, DEFAULT_DEPTH_LIMIT) else {
            panic!("expected a proof");
        };
        assert_eq!(tree.rule, Some("fresh-receipt"));
        assert_eq!(tree.steps(), 1);
        assert!(check_derivation(&tree, &rules, &inst.assumptions));
        assert!(tree
            .render()
            .contains("O receives M from S in fresh state   [fresh-receipt]"));
    }

    #[test]
    fn upload_without_freshness_is_not_proved() {
        let goal = Formula::received_fresh("O", "M", "S");
        let outcome = derive(
            &[Formula::only_known_to("M", "S", "O")],
            &RuleSet::standard(),
            &goal,
            DEFAULT_DEPTH_LIMIT,
        );
        assert_eq!(outcome, ProofOutcome::NotProved);
    }

    #[test]
    fn empty_assumptions_prove_nothing() {
        let goal = Formula::fresh("X");
        assert_eq!(
            derive(&[], &RuleSet::standard(), &goal, DEFAULT_DEPTH_LIMIT),
            ProofOutcome::NotProved
        );
    }

    #[test]
    fn direction_matters() {
        // S believes O fresh gives O receiving from S, not S from O.
        let inst = weight_upload_instance();
        let wrong = Formula::received_fresh("S", "M", "O");
        assert_eq!(
            derive(&inst.assumptions, &RuleSet::standard(), &wrong, DEFAULT_DEPTH_LIMIT),
            ProofOutcome::NotProved
        );
    }

    #[test]
    fn classical_chain_uses_two_rules() {
        let inst = weight_upload_classical_instance();
        let rules = RuleSet::standard();
        let ProofOutcome::Proved(tree) = derive(&inst.assumptions, &rules, &inst.goal, DEFAULT_DEPTH_LIMIT) else {
            panic!("expected a proof");
        };
        assert_eq!(tree.rule, Some("nonce-verification"));
        assert_eq!(tree.premises[1].rule, Some("message-meaning"));
        assert!(check_derivation(&tree, &rules, &inst.assumptions));
        // Needs two rounds of chaining.
        assert_eq!(
            derive(&inst.assumptions, &rules, &inst.goal, 1),
            ProofOutcome::NotProved
        );
    }

    #[test]
    fn jurisdiction_rule() {
        let assumptions = vec![
            Formula::believes("B", Formula::controls("O", Formula::fresh("T"))),
            Formula::believes("B", Formula::believes("O", Formula::fresh("T"))),
        ];
        let goal = Formula::believes("B", Formula::fresh("T"));
        let rules = RuleSet::standard();
        let ProofOutcome::Proved(tree) = derive(&assumptions, &rules, &goal, 2) else {
            panic!()
        };
        assert_eq!(tree.rule, Some("jurisdiction"));
        assert!(check_derivation(&tree, &rules, &assumptions));
    }

    #[test]
    fn checker_rejects_forged_steps() {
        let inst = weight_upload_instance();
        let forged = Derivation {
            conclusion: Formula::received_fresh("S", "M", "O"),
            rule: Some("fresh-receipt"),
            premises: inst
                .assumptions
                .iter()
                .map(|a| Derivation {
                    conclusion: a.clone(),
                    rule: None,
                    premises: vec![],
                })
                .collect(),
        };
        assert!(!check_derivation(&forged, &RuleSet::standard(), &inst.assumptions));
    }

    #[test]
    fn protocol_report() {
        let report = check_protocols();
        assert!(report.goals_proved());
        assert!(report.ablations_unproved());
        // 3 instances: full + one ablation per assumption.
        assert_eq!(report.cases.len(), 3 + 7);
        let step3 = report
            .cases
            .iter()
            .find(|c| c.instance.starts_with("proof-delivery") && c.removed.is_none())
            .unwrap();
        assert_eq!(step3.goal, "B receives M from O_i in fresh state");
        assert!(step3.proved);
        let minus_secrecy = report
            .cases
            .iter()
            .find(|c| {
                c.instance.starts_with("proof-delivery") && c.removed.as_deref() == Some("M only known to {O_i, B}")
            })
            .unwrap();
        assert!(!minus_secrecy.proved);
        assert_eq!(report.render_text(), check_protocols().render_text());
    }

    fn atom_formula() -> impl Strategy<Value = Formula> {
        let names = prop::sample::select(vec!["S", "O", "B", "O_i", "M", "N"]);
        let keys = prop::sample::select(vec!["K_SO", "K"]);
        prop_oneof![
            (names.clone(), names.clone()).prop_map(|(p, t)| Formula::believes(p, Formula::fresh(t))),
            (names.clone(), names.clone(), names.clone()).prop_map(|(m, p, q)| Formula::only_known_to(m, p, q)),
            (names.clone(), names.clone(), keys.clone())
                .prop_map(|(p, q, k)| Formula::believes(p, Formula::shared_key(p, q, k))),
            (names.clone(), names.clone(), keys).prop_map(|(p, x, k)| Formula::sees(p, Term::enc(Term::atom(x), k))),
            (names.clone(), names.clone(), names).prop_map(|(p, q, x)| Formula::believes(p, Formula::said(q, x))),
        ]
    }

    proptest! {
        #[test]
        fn adding_assumptions_keeps_proofs(extra in prop::collection::vec(atom_formula(), 0..6)) {
            let rules = RuleSet::standard();
            for inst in [weight_upload_instance(), proof_delivery_instance(), weight_upload_classical_instance()] {
                let mut more = inst.assumptions.clone();
                more.extend(extra.iter().cloned());
                let outcome = derive(&more, &rules, &inst.goal, DEFAULT_DEPTH_LIMIT);
                let ProofOutcome::Proved(tree) = outcome else {
                    return Err(TestCaseError::fail("monotonicity violated"));
                };
                prop_assert!(check_derivation(&tree, &rules, &more));
            }
        }

        #[test]
        fn every_proof_is_well_formed(facts in prop::collection::vec(atom_formula(), 0..8), goal in atom_formula()) {
            let rules = RuleSet::standard();
            if let ProofOutcome::Proved(tree) = derive(&facts, &rules, &goal, DEFAULT_DEPTH_LIMIT) {
                prop_assert!(check_derivation(&tree, &rules, &facts));
            }
        }
    }
}
