//! Reward machines synthesised from sets of partial-order plans.
//!
//! Machine states are sequences of planning states: every proper prefix of
//! every linearisation of every plan, starting from the initial state, plus
//! a distinguished absorbing goal state. An observation is a signed literal
//! set; applying it to the last planning state of the current sequence gives
//! a candidate successor. The machine advances when the extended sequence
//! is a prefix of some linearisation, enters the goal state (reward 0) when
//! the extended sequence is consistent with a linearisation and its last
//! planning state satisfies the goal, and otherwise stays put (reward -1).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::planning::{ActionId, FluentSet, Goal, PlanningDomain, PlanningState, PlanningTask};
use crate::pop::{validate_pop, PartialOrderPlan, PlanSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RmError {
    #[error("unknown reward machine state {0}")]
    UnknownState(usize),
    #[error("plan does not achieve the task goal from the initial state")]
    InvalidPlan,
}

/// A signed literal set: fluents that became true and fluents that became false.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObservationLabel {
    pub pos: FluentSet,
    pub neg: FluentSet,
}

impl ObservationLabel {
    pub fn new(pos: FluentSet, neg: FluentSet) -> Self {
        debug_assert!(pos.is_disjoint(neg));
        ObservationLabel { pos, neg }
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }

    /// `(state \ neg) ∪ pos`
    pub fn apply(&self, state: PlanningState) -> PlanningState {
        PlanningState(state.0.difference(self.neg).union(self.pos))
    }

    /// Postconditions of a planning action as a label.
    pub fn of_action(domain: &PlanningDomain, a: ActionId) -> Self {
        let act = domain.action(a);
        ObservationLabel { pos: act.eff_pos, neg: act.eff_neg }
    }

    pub fn format(&self, domain: &PlanningDomain) -> String {
        if self.is_empty() {
            return "{}".into();
        }
        let mut parts: Vec<String> = self.pos.iter().map(|f| format!("+{}", domain.fluent_name(f))).collect();
        parts.extend(self.neg.iter().map(|f| format!("-{}", domain.fluent_name(f))));
        parts.join(" ")
    }
}

/// Label describing the change between two consecutive observations.
pub fn signed_delta(prev: FluentSet, next: FluentSet) -> ObservationLabel {
    ObservationLabel { pos: next.difference(prev), neg: prev.difference(next) }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RmState {
    Prefix(Vec<PlanningState>),
    Goal,
}

pub type RmStateId = usize;

#[derive(Debug, Clone)]
pub struct RewardMachine {
    domain: Arc<PlanningDomain>,
    goal: Goal,
    states: Vec<RmState>,
    index: HashMap<Vec<PlanningState>, RmStateId>,
    complete: HashSet<Vec<PlanningState>>,
    alphabet: BTreeSet<ObservationLabel>,
    transitions: BTreeMap<(RmStateId, ObservationLabel), RmStateId>,
}

impl PartialEq for RewardMachine {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain
            && self.goal == other.goal
            && self.states == other.states
            && self.complete == other.complete
            && self.alphabet == other.alphabet
            && self.transitions == other.transitions
    }
}

/// Source plan for a single-plan reward machine.
#[derive(Debug, Clone, Copy)]
pub enum PlanRef<'a> {
    PartialOrder(&'a PartialOrderPlan),
    Sequential(&'a [ActionId]),
}

pub fn build_mprm(plans: &PlanSet, task: &PlanningTask) -> RewardMachine {
    let lins: Vec<Vec<ActionId>> = plans.sequential_plans();
    if plans.is_empty() && !task.is_goal(task.init) {
        log::warn!("task `{}` has no plans; the reward machine can never reach its goal state", task.name);
    }
    from_linearisations(&lins, task)
}

pub fn build_single_plan_rm(plan: PlanRef<'_>, task: &PlanningTask) -> Result<RewardMachine, RmError> {
    let pop = match plan {
        PlanRef::PartialOrder(p) => p.clone(),
        PlanRef::Sequential(s) => PartialOrderPlan::from_sequence(s),
    };
    if !validate_pop(&pop, task) {
        return Err(RmError::InvalidPlan);
    }
    Ok(build_mprm(&PlanSet::from_plans([pop]), task))
}

fn from_linearisations(lins: &[Vec<ActionId>], task: &PlanningTask) -> RewardMachine {
    let domain = task.domain.clone();
    let mut prefixes: BTreeSet<(usize, Vec<PlanningState>)> = BTreeSet::new();
    let mut complete = HashSet::new();
    let mut alphabet = BTreeSet::new();
    prefixes.insert((1, vec![task.init]));
    for lin in lins {
        let mut seq = vec![task.init];
        for (i, &a) in lin.iter().enumerate() {
            let label = ObservationLabel::of_action(&domain, a);
            alphabet.insert(label);
            let next = label.apply(*seq.last().unwrap());
            seq.push(next);
            if i + 1 < lin.len() {
                prefixes.insert((seq.len(), seq.clone()));
            }
        }
        complete.insert(seq);
    }

    let mut states: Vec<RmState> = Vec::with_capacity(prefixes.len() + 1);
    let mut index = HashMap::new();
    for (_, seq) in prefixes {
        index.insert(seq.clone(), states.len());
        states.push(RmState::Prefix(seq));
    }
    states.push(RmState::Goal);

    let mut rm = RewardMachine {
        domain,
        goal: task.goal,
        states,
        index,
        complete,
        alphabet,
        transitions: BTreeMap::new(),
    };
    let mut transitions = BTreeMap::new();
    for u in 0..rm.goal_state() {
        for &label in &rm.alphabet {
            let v = rm.delta(u, &label);
            if v != u {
                transitions.insert((u, label), v);
            }
        }
    }
    rm.transitions = transitions;
    rm
}

impl RewardMachine {
    pub fn domain(&self) -> &Arc<PlanningDomain> {
        &self.domain
    }

    pub fn initial(&self) -> RmStateId {
        0
    }

    pub fn goal_state(&self) -> RmStateId {
        self.states.len() - 1
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, id: RmStateId) -> Option<&RmState> {
        self.states.get(id)
    }

    pub fn states(&self) -> &[RmState] {
        &self.states
    }

    pub fn alphabet(&self) -> &BTreeSet<ObservationLabel> {
        &self.alphabet
    }

    /// Non-self-loop transitions over the alphabet; every other pair loops.
    pub fn transitions(&self) -> &BTreeMap<(RmStateId, ObservationLabel), RmStateId> {
        &self.transitions
    }

    pub fn reward(&self, _from: RmStateId, to: RmStateId) -> f64 {
        if to == self.goal_state() {
            0.0
        } else {
            -1.0
        }
    }

    /// State transition function, total over all labels.
    pub fn delta(&self, u: RmStateId, label: &ObservationLabel) -> RmStateId {
        let goal = self.goal_state();
        let seq = match &self.states[u] {
            RmState::Goal => return goal,
            RmState::Prefix(seq) => seq,
        };
        if self.complete.contains(seq) {
            return goal;
        }
        let next = label.apply(*seq.last().expect("prefix sequences are non-empty"));
        let mut ext = Vec::with_capacity(seq.len() + 1);
        ext.extend_from_slice(seq);
        ext.push(next);
        if self.complete.contains(&ext) {
            return goal;
        }
        match self.index.get(&ext) {
            Some(_) if crate::planning::is_goal(next, &self.goal) => goal,
            Some(&v) => v,
            None => u,
        }
    }

    pub fn step(&self, u: RmStateId, label: &ObservationLabel) -> Result<(RmStateId, f64), RmError> {
        if u >= self.states.len() {
            return Err(RmError::UnknownState(u));
        }
        let v = self.delta(u, label);
        Ok((v, self.reward(u, v)))
    }

    pub fn describe_state(&self, id: RmStateId) -> String {
        match &self.states[id] {
            RmState::Goal => "u_g".into(),
            RmState::Prefix(seq) => {
                let parts: Vec<String> = seq.iter().map(|s| self.domain.format_set(s.0)).collect();
                format!("[{}]", parts.join(", "))
            }
        }
    }

    /// Line-oriented text form with deterministic ordering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "reward-machine {}", self.domain.name);
        let _ = writeln!(out, "states: {}", self.states.len());
        for id in 0..self.states.len() {
            let tag = if id == self.initial() { " initial" } else { "" };
            match &self.states[id] {
                RmState::Goal => {
                    let _ = writeln!(out, "state {id} goal");
                }
                RmState::Prefix(_) => {
                    let _ = writeln!(out, "state {id}{tag} {}", self.describe_state(id));
                }
            }
        }
        let _ = writeln!(out, "alphabet: {}", self.alphabet.len());
        for l in &self.alphabet {
            let _ = writeln!(out, "label {}", l.format(&self.domain));
        }
        let _ = writeln!(out, "transitions: {}", self.transitions.len());
        for ((u, l), v) in &self.transitions {
            let _ = writeln!(
                out,
                "transition {u} [{}] -> {v} reward {}",
                l.format(&self.domain),
                self.reward(*u, *v)
            );
        }
        let _ = writeln!(out, "default: self-loop reward -1; state {} absorbing reward 0", self.goal_state());
        out
    }
}

pub fn rm_step(rm: &RewardMachine, u: RmStateId, label: &ObservationLabel) -> Result<(RmStateId, f64), RmError> {
    rm.step(u, label)
}

pub fn rm_to_dot(rm: &RewardMachine) -> String {
    let mut out = String::from("digraph rm {\n  rankdir=LR;\n");
    for id in 0..rm.num_states() {
        let shape = if id == rm.goal_state() { "doublecircle" } else { "box" };
        let _ = writeln!(
            out,
            "  u{id} [shape={shape}, label=\"u{id}\\n{}\"];",
            rm.describe_state(id).replace('"', "'")
        );
    }
    for ((u, l), v) in rm.transitions() {
        let _ = writeln!(
            out,
            "  u{u} -> u{v} [label=\"{} / {}\"];",
            l.format(rm.domain()),
            rm.reward(*u, *v)
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pop::{enumerate_pops, Ordering, Step};

    fn bridge() -> (PlanningTask, PlanSet) {
        let t = fixtures::task("bridge").unwrap();
        let set = enumerate_pops(&t, 1).unwrap();
        (t, set)
    }

    fn lab(t: &PlanningTask, pos: &[&str], neg: &[&str]) -> ObservationLabel {
        ObservationLabel::new(t.domain.fluent_set(pos).unwrap(), t.domain.fluent_set(neg).unwrap())
    }

    fn seq_of(t: &PlanningTask, states: &[&[&str]]) -> Vec<PlanningState> {
        states.iter().map(|s| t.domain.state(s).unwrap()).collect()
    }

    #[test]
    fn bridge_mprm_states() {
        let (t, set) = bridge();
        let rm = build_mprm(&set, &t);
        assert_eq!(rm.num_states(), 9);
        // Hand-enumerated proper prefixes of the four bridge linearisations.
        let want: Vec<Vec<PlanningState>> = vec![
            seq_of(&t, &[&[]]),
            seq_of(&t, &[&[], &["has-wood"]]),
            seq_of(&t, &[&[], &["has-grass"]]),
            seq_of(&t, &[&[], &["has-iron"]]),
            seq_of(&t, &[&[], &["has-wood"], &["has-wood", "has-iron"]]),
            seq_of(&t, &[&[], &["has-iron"], &["has-wood", "has-iron"]]),
            seq_of(&t, &[&[], &["has-wood"], &["has-wood", "has-grass"]]),
            seq_of(&t, &[&[], &["has-grass"], &["has-wood", "has-grass"]]),
        ];
        for w in &want {
            assert!(rm.states().contains(&RmState::Prefix(w.clone())), "missing {w:?}");
        }
        assert_eq!(rm.states()[rm.goal_state()], RmState::Goal);
        assert_eq!(rm.states()[rm.initial()], RmState::Prefix(seq_of(&t, &[&[]])));
    }

    #[test]
    fn step_semantics() {
        let (t, set) = bridge();
        let rm = build_mprm(&set, &t);
        let (u, r) = rm_step(&rm, 0, &lab(&t, &["has-wood"], &[])).unwrap();
        assert_eq!(rm.states()[u], RmState::Prefix(seq_of(&t, &[&[], &["has-wood"]])));
        assert_eq!(r, -1.0);

        let (u2, _) = rm_step(&rm, u, &lab(&t, &["has-grass"], &[])).unwrap();
        let (g, r) = rm_step(&rm, u2, &lab(&t, &["has-bridge"], &["has-wood", "has-grass"])).unwrap();
        assert_eq!(g, rm.goal_state());
        assert_eq!(r, 0.0);
        assert_eq!(rm_step(&rm, g, &lab(&t, &[], &[])).unwrap(), (g, 0.0));

        assert_eq!(rm_step(&rm, 0, &ObservationLabel::default()).unwrap(), (0, -1.0));
        assert_eq!(rm_step(&rm, 42, &ObservationLabel::default()), Err(RmError::UnknownState(42)));
    }

    #[test]
    fn unknown_label_self_loops() {
        let (t, set) = bridge();
        let rm = build_mprm(&set, &t);
        let l = lab(&t, &["has-bridge"], &["has-wood"]);
        assert_eq!(rm_step(&rm, 0, &l).unwrap(), (0, -1.0));

        // Gold appearing out of nowhere satisfies the goal but matches no plan prefix.
        let gold = fixtures::task("gold").unwrap();
        let rm = build_mprm(&enumerate_pops(&gold, 1).unwrap(), &gold);
        assert_eq!(rm_step(&rm, 0, &lab(&gold, &["has-gold"], &[])).unwrap(), (0, -1.0));
    }

    #[test]
    fn single_plan_machines() {
        let (t, set) = bridge();
        let ids = |n: &[&str]| -> Vec<ActionId> { n.iter().map(|x| t.domain.action_id(x).unwrap()).collect() };
        let pi0 = ids(&["get-wood", "get-iron", "use-factory"]);
        let rm = build_single_plan_rm(PlanRef::Sequential(&pi0), &t).unwrap();
        assert_eq!(rm.num_states(), 4);

        let iron = set
            .iter()
            .find(|p| p.actions().contains(&t.domain.action_id("use-factory").unwrap()))
            .unwrap();
        let rm = build_single_plan_rm(PlanRef::PartialOrder(iron), &t).unwrap();
        // [∅], [∅,{w}], [∅,{i}], [∅,{w},{w,i}], [∅,{i},{w,i}], u_g
        assert_eq!(rm.num_states(), 6);

        let singleton = build_mprm(&PlanSet::from_plans([iron.clone()]), &t);
        assert_eq!(singleton, rm);

        let bad = ids(&["use-factory"]);
        assert_eq!(build_single_plan_rm(PlanRef::Sequential(&bad), &t).unwrap_err(), RmError::InvalidPlan);
    }

    #[test]
    fn language_property() {
        for name in fixtures::DOMAINS {
            let t = fixtures::task(name).unwrap();
            let set = enumerate_pops(&t, 1).unwrap();
            let rm = build_mprm(&set, &t);
            for lin in set.sequential_plans() {
                let mut u = rm.initial();
                let mut total = 0.0;
                let mut last = f64::NAN;
                for &a in &lin {
                    let (v, r) = rm.step(u, &ObservationLabel::of_action(&t.domain, a)).unwrap();
                    total += r;
                    last = r;
                    u = v;
                }
                assert_eq!(u, rm.goal_state(), "{name}: {}", t.domain.format_plan(&lin));
                assert_eq!(last, 0.0);
                assert_eq!(total, -((lin.len() - 1) as f64));
            }
        }
    }

    #[test]
    fn goal_state_is_absorbing() {
        let (t, set) = bridge();
        let rm = build_mprm(&set, &t);
        assert!(!rm.transitions().keys().any(|(u, _)| *u == rm.goal_state()));
        for l in rm.alphabet() {
            assert_eq!(rm.delta(rm.goal_state(), l), rm.goal_state());
        }
    }

    #[test]
    fn empty_plan_set() {
        let f = crate::domain_io::parse_domain("domain d\nfluents: a\ntask t\n goal+: a\n").unwrap();
        let t = &f.tasks[0];
        let rm = build_mprm(&PlanSet::default(), t);
        assert_eq!(rm.num_states(), 2);

        let f = crate::domain_io::parse_domain("domain d\nfluents: a\ntask t\n init: a\n goal+: a\n").unwrap();
        let t = &f.tasks[0];
        let set = enumerate_pops(t, 1).unwrap();
        let rm = build_mprm(&set, t);
        assert_eq!(rm.num_states(), 2);
        assert_eq!(rm.step(0, &ObservationLabel::default()).unwrap(), (1, 0.0));
    }

    #[test]
    fn sequences_are_order_sensitive() {
        let (t, set) = bridge();
        let rm = build_mprm(&set, &t);
        let wi = |first: &str| {
            let (u, _) = rm.step(0, &lab(&t, &[first], &[])).unwrap();
            let other = if first == "has-wood" { "has-iron" } else { "has-wood" };
            rm.step(u, &lab(&t, &[other], &[])).unwrap().0
        };
        assert_ne!(wi("has-wood"), wi("has-iron"));
    }

    #[test]
    fn off_plan_completion_is_not_rewarded() {
        // A machine for the iron-bridge plan ignores a bridge built at the toolshed.
        let (t, _) = bridge();
        let d = &t.domain;
        let iron = PartialOrderPlan {
            steps: ["get-wood", "get-iron", "use-factory"]
                .iter()
                .map(|n| Step::Action(d.action_id(n).unwrap()))
                .collect(),
            order: Ordering::from_pairs([(0, 2), (1, 2)]),
            links: Vec::new(),
        };
        let rm = build_single_plan_rm(PlanRef::PartialOrder(&iron), &t).unwrap();
        let (u, _) = rm.step(0, &lab(&t, &["has-wood"], &[])).unwrap();
        let (u, _) = rm.step(u, &lab(&t, &["has-grass"], &[])).unwrap();
        let (v, r) = rm.step(u, &lab(&t, &["has-bridge"], &["has-wood", "has-grass"])).unwrap();
        assert_eq!(v, u);
        assert_eq!(r, -1.0);
    }

    #[test]
    fn deltas() {
        let (t, _) = bridge();
        let d = &t.domain;
        let wi = d.fluent_set(&["has-wood", "has-iron"]).unwrap();
        let b = d.fluent_set(&["has-bridge"]).unwrap();
        assert_eq!(signed_delta(wi, b), ObservationLabel::new(b, wi));
        assert_eq!(signed_delta(wi, wi), ObservationLabel::default());
        let w = d.fluent_set(&["has-wood"]).unwrap();
        assert_eq!(signed_delta(FluentSet::EMPTY, w), ObservationLabel::new(w, FluentSet::EMPTY));
        let factory = ObservationLabel::of_action(d, d.action_id("use-factory").unwrap());
        assert_eq!(signed_delta(wi, b), factory);
    }

    #[test]
    fn dot_output() {
        let (t, set) = bridge();
        let rm = build_mprm(&set, &t);
        let dot = rm_to_dot(&rm);
        assert_eq!(dot.matches("shape=").count(), 9);
        assert!(dot.contains("u8 [shape=doublecircle"));
        for line in dot.lines().filter(|l| l.contains("-> u8")) {
            assert!(line.ends_with("/ 0\"];"), "{line}");
        }
        assert_eq!(dot, rm_to_dot(&build_mprm(&set, &t)));

        let f = crate::domain_io::parse_domain("domain d\nfluents: a\ntask t\n goal+: a\n").unwrap();
        let small = build_mprm(&PlanSet::default(), &f.tasks[0]);
        assert_eq!(rm_to_dot(&small).matches("shape=").count(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn delta_is_total_and_rewards_are_final_state(state in 0usize..25, pos in 0u64..256, neg in 0u64..256) {
                let t = fixtures::task("gold-or-gem").unwrap();
                let set = enumerate_pops(&t, 1).unwrap();
                let rm = build_mprm(&set, &t);
                let u = state % rm.num_states();
                let label = ObservationLabel { pos: FluentSet(pos & !neg), neg: FluentSet(neg) };
                let (v, r) = rm.step(u, &label).unwrap();
                prop_assert!(v < rm.num_states());
                prop_assert_eq!(r == 0.0, v == rm.goal_state());
                prop_assert!(r == 0.0 || r == -1.0);
                if u == rm.goal_state() {
                    prop_assert_eq!(v, u);
                }
                // Either stay, advance by one planning state, or finish.
                if v != u && v != rm.goal_state() {
                    let (RmState::Prefix(a), RmState::Prefix(b)) = (&rm.states()[u], &rm.states()[v]) else {
                        unreachable!()
                    };
                    prop_assert_eq!(b.len(), a.len() + 1);
                    prop_assert_eq!(&b[..a.len()], &a[..]);
                }
            }
        }
    }
}
