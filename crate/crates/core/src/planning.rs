//! Propositional STRIPS semantics: fluents, actions, states and goals.
//!
//! Fluents are interned per domain and kept in name order, so a planning
//! state is a 64-bit set of fluent indices. Domains are limited to
//! [`MAX_FLUENTS`] fluents, which is far beyond anything a planning
//! abstraction of a gridworld needs.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub const MAX_FLUENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanningError {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("action `{action}` is not applicable (missing: {missing:?}, forbidden: {forbidden:?})")]
    PreconditionViolation {
        action: String,
        missing: Vec<String>,
        forbidden: Vec<String>,
    },
    #[error("step {index} of the sequence failed: {source}")]
    SequenceFailed {
        index: usize,
        #[source]
        source: Box<PlanningError>,
    },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
}

/// Index of a fluent within its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fluent(pub u8);

/// A set of fluents of one domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FluentSet(pub u64);

impl FluentSet {
    pub const EMPTY: FluentSet = FluentSet(0);

    pub fn single(f: Fluent) -> Self {
        FluentSet(1 << f.0)
    }

    pub fn contains(self, f: Fluent) -> bool {
        self.0 & (1 << f.0) != 0
    }

    pub fn insert(&mut self, f: Fluent) {
        self.0 |= 1 << f.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: FluentSet) -> FluentSet {
        FluentSet(self.0 | other.0)
    }

    pub fn intersection(self, other: FluentSet) -> FluentSet {
        FluentSet(self.0 & other.0)
    }

    pub fn difference(self, other: FluentSet) -> FluentSet {
        FluentSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: FluentSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: FluentSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Fluent> {
        (0..64u8).filter(move |i| self.0 & (1 << i) != 0).map(Fluent)
    }
}

impl FromIterator<Fluent> for FluentSet {
    fn from_iter<I: IntoIterator<Item = Fluent>>(iter: I) -> Self {
        let mut s = FluentSet::EMPTY;
        for f in iter {
            s.insert(f);
        }
        s
    }
}

/// A fluent with a truth value, as used in causal links and observation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub fluent: Fluent,
    pub positive: bool,
}

impl Literal {
    pub fn pos(fluent: Fluent) -> Self {
        Literal { fluent, positive: true }
    }

    pub fn neg(fluent: Fluent) -> Self {
        Literal { fluent, positive: false }
    }

    pub fn negated(self) -> Self {
        Literal { fluent: self.fluent, positive: !self.positive }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanningAction {
    pub name: String,
    pub pre_pos: FluentSet,
    pub pre_neg: FluentSet,
    pub eff_pos: FluentSet,
    pub eff_neg: FluentSet,
}

impl PlanningAction {
    pub fn mentioned(&self) -> FluentSet {
        self.pre_pos.union(self.pre_neg).union(self.eff_pos).union(self.eff_neg)
    }

    pub fn has_effect(&self, lit: Literal) -> bool {
        if lit.positive {
            self.eff_pos.contains(lit.fluent)
        } else {
            self.eff_neg.contains(lit.fluent)
        }
    }

    /// Preconditions as signed literals, in fluent order with positives first.
    pub fn preconditions(&self) -> Vec<Literal> {
        let mut out: Vec<Literal> = self.pre_pos.iter().map(Literal::pos).collect();
        out.extend(self.pre_neg.iter().map(Literal::neg));
        out.sort();
        out
    }
}

/// A planning state: the set of fluents that are true.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlanningState(pub FluentSet);

impl PlanningState {
    pub fn empty() -> Self {
        PlanningState(FluentSet::EMPTY)
    }

    pub fn fluents(self) -> FluentSet {
        self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum GoalMode {
    #[default]
    Conjunctive,
    Disjunctive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Goal {
    pub pos: FluentSet,
    pub neg: FluentSet,
    pub mode: GoalMode,
}

impl Goal {
    pub fn new(pos: FluentSet, neg: FluentSet, mode: GoalMode) -> Result<Self, PlanningError> {
        if !pos.is_disjoint(neg) {
            return Err(PlanningError::InvalidDomain(
                "goal+ and goal- must be disjoint".into(),
            ));
        }
        Ok(Goal { pos, neg, mode })
    }

    pub fn conjunctive(pos: FluentSet) -> Self {
        Goal { pos, neg: FluentSet::EMPTY, mode: GoalMode::Conjunctive }
    }
}

pub fn is_goal(state: PlanningState, goal: &Goal) -> bool {
    let s = state.0;
    if !goal.neg.is_disjoint(s) {
        return false;
    }
    match goal.mode {
        GoalMode::Conjunctive => goal.pos.is_subset(s),
        GoalMode::Disjunctive => !goal.pos.is_disjoint(s),
    }
}

/// Fluents and actions, both kept sorted by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanningDomain {
    pub name: String,
    fluents: Vec<String>,
    actions: Vec<PlanningAction>,
}

/// Action description by fluent name, used to build a domain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionSpec {
    pub name: String,
    pub pre_pos: Vec<String>,
    pub pre_neg: Vec<String>,
    pub eff_pos: Vec<String>,
    pub eff_neg: Vec<String>,
}

impl PlanningDomain {
    pub fn new(
        name: impl Into<String>,
        fluents: impl IntoIterator<Item = impl Into<String>>,
        actions: Vec<ActionSpec>,
    ) -> Result<Self, PlanningError> {
        let mut names: Vec<String> = fluents.into_iter().map(Into::into).collect();
        names.sort();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(PlanningError::InvalidDomain(format!("duplicate fluent `{}`", w[0])));
            }
        }
        if let Some(bad) = names.iter().find(|n| !is_identifier(n)) {
            return Err(PlanningError::InvalidDomain(format!("invalid fluent name `{bad}`")));
        }
        if names.len() > MAX_FLUENTS {
            return Err(PlanningError::InvalidDomain(format!(
                "{} fluents declared, at most {MAX_FLUENTS} supported",
                names.len()
            )));
        }
        let mut domain = PlanningDomain { name: name.into(), fluents: names, actions: Vec::new() };
        let mut seen = BTreeSet::new();
        for spec in actions {
            if !is_identifier(&spec.name) {
                return Err(PlanningError::InvalidDomain(format!(
                    "invalid action name `{}`",
                    spec.name
                )));
            }
            if !seen.insert(spec.name.clone()) {
                return Err(PlanningError::InvalidDomain(format!(
                    "duplicate action `{}`",
                    spec.name
                )));
            }
            let action = PlanningAction {
                pre_pos: domain.fluent_set(&spec.pre_pos)?,
                pre_neg: domain.fluent_set(&spec.pre_neg)?,
                eff_pos: domain.fluent_set(&spec.eff_pos)?,
                eff_neg: domain.fluent_set(&spec.eff_neg)?,
                name: spec.name,
            };
            if !action.pre_pos.is_disjoint(action.pre_neg) {
                return Err(PlanningError::InvalidDomain(format!(
                    "action `{}`: pre+ and pre- overlap",
                    action.name
                )));
            }
            if !action.eff_pos.is_disjoint(action.eff_neg) {
                return Err(PlanningError::InvalidDomain(format!(
                    "action `{}`: eff+ and eff- overlap",
                    action.name
                )));
            }
            domain.actions.push(action);
        }
        domain.actions.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(domain)
    }

    pub fn fluent_names(&self) -> &[String] {
        &self.fluents
    }

    pub fn actions(&self) -> &[PlanningAction] {
        &self.actions
    }

    pub fn action(&self, id: ActionId) -> &PlanningAction {
        &self.actions[id.0]
    }

    pub fn action_ids(&self) -> impl Iterator<Item = ActionId> {
        (0..self.actions.len()).map(ActionId)
    }

    pub fn action_id(&self, name: &str) -> Option<ActionId> {
        self.actions.binary_search_by(|a| a.name.as_str().cmp(name)).ok().map(ActionId)
    }

    pub fn fluent(&self, name: &str) -> Option<Fluent> {
        self.fluents.binary_search_by(|f| f.as_str().cmp(name)).ok().map(|i| Fluent(i as u8))
    }

    pub fn fluent_name(&self, f: Fluent) -> &str {
        &self.fluents[f.0 as usize]
    }

    pub fn all_fluents(&self) -> FluentSet {
        if self.fluents.len() == 64 {
            FluentSet(u64::MAX)
        } else {
            FluentSet((1u64 << self.fluents.len()) - 1)
        }
    }

    pub fn fluent_set<S: AsRef<str>>(&self, names: &[S]) -> Result<FluentSet, PlanningError> {
        let mut set = FluentSet::EMPTY;
        for n in names {
            let n = n.as_ref();
            let f = self
                .fluent(n)
                .ok_or_else(|| PlanningError::DomainMismatch(format!("undeclared fluent `{n}`")))?;
            set.insert(f);
        }
        Ok(set)
    }

    pub fn state(&self, names: &[&str]) -> Result<PlanningState, PlanningError> {
        self.fluent_set(names).map(PlanningState)
    }

    pub fn names_of(&self, set: FluentSet) -> Vec<&str> {
        set.iter().map(|f| self.fluent_name(f)).collect()
    }

    /// Renders a fluent set as `{a, b}`.
    pub fn format_set(&self, set: FluentSet) -> String {
        format!("{{{}}}", self.names_of(set).join(", "))
    }

    fn check_owned(&self, state: PlanningState, action: &PlanningAction) -> Result<(), PlanningError> {
        let all = self.all_fluents();
        if !action.mentioned().is_subset(all) {
            return Err(PlanningError::DomainMismatch(format!(
                "action `{}` mentions fluents outside domain `{}`",
                action.name, self.name
            )));
        }
        if !state.0.is_subset(all) {
            return Err(PlanningError::DomainMismatch(format!(
                "state contains fluents outside domain `{}`",
                self.name
            )));
        }
        Ok(())
    }

    pub fn applicable(&self, state: PlanningState, action: &PlanningAction) -> Result<bool, PlanningError> {
        self.check_owned(state, action)?;
        Ok(applicable(state, action))
    }

    pub fn apply(&self, state: PlanningState, action: &PlanningAction) -> Result<PlanningState, PlanningError> {
        self.check_owned(state, action)?;
        if !applicable(state, action) {
            return Err(PlanningError::PreconditionViolation {
                action: action.name.clone(),
                missing: self
                    .names_of(action.pre_pos.difference(state.0))
                    .into_iter()
                    .map(String::from)
                    .collect(),
                forbidden: self
                    .names_of(action.pre_neg.intersection(state.0))
                    .into_iter()
                    .map(String::from)
                    .collect(),
            });
        }
        Ok(apply_unchecked(state, action))
    }

    pub fn execute_sequence(
        &self,
        plan: &[ActionId],
        init: PlanningState,
    ) -> Result<PlanningState, PlanningError> {
        plan.iter().enumerate().try_fold(init, |s, (index, &a)| {
            self.apply(s, self.action(a)).map_err(|e| PlanningError::SequenceFailed {
                index,
                source: Box::new(e),
            })
        })
    }

    pub fn format_plan(&self, plan: &[ActionId]) -> String {
        let names: Vec<&str> = plan.iter().map(|&a| self.action(a).name.as_str()).collect();
        format!("[{}]", names.join(", "))
    }
}

pub fn applicable(state: PlanningState, action: &PlanningAction) -> bool {
    action.pre_pos.is_subset(state.0) && action.pre_neg.is_disjoint(state.0)
}

/// `(state \ eff-) ∪ eff+` without checking preconditions.
pub fn apply_unchecked(state: PlanningState, action: &PlanningAction) -> PlanningState {
    PlanningState(state.0.difference(action.eff_neg).union(action.eff_pos))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanningTask {
    pub name: String,
    pub domain: Arc<PlanningDomain>,
    pub init: PlanningState,
    pub goal: Goal,
}

impl PlanningTask {
    pub fn new(
        name: impl Into<String>,
        domain: Arc<PlanningDomain>,
        init: PlanningState,
        goal: Goal,
    ) -> Result<Self, PlanningError> {
        let all = domain.all_fluents();
        if !init.0.is_subset(all) || !goal.pos.union(goal.neg).is_subset(all) {
            return Err(PlanningError::DomainMismatch(
                "task references undeclared fluents".into(),
            ));
        }
        if !goal.pos.is_disjoint(goal.neg) {
            return Err(PlanningError::InvalidDomain("goal+ and goal- must be disjoint".into()));
        }
        Ok(PlanningTask { name: name.into(), domain, init, goal })
    }

    pub fn is_goal(&self, state: PlanningState) -> bool {
        is_goal(state, &self.goal)
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Displays a planning state through its domain.
pub struct DisplayState<'a>(pub &'a PlanningDomain, pub PlanningState);

impl fmt::Display for DisplayState<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.format_set(self.1 .0))
    }
}
