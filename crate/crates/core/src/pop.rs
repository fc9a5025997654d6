//! Enumeration of every partial-order plan for a task.
//!
//! The enumerator is a causal-link planner that never commits: every
//! producer choice for every open precondition, and every way of ordering a
//! threatening step out of a protected interval, is explored by
//! backtracking. Complete plans are canonicalised (steps sorted by action
//! name, order replaced by its transitive reduction) and deduplicated.
//!
//! Step ids are positions in [`PartialOrderPlan::steps`]. During search,
//! step 0 is the start step and step 1 the finish step; both are stripped
//! from the plans that are returned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::planning::{
    apply_unchecked, applicable, ActionId, FluentSet, Literal, PlanningDomain, PlanningTask,
    GoalMode,
};

pub type StepId = usize;
pub type SequentialPlan = Vec<ActionId>;

pub const DEFAULT_NODE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("search budget of {limit} partial plans exceeded")]
    BudgetExceeded { limit: usize },
    #[error("max_action_repeats must be at least 1")]
    ZeroRepeats,
    #[error("ordering contains a cycle")]
    InconsistentOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Start,
    Finish,
    Action(ActionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CausalLink {
    pub producer: StepId,
    pub literal: Literal,
    pub consumer: StepId,
}

/// Strict ordering constraints `first ≺ second` between step ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Ordering {
    pairs: BTreeSet<(StepId, StepId)>,
}

impl Ordering {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (StepId, StepId)>) -> Self {
        Ordering { pairs: pairs.into_iter().collect() }
    }

    pub fn insert(&mut self, before: StepId, after: StepId) {
        self.pairs.insert((before, after));
    }

    pub fn pairs(&self) -> impl Iterator<Item = (StepId, StepId)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn max_id(&self) -> usize {
        self.pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0)
    }

    /// Transitive closure over ids `0..n` (n grows to cover every mentioned id).
    pub fn closure(&self, n: usize) -> Reach {
        let mut reach = Reach::new(n.max(self.max_id()));
        for &(a, b) in &self.pairs {
            reach.set(a, b);
        }
        let n = reach.n;
        for k in 0..n {
            for i in 0..n {
                if reach.get(i, k) {
                    for j in 0..n {
                        if reach.get(k, j) {
                            reach.set(i, j);
                        }
                    }
                }
            }
        }
        reach
    }

    pub fn is_consistent(&self) -> bool {
        let reach = self.closure(0);
        (0..reach.n).all(|i| !reach.get(i, i))
    }
}

/// Dense reachability matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reach {
    n: usize,
    bits: Vec<bool>,
}

impl Reach {
    fn new(n: usize) -> Self {
        Reach { n, bits: vec![false; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        a < self.n && b < self.n && self.bits[a * self.n + b]
    }

    fn set(&mut self, a: usize, b: usize) {
        self.bits[a * self.n + b] = true;
    }

    fn grow(&mut self) {
        let n = self.n + 1;
        let mut bits = vec![false; n * n];
        for i in 0..self.n {
            bits[i * n..i * n + self.n].copy_from_slice(&self.bits[i * self.n..(i + 1) * self.n]);
        }
        self.n = n;
        self.bits = bits;
    }

    /// Adds `a ≺ b` and closes transitively; false if that creates a cycle.
    fn add(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.get(b, a) {
            return false;
        }
        if self.get(a, b) {
            return true;
        }
        let before: Vec<usize> = (0..self.n).filter(|&x| x == a || self.get(x, a)).collect();
        let after: Vec<usize> = (0..self.n).filter(|&y| y == b || self.get(b, y)).collect();
        for &x in &before {
            for &y in &after {
                self.set(x, y);
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartialOrderPlan {
    pub steps: Vec<Step>,
    pub order: Ordering,
    pub links: Vec<CausalLink>,
}

impl PartialOrderPlan {
    pub fn empty() -> Self {
        PartialOrderPlan { steps: Vec::new(), order: Ordering::new(), links: Vec::new() }
    }

    /// A totally ordered plan from a sequence.
    pub fn from_sequence(seq: &[ActionId]) -> Self {
        PartialOrderPlan {
            steps: seq.iter().map(|&a| Step::Action(a)).collect(),
            order: Ordering::from_pairs((1..seq.len()).map(|i| (i - 1, i))),
            links: Vec::new(),
        }
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Action(a) => Some(*a),
                _ => None,
            })
            .collect()
    }

    /// Identity used for deduplication: action multiset plus reduced order.
    pub fn canonical_key(&self) -> (Vec<ActionId>, Vec<(StepId, StepId)>) {
        let c = canonicalize(self);
        (c.actions(), c.order.pairs().collect())
    }

    pub fn display<'a>(&'a self, domain: &'a PlanningDomain) -> DisplayPlan<'a> {
        DisplayPlan { plan: self, domain }
    }
}

pub struct DisplayPlan<'a> {
    plan: &'a PartialOrderPlan,
    domain: &'a PlanningDomain,
}

impl fmt::Display for DisplayPlan<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |id: StepId| -> String {
            match self.plan.steps[id] {
                Step::Start => "start".into(),
                Step::Finish => "finish".into(),
                Step::Action(a) => format!("{}#{id}", self.domain.action(a).name),
            }
        };
        let steps: Vec<String> = (0..self.plan.steps.len()).map(name).collect();
        write!(f, "steps: {}", steps.join(" "))?;
        for (a, b) in self.plan.order.pairs() {
            write!(f, "\n  {} < {}", name(a), name(b))?;
        }
        Ok(())
    }
}

/// Deduplicated set of canonical plans, ordered by canonical key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanSet {
    plans: Vec<PartialOrderPlan>,
}

impl PlanSet {
    pub fn from_plans(plans: impl IntoIterator<Item = PartialOrderPlan>) -> Self {
        let mut by_key = BTreeMap::new();
        for p in plans {
            let c = canonicalize(&p);
            let key = (c.actions(), c.order.pairs().collect::<Vec<_>>());
            by_key.entry(key).or_insert(c);
        }
        PlanSet { plans: by_key.into_values().collect() }
    }

    pub fn plans(&self) -> &[PartialOrderPlan] {
        &self.plans
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PartialOrderPlan> {
        self.plans.iter()
    }

    /// All linearisations of all plans, grouped by plan in set order.
    pub fn sequential_plans(&self) -> Vec<SequentialPlan> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for p in &self.plans {
            for l in linearisations(p).expect("plan set members are consistent") {
                if seen.insert(l.clone()) {
                    out.push(l);
                }
            }
        }
        out
    }

    pub fn union_of_linearisations(&self) -> BTreeSet<SequentialPlan> {
        self.sequential_plans().into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerateOptions {
    pub max_action_repeats: usize,
    pub node_limit: usize,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions { max_action_repeats: 1, node_limit: DEFAULT_NODE_LIMIT }
    }
}

pub fn enumerate_pops(task: &PlanningTask, max_action_repeats: usize) -> Result<PlanSet, PlanError> {
    enumerate_pops_with(task, EnumerateOptions { max_action_repeats, ..Default::default() })
}

pub fn enumerate_pops_with(task: &PlanningTask, opts: EnumerateOptions) -> Result<PlanSet, PlanError> {
    if opts.max_action_repeats == 0 {
        return Err(PlanError::ZeroRepeats);
    }
    let goal_neg: Vec<Literal> = task.goal.neg.iter().map(Literal::neg).collect();
    // A disjunctive goal is the union of the plan sets for each disjunct.
    let finish_preconditions: Vec<Vec<Literal>> = match task.goal.mode {
        GoalMode::Conjunctive => {
            let mut pre: Vec<Literal> = task.goal.pos.iter().map(Literal::pos).collect();
            pre.extend(goal_neg.iter().copied());
            pre.sort();
            vec![pre]
        }
        GoalMode::Disjunctive => task
            .goal
            .pos
            .iter()
            .map(|g| {
                let mut pre = vec![Literal::pos(g)];
                pre.extend(goal_neg.iter().copied());
                pre.sort();
                pre
            })
            .collect(),
    };

    let mut search = Search {
        domain: &task.domain,
        init: task.init.0,
        all: task.domain.all_fluents(),
        finish_pre: Vec::new(),
        opts,
        nodes: 0,
        found: Vec::new(),
    };
    for pre in finish_preconditions {
        search.finish_pre = pre;
        search.run()?;
    }
    let found = std::mem::take(&mut search.found);
    let set = PlanSet::from_plans(found);
    let valid: Vec<PartialOrderPlan> = set
        .plans
        .into_iter()
        .filter(|p| {
            let ok = validate_pop(p, task);
            if !ok {
                log::warn!("discarding plan that fails validation: {}", p.display(&task.domain));
            }
            ok
        })
        .collect();
    Ok(PlanSet { plans: valid })
}

struct Work {
    plan: PartialOrderPlan,
    reach: Reach,
    counts: Vec<usize>,
}

struct Search<'a> {
    domain: &'a PlanningDomain,
    init: FluentSet,
    all: FluentSet,
    finish_pre: Vec<Literal>,
    opts: EnumerateOptions,
    nodes: usize,
    found: Vec<PartialOrderPlan>,
}

const START: StepId = 0;
const FINISH: StepId = 1;

impl Search<'_> {
    fn run(&mut self) -> Result<(), PlanError> {
        let mut reach = Reach::new(2);
        reach.add(START, FINISH);
        let work = Work {
            plan: PartialOrderPlan {
                steps: vec![Step::Start, Step::Finish],
                order: Ordering::from_pairs([(START, FINISH)]),
                links: Vec::new(),
            },
            reach,
            counts: vec![0; self.domain.actions().len()],
        };
        self.expand(work)
    }

    fn preconditions(&self, step: Step) -> Vec<Literal> {
        match step {
            Step::Start => Vec::new(),
            Step::Finish => self.finish_pre.clone(),
            Step::Action(a) => self.domain.action(a).preconditions(),
        }
    }

    fn open_precondition(&self, plan: &PartialOrderPlan) -> Option<(StepId, Literal)> {
        // Deterministic flaw order: lowest step id, then fluent order.
        for consumer in 0..plan.steps.len() {
            for lit in self.preconditions(plan.steps[consumer]) {
                let linked = plan.links.iter().any(|l| l.consumer == consumer && l.literal == lit);
                if !linked {
                    return Some((consumer, lit));
                }
            }
        }
        None
    }

    fn expand(&mut self, work: Work) -> Result<(), PlanError> {
        self.nodes += 1;
        if self.nodes > self.opts.node_limit {
            return Err(PlanError::BudgetExceeded { limit: self.opts.node_limit });
        }
        let Some((consumer, lit)) = self.open_precondition(&work.plan) else {
            self.found.push(strip_sentinels(&work.plan));
            return Ok(());
        };

        // Existing steps first, then fresh actions in name order.
        let existing: Vec<StepId> = (0..work.plan.steps.len())
            .filter(|&s| s != consumer && s != FINISH)
            .filter(|&s| step_has_effect(self.domain, self.init, self.all, work.plan.steps[s], lit))
            .filter(|&s| !work.reach.get(consumer, s))
            .collect();
        for producer in existing {
            let mut next = Work {
                plan: work.plan.clone(),
                reach: work.reach.clone(),
                counts: work.counts.clone(),
            };
            self.link_and_order(&mut next, producer, lit, consumer)?;
        }

        let fresh: Vec<ActionId> = self
            .domain
            .action_ids()
            .filter(|&a| self.domain.action(a).has_effect(lit))
            .filter(|&a| work.counts[a.0] < self.opts.max_action_repeats)
            .collect();
        for a in fresh {
            let mut next = Work {
                plan: work.plan.clone(),
                reach: work.reach.clone(),
                counts: work.counts.clone(),
            };
            let id = next.plan.steps.len();
            next.plan.steps.push(Step::Action(a));
            next.reach.grow();
            next.reach.add(START, id);
            next.reach.add(id, FINISH);
            next.plan.order.insert(START, id);
            next.plan.order.insert(id, FINISH);
            next.counts[a.0] += 1;
            self.link_and_order(&mut next, id, lit, consumer)?;
        }
        Ok(())
    }

    fn link_and_order(
        &mut self,
        work: &mut Work,
        producer: StepId,
        lit: Literal,
        consumer: StepId,
    ) -> Result<(), PlanError> {
        if !work.reach.add(producer, consumer) {
            return Ok(());
        }
        work.plan.order.insert(producer, consumer);
        let link = CausalLink { producer, literal: lit, consumer };
        work.plan.links.push(link);

        let threats = find_threats(self.domain, self.init, self.all, &work.plan, &work.reach);
        if threats.is_empty() {
            let next = Work {
                plan: work.plan.clone(),
                reach: work.reach.clone(),
                counts: work.counts.clone(),
            };
            return self.expand(next);
        }
        for constraints in separations(&threats) {
            let mut next = Work {
                plan: work.plan.clone(),
                reach: work.reach.clone(),
                counts: work.counts.clone(),
            };
            let mut ok = true;
            for &(a, b) in &constraints {
                if !next.reach.add(a, b) {
                    ok = false;
                    break;
                }
                next.plan.order.insert(a, b);
            }
            if ok {
                self.expand(next)?;
            }
        }
        Ok(())
    }
}

fn step_has_effect(domain: &PlanningDomain, init: FluentSet, all: FluentSet, step: Step, lit: Literal) -> bool {
    match step {
        Step::Start => {
            if lit.positive {
                init.contains(lit.fluent)
            } else {
                all.difference(init).contains(lit.fluent)
            }
        }
        Step::Finish => false,
        Step::Action(a) => domain.action(a).has_effect(lit),
    }
}

/// A step that may falsify a protected literal between producer and consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Threat {
    step: StepId,
    link: CausalLink,
}

fn find_threats(
    domain: &PlanningDomain,
    init: FluentSet,
    all: FluentSet,
    plan: &PartialOrderPlan,
    reach: &Reach,
) -> Vec<Threat> {
    let mut out = Vec::new();
    for link in &plan.links {
        let negated = link.literal.negated();
        for (s, &step) in plan.steps.iter().enumerate() {
            if s == link.producer || s == link.consumer {
                continue;
            }
            if !step_has_effect(domain, init, all, step, negated) {
                continue;
            }
            if reach.get(s, link.producer) || reach.get(link.consumer, s) {
                continue;
            }
            out.push(Threat { step: s, link: *link });
        }
    }
    out
}

/// Every combination of "threat before producer" / "consumer before threat".
fn separations(threats: &[Threat]) -> Vec<Vec<(StepId, StepId)>> {
    let mut combos: Vec<Vec<(StepId, StepId)>> = vec![Vec::new()];
    for t in threats {
        let mut next = Vec::with_capacity(combos.len() * 2);
        for c in &combos {
            let mut before = c.clone();
            before.push((t.step, t.link.producer));
            next.push(before);
            let mut after = c.clone();
            after.push((t.link.consumer, t.step));
            next.push(after);
        }
        combos = next;
    }
    combos
}

/// Ordering alternatives that protect every causal link of `plan` from every
/// step that could falsify it. `new_link` must already be in `plan.links`;
/// the whole plan is inspected, so threats created by a freshly added step
/// are covered too. With no threats the result is a single empty set.
///
/// Steps are interpreted against `task`: the start step asserts the initial
/// state (and the negation of every other fluent), the finish step asserts
/// nothing.
pub fn resolve_threats(
    plan: &PartialOrderPlan,
    new_link: &CausalLink,
    task: &PlanningTask,
) -> Vec<Vec<(StepId, StepId)>> {
    debug_assert!(plan.links.contains(new_link));
    let reach = plan.order.closure(plan.steps.len());
    let threats = find_threats(&task.domain, task.init.0, task.domain.all_fluents(), plan, &reach);
    separations(&threats)
}

pub fn is_consistent(order: &Ordering) -> bool {
    order.is_consistent()
}

fn strip_sentinels(plan: &PartialOrderPlan) -> PartialOrderPlan {
    let mut remap = vec![usize::MAX; plan.steps.len()];
    let mut steps = Vec::new();
    for (i, s) in plan.steps.iter().enumerate() {
        if let Step::Action(_) = s {
            remap[i] = steps.len();
            steps.push(*s);
        }
    }
    let order = Ordering::from_pairs(
        plan.order
            .pairs()
            .filter(|&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX)
            .map(|(a, b)| (remap[a], remap[b])),
    );
    let links = plan
        .links
        .iter()
        .filter(|l| remap[l.producer] != usize::MAX && remap[l.consumer] != usize::MAX)
        .map(|l| CausalLink { producer: remap[l.producer], literal: l.literal, consumer: remap[l.consumer] })
        .collect();
    PartialOrderPlan { steps, order, links }
}

/// Relabels steps in sort order and reduces the order transitively.
///
/// Identical actions are interchangeable, so every assignment of labels
/// within a group of equal actions is tried and the smallest reduced edge
/// list wins. Groups are tiny in practice; past 40 320 assignments the
/// first one found is kept.
pub fn canonicalize(plan: &PartialOrderPlan) -> PartialOrderPlan {
    let n = plan.steps.len();
    let mut sorted: Vec<StepId> = (0..n).collect();
    sorted.sort_by_key(|&i| (plan.steps[i], i));

    let closure = plan.order.closure(n);
    let groups: Vec<std::ops::Range<usize>> = {
        let mut g = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || plan.steps[sorted[i]] != plan.steps[sorted[start]] {
                g.push(start..i);
                start = i;
            }
        }
        g
    };
    let total: usize = groups.iter().map(|r| (1..=r.len()).product::<usize>()).product();

    let evaluate = |labels: &[StepId]| -> Vec<(StepId, StepId)> {
        // labels[new] = old
        let mut pos = vec![0; n];
        for (new, &old) in labels.iter().enumerate() {
            pos[old] = new;
        }
        let mut edges = BTreeSet::new();
        for a in 0..n {
            for b in 0..n {
                if closure.get(a, b) && !(0..n).any(|c| closure.get(a, c) && closure.get(c, b)) {
                    edges.insert((pos[a], pos[b]));
                }
            }
        }
        edges.into_iter().collect()
    };

    let mut best_labels = sorted.clone();
    let mut best = evaluate(&sorted);
    if total > 1 && total <= 40_320 {
        let mut labels = sorted.clone();
        permute_groups(&groups, 0, &mut labels, &mut |l| {
            let e = evaluate(l);
            if e < best {
                best = e;
                best_labels = l.to_vec();
            }
        });
    }

    let mut pos = vec![0; n];
    for (new, &old) in best_labels.iter().enumerate() {
        pos[old] = new;
    }
    let mut links: Vec<CausalLink> = plan
        .links
        .iter()
        .filter(|l| l.producer < n && l.consumer < n)
        .map(|l| CausalLink { producer: pos[l.producer], literal: l.literal, consumer: pos[l.consumer] })
        .collect();
    links.sort();
    links.dedup();
    PartialOrderPlan {
        steps: best_labels.iter().map(|&i| plan.steps[i]).collect(),
        order: Ordering::from_pairs(best),
        links,
    }
}

fn permute_groups(
    groups: &[std::ops::Range<usize>],
    g: usize,
    labels: &mut Vec<StepId>,
    visit: &mut dyn FnMut(&[StepId]),
) {
    if g == groups.len() {
        visit(labels);
        return;
    }
    let range = groups[g].clone();
    heap_permute(range.start, range.end - range.start, labels, &mut |l| {
        let mut copy = l.clone();
        permute_groups(groups, g + 1, &mut copy, visit);
    });
}

fn heap_permute(offset: usize, k: usize, labels: &mut Vec<StepId>, visit: &mut dyn FnMut(&mut Vec<StepId>)) {
    if k <= 1 {
        visit(labels);
        return;
    }
    for i in 0..k {
        heap_permute(offset, k - 1, labels, visit);
        let j = if k % 2 == 0 { i } else { 0 };
        if i + 1 < k {
            labels.swap(offset + j, offset + k - 1);
        }
    }
}

/// All topological orderings of the plan's action steps.
pub fn linearisations(plan: &PartialOrderPlan) -> Result<Vec<SequentialPlan>, PlanError> {
    let n = plan.steps.len();
    if !plan.order.is_consistent() {
        return Err(PlanError::InconsistentOrder);
    }
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<StepId>> = vec![Vec::new(); n];
    for (a, b) in plan.order.pairs() {
        if a < n && b < n {
            indegree[b] += 1;
            succ[a].push(b);
        }
    }
    let mut out = BTreeSet::new();
    let mut used = vec![false; n];
    let mut seq = Vec::with_capacity(n);
    topo_all(plan, &mut indegree, &succ, &mut used, &mut seq, &mut out);
    Ok(out.into_iter().collect())
}

fn topo_all(
    plan: &PartialOrderPlan,
    indegree: &mut [usize],
    succ: &[Vec<StepId>],
    used: &mut [bool],
    seq: &mut Vec<StepId>,
    out: &mut BTreeSet<SequentialPlan>,
) {
    let n = plan.steps.len();
    if seq.len() == n {
        let actions: SequentialPlan = seq
            .iter()
            .filter_map(|&i| match plan.steps[i] {
                Step::Action(a) => Some(a),
                _ => None,
            })
            .collect();
        out.insert(actions);
        return;
    }
    for i in 0..n {
        if used[i] || indegree[i] != 0 {
            continue;
        }
        used[i] = true;
        seq.push(i);
        for &j in &succ[i] {
            indegree[j] -= 1;
        }
        topo_all(plan, indegree, succ, used, seq, out);
        for &j in &succ[i] {
            indegree[j] += 1;
        }
        seq.pop();
        used[i] = false;
    }
}

/// True iff every linearisation executes from the initial state and ends in a goal state.
pub fn validate_pop(plan: &PartialOrderPlan, task: &PlanningTask) -> bool {
    let n_actions = task.domain.actions().len();
    if plan.actions().iter().any(|a| a.0 >= n_actions) {
        return false;
    }
    let Ok(lins) = linearisations(plan) else {
        return false;
    };
    lins.iter().all(|l| {
        task.domain
            .execute_sequence(l, task.init)
            .map(|s| task.is_goal(s))
            .unwrap_or(false)
    })
}

/// Every executable, goal-reaching action sequence of length at most
/// `max_len` that has no proper subsequence which is itself such a plan.
pub fn brute_force_plans(task: &PlanningTask, max_len: usize) -> BTreeSet<SequentialPlan> {
    let mut successful = BTreeSet::new();
    let mut seq = Vec::new();
    fn dfs(
        task: &PlanningTask,
        state: crate::planning::PlanningState,
        seq: &mut Vec<ActionId>,
        max_len: usize,
        out: &mut BTreeSet<SequentialPlan>,
    ) {
        if task.is_goal(state) {
            out.insert(seq.clone());
        }
        if seq.len() == max_len {
            return;
        }
        for id in task.domain.action_ids() {
            let a = task.domain.action(id);
            if applicable(state, a) {
                seq.push(id);
                dfs(task, apply_unchecked(state, a), seq, max_len, out);
                seq.pop();
            }
        }
    }
    dfs(task, task.init, &mut seq, max_len, &mut successful);

    successful
        .iter()
        .filter(|plan| {
            let n = plan.len();
            // Proper subsequences: every mask except the full one.
            (0..(1u64 << n) - 1).all(|mask| {
                let sub: SequentialPlan =
                    (0..n).filter(|i| mask & (1 << i) != 0).map(|i| plan[i]).collect();
                !successful.contains(&sub)
            })
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::planning::PlanningState;

    fn ids(task: &PlanningTask, names: &[&str]) -> Vec<ActionId> {
        names.iter().map(|n| task.domain.action_id(n).unwrap()).collect()
    }

    fn names(task: &PlanningTask, plan: &[ActionId]) -> Vec<String> {
        plan.iter().map(|&a| task.domain.action(a).name.clone()).collect()
    }

    fn pop(task: &PlanningTask, actions: &[&str], order: &[(&str, &str)]) -> PartialOrderPlan {
        let a = ids(task, actions);
        let idx = |n: &str| actions.iter().position(|x| *x == n).unwrap();
        PartialOrderPlan {
            steps: a.into_iter().map(Step::Action).collect(),
            order: Ordering::from_pairs(order.iter().map(|(x, y)| (idx(x), idx(y)))),
            links: Vec::new(),
        }
    }

    fn iron_bridge(t: &PlanningTask) -> PartialOrderPlan {
        pop(
            t,
            &["get-wood", "get-iron", "use-factory"],
            &[("get-wood", "use-factory"), ("get-iron", "use-factory")],
        )
    }

    fn rope_bridge(t: &PlanningTask) -> PartialOrderPlan {
        pop(
            t,
            &["get-wood", "get-grass", "use-toolshed"],
            &[("get-wood", "use-toolshed"), ("get-grass", "use-toolshed")],
        )
    }

    #[test]
    fn bridge_has_iron_and_rope_plans() {
        let t = fixtures::task("bridge").unwrap();
        let set = enumerate_pops(&t, 1).unwrap();
        assert_eq!(set.len(), 2);
        let keys: BTreeSet<_> = set.iter().map(|p| p.canonical_key()).collect();
        assert!(keys.contains(&iron_bridge(&t).canonical_key()));
        assert!(keys.contains(&rope_bridge(&t).canonical_key()));
    }

    #[test]
    fn gold_or_gem_has_three_plans() {
        let t = fixtures::task("gold-or-gem").unwrap();
        let set = enumerate_pops(&t, 1).unwrap();
        assert_eq!(set.len(), 3);
        let gem = pop(
            &t,
            &["get-wood", "get-iron", "use-workbench", "use-toolshed-for-axe", "get-gem"],
            &[
                ("get-wood", "use-workbench"),
                ("get-iron", "use-toolshed-for-axe"),
                ("use-workbench", "use-toolshed-for-axe"),
                ("use-toolshed-for-axe", "get-gem"),
            ],
        );
        assert!(set.iter().any(|p| p.canonical_key() == gem.canonical_key()));
    }

    #[test]
    fn goal_in_init_gives_one_empty_plan() {
        let f = crate::domain_io::parse_domain(
            "domain d\nfluents: a b\naction mk\n eff+: b\ntask t\n init: a\n goal+: a\n",
        )
        .unwrap();
        let set = enumerate_pops(&f.tasks[0], 1).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.plans()[0].steps.is_empty());
        assert!(set.plans()[0].order.is_empty());
        assert!(validate_pop(&set.plans()[0], &f.tasks[0]));
    }

    #[test]
    fn unreachable_goal_gives_empty_set() {
        let f = crate::domain_io::parse_domain("domain d\nfluents: a\ntask t\n goal+: a\n").unwrap();
        assert!(enumerate_pops(&f.tasks[0], 1).unwrap().is_empty());
    }

    #[test]
    fn negative_goal_uses_closed_world_start() {
        let f = crate::domain_io::parse_domain(
            "domain d\nfluents: a b\naction mk-b\n pre-: a\n eff+: b\ntask t\n goal+: b\n goal-: a\n",
        )
        .unwrap();
        let set = enumerate_pops(&f.tasks[0], 1).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn budget_is_an_error() {
        let t = fixtures::task("gold-or-gem").unwrap();
        let r = enumerate_pops_with(&t, EnumerateOptions { max_action_repeats: 1, node_limit: 3 });
        assert_eq!(r, Err(PlanError::BudgetExceeded { limit: 3 }));
        assert_eq!(enumerate_pops(&t, 0), Err(PlanError::ZeroRepeats));
    }

    #[test]
    fn threat_resolution_no_threats() {
        let t = fixtures::task("bridge").unwrap();
        // start, finish, get-wood, use-factory
        let plan = PartialOrderPlan {
            steps: vec![
                Step::Start,
                Step::Finish,
                Step::Action(t.domain.action_id("get-wood").unwrap()),
                Step::Action(t.domain.action_id("use-factory").unwrap()),
            ],
            order: Ordering::from_pairs([(0, 1), (0, 2), (2, 1), (0, 3), (3, 1), (2, 3)]),
            links: vec![CausalLink {
                producer: 2,
                literal: Literal::pos(t.domain.fluent("has-wood").unwrap()),
                consumer: 3,
            }],
        };
        let r = resolve_threats(&plan, &plan.links[0], &t);
        assert_eq!(r, vec![Vec::<(StepId, StepId)>::new()]);
    }

    #[test]
    fn threat_resolution_offers_both_separations() {
        let t = fixtures::task("bridge").unwrap();
        let d = &t.domain;
        // use-factory deletes has-wood while get-wood supplies it to use-toolshed.
        let plan = PartialOrderPlan {
            steps: vec![
                Step::Start,
                Step::Finish,
                Step::Action(d.action_id("get-wood").unwrap()),
                Step::Action(d.action_id("use-toolshed").unwrap()),
                Step::Action(d.action_id("use-factory").unwrap()),
            ],
            order: Ordering::from_pairs([(0, 1), (0, 2), (2, 1), (0, 3), (3, 1), (0, 4), (4, 1), (2, 3)]),
            links: vec![CausalLink {
                producer: 2,
                literal: Literal::pos(d.fluent("has-wood").unwrap()),
                consumer: 3,
            }],
        };
        let mut r = resolve_threats(&plan, &plan.links[0], &t);
        r.sort();
        assert_eq!(r, vec![vec![(3, 4)], vec![(4, 2)]]);

        // Forcing get-wood < use-factory < use-toolshed leaves no consistent choice.
        let mut forced = plan.clone();
        forced.order.insert(2, 4);
        forced.order.insert(4, 3);
        for c in resolve_threats(&forced, &forced.links[0], &t) {
            let mut o = forced.order.clone();
            for (a, b) in c {
                o.insert(a, b);
            }
            assert!(!is_consistent(&o));
        }
    }

    #[test]
    fn consistency() {
        assert!(is_consistent(&Ordering::from_pairs([(0, 1), (1, 2)])));
        assert!(!is_consistent(&Ordering::from_pairs([(0, 1), (1, 0)])));
        assert!(is_consistent(&Ordering::new()));
        assert!(!is_consistent(&Ordering::from_pairs([(0, 1), (1, 2), (2, 0)])));
    }

    #[test]
    fn linearisations_of_known_plans() {
        let t = fixtures::task("bridge").unwrap();
        let l: Vec<Vec<String>> =
            linearisations(&iron_bridge(&t)).unwrap().iter().map(|p| names(&t, p)).collect();
        assert_eq!(
            l,
            vec![
                vec!["get-iron", "get-wood", "use-factory"],
                vec!["get-wood", "get-iron", "use-factory"],
            ]
        );
        let g = fixtures::task("gold-or-gem").unwrap();
        let gem = pop(
            &g,
            &["get-wood", "get-iron", "use-workbench", "use-toolshed-for-axe", "get-gem"],
            &[
                ("get-wood", "use-workbench"),
                ("get-iron", "use-toolshed-for-axe"),
                ("use-workbench", "use-toolshed-for-axe"),
                ("use-toolshed-for-axe", "get-gem"),
            ],
        );
        let got: BTreeSet<Vec<String>> =
            linearisations(&gem).unwrap().iter().map(|p| names(&g, p)).collect();
        let want: BTreeSet<Vec<String>> = [
            ["get-wood", "use-workbench", "get-iron", "use-toolshed-for-axe", "get-gem"],
            ["get-iron", "get-wood", "use-workbench", "use-toolshed-for-axe", "get-gem"],
            ["get-wood", "get-iron", "use-workbench", "use-toolshed-for-axe", "get-gem"],
        ]
        .iter()
        .map(|p| p.iter().map(|s| s.to_string()).collect())
        .collect();
        assert_eq!(got, want);

        let chain = PartialOrderPlan::from_sequence(&ids(&t, &["get-wood", "get-iron", "use-factory"]));
        assert_eq!(linearisations(&chain).unwrap().len(), 1);

        let cyclic = PartialOrderPlan {
            steps: chain.steps.clone(),
            order: Ordering::from_pairs([(0, 1), (1, 0)]),
            links: Vec::new(),
        };
        assert_eq!(linearisations(&cyclic), Err(PlanError::InconsistentOrder));
    }

    #[test]
    fn validation() {
        let t = fixtures::task("bridge").unwrap();
        assert!(validate_pop(&rope_bridge(&t), &t));
        let mut unordered = iron_bridge(&t);
        unordered.order = Ordering::new();
        assert!(!validate_pop(&unordered, &t));
        let f = crate::domain_io::parse_domain("domain d\nfluents: a\ntask t\n init: a\n goal+: a\n").unwrap();
        assert!(validate_pop(&PartialOrderPlan::empty(), &f.tasks[0]));
    }

    /// Independent check of the unordered iron-bridge plan: filter all 3! permutations.
    #[test]
    fn unordered_iron_bridge_permutation_oracle() {
        let t = fixtures::task("bridge").unwrap();
        let a = ids(&t, &["get-wood", "get-iron", "use-factory"]);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let ok = perms
            .iter()
            .filter(|p| {
                let seq: Vec<ActionId> = p.iter().map(|&i| a[i]).collect();
                t.domain.execute_sequence(&seq, PlanningState::empty()).map(|s| t.is_goal(s)).unwrap_or(false)
            })
            .count();
        assert_eq!(ok, 2);
    }

    #[test]
    fn brute_force_bridge() {
        let t = fixtures::task("bridge").unwrap();
        let plans = brute_force_plans(&t, 3);
        let got: BTreeSet<Vec<String>> = plans.iter().map(|p| names(&t, p)).collect();
        let want: BTreeSet<Vec<String>> = [
            ["get-wood", "get-iron", "use-factory"],
            ["get-wood", "get-grass", "use-toolshed"],
            ["get-iron", "get-wood", "use-factory"],
            ["get-grass", "get-wood", "use-toolshed"],
        ]
        .iter()
        .map(|p| p.iter().map(|s| s.to_string()).collect())
        .collect();
        assert_eq!(got, want);
        assert!(brute_force_plans(&t, 2).is_empty());
        assert_eq!(brute_force_plans(&fixtures::task("gold-or-gem").unwrap(), 5).len(), 7);
    }

    #[test]
    fn canonical_forms() {
        let t = fixtures::task("bridge").unwrap();
        let a = iron_bridge(&t);
        let b = pop(
            &t,
            &["use-factory", "get-iron", "get-wood"],
            &[("get-wood", "use-factory"), ("get-iron", "use-factory")],
        );
        assert_eq!(canonicalize(&a), canonicalize(&b));
        assert_ne!(a.canonical_key(), rope_bridge(&t).canonical_key());

        let redundant = pop(
            &t,
            &["get-wood", "get-iron", "use-factory"],
            &[("get-wood", "get-iron"), ("get-iron", "use-factory"), ("get-wood", "use-factory")],
        );
        assert_eq!(canonicalize(&redundant).order.len(), 2);
    }

    #[test]
    fn canonical_form_handles_repeated_actions() {
        let t = fixtures::task("bridge").unwrap();
        let w = t.domain.action_id("get-wood").unwrap();
        let f = t.domain.action_id("use-factory").unwrap();
        // Two get-wood steps, only one ordered before use-factory: label choice must not matter.
        let p1 = PartialOrderPlan {
            steps: vec![Step::Action(w), Step::Action(w), Step::Action(f)],
            order: Ordering::from_pairs([(0, 2)]),
            links: Vec::new(),
        };
        let p2 = PartialOrderPlan {
            steps: vec![Step::Action(w), Step::Action(w), Step::Action(f)],
            order: Ordering::from_pairs([(1, 2)]),
            links: Vec::new(),
        };
        assert_eq!(canonicalize(&p1), canonicalize(&p2));
    }

    #[test]
    fn repeats_knob_allows_multisets() {
        // b needs a, and c needs a after d deleted it: two copies of get-a are required.
        let f = crate::domain_io::parse_domain(
            "domain d\nfluents: a b c\n\
             action get-a\n eff+: a\n\
             action mk-b\n pre+: a\n eff+: b\n eff-: a\n\
             action mk-c\n pre+: a b\n eff+: c\n eff-: a\n\
             task t\n goal+: c\n",
        )
        .unwrap();
        let t = &f.tasks[0];
        assert!(enumerate_pops(t, 1).unwrap().is_empty());
        let set = enumerate_pops(t, 2).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.plans()[0].steps.len(), 4);
        for p in set.iter() {
            assert!(validate_pop(p, t));
        }
    }
}
