//! Line-oriented text format for planning domains and tasks (`.dom`).
//!
//! ```text
//! # comment
//! domain bridge
//! fluents: has-wood has-iron has-bridge
//! action use-factory
//!   pre+: has-wood has-iron
//!   pre-:
//!   eff+: has-bridge
//!   eff-: has-wood has-iron
//! task bridge
//!   init:
//!   goal+: has-bridge
//!   goal-:
//!   goal-mode: conjunctive
//! ```
//!
//! Clause lines belong to the closest preceding `action` or `task` header;
//! indentation is conventional but not significant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::planning::{
    is_identifier, ActionSpec, FluentSet, Goal, GoalMode, PlanningDomain, PlanningError,
    PlanningState, PlanningTask,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct DomainParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> DomainParseError {
    DomainParseError { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainFile {
    pub domain: Arc<PlanningDomain>,
    pub tasks: Vec<PlanningTask>,
}

impl DomainFile {
    pub fn task(&self, name: &str) -> Option<&PlanningTask> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

/// A clause value together with the line it came from.
type Clause = Option<(usize, Vec<String>)>;

#[derive(Default)]
struct RawAction {
    line: usize,
    name: String,
    pre_pos: Clause,
    pre_neg: Clause,
    eff_pos: Clause,
    eff_neg: Clause,
}

#[derive(Default)]
struct RawTask {
    line: usize,
    name: String,
    init: Clause,
    goal_pos: Clause,
    goal_neg: Clause,
    mode: Option<(usize, GoalMode)>,
}

enum Block {
    None,
    Action(RawAction),
    Task(RawTask),
}

fn set_clause(slot: &mut Clause, line: usize, key: &str, words: Vec<String>) -> Result<(), DomainParseError> {
    if slot.is_some() {
        return Err(err(line, format!("duplicate `{key}` clause")));
    }
    for w in &words {
        if !is_identifier(w) {
            return Err(err(line, format!("invalid fluent name `{w}`")));
        }
    }
    *slot = Some((line, words));
    Ok(())
}

pub fn parse_domain(text: &str) -> Result<DomainFile, DomainParseError> {
    let mut name: Option<(usize, String)> = None;
    let mut fluents: Option<(usize, Vec<String>)> = None;
    let mut actions: Vec<RawAction> = Vec::new();
    let mut tasks: Vec<RawTask> = Vec::new();
    let mut block = Block::None;

    let flush = |block: &mut Block, actions: &mut Vec<RawAction>, tasks: &mut Vec<RawTask>| {
        match std::mem::replace(block, Block::None) {
            Block::Action(a) => actions.push(a),
            Block::Task(t) => tasks.push(t),
            Block::None => {}
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, rest) = match content.split_once(':') {
            Some((k, r)) => (k.trim(), Some(r)),
            None => match content.split_once(char::is_whitespace) {
                Some((k, r)) => (k, Some(r)),
                None => (content, None),
            },
        };
        let is_header = !content.contains(':');
        let words = || -> Vec<String> {
            rest.unwrap_or("").split_whitespace().map(String::from).collect()
        };
        let header_name = || -> Result<String, DomainParseError> {
            let w = words();
            match w.as_slice() {
                [n] if is_identifier(n) => Ok(n.clone()),
                _ => Err(err(line, format!("`{key}` expects exactly one identifier"))),
            }
        };

        match (key, is_header) {
            ("domain", true) => {
                if name.is_some() {
                    return Err(err(line, "duplicate `domain` line"));
                }
                name = Some((line, header_name()?));
            }
            ("action", true) => {
                flush(&mut block, &mut actions, &mut tasks);
                block = Block::Action(RawAction { line, name: header_name()?, ..Default::default() });
            }
            ("task", true) => {
                flush(&mut block, &mut actions, &mut tasks);
                block = Block::Task(RawTask { line, name: header_name()?, ..Default::default() });
            }
            ("fluents", false) => {
                if fluents.is_some() {
                    return Err(err(line, "duplicate `fluents` line"));
                }
                let w = words();
                let mut seen = std::collections::BTreeSet::new();
                for f in &w {
                    if !is_identifier(f) {
                        return Err(err(line, format!("invalid fluent name `{f}`")));
                    }
                    if !seen.insert(f.as_str()) {
                        return Err(err(line, format!("duplicate fluent `{f}`")));
                    }
                }
                fluents = Some((line, w));
            }
            ("pre+" | "pre-" | "eff+" | "eff-", false) => {
                let Block::Action(a) = &mut block else {
                    return Err(err(line, format!("`{key}` outside of an action")));
                };
                let slot = match key {
                    "pre+" => &mut a.pre_pos,
                    "pre-" => &mut a.pre_neg,
                    "eff+" => &mut a.eff_pos,
                    _ => &mut a.eff_neg,
                };
                set_clause(slot, line, key, words())?;
            }
            ("init" | "goal+" | "goal-", false) => {
                let Block::Task(t) = &mut block else {
                    return Err(err(line, format!("`{key}` outside of a task")));
                };
                let slot = match key {
                    "init" => &mut t.init,
                    "goal+" => &mut t.goal_pos,
                    _ => &mut t.goal_neg,
                };
                set_clause(slot, line, key, words())?;
            }
            ("goal-mode", false) => {
                let Block::Task(t) = &mut block else {
                    return Err(err(line, "`goal-mode` outside of a task"));
                };
                if t.mode.is_some() {
                    return Err(err(line, "duplicate `goal-mode` clause"));
                }
                let mode = match words().as_slice() {
                    [m] if m == "conjunctive" => GoalMode::Conjunctive,
                    [m] if m == "disjunctive" => GoalMode::Disjunctive,
                    _ => return Err(err(line, "goal-mode must be `conjunctive` or `disjunctive`")),
                };
                t.mode = Some((line, mode));
            }
            _ => return Err(err(line, format!("unknown keyword `{key}`"))),
        }
    }
    flush(&mut block, &mut actions, &mut tasks);

    let (_, domain_name) = name.ok_or_else(|| err(1, "missing `domain` line"))?;
    let (_, fluent_names) = fluents.ok_or_else(|| err(1, "missing `fluents` line"))?;

    // Resolve fluent references first so undeclared names point at their clause.
    let declared: std::collections::BTreeSet<&str> = fluent_names.iter().map(String::as_str).collect();
    let check_clause = |c: &Clause| -> Result<Vec<String>, DomainParseError> {
        match c {
            None => Ok(Vec::new()),
            Some((line, words)) => {
                if let Some(bad) = words.iter().find(|w| !declared.contains(w.as_str())) {
                    return Err(err(*line, format!("undeclared fluent `{bad}`")));
                }
                Ok(words.clone())
            }
        }
    };

    let mut specs = Vec::with_capacity(actions.len());
    let mut action_lines = BTreeMap::new();
    for a in &actions {
        if action_lines.insert(a.name.clone(), a.line).is_some() {
            return Err(err(a.line, format!("duplicate action `{}`", a.name)));
        }
        let spec = ActionSpec {
            name: a.name.clone(),
            pre_pos: check_clause(&a.pre_pos)?,
            pre_neg: check_clause(&a.pre_neg)?,
            eff_pos: check_clause(&a.eff_pos)?,
            eff_neg: check_clause(&a.eff_neg)?,
        };
        if let Some(f) = spec.pre_pos.iter().find(|f| spec.pre_neg.contains(f)) {
            return Err(err(a.line, format!("action `{}`: `{f}` is in both pre+ and pre-", a.name)));
        }
        if let Some(f) = spec.eff_pos.iter().find(|f| spec.eff_neg.contains(f)) {
            return Err(err(a.line, format!("action `{}`: `{f}` is in both eff+ and eff-", a.name)));
        }
        specs.push(spec);
    }

    let domain = PlanningDomain::new(domain_name, fluent_names.iter().cloned(), specs)
        .map_err(|e| err(1, e.to_string()))?;
    let domain = Arc::new(domain);

    let mut out_tasks = Vec::with_capacity(tasks.len());
    let mut task_names = std::collections::BTreeSet::new();
    for t in &tasks {
        if !task_names.insert(t.name.clone()) {
            return Err(err(t.line, format!("duplicate task `{}`", t.name)));
        }
        let set = |c: &Clause| -> Result<FluentSet, DomainParseError> {
            let words = check_clause(c)?;
            domain.fluent_set(&words).map_err(|e| err(t.line, e.to_string()))
        };
        let init = PlanningState(set(&t.init)?);
        let pos = set(&t.goal_pos)?;
        let neg = set(&t.goal_neg)?;
        if !pos.is_disjoint(neg) {
            return Err(err(t.line, format!("task `{}`: goal+ and goal- overlap", t.name)));
        }
        let mode = t.mode.map(|(_, m)| m).unwrap_or_default();
        let goal = Goal::new(pos, neg, mode).map_err(|e| err(t.line, e.to_string()))?;
        let task = PlanningTask::new(t.name.clone(), domain.clone(), init, goal)
            .map_err(|e: PlanningError| err(t.line, e.to_string()))?;
        out_tasks.push(task);
    }

    Ok(DomainFile { domain, tasks: out_tasks })
}

/// Canonical text: fluents and actions in name order, every clause present.
pub fn serialize_domain(domain: &PlanningDomain, tasks: &[PlanningTask]) -> String {
    let names = |set: FluentSet| -> String {
        domain.names_of(set).iter().map(|n| format!(" {n}")).collect()
    };
    let mut out = String::new();
    let _ = writeln!(out, "domain {}", domain.name);
    let fluents: String = domain.fluent_names().iter().map(|n| format!(" {n}")).collect();
    let _ = writeln!(out, "fluents:{fluents}");
    for a in domain.actions() {
        let _ = writeln!(out, "action {}", a.name);
        let _ = writeln!(out, "  pre+:{}", names(a.pre_pos));
        let _ = writeln!(out, "  pre-:{}", names(a.pre_neg));
        let _ = writeln!(out, "  eff+:{}", names(a.eff_pos));
        let _ = writeln!(out, "  eff-:{}", names(a.eff_neg));
    }
    let mut sorted: Vec<&PlanningTask> = tasks.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for t in sorted {
        let _ = writeln!(out, "task {}", t.name);
        let _ = writeln!(out, "  init:{}", names(t.init.0));
        let _ = writeln!(out, "  goal+:{}", names(t.goal.pos));
        let _ = writeln!(out, "  goal-:{}", names(t.goal.neg));
        let mode = match t.goal.mode {
            GoalMode::Conjunctive => "conjunctive",
            GoalMode::Disjunctive => "disjunctive",
        };
        let _ = writeln!(out, "  goal-mode: {mode}");
    }
    out
}
