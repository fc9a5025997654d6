//! Tabular Q-learning over the gridworld × reward machine product, greedy
//! evaluation, and exact value iteration on the explicit product.
//!
//! Both the environment and the reward machine are compiled to dense tables
//! first: environment states are the `(cell, inventory)` pairs reachable from
//! any free cell with an empty inventory, and every distinct label the
//! environment can emit gets an id, so a training step is a handful of array
//! lookups.

use std::collections::{HashMap, VecDeque};
use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::craftworld::{Coord, CraftWorld, EnvAction, EnvError, EnvState, GridMap};
use crate::planning::{FluentSet, PlanningState, PlanningTask};
use crate::reward_machine::{signed_delta, ObservationLabel, RewardMachine, RmStateId};

pub const DEFAULT_NODE_CAP: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("reward machine and world disagree on fluents: {0}")]
    VocabularyMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("product has more than {limit} nodes")]
    ProductTooLarge { limit: usize },
    #[error("value iteration did not converge within {0} sweeps")]
    Diverged(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episode_cap: u64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 0.95,
            gamma: 1.0,
            epsilon: 0.1,
            episode_cap: 1000,
            total_steps: 500_000,
            eval_every: 10_000,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidHyperparams(m.into()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if self.episode_cap == 0 || self.eval_every == 0 {
            return bad("episode_cap and eval_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Plain Q-learning on the experienced product transition.
    ProductQ,
    /// Counterfactual updates for every reward machine state.
    Crm,
}

impl TrainMode {
    /// Name used in outputs; CRM is reported as "qrm".
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::ProductQ => "product-q",
            TrainMode::Crm => "qrm",
        }
    }

    pub fn parse(s: &str) -> Option<TrainMode> {
        match s {
            "product-q" => Some(TrainMode::ProductQ),
            "qrm" | "crm" => Some(TrainMode::Crm),
            _ => None,
        }
    }
}

/// The reachable environment as tables.
#[derive(Debug, Clone)]
pub struct EnvModel {
    world: CraftWorld,
    states: Vec<(usize, FluentSet)>,
    index: HashMap<(usize, FluentSet), usize>,
    /// Per state and action: successor state and label id.
    next: Vec<[(u32, u32); 4]>,
    /// Label 0 is the empty label.
    labels: Vec<ObservationLabel>,
}

impl EnvModel {
    pub fn new(world: &CraftWorld) -> Self {
        let map = world.map().clone();
        let mut model = EnvModel {
            world: world.clone(),
            states: Vec::new(),
            index: HashMap::new(),
            next: Vec::new(),
            labels: vec![ObservationLabel::default()],
        };
        let mut label_ids: HashMap<ObservationLabel, u32> = HashMap::new();
        label_ids.insert(ObservationLabel::default(), 0);
        let mut queue = VecDeque::new();
        for c in map.free_cells() {
            model.intern(map.index_of(c), FluentSet::EMPTY, &mut queue);
        }
        while let Some(id) = queue.pop_front() {
            let (cell, inv) = model.states[id];
            let here = EnvState { agent: map.coord_of(cell), inventory: inv, step_count: 0 };
            let mut row = [(0u32, 0u32); 4];
            for a in EnvAction::ALL {
                let (s, _) = world.step_with_event(&here, a);
                let delta = signed_delta(inv, s.inventory);
                let n = model.labels.len() as u32;
                let l = *label_ids.entry(delta).or_insert_with(|| {
                    model.labels.push(delta);
                    n
                });
                let t = model.intern(map.index_of(s.agent), s.inventory, &mut queue);
                row[a.index()] = (t as u32, l);
            }
            model.next.push(row);
        }
        model
    }

    fn intern(&mut self, cell: usize, inv: FluentSet, queue: &mut VecDeque<usize>) -> usize {
        if let Some(&id) = self.index.get(&(cell, inv)) {
            return id;
        }
        let id = self.states.len();
        self.states.push((cell, inv));
        self.index.insert((cell, inv), id);
        queue.push_back(id);
        id
    }

    pub fn world(&self) -> &CraftWorld {
        &self.world
    }

    pub fn map(&self) -> &GridMap {
        self.world.map()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn labels(&self) -> &[ObservationLabel] {
        &self.labels
    }

    pub fn state_id(&self, s: &EnvState) -> Option<usize> {
        self.index.get(&(self.map().index_of(s.agent), s.inventory)).copied()
    }

    /// Id of the state at `c` with an empty inventory.
    pub fn start_id(&self, c: Coord) -> Option<usize> {
        self.index.get(&(self.map().index_of(c), FluentSet::EMPTY)).copied()
    }

    pub fn coord(&self, id: usize) -> Coord {
        self.map().coord_of(self.states[id].0)
    }

    pub fn inventory(&self, id: usize) -> FluentSet {
        self.states[id].1
    }

    /// Successor id and label id.
    pub fn successor(&self, id: usize, a: EnvAction) -> (usize, usize) {
        let (t, l) = self.next[id][a.index()];
        (t as usize, l as usize)
    }
}

/// A reward machine restricted to the labels an environment can emit.
#[derive(Debug, Clone)]
pub struct RmTable {
    num_states: usize,
    num_labels: usize,
    initial: usize,
    goal: usize,
    next: Vec<u32>,
}

impl RmTable {
    pub fn new(rm: &RewardMachine, labels: &[ObservationLabel]) -> Self {
        let mut next = Vec::with_capacity(rm.num_states() * labels.len());
        for u in 0..rm.num_states() {
            for l in labels {
                next.push(rm.delta(u, l) as u32);
            }
        }
        RmTable {
            num_states: rm.num_states(),
            num_labels: labels.len(),
            initial: rm.initial(),
            goal: rm.goal_state(),
            next,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn step(&self, u: usize, label: usize) -> (usize, f64) {
        let v = self.next[u * self.num_labels + label] as usize;
        (v, if v == self.goal { 0.0 } else { -1.0 })
    }
}

/// Environment and reward machine compiled together.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub env: EnvModel,
    pub rm: RmTable,
}

impl TrainingSetup {
    pub fn new(world: &CraftWorld, rm: &RewardMachine) -> Result<Self, TrainError> {
        if world.domain().fluent_names() != rm.domain().fluent_names() {
            return Err(TrainError::VocabularyMismatch(format!(
                "world has {:?}, reward machine has {:?}",
                world.domain().fluent_names(),
                rm.domain().fluent_names()
            )));
        }
        let env = EnvModel::new(world);
        let rm = RmTable::new(rm, env.labels());
        Ok(TrainingSetup { env, rm })
    }
}

#[derive(Debug, Clone)]
pub struct QTable {
    setup: Arc<TrainingSetup>,
    values: Vec<[f64; 4]>,
}

impl QTable {
    pub fn new(setup: Arc<TrainingSetup>) -> Self {
        let n = setup.env.num_states() * setup.rm.num_states();
        QTable { setup, values: vec![[0.0; 4]; n] }
    }

    pub fn setup(&self) -> &Arc<TrainingSetup> {
        &self.setup
    }

    fn slot(&self, env: usize, u: usize) -> usize {
        env * self.setup.rm.num_states() + u
    }

    pub fn values(&self, env: usize, u: usize) -> [f64; 4] {
        self.values[self.slot(env, u)]
    }

    /// Values for a concrete state; unseen states read as zero.
    pub fn get(&self, s: &EnvState, u: RmStateId) -> [f64; 4] {
        match self.setup.env.state_id(s) {
            Some(id) if u < self.setup.rm.num_states() => self.values(id, u),
            _ => [0.0; 4],
        }
    }

    /// First maximising action in `EnvAction::ALL` order.
    pub fn greedy(&self, env: usize, u: usize) -> EnvAction {
        let q = self.values(env, u);
        let mut best = 0;
        for a in 1..4 {
            if q[a] > q[best] {
                best = a;
            }
        }
        EnvAction::ALL[best]
    }

    /// One Q-learning backup. `next` is `None` when the transition ends the
    /// task, so nothing is bootstrapped.
    pub fn update(
        &mut self,
        (env, u): (usize, usize),
        a: EnvAction,
        reward: f64,
        next: Option<(usize, usize)>,
        alpha: f64,
        gamma: f64,
    ) {
        let future = match next {
            Some((e, v)) => max4(&self.values[self.slot(e, v)]),
            None => 0.0,
        };
        let slot = self.slot(env, u);
        let q = &mut self.values[slot][a.index()];
        *q = (1.0 - alpha) * *q + alpha * (reward + gamma * future);
    }
}

fn max4(q: &[f64; 4]) -> f64 {
    q[0].max(q[1]).max(q[2]).max(q[3])
}

/// Evaluation returns per start, recorded every `eval_every` training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub entries: Vec<(u64, Vec<f64>)>,
}

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const RUN_CSV_HEADER: &str = "train_step,start_index,eval_return";

impl RunLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{RUN_CSV_HEADER}")?;
        for (step, returns) in &self.entries {
            for (i, r) in returns.iter().enumerate() {
                writeln!(w, "{step},{i},{r}")?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("ascii")
    }

    /// Reads what [`RunLog::write_csv`] wrote. Rows of one step must be
    /// contiguous with start indices `0, 1, ...`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<RunLog, RunLogError> {
        let err = |line: usize, message: String| RunLogError::Parse { line, message };
        let mut entries: Vec<(u64, Vec<f64>)> = Vec::new();
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim_end) != Some(RUN_CSV_HEADER) {
            return Err(err(1, format!("expected header `{RUN_CSV_HEADER}`")));
        }
        for (i, line) in lines.enumerate() {
            let line = line?;
            let n = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != 3 {
                return Err(err(n, format!("expected 3 fields, found {}", fields.len())));
            }
            let step: u64 = fields[0].parse().map_err(|_| err(n, format!("bad train_step `{}`", fields[0])))?;
            let idx: usize = fields[1].parse().map_err(|_| err(n, format!("bad start_index `{}`", fields[1])))?;
            let ret: f64 = fields[2].parse().map_err(|_| err(n, format!("bad eval_return `{}`", fields[2])))?;
            if !ret.is_finite() {
                return Err(err(n, format!("non-finite eval_return `{}`", fields[2])));
            }
            match entries.last_mut() {
                Some((s, rets)) if *s == step => {
                    if idx != rets.len() {
                        return Err(err(n, format!("start_index {idx} out of order")));
                    }
                    rets.push(ret);
                }
                last => {
                    if last.is_some_and(|(s, _)| *s >= step) {
                        return Err(err(n, format!("train_step {step} out of order")));
                    }
                    if idx != 0 {
                        return Err(err(n, format!("start_index {idx} out of order")));
                    }
                    entries.push((step, vec![ret]));
                }
            }
        }
        Ok(RunLog { entries })
    }

    /// Mean over starts at each evaluation step.
    pub fn mean_returns(&self) -> Vec<(u64, f64)> {
        self.entries
            .iter()
            .map(|(s, r)| (*s, r.iter().sum::<f64>() / r.len().max(1) as f64))
            .collect()
    }
}

/// Trains an agent on `world` under `rm`.
pub fn train(
    world: &CraftWorld,
    rm: &RewardMachine,
    hp: &Hyperparams,
    mode: TrainMode,
) -> Result<(QTable, RunLog), TrainError> {
    let setup = Arc::new(TrainingSetup::new(world, rm)?);
    train_setup(setup, hp, mode)
}

pub fn train_setup(
    setup: Arc<TrainingSetup>,
    hp: &Hyperparams,
    mode: TrainMode,
) -> Result<(QTable, RunLog), TrainError> {
    hp.validate()?;
    let eval_starts = setup.env.map().eval_starts().to_vec();
    let rm = &setup.rm;
    let env = &setup.env;
    let n_rm = rm.num_states();
    let mut q = QTable::new(setup.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut log = RunLog { entries: Vec::new() };

    let reset = |rng: &mut ChaCha8Rng| {
        let s = env.world().reset_random(rng);
        env.state_id(&s).expect("every free cell is enumerated")
    };
    let mut s = reset(&mut rng);
    let mut u = rm.initial();
    let mut episode_len = 0u64;

    for t in 1..=hp.total_steps {
        let a = if rng.gen::<f64>() < hp.epsilon {
            EnvAction::ALL[rng.gen_range(0..4)]
        } else {
            greedy_random_ties(&q.values(s, u), &mut rng)
        };
        let (s2, l) = env.successor(s, a);
        let (u2, r) = rm.step(u, l);
        match mode {
            TrainMode::ProductQ => {
                let next = (u2 != rm.goal()).then_some((s2, u2));
                q.update((s, u), a, r, next, hp.alpha, hp.gamma);
            }
            TrainMode::Crm => {
                for ub in 0..n_rm {
                    if ub == rm.goal() {
                        continue;
                    }
                    let (ub2, rb) = rm.step(ub, l);
                    let next = (ub2 != rm.goal()).then_some((s2, ub2));
                    q.update((s, ub), a, rb, next, hp.alpha, hp.gamma);
                }
            }
        }
        episode_len += 1;
        if u2 == rm.goal() || episode_len >= hp.episode_cap {
            s = reset(&mut rng);
            u = rm.initial();
            episode_len = 0;
        } else {
            s = s2;
            u = u2;
        }
        if t % hp.eval_every == 0 {
            log.entries.push((t, evaluate(&q, &eval_starts, hp.episode_cap)?));
        }
    }
    Ok((q, log))
}

fn greedy_random_ties<R: Rng>(q: &[f64; 4], rng: &mut R) -> EnvAction {
    let best = max4(q);
    let n = q.iter().filter(|&&v| v == best).count();
    let mut k = if n == 1 { 0 } else { rng.gen_range(0..n) };
    for (a, &v) in q.iter().enumerate() {
        if v == best {
            if k == 0 {
                return EnvAction::ALL[a];
            }
            k -= 1;
        }
    }
    unreachable!("some action attains the maximum")
}

/// Greedy return from each start: the sum of reward machine rewards over at
/// most `cap` steps.
pub fn evaluate(q: &QTable, starts: &[Coord], cap: u64) -> Result<Vec<f64>, TrainError> {
    starts
        .iter()
        .map(|&c| {
            let traj = greedy_trajectory(q, c, cap)?;
            Ok(traj.ret)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub x: usize,
    pub y: usize,
    pub rm_state: RmStateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub ret: f64,
    pub reached_goal: bool,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,x,y,rm_state_id";

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAJECTORY_CSV_HEADER}\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.t, p.x, p.y, p.rm_state));
        }
        out
    }
}

/// The greedy rollout from `start`, including the starting point.
pub fn greedy_trajectory(q: &QTable, start: Coord, cap: u64) -> Result<Trajectory, TrainError> {
    let setup = q.setup();
    let (env, rm) = (&setup.env, &setup.rm);
    setup.env.world().reset_at(start)?;
    let mut s = env.start_id(start).expect("free cells are enumerated");
    let mut u = rm.initial();
    let point = |t, s, u| {
        let (x, y) = env.coord(s);
        TrajectoryPoint { t, x, y, rm_state: u }
    };
    let mut points = vec![point(0, s, u)];
    let mut ret = 0.0;
    let mut t = 0;
    while u != rm.goal() && t < cap {
        let a = q.greedy(s, u);
        let (s2, l) = env.successor(s, a);
        let (u2, r) = rm.step(u, l);
        ret += r;
        t += 1;
        s = s2;
        u = u2;
        points.push(point(t, s, u));
    }
    Ok(Trajectory { points, ret, reached_goal: u == rm.goal() })
}

/// The explicit product, reachable from every free cell paired with the
/// initial reward machine state.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    nodes: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
    /// Successor node and reward per action.
    next: Vec<[(u32, f64); 4]>,
    terminal: Vec<bool>,
    setup: Arc<TrainingSetup>,
}

impl ProductMdp {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, env: usize, u: usize) -> Option<usize> {
        self.index.get(&(env, u)).copied()
    }

    /// The node for a free cell with empty inventory and the initial machine state.
    pub fn start_node(&self, c: Coord) -> Option<usize> {
        let env = self.setup.env.start_id(c)?;
        self.node(env, self.setup.rm.initial())
    }

    pub fn node_state(&self, n: usize) -> (usize, usize) {
        self.nodes[n]
    }

    pub fn is_terminal(&self, n: usize) -> bool {
        self.terminal[n]
    }

    pub fn successor(&self, n: usize, a: EnvAction) -> (usize, f64) {
        let (t, r) = self.next[n][a.index()];
        (t as usize, r)
    }

    pub fn setup(&self) -> &Arc<TrainingSetup> {
        &self.setup
    }
}

pub fn build_product(setup: Arc<TrainingSetup>, node_cap: usize) -> Result<ProductMdp, TrainError> {
    let mut pm = ProductMdp {
        nodes: Vec::new(),
        index: HashMap::new(),
        next: Vec::new(),
        terminal: Vec::new(),
        setup: setup.clone(),
    };
    let (env, rm) = (&setup.env, &setup.rm);
    let mut queue = VecDeque::new();
    let intern = |pm: &mut ProductMdp, key: (usize, usize), queue: &mut VecDeque<usize>| {
        if let Some(&n) = pm.index.get(&key) {
            return Ok(n);
        }
        if pm.nodes.len() >= node_cap {
            return Err(TrainError::ProductTooLarge { limit: node_cap });
        }
        let n = pm.nodes.len();
        pm.nodes.push(key);
        pm.index.insert(key, n);
        pm.terminal.push(key.1 == rm.goal());
        queue.push_back(n);
        Ok(n)
    };
    for c in env.map().free_cells() {
        let e = env.start_id(c).expect("free cells are enumerated");
        intern(&mut pm, (e, rm.initial()), &mut queue)?;
    }
    // Rows are filled in discovery order, which is also node order.
    while let Some(n) = queue.pop_front() {
        let (e, u) = pm.nodes[n];
        let mut row = [(n as u32, 0.0); 4];
        if u != rm.goal() {
            for a in EnvAction::ALL {
                let (e2, l) = env.successor(e, a);
                let (u2, r) = rm.step(u, l);
                let t = intern(&mut pm, (e2, u2), &mut queue)?;
                row[a.index()] = (t as u32, r);
            }
        }
        pm.next.push(row);
    }
    Ok(pm)
}

/// Optimal values by Bellman backups. With `gamma == 1` this is the
/// finite-horizon value over `horizon` steps; otherwise it iterates until the
/// largest change is below `tol`, giving up after `horizon` sweeps.
pub fn value_iteration(pm: &ProductMdp, gamma: f64, tol: f64, horizon: usize) -> Result<Vec<f64>, TrainError> {
    let n = pm.num_nodes();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        let mut change: f64 = 0.0;
        for i in 0..n {
            if pm.terminal[i] {
                next[i] = 0.0;
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for &(t, r) in &pm.next[i] {
                let t = t as usize;
                let cont = if pm.terminal[t] { 0.0 } else { v[t] };
                best = best.max(r + gamma * cont);
            }
            change = change.max((best - v[i]).abs());
            next[i] = best;
        }
        std::mem::swap(&mut v, &mut next);
        if gamma >= 1.0 {
            if change == 0.0 {
                return Ok(v);
            }
        } else if change < tol {
            return Ok(v);
        }
    }
    if gamma >= 1.0 {
        Ok(v)
    } else {
        Err(TrainError::Diverged(horizon))
    }
}

/// Fewest environment steps from `start` with an empty inventory to an
/// inventory satisfying the task goal.
pub fn bfs_shortest_completion(world: &CraftWorld, task: &PlanningTask, start: Coord) -> Option<usize> {
    let first = world.reset_at(start).ok()?;
    if task.is_goal(PlanningState(first.inventory)) {
        return Some(0);
    }
    let mut seen = HashMap::new();
    seen.insert((first.agent, first.inventory), 0usize);
    let mut queue = VecDeque::from([first]);
    while let Some(s) = queue.pop_front() {
        let d = seen[&(s.agent, s.inventory)];
        for a in EnvAction::ALL {
            let n = world.step(&s, a);
            if seen.contains_key(&(n.agent, n.inventory)) {
                continue;
            }
            if task.is_goal(PlanningState(n.inventory)) {
                return Some(d + 1);
            }
            seen.insert((n.agent, n.inventory), d + 1);
            queue.push_back(n);
        }
    }
    None
}
