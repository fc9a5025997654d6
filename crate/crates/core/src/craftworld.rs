//! A deterministic crafting gridworld labelled by the agent's inventory.
//!
//! Cells are bound to planning actions by name. Entering a cell applies the
//! first bound action whose preconditions hold against the inventory, so the
//! inventory always moves exactly as the planning abstraction says it should.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::planning::{applicable, apply_unchecked, ActionId, FluentSet, PlanningDomain, PlanningState};

/// `(x, y)` with `x` the column and `y` the row, row 0 at the top.
pub type Coord = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellKind {
    Empty,
    Wall,
    Wood,
    Grass,
    Iron,
    Gold,
    Gem,
    Factory,
    Toolshed,
    Workbench,
}

impl CellKind {
    pub const ALL: [CellKind; 10] = [
        CellKind::Empty,
        CellKind::Wall,
        CellKind::Wood,
        CellKind::Grass,
        CellKind::Iron,
        CellKind::Gold,
        CellKind::Gem,
        CellKind::Factory,
        CellKind::Toolshed,
        CellKind::Workbench,
    ];

    pub fn from_glyph(c: char) -> Option<CellKind> {
        Some(match c {
            '.' => CellKind::Empty,
            '#' => CellKind::Wall,
            'T' => CellKind::Wood,
            'G' => CellKind::Grass,
            'I' => CellKind::Iron,
            'o' => CellKind::Gold,
            'm' => CellKind::Gem,
            'F' => CellKind::Factory,
            'S' => CellKind::Toolshed,
            'W' => CellKind::Workbench,
            _ => return None,
        })
    }

    pub fn glyph(self) -> char {
        match self {
            CellKind::Empty => '.',
            CellKind::Wall => '#',
            CellKind::Wood => 'T',
            CellKind::Grass => 'G',
            CellKind::Iron => 'I',
            CellKind::Gold => 'o',
            CellKind::Gem => 'm',
            CellKind::Factory => 'F',
            CellKind::Toolshed => 'S',
            CellKind::Workbench => 'W',
        }
    }

    /// Planning actions the cell can fire, in priority order.
    pub fn actions(self) -> &'static [&'static str] {
        match self {
            CellKind::Empty | CellKind::Wall => &[],
            CellKind::Wood => &["get-wood"],
            CellKind::Grass => &["get-grass"],
            CellKind::Iron => &["get-iron"],
            CellKind::Gold => &["get-gold"],
            CellKind::Gem => &["get-gem"],
            CellKind::Factory => &["use-factory"],
            CellKind::Toolshed => &["use-toolshed", "use-toolshed-for-axe"],
            CellKind::Workbench => &["use-workbench"],
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvAction {
    Up,
    Down,
    Left,
    Right,
}

impl EnvAction {
    /// Also the greedy tie-break order.
    pub const ALL: [EnvAction; 4] = [EnvAction::Up, EnvAction::Down, EnvAction::Left, EnvAction::Right];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Position is 1-based within the map text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("row {row}, column {column}: {message}")]
pub struct MapParseError {
    pub row: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("start ({0}, {1}) is outside the map")]
    OutOfBounds(usize, usize),
    #[error("start ({0}, {1}) is a wall")]
    StartOnWall(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    eval_starts: Vec<Coord>,
    start_region: Vec<Coord>,
}

impl GridMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell(&self, (x, y): Coord) -> CellKind {
        self.cells[y * self.width + x]
    }

    pub fn cells(&self) -> &[CellKind] {
        &self.cells
    }

    pub fn index_of(&self, (x, y): Coord) -> usize {
        y * self.width + x
    }

    pub fn coord_of(&self, index: usize) -> Coord {
        (index % self.width, index / self.width)
    }

    pub fn in_bounds(&self, (x, y): Coord) -> bool {
        x < self.width && y < self.height
    }

    pub fn is_free(&self, c: Coord) -> bool {
        self.in_bounds(c) && self.cell(c) != CellKind::Wall
    }

    pub fn eval_starts(&self) -> &[Coord] {
        &self.eval_starts
    }

    /// Cells a random reset may place the agent on.
    pub fn start_region(&self) -> &[Coord] {
        &self.start_region
    }

    /// All non-wall cells in row-major order.
    pub fn free_cells(&self) -> Vec<Coord> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] != CellKind::Wall)
            .map(|i| self.coord_of(i))
            .collect()
    }

    /// The neighbour reached by `action`, or `c` itself when blocked.
    pub fn move_from(&self, (x, y): Coord, action: EnvAction) -> Coord {
        let next = match action {
            EnvAction::Up if y > 0 => (x, y - 1),
            EnvAction::Down => (x, y + 1),
            EnvAction::Left if x > 0 => (x - 1, y),
            EnvAction::Right => (x + 1, y),
            _ => return (x, y),
        };
        if self.is_free(next) {
            next
        } else {
            (x, y)
        }
    }

    /// Renders the map back to its text form. `parse_map(m.to_text())` gives `m`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("starts:");
        for (x, y) in &self.eval_starts {
            out.push_str(&format!(" ({x},{y})"));
        }
        out.push('\n');
        if self.start_region != default_region(self.width, &self.cells) {
            out.push_str("region:");
            for (x, y) in &self.start_region {
                out.push_str(&format!(" ({x},{y})-({x},{y})"));
            }
            out.push('\n');
        }
        out.push_str(&render(self, None));
        out
    }
}

fn default_region(width: usize, cells: &[CellKind]) -> Vec<Coord> {
    (0..cells.len())
        .filter(|&i| cells[i] == CellKind::Empty)
        .map(|i| (i % width, i / width))
        .collect()
}

/// Parses a `.map` file.
///
/// ```text
/// # comment
/// starts: (1,1) (5,3)
/// region: (0,0)-(6,2)
/// #######
/// #..T..#
/// ```
///
/// `starts:` is required. `region:` lists inclusive rectangles; the random
/// start region is the empty cells inside them, or every empty cell when the
/// line is absent.
pub fn parse_map(text: &str) -> Result<GridMap, MapParseError> {
    let err = |row: usize, column: usize, message: String| MapParseError { row, column, message };
    let mut starts: Option<(usize, Vec<(Coord, usize)>)> = None;
    let mut regions: Vec<(usize, usize, Coord, Coord)> = Vec::new();
    let mut grid: Vec<(usize, &str)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let row = i + 1;
        let line = raw.trim_end();
        if grid.is_empty() {
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with("# ") || trimmed == "#" {
                continue;
            }
            if let Some(rest) = line.strip_prefix("starts:") {
                if starts.is_some() {
                    return Err(err(row, 1, "duplicate `starts:` header".into()));
                }
                starts = Some((row, parse_coords(rest, row, 8)?));
                continue;
            }
            if let Some(rest) = line.strip_prefix("region:") {
                for ((a, b), col) in parse_rects(rest, row, 8)? {
                    regions.push((row, col, a, b));
                }
                continue;
            }
            if let Some(colon) = line.find(':') {
                if line[..colon].chars().all(|c| c.is_ascii_alphabetic() || c == '-') {
                    return Err(err(row, 1, format!("unknown header `{}`", &line[..colon])));
                }
            }
        }
        grid.push((row, line));
    }
    while grid.last().is_some_and(|(_, l)| l.is_empty()) {
        grid.pop();
    }

    let (start_row, starts) = starts.ok_or_else(|| err(1, 1, "missing `starts:` header".into()))?;
    if starts.is_empty() {
        return Err(err(start_row, 1, "`starts:` lists no coordinates".into()));
    }
    let Some(&(first_row, first)) = grid.first() else {
        return Err(err(text.lines().count().max(1), 1, "map has no grid rows".into()));
    };
    let width = first.chars().count();
    let mut cells = Vec::with_capacity(width * grid.len());
    for &(row, line) in &grid {
        let mut n = 0;
        for (col, c) in line.chars().enumerate() {
            let kind = CellKind::from_glyph(c)
                .ok_or_else(|| err(row, col + 1, format!("unknown glyph `{c}`")))?;
            cells.push(kind);
            n += 1;
        }
        if n != width {
            return Err(err(row, n.min(width) + 1, format!("row has {n} cells, expected {width}")));
        }
    }
    let height = grid.len();
    if width < 2 || height < 2 {
        return Err(err(first_row, 1, format!("map is {width}x{height}, needs at least 2x2")));
    }

    let mut map = GridMap { width, height, cells, eval_starts: Vec::new(), start_region: Vec::new() };
    for &((x, y), col) in &starts {
        if !map.in_bounds((x, y)) {
            return Err(err(start_row, col, format!("start ({x},{y}) is outside the {width}x{height} map")));
        }
        if map.cell((x, y)) == CellKind::Wall {
            return Err(err(start_row, col, format!("start ({x},{y}) is a wall")));
        }
        map.eval_starts.push((x, y));
    }
    if regions.is_empty() {
        map.start_region = default_region(width, &map.cells);
    } else {
        let mut region = vec![false; map.cells.len()];
        for &(row, col, (x0, y0), (x1, y1)) in &regions {
            if !map.in_bounds((x1, y1)) || x0 > x1 || y0 > y1 {
                return Err(err(row, col, "region rectangle is empty or outside the map".into()));
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    region[y * width + x] = map.cells[y * width + x] == CellKind::Empty;
                }
            }
        }
        map.start_region = (0..region.len()).filter(|&i| region[i]).map(|i| map.coord_of(i)).collect();
    }
    if map.start_region.is_empty() {
        return Err(err(first_row, 1, "no empty cell to start from".into()));
    }
    Ok(map)
}

/// Coordinates of the form `(x,y)`, paired with their 1-based column.
fn parse_coords(rest: &str, row: usize, offset: usize) -> Result<Vec<(Coord, usize)>, MapParseError> {
    let mut out = Vec::new();
    let mut pos = 0;
    for tok in rest.split_whitespace() {
        let at = rest[pos..].find(tok).unwrap() + pos;
        pos = at + tok.len();
        let col = offset + at;
        out.push((parse_coord(tok, row, col)?, col));
    }
    Ok(out)
}

fn parse_rects(rest: &str, row: usize, offset: usize) -> Result<Vec<((Coord, Coord), usize)>, MapParseError> {
    let mut out = Vec::new();
    let mut pos = 0;
    for tok in rest.split_whitespace() {
        let at = rest[pos..].find(tok).unwrap() + pos;
        pos = at + tok.len();
        let col = offset + at;
        let (a, b) = tok.split_once(")-(").ok_or_else(|| MapParseError {
            row,
            column: col,
            message: format!("expected `(x,y)-(x,y)`, found `{tok}`"),
        })?;
        let a = parse_coord(&format!("{a})"), row, col)?;
        let b = parse_coord(&format!("({b}"), row, col)?;
        out.push(((a, b), col));
    }
    Ok(out)
}

fn parse_coord(tok: &str, row: usize, column: usize) -> Result<Coord, MapParseError> {
    let bad = || MapParseError { row, column, message: format!("expected `(x,y)`, found `{tok}`") };
    let inner = tok.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(bad)?;
    let (x, y) = inner.split_once(',').ok_or_else(bad)?;
    let x = x.trim().parse().map_err(|_| bad())?;
    let y = y.trim().parse().map_err(|_| bad())?;
    Ok((x, y))
}

/// Grid rows as text, with `@` on the agent's cell when given.
pub fn render(map: &GridMap, agent: Option<Coord>) -> String {
    let mut out = String::with_capacity((map.width + 1) * map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            if agent == Some((x, y)) {
                out.push('@');
            } else {
                out.push(map.cell((x, y)).glyph());
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub agent: Coord,
    pub inventory: FluentSet,
    pub step_count: u64,
}

/// How [`env_reset`] picks the starting cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartSpec {
    At(Coord),
    Seeded(u64),
}

/// A map together with the planning domain its cells fire actions from.
#[derive(Debug, Clone)]
pub struct CraftWorld {
    map: Arc<GridMap>,
    domain: Arc<PlanningDomain>,
    bindings: [Vec<ActionId>; 10],
}

impl CraftWorld {
    /// Binds cells to the domain's actions by name. Actions the domain lacks
    /// leave their cells inert.
    pub fn new(map: Arc<GridMap>, domain: Arc<PlanningDomain>) -> Self {
        let bindings = CellKind::ALL
            .map(|kind| kind.actions().iter().filter_map(|name| domain.action_id(name)).collect());
        CraftWorld { map, domain, bindings }
    }

    pub fn map(&self) -> &Arc<GridMap> {
        &self.map
    }

    pub fn domain(&self) -> &Arc<PlanningDomain> {
        &self.domain
    }

    /// The action entering a `kind` cell fires with this inventory, if any.
    /// An action whose effects leave the inventory unchanged does not count
    /// as firing.
    pub fn interaction(&self, kind: CellKind, inventory: FluentSet) -> Option<ActionId> {
        let state = PlanningState(inventory);
        let a = *self.bindings[kind.index()]
            .iter()
            .find(|&&a| applicable(state, self.domain.action(a)))?;
        let next = apply_unchecked(state, self.domain.action(a));
        (next.0 != inventory).then_some(a)
    }

    pub fn reset_at(&self, start: Coord) -> Result<EnvState, EnvError> {
        if !self.map.in_bounds(start) {
            return Err(EnvError::OutOfBounds(start.0, start.1));
        }
        if self.map.cell(start) == CellKind::Wall {
            return Err(EnvError::StartOnWall(start.0, start.1));
        }
        Ok(EnvState { agent: start, inventory: FluentSet::EMPTY, step_count: 0 })
    }

    /// Uniform over the start region.
    pub fn reset_random<R: Rng>(&self, rng: &mut R) -> EnvState {
        let region = self.map.start_region();
        let agent = region[rng.gen_range(0..region.len())];
        EnvState { agent, inventory: FluentSet::EMPTY, step_count: 0 }
    }

    /// One step, also returning the action the entered cell fired.
    pub fn step_with_event(&self, state: &EnvState, action: EnvAction) -> (EnvState, Option<ActionId>) {
        let agent = self.map.move_from(state.agent, action);
        let mut inventory = state.inventory;
        let mut fired = None;
        if agent != state.agent {
            if let Some(a) = self.interaction(self.map.cell(agent), inventory) {
                inventory = apply_unchecked(PlanningState(inventory), self.domain.action(a)).0;
                fired = Some(a);
            }
        }
        (EnvState { agent, inventory, step_count: state.step_count + 1 }, fired)
    }

    pub fn step(&self, state: &EnvState, action: EnvAction) -> EnvState {
        self.step_with_event(state, action).0
    }
}

pub fn env_reset(world: &CraftWorld, start: StartSpec) -> Result<EnvState, EnvError> {
    match start {
        StartSpec::At(c) => world.reset_at(c),
        StartSpec::Seeded(seed) => Ok(world.reset_random(&mut ChaCha8Rng::seed_from_u64(seed))),
    }
}

pub fn env_step(world: &CraftWorld, state: &EnvState, action: EnvAction) -> EnvState {
    world.step(state, action)
}

/// The labelling function: the inventory is the high-level state.
pub fn label(state: &EnvState) -> FluentSet {
    state.inventory
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render(self, None))
    }
}
