//! Authoritative scenario state: terrain, entities, blocks, dispensers, the
//! attachment graph, tasks and scores, plus the single step-resolution
//! transition that applies all agents' actions simultaneously.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{AgentId, BlockId, BlockType, Direction, Rotation, Team, Terrain, Vec2};

/// Tunable scenario parameters. Everything the world draws from its RNG or
/// checks against a threshold lives here so matches are reproducible from
/// `(config, seed, map)` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub agents_per_team: u16,
    /// Manhattan radius of each agent's vision.
    pub vision_radius: u32,
    /// Per-step probability that one clear event fires.
    pub p_clear: f64,
    /// Manhattan radius of a clear event.
    pub clear_radius: u32,
    /// Probability that a cell inside a clear event turns into an obstacle.
    pub clear_obstacle_prob: f64,
    /// How many steps an entity hit by a clear event stays disabled.
    pub disable_steps: u32,
    /// A new task appears whenever `step % task_interval == 0` (0 = never).
    pub task_interval: u32,
    /// Deadline offset of generated tasks, in steps from creation.
    pub task_deadline: u32,
    /// Number of tasks generated when the world is built.
    pub initial_tasks: u32,
    /// Generated pattern sizes are uniform in `pattern_min..=pattern_max`.
    pub pattern_min: u32,
    pub pattern_max: u32,
    /// Task reward is `reward_per_block * pattern size`.
    pub reward_per_block: u32,
    /// Maximum number of directly attached blocks per agent.
    pub attach_cap: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            agents_per_team: 8,
            vision_radius: 5,
            p_clear: 0.08,
            clear_radius: 2,
            clear_obstacle_prob: 0.15,
            disable_steps: 4,
            task_interval: 20,
            task_deadline: 120,
            initial_tasks: 1,
            pattern_min: 1,
            pattern_max: 3,
            reward_per_block: 10,
            attach_cap: 4,
        }
    }
}

/// An agent body on the map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub id: AgentId,
    pub team: Team,
    pub position: Vec2,
    /// First step at which the entity acts again; 0 when it was never hit.
    pub disabled_until: u32,
}

/// A block instance on the map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub position: Vec2,
    pub block_type: BlockType,
}

/// A node of the attachment graph: either an agent body or a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ThingId {
    Agent(AgentId),
    Block(BlockId),
}

/// A scoring task: a typed block pattern around the submitting agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub name: String,
    pub deadline: u32,
    pub reward: u32,
    /// Offsets from the submitter, sorted; never contains `(0,0)` and the
    /// offsets together with the origin form a 4-connected set.
    pub pattern: Vec<(Vec2, BlockType)>,
}

impl Task {
    /// Multiset of block types the pattern needs.
    pub fn type_counts(&self) -> BTreeMap<BlockType, u32> {
        let mut counts = BTreeMap::new();
        for (_, t) in &self.pattern {
            *counts.entry(*t).or_insert(0) += 1;
        }
        counts
    }
}

/// One agent action for one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Move(Direction),
    Rotate(Rotation),
    Attach(Direction),
    Detach(Direction),
    Request(Direction),
    /// Connect the own block at the named cell (relative to self) with the
    /// partner's block; succeeds only when the partner issues the mirrored
    /// connect in the same step.
    Connect(AgentId, Vec2),
    Submit(String),
    Skip,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Move(d) => write!(f, "move({d})"),
            Action::Rotate(r) => write!(f, "rotate({r})"),
            Action::Attach(d) => write!(f, "attach({d})"),
            Action::Detach(d) => write!(f, "detach({d})"),
            Action::Request(d) => write!(f, "request({d})"),
            Action::Connect(a, c) => write!(f, "connect({},{},{})", a, c.x, c.y),
            Action::Submit(n) => write!(f, "submit({n})"),
            Action::Skip => write!(f, "skip"),
        }
    }
}

/// Outcome of one action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActionResult {
    Success,
    FailedPath,
    FailedTarget,
    FailedPartner,
    FailedParameter,
    FailedDisabled,
}

impl ActionResult {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionResult::Success => "success",
            ActionResult::FailedPath => "failed_path",
            ActionResult::FailedTarget => "failed_target",
            ActionResult::FailedPartner => "failed_partner",
            ActionResult::FailedParameter => "failed_parameter",
            ActionResult::FailedDisabled => "failed_disabled",
        }
    }
}

impl fmt::Display for ActionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_str())
    }
}

/// A clear event that fired during step resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClearEvent {
    pub center: Vec2,
    pub radius: u32,
    pub step: u32,
}

/// What one agent can see and know at the start of a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Percept {
    pub step: u32,
    pub vision_radius: u32,
    pub team: Team,
    pub score: u32,
    pub last_result: Option<ActionResult>,
    pub tasks: Vec<Task>,
    /// Non-empty terrain at offsets within vision. Cells beyond the map edge
    /// are reported as obstacles so agents treat the boundary as a wall.
    pub terrain: Vec<(Vec2, Terrain)>,
    pub things: Vec<(Vec2, ThingView)>,
}

impl Percept {
    pub fn terrain_at(&self, off: Vec2) -> Terrain {
        self.terrain
            .iter()
            .find(|(o, _)| *o == off)
            .map(|(_, t)| *t)
            .unwrap_or(Terrain::Empty)
    }

    pub fn thing_at(&self, off: Vec2) -> Option<&ThingView> {
        self.things
            .iter()
            .find(|(o, v)| *o == off && !matches!(v, ThingView::Dispenser { .. }))
            .map(|(_, v)| v)
    }

    pub fn dispenser_at(&self, off: Vec2) -> Option<BlockType> {
        self.things.iter().find_map(|(o, v)| match v {
            ThingView::Dispenser { block_type } if *o == off => Some(*block_type),
            _ => None,
        })
    }

    pub fn block_at(&self, off: Vec2) -> Option<(BlockType, bool)> {
        self.things.iter().find_map(|(o, v)| match v {
            ThingView::Block {
                block_type,
                attached,
            } if *o == off => Some((*block_type, *attached)),
            _ => None,
        })
    }

    pub fn in_vision(&self, off: Vec2) -> bool {
        off.manhattan() <= self.vision_radius
    }
}

/// A thing as seen through a percept: entities carry only a team label, and
/// the attached flag never reveals which body a block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ThingView {
    Entity { team: Team, attached: bool },
    Block { block_type: BlockType, attached: bool },
    Dispenser { block_type: BlockType },
}

/// Errors from parsing a map or assembling the initial world.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildError {
    EmptyMap,
    UnequalLineLength { line: usize },
    BadChar { line: usize, col: usize, ch: char },
    TooFewSpawns { team: Team, have: usize, need: usize },
    BadConfig(String),
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::EmptyMap => write!(f, "map text is empty"),
            BuildError::UnequalLineLength { line } => {
                write!(f, "map line {line} has a different length")
            }
            BuildError::BadChar { line, col, ch } => {
                write!(f, "map line {line} column {col}: illegal character {ch:?}")
            }
            BuildError::TooFewSpawns { team, have, need } => {
                write!(f, "team {team} has {have} spawn cells, needs {need}")
            }
            BuildError::BadConfig(msg) => write!(f, "bad configuration: {msg}"),
        }
    }
}

impl core::error::Error for BuildError {}

/// A violated caller contract during step resolution; the match aborts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContractViolation {
    UnknownAgent(AgentId),
    MissingAction(AgentId),
}

impl fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContractViolation::UnknownAgent(a) => write!(f, "action supplied for unknown agent {a}"),
            ContractViolation::MissingAction(a) => write!(f, "no action supplied for agent {a}"),
        }
    }
}

impl core::error::Error for ContractViolation {}

/// The authoritative world. All mutation goes through [`GridState::resolve_step`];
/// [`GridState::perceive`] and [`GridState::match_pattern`] are read-only.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    width: i32,
    height: i32,
    terrain: Vec<Terrain>,
    entities: BTreeMap<AgentId, Entity>,
    blocks: BTreeMap<BlockId, Block>,
    dispensers: BTreeMap<Vec2, BlockType>,
    /// Adjacency of the undirected attachment graph.
    attach: BTreeMap<ThingId, BTreeSet<ThingId>>,
    /// Cell occupancy cache, kept in sync with entities and blocks.
    occupancy: BTreeMap<Vec2, ThingId>,
    tasks: Vec<Task>,
    step: u32,
    scores: [u32; 2],
    last_results: BTreeMap<AgentId, ActionResult>,
    spawns: BTreeMap<AgentId, Vec2>,
    next_block: u32,
    next_task: u32,
    cfg: WorldConfig,
    rng: ChaCha8Rng,
}

/// Parse the line-oriented ASCII map format and build the initial world.
///
/// Legal characters: `.` empty, `#` obstacle, `g` goal, `0`..`4` a dispenser
/// of type `b0`..`b4`, `A`/`B` a team spawn cell (empty terrain beneath).
pub fn build_world(cfg: &WorldConfig, map_text: &str) -> Result<GridState, BuildError> {
    if cfg.agents_per_team == 0 {
        return Err(BuildError::BadConfig("agents_per_team must be >= 1".into()));
    }
    if cfg.pattern_min == 0 || cfg.pattern_min > cfg.pattern_max {
        return Err(BuildError::BadConfig(
            "pattern_min must be in 1..=pattern_max".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.p_clear) || !(0.0..=1.0).contains(&cfg.clear_obstacle_prob) {
        return Err(BuildError::BadConfig("probabilities must be in [0,1]".into()));
    }

    let lines: Vec<&str> = map_text.lines().filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(BuildError::EmptyMap);
    }
    let width = lines[0].chars().count();
    let height = lines.len();
    let mut terrain = Vec::with_capacity(width * height);
    terrain.resize(width * height, Terrain::Empty);
    let mut dispensers = BTreeMap::new();
    let mut spawns_a = Vec::new();
    let mut spawns_b = Vec::new();

    for (y, line) in lines.iter().enumerate() {
        if line.chars().count() != width {
            return Err(BuildError::UnequalLineLength { line: y + 1 });
        }
        for (x, ch) in line.chars().enumerate() {
            let pos = Vec2::new(x as i32, y as i32);
            match ch {
                '.' => {}
                '#' => terrain[y * width + x] = Terrain::Obstacle,
                'g' => terrain[y * width + x] = Terrain::Goal,
                '0'..='4' => {
                    dispensers.insert(pos, BlockType(ch as u8 - b'0'));
                }
                'A' => spawns_a.push(pos),
                'B' => spawns_b.push(pos),
                _ => {
                    return Err(BuildError::BadChar {
                        line: y + 1,
                        col: x + 1,
                        ch,
                    })
                }
            }
        }
    }

    let need = cfg.agents_per_team as usize;
    for (team, spawns) in [(Team::A, &spawns_a), (Team::B, &spawns_b)] {
        if spawns.len() < need {
            return Err(BuildError::TooFewSpawns {
                team,
                have: spawns.len(),
                need,
            });
        }
    }

    let mut entities = BTreeMap::new();
    let mut occupancy = BTreeMap::new();
    let mut spawn_map = BTreeMap::new();
    let mut next_id = 0u16;
    for (team, spawns) in [(Team::A, &spawns_a), (Team::B, &spawns_b)] {
        for pos in spawns.iter().take(need) {
            let id = AgentId(next_id);
            next_id += 1;
            entities.insert(
                id,
                Entity {
                    id,
                    team,
                    position: *pos,
                    disabled_until: 0,
                },
            );
            occupancy.insert(*pos, ThingId::Agent(id));
            spawn_map.insert(id, *pos);
        }
    }

    let mut state = GridState {
        width: width as i32,
        height: height as i32,
        terrain,
        entities,
        blocks: BTreeMap::new(),
        dispensers,
        attach: BTreeMap::new(),
        occupancy,
        tasks: Vec::new(),
        step: 0,
        scores: [0, 0],
        last_results: BTreeMap::new(),
        spawns: spawn_map,
        next_block: 0,
        next_task: 0,
        cfg: cfg.clone(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    for _ in 0..cfg.initial_tasks {
        state.generate_task();
    }
    Ok(state)
}

impl GridState {
    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn score(&self, team: Team) -> u32 {
        self.scores[team.index()]
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity(&self, id: AgentId) -> &Entity {
        &self.entities[&id]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn spawn(&self, id: AgentId) -> Vec2 {
        self.spawns[&id]
    }

    pub fn agent_ids(&self) -> Vec<AgentId> {
        self.entities.keys().copied().collect()
    }

    pub fn in_bounds(&self, pos: Vec2) -> bool {
        pos.x >= 0 && pos.y >= 0 && pos.x < self.width && pos.y < self.height
    }

    pub fn terrain_at(&self, pos: Vec2) -> Terrain {
        if !self.in_bounds(pos) {
            return Terrain::Obstacle;
        }
        self.terrain[(pos.y * self.width + pos.x) as usize]
    }

    fn set_terrain(&mut self, pos: Vec2, t: Terrain) {
        let idx = (pos.y * self.width + pos.x) as usize;
        self.terrain[idx] = t;
    }

    pub fn thing_at(&self, pos: Vec2) -> Option<ThingId> {
        self.occupancy.get(&pos).copied()
    }

    pub fn dispenser_at(&self, pos: Vec2) -> Option<BlockType> {
        self.dispensers.get(&pos).copied()
    }

    fn thing_position(&self, thing: ThingId) -> Vec2 {
        match thing {
            ThingId::Agent(a) => self.entities[&a].position,
            ThingId::Block(b) => self.blocks[&b].position,
        }
    }

    /// Edges incident to `thing` in the attachment graph.
    pub fn attached_to(&self, thing: ThingId) -> impl Iterator<Item = ThingId> + '_ {
        self.attach.get(&thing).into_iter().flatten().copied()
    }

    pub fn attach_edges(&self) -> Vec<(ThingId, ThingId)> {
        let mut edges = Vec::new();
        for (a, nbrs) in &self.attach {
            for b in nbrs {
                if a < b {
                    edges.push((*a, *b));
                }
            }
        }
        edges
    }

    fn add_edge(&mut self, a: ThingId, b: ThingId) {
        self.attach.entry(a).or_default().insert(b);
        self.attach.entry(b).or_default().insert(a);
    }

    fn remove_edge(&mut self, a: ThingId, b: ThingId) {
        if let Some(s) = self.attach.get_mut(&a) {
            s.remove(&b);
            if s.is_empty() {
                self.attach.remove(&a);
            }
        }
        if let Some(s) = self.attach.get_mut(&b) {
            s.remove(&a);
            if s.is_empty() {
                self.attach.remove(&b);
            }
        }
    }

    fn remove_all_edges(&mut self, thing: ThingId) {
        let nbrs: Vec<ThingId> = self.attached_to(thing).collect();
        for n in nbrs {
            self.remove_edge(thing, n);
        }
    }

    /// The rigid body containing `start`: everything transitively attached.
    pub fn component(&self, start: ThingId) -> BTreeSet<ThingId> {
        let mut seen = BTreeSet::new();
        let mut stack = alloc::vec![start];
        while let Some(t) = stack.pop() {
            if seen.insert(t) {
                stack.extend(self.attached_to(t));
            }
        }
        seen
    }

    /// Blocks reachable from an agent through attach edges without passing
    /// through another entity. This is the structure the agent carries for
    /// the purpose of belief tracking.
    pub fn carried_blocks(&self, agent: AgentId) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let mut out = BTreeSet::new();
        let start = ThingId::Agent(agent);
        let mut stack = alloc::vec![start];
        seen.insert(start);
        while let Some(t) = stack.pop() {
            for n in self.attached_to(t) {
                if seen.contains(&n) {
                    continue;
                }
                match n {
                    ThingId::Block(b) => {
                        seen.insert(n);
                        out.insert(b);
                        stack.push(n);
                    }
                    ThingId::Agent(_) => {
                        // Do not traverse through other bodies' anchors.
                        seen.insert(n);
                    }
                }
            }
        }
        out
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[&id]
    }

    fn destroy_block(&mut self, id: BlockId) {
        self.remove_all_edges(ThingId::Block(id));
        if let Some(b) = self.blocks.remove(&id) {
            self.occupancy.remove(&b.position);
        }
    }

    fn spawn_block(&mut self, pos: Vec2, t: BlockType) -> BlockId {
        let id = BlockId(self.next_block);
        self.next_block += 1;
        self.blocks.insert(
            id,
            Block {
                id,
                position: pos,
                block_type: t,
            },
        );
        self.occupancy.insert(pos, ThingId::Block(id));
        id
    }

    fn is_disabled(&self, agent: AgentId) -> bool {
        self.step < self.entities[&agent].disabled_until
    }

    /// Block types obtainable on this map, used by the task generator.
    fn available_types(&self) -> Vec<BlockType> {
        let mut set: BTreeSet<BlockType> = self.dispensers.values().copied().collect();
        for b in self.blocks.values() {
            set.insert(b.block_type);
        }
        if set.is_empty() {
            set.insert(BlockType(0));
        }
        set.into_iter().collect()
    }

    fn generate_task(&mut self) {
        let size = self
            .rng
            .gen_range(self.cfg.pattern_min..=self.cfg.pattern_max);
        let mut cells: BTreeSet<Vec2> = BTreeSet::new();
        for _ in 0..size {
            let mut frontier: BTreeSet<Vec2> = BTreeSet::new();
            for c in cells.iter().copied().chain([Vec2::ZERO]) {
                for n in c.neighbours() {
                    if n != Vec2::ZERO && !cells.contains(&n) {
                        frontier.insert(n);
                    }
                }
            }
            let idx = self.rng.gen_range(0..frontier.len());
            let cell = *frontier.iter().nth(idx).expect("frontier is non-empty");
            cells.insert(cell);
        }
        let types = self.available_types();
        let pattern: Vec<(Vec2, BlockType)> = cells
            .into_iter()
            .map(|c| (c, types[self.rng.gen_range(0..types.len())]))
            .collect();
        let name = format!("task{}", self.next_task);
        self.next_task += 1;
        self.tasks.push(Task {
            name,
            deadline: self.step + self.cfg.task_deadline,
            reward: self.cfg.reward_per_block * size,
            pattern,
        });
    }

    /// True iff `submitter` stands on a goal cell and every pattern cell
    /// holds a block of the required type belonging to the submitter's rigid
    /// body.
    pub fn match_pattern(&self, submitter: AgentId, task: &Task) -> bool {
        let entity = &self.entities[&submitter];
        if self.terrain_at(entity.position) != Terrain::Goal {
            return false;
        }
        let body = self.component(ThingId::Agent(submitter));
        task.pattern.iter().all(|(off, required)| {
            match self.thing_at(entity.position + *off) {
                Some(ThingId::Block(b)) => {
                    self.blocks[&b].block_type == *required && body.contains(&ThingId::Block(b))
                }
                _ => false,
            }
        })
    }

    /// Build the vision-limited percept for one agent.
    pub fn perceive(&self, agent: AgentId) -> Percept {
        let entity = self.entities.get(&agent).expect("agent exists");
        let r = self.cfg.vision_radius as i32;
        let mut terrain = Vec::new();
        let mut things = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() + dy.abs() > r {
                    continue;
                }
                let off = Vec2::new(dx, dy);
                let cell = entity.position + off;
                let kind = self.terrain_at(cell);
                if kind != Terrain::Empty {
                    terrain.push((off, kind));
                }
                if !self.in_bounds(cell) {
                    continue;
                }
                match self.thing_at(cell) {
                    Some(ThingId::Agent(other)) if other != agent => {
                        things.push((
                            off,
                            ThingView::Entity {
                                team: self.entities[&other].team,
                                attached: self
                                    .attach
                                    .get(&ThingId::Agent(other))
                                    .is_some_and(|s| !s.is_empty()),
                            },
                        ));
                    }
                    Some(ThingId::Block(b)) => {
                        things.push((
                            off,
                            ThingView::Block {
                                block_type: self.blocks[&b].block_type,
                                attached: self
                                    .attach
                                    .get(&ThingId::Block(b))
                                    .is_some_and(|s| !s.is_empty()),
                            },
                        ));
                    }
                    _ => {}
                }
                if let Some(t) = self.dispensers.get(&cell) {
                    things.push((off, ThingView::Dispenser { block_type: *t }));
                }
            }
        }
        Percept {
            step: self.step,
            vision_radius: self.cfg.vision_radius,
            team: entity.team,
            score: self.scores[entity.team.index()],
            last_result: self.last_results.get(&agent).copied(),
            tasks: self.tasks.clone(),
            terrain,
            things,
        }
    }

    /// Resolve one step: apply every agent's action simultaneously, fire
    /// clear events, advance the step counter and spawn due tasks.
    ///
    /// Resolution runs in a fixed phase order so the outcome is independent
    /// of the iteration order of `actions`: disabled filter, connect, submit,
    /// detach, attach, request, then the joint move/rotate resolution, then
    /// clear events. Within a phase agents resolve in ascending id.
    pub fn resolve_step(
        &mut self,
        actions: &BTreeMap<AgentId, Action>,
    ) -> Result<(BTreeMap<AgentId, ActionResult>, Vec<ClearEvent>), ContractViolation> {
        for id in actions.keys() {
            if !self.entities.contains_key(id) {
                return Err(ContractViolation::UnknownAgent(*id));
            }
        }
        for id in self.entities.keys() {
            if !actions.contains_key(id) {
                return Err(ContractViolation::MissingAction(*id));
            }
        }

        let mut results: BTreeMap<AgentId, ActionResult> = BTreeMap::new();
        for (&id, _) in actions {
            if self.is_disabled(id) {
                results.insert(id, ActionResult::FailedDisabled);
            }
        }
        let live =
            |results: &BTreeMap<AgentId, ActionResult>, id: AgentId| !results.contains_key(&id);

        // Connect: pairs that name each other with valid, adjacent own blocks.
        let connects: Vec<(AgentId, AgentId, Vec2)> = actions
            .iter()
            .filter(|(id, _)| live(&results, **id))
            .filter_map(|(id, a)| match a {
                Action::Connect(partner, cell) => Some((*id, *partner, *cell)),
                _ => None,
            })
            .collect();
        for &(id, partner, rel) in &connects {
            if results.contains_key(&id) {
                continue;
            }
            if partner == id || !self.entities.contains_key(&partner) {
                results.insert(id, ActionResult::FailedParameter);
                continue;
            }
            let reciprocal = connects
                .iter()
                .find(|&&(other, named, _)| other == partner && named == id)
                .copied();
            let Some((_, _, partner_rel)) = reciprocal else {
                results.insert(id, ActionResult::FailedPartner);
                continue;
            };
            let own_cell = self.entities[&id].position + rel;
            let partner_cell = self.entities[&partner].position + partner_rel;
            let own_block = self.block_of_body(id, own_cell);
            let partner_block = self.block_of_body(partner, partner_cell);
            match (own_block, partner_block) {
                (Some(a), Some(b)) if own_cell.dist(partner_cell) == 1 => {
                    self.add_edge(ThingId::Block(a), ThingId::Block(b));
                    results.insert(id, ActionResult::Success);
                    results.insert(partner, ActionResult::Success);
                }
                (Some(_), Some(_)) => {
                    results.insert(id, ActionResult::FailedTarget);
                    results.insert(partner, ActionResult::FailedTarget);
                }
                (own, _) => {
                    results.insert(
                        id,
                        if own.is_some() {
                            ActionResult::FailedPartner
                        } else {
                            ActionResult::FailedTarget
                        },
                    );
                }
            }
        }

        // Submit, ascending agent id; the first successful submit consumes
        // the task globally.
        for (&id, action) in actions {
            if !live(&results, id) {
                continue;
            }
            if let Action::Submit(name) = action {
                let result = match self.tasks.iter().position(|t| &t.name == name) {
                    Some(idx) if self.step <= self.tasks[idx].deadline => {
                        let task = self.tasks[idx].clone();
                        if self.match_pattern(id, &task) {
                            let pos = self.entities[&id].position;
                            for (off, _) in &task.pattern {
                                if let Some(ThingId::Block(b)) = self.thing_at(pos + *off) {
                                    self.destroy_block(b);
                                }
                            }
                            let team = self.entities[&id].team;
                            self.scores[team.index()] += task.reward;
                            self.tasks.remove(idx);
                            ActionResult::Success
                        } else {
                            ActionResult::FailedTarget
                        }
                    }
                    _ => ActionResult::FailedTarget,
                };
                results.insert(id, result);
            }
        }

        // Detach: drop the direct edge to the thing in the given direction.
        for (&id, action) in actions {
            if !live(&results, id) {
                continue;
            }
            if let Action::Detach(dir) = action {
                let cell = self.entities[&id].position + dir.unit();
                let target = self
                    .attached_to(ThingId::Agent(id))
                    .find(|t| self.thing_position(*t) == cell);
                let result = match target {
                    Some(t) => {
                        self.remove_edge(ThingId::Agent(id), t);
                        ActionResult::Success
                    }
                    None => ActionResult::FailedTarget,
                };
                results.insert(id, result);
            }
        }

        // Attach, ascending agent id. The target must be a block whose body
        // contains no entity; anything else would fold two agents into one
        // rigid body without a mutual connect.
        for (&id, action) in actions {
            if !live(&results, id) {
                continue;
            }
            if let Action::Attach(dir) = action {
                let cell = self.entities[&id].position + dir.unit();
                let result = if !self.in_bounds(cell) {
                    ActionResult::FailedParameter
                } else {
                    match self.thing_at(cell) {
                        Some(ThingId::Block(b))
                            if self.attached_to(ThingId::Agent(id)).count()
                                < self.cfg.attach_cap =>
                        {
                            let body = self.component(ThingId::Block(b));
                            if body.iter().any(|t| matches!(t, ThingId::Agent(_))) {
                                ActionResult::FailedTarget
                            } else {
                                self.add_edge(ThingId::Agent(id), ThingId::Block(b));
                                ActionResult::Success
                            }
                        }
                        _ => ActionResult::FailedTarget,
                    }
                };
                results.insert(id, result);
            }
        }

        // Request, ascending agent id.
        for (&id, action) in actions {
            if !live(&results, id) {
                continue;
            }
            if let Action::Request(dir) = action {
                let cell = self.entities[&id].position + dir.unit();
                let result = if !self.in_bounds(cell) {
                    ActionResult::FailedParameter
                } else {
                    match self.dispensers.get(&cell).copied() {
                        Some(block_type) if self.thing_at(cell).is_none() => {
                            self.spawn_block(cell, block_type);
                            ActionResult::Success
                        }
                        _ => ActionResult::FailedTarget,
                    }
                };
                results.insert(id, result);
            }
        }

        // Moves and rotates resolve jointly. A body's destination must be
        // free against everything else's current cells; any two acting
        // bodies whose newly gained cells intersect both fail.
        self.resolve_movement(actions, &mut results);

        // Skips and anything left.
        for (&id, action) in actions {
            if live(&results, id) {
                debug_assert!(matches!(action, Action::Skip));
                results.insert(id, ActionResult::Success);
            }
        }

        let events = self.fire_clear_events();

        self.step += 1;
        if self.cfg.task_interval > 0 && self.step % self.cfg.task_interval == 0 {
            self.generate_task();
        }
        let step = self.step;
        self.tasks.retain(|t| t.deadline >= step);
        self.last_results = results.clone();
        Ok((results, events))
    }

    /// The block at `cell` if it belongs to `agent`'s rigid body.
    fn block_of_body(&self, agent: AgentId, cell: Vec2) -> Option<BlockId> {
        match self.thing_at(cell) {
            Some(ThingId::Block(b))
                if self
                    .component(ThingId::Agent(agent))
                    .contains(&ThingId::Block(b)) =>
            {
                Some(b)
            }
            _ => None,
        }
    }

    fn resolve_movement(
        &mut self,
        actions: &BTreeMap<AgentId, Action>,
        results: &mut BTreeMap<AgentId, ActionResult>,
    ) {
        struct Mover {
            id: AgentId,
            /// New placement of every thing in the body.
            placement: Vec<(ThingId, Vec2)>,
            old_cells: BTreeSet<Vec2>,
            gained: BTreeSet<Vec2>,
            static_ok: bool,
        }

        let mut movers: Vec<Mover> = Vec::new();
        for (&id, action) in actions {
            if results.contains_key(&id) {
                continue;
            }
            let transform: Option<fn(Vec2, Vec2, &Action) -> Vec2> = match action {
                Action::Move(_) => Some(|cell, _anchor, a| {
                    let Action::Move(d) = a else { unreachable!() };
                    cell + d.unit()
                }),
                Action::Rotate(_) => Some(|cell, anchor, a| {
                    let Action::Rotate(r) = a else { unreachable!() };
                    anchor + (cell - anchor).rotated(*r)
                }),
                _ => None,
            };
            let Some(transform) = transform else { continue };

            let body = self.component(ThingId::Agent(id));
            let other_entity = body
                .iter()
                .any(|t| matches!(t, ThingId::Agent(a) if *a != id));
            let anchor = self.entities[&id].position;
            let placement: Vec<(ThingId, Vec2)> = body
                .iter()
                .map(|t| (*t, transform(self.thing_position(*t), anchor, action)))
                .collect();
            let old_cells: BTreeSet<Vec2> = body.iter().map(|t| self.thing_position(*t)).collect();
            let gained: BTreeSet<Vec2> = placement
                .iter()
                .map(|(_, c)| *c)
                .filter(|c| !old_cells.contains(c))
                .collect();
            let static_ok = !other_entity
                && placement.iter().all(|(_, c)| {
                    self.in_bounds(*c) && self.terrain_at(*c) != Terrain::Obstacle
                })
                && gained.iter().all(|c| self.thing_at(*c).is_none());
            movers.push(Mover {
                id,
                placement,
                old_cells,
                gained,
                static_ok,
            });
        }

        // Intent-level conflicts: two bodies moving into the same cell both
        // fail, whether or not the moves were otherwise possible.
        let mut conflicted = alloc::vec![false; movers.len()];
        for i in 0..movers.len() {
            for j in i + 1..movers.len() {
                if !movers[i].gained.is_disjoint(&movers[j].gained) {
                    conflicted[i] = true;
                    conflicted[j] = true;
                }
            }
        }

        let mut winners: Vec<usize> = Vec::new();
        for (i, m) in movers.iter().enumerate() {
            if m.static_ok && !conflicted[i] {
                winners.push(i);
                results.insert(m.id, ActionResult::Success);
            } else {
                results.insert(m.id, ActionResult::FailedPath);
            }
        }

        for &i in &winners {
            for cell in &movers[i].old_cells {
                self.occupancy.remove(cell);
            }
        }
        for &i in &winners {
            for (thing, cell) in &movers[i].placement {
                match thing {
                    ThingId::Agent(a) => self.entities.get_mut(a).unwrap().position = *cell,
                    ThingId::Block(b) => self.blocks.get_mut(b).unwrap().position = *cell,
                }
                self.occupancy.insert(*cell, *thing);
            }
        }
    }

    fn fire_clear_events(&mut self) -> Vec<ClearEvent> {
        let mut events = Vec::new();
        if !self.rng.gen_bool(self.cfg.p_clear) {
            return events;
        }
        let center = Vec2::new(
            self.rng.gen_range(0..self.width),
            self.rng.gen_range(0..self.height),
        );
        let radius = self.cfg.clear_radius;
        let r = radius as i32;
        let mut ball = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx.abs() + dy.abs() > r {
                    continue;
                }
                let cell = center + Vec2::new(dx, dy);
                if self.in_bounds(cell) {
                    ball.push(cell);
                }
            }
        }
        for &cell in &ball {
            if self.terrain_at(cell) == Terrain::Obstacle {
                self.set_terrain(cell, Terrain::Empty);
            }
        }
        for &cell in &ball {
            match self.thing_at(cell) {
                Some(ThingId::Block(b)) => self.destroy_block(b),
                Some(ThingId::Agent(a)) => {
                    self.entities.get_mut(&a).unwrap().disabled_until =
                        self.step + 1 + self.cfg.disable_steps;
                }
                None => {}
            }
        }
        for &cell in &ball {
            let roll = self.rng.gen_bool(self.cfg.clear_obstacle_prob);
            if roll
                && self.terrain_at(cell) == Terrain::Empty
                && self.thing_at(cell).is_none()
                && !self.dispensers.contains_key(&cell)
            {
                self.set_terrain(cell, Terrain::Obstacle);
            }
        }
        events.push(ClearEvent {
            center,
            radius,
            step: self.step,
        });
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn cfg(agents: u16) -> WorldConfig {
        WorldConfig {
            agents_per_team: agents,
            p_clear: 0.0,
            task_interval: 0,
            initial_tasks: 0,
            ..WorldConfig::default()
        }
    }

    fn skip_all(w: &GridState) -> BTreeMap<AgentId, Action> {
        w.agent_ids().into_iter().map(|id| (id, Action::Skip)).collect()
    }

    #[test]
    fn map_with_one_spawn_builds() {
        let w = build_world(&cfg(1), ".A.\n.B.\n...\n").unwrap();
        assert_eq!(w.step(), 0);
        assert_eq!(w.entities().count(), 2);
        assert_eq!(w.entity(AgentId(0)).position, Vec2::new(1, 0));
        assert_eq!(w.entity(AgentId(0)).team, Team::A);
        assert_eq!(w.entity(AgentId(1)).team, Team::B);
    }

    #[test]
    fn map_obstacle_parses() {
        let w = build_world(&cfg(1), "AB.\n.#.\n..g\n").unwrap();
        assert_eq!(w.terrain_at(Vec2::new(1, 1)), Terrain::Obstacle);
        assert_eq!(w.terrain_at(Vec2::new(2, 2)), Terrain::Goal);
        assert_eq!(w.terrain_at(Vec2::new(0, 0)), Terrain::Empty);
    }

    #[test]
    fn same_seed_builds_identical_world() {
        let mut c = cfg(2);
        c.initial_tasks = 3;
        c.seed = 99;
        let map = "AABB2\n.....\n..0..\n.....\ng...1\n";
        let w1 = build_world(&c, map).unwrap();
        let w2 = build_world(&c, map).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(w1.tasks().len(), 3);
    }

    #[test]
    fn map_errors_report_position() {
        assert_eq!(build_world(&cfg(1), ""), Err(BuildError::EmptyMap));
        assert_eq!(
            build_world(&cfg(1), "AB.\n..\n"),
            Err(BuildError::UnequalLineLength { line: 2 })
        );
        assert_eq!(
            build_world(&cfg(1), "AB.\n..x\n"),
            Err(BuildError::BadChar {
                line: 2,
                col: 3,
                ch: 'x'
            })
        );
        assert_eq!(
            build_world(&cfg(2), "AB.\n...\n"),
            Err(BuildError::TooFewSpawns {
                team: Team::A,
                have: 1,
                need: 2
            })
        );
    }

    #[test]
    fn unobstructed_move_shifts_east() {
        let mut w = WorldBuilder::new(5, 5).agent(0, Team::A, 1, 1).build();
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Move(Direction::East));
        let (results, events) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert!(events.is_empty());
        assert_eq!(w.entity(AgentId(0)).position, Vec2::new(2, 1));
        assert_eq!(w.step(), 1);
    }

    #[test]
    fn moving_off_edge_fails_path() {
        let mut w = WorldBuilder::new(3, 3).agent(0, Team::A, 0, 1).build();
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Move(Direction::West));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedPath);
        assert_eq!(w.entity(AgentId(0)).position, Vec2::new(0, 1));
    }

    #[test]
    fn two_agents_into_same_cell_both_fail() {
        let mut w = WorldBuilder::new(5, 5)
            .agent(0, Team::A, 1, 2)
            .agent(1, Team::A, 3, 2)
            .build();
        let mut actions = BTreeMap::new();
        actions.insert(AgentId(0), Action::Move(Direction::East));
        actions.insert(AgentId(1), Action::Move(Direction::West));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedPath);
        assert_eq!(results[&AgentId(1)], ActionResult::FailedPath);
        assert_eq!(w.entity(AgentId(0)).position, Vec2::new(1, 2));
        assert_eq!(w.entity(AgentId(1)).position, Vec2::new(3, 2));
    }

    #[test]
    fn swap_is_refused() {
        let mut w = WorldBuilder::new(5, 5)
            .agent(0, Team::A, 1, 1)
            .agent(1, Team::A, 2, 1)
            .build();
        let mut actions = BTreeMap::new();
        actions.insert(AgentId(0), Action::Move(Direction::East));
        actions.insert(AgentId(1), Action::Move(Direction::West));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedPath);
        assert_eq!(results[&AgentId(1)], ActionResult::FailedPath);
    }

    #[test]
    fn rotation_blocked_by_obstacle_in_target_cell() {
        // Block attached east; rotating cw would sweep it to the south cell,
        // which holds an obstacle.
        let mut w = WorldBuilder::new(5, 5)
            .agent(0, Team::A, 2, 2)
            .block(3, 2, BlockType(0))
            .attach_to_agent(0, 0)
            .obstacle(2, 3)
            .build();
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Rotate(Rotation::Cw));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedPath);
        assert_eq!(w.block(BlockId(0)).position, Vec2::new(3, 2));

        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Rotate(Rotation::Ccw));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert_eq!(w.block(BlockId(0)).position, Vec2::new(2, 1));
    }

    #[test]
    fn body_moves_as_unit() {
        let mut w = WorldBuilder::new(6, 6)
            .agent(0, Team::A, 2, 2)
            .block(3, 2, BlockType(0))
            .attach_to_agent(0, 0)
            .build();
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Move(Direction::South));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert_eq!(w.entity(AgentId(0)).position, Vec2::new(2, 3));
        assert_eq!(w.block(BlockId(0)).position, Vec2::new(3, 3));
    }

    #[test]
    fn attach_request_detach_cycle() {
        let mut w = WorldBuilder::new(6, 6)
            .agent(0, Team::A, 2, 2)
            .dispenser(2, 3, BlockType(1))
            .build();
        // Request spawns a block on the dispenser cell.
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Request(Direction::South));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert_eq!(w.blocks().count(), 1);
        // A second request onto the occupied dispenser fails.
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Request(Direction::South));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedTarget);
        // Attach the spawned block, then detach it again.
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Attach(Direction::South));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert_eq!(w.attach_edges().len(), 1);
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Detach(Direction::South));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert!(w.attach_edges().is_empty());
    }

    #[test]
    fn attach_refuses_foreign_bodies() {
        let mut w = WorldBuilder::new(6, 6)
            .agent(0, Team::A, 2, 2)
            .agent(1, Team::B, 4, 2)
            .block(3, 2, BlockType(0))
            .attach_to_agent(1, 0)
            .build();
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Attach(Direction::East));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedTarget);
    }

    #[test]
    fn connect_requires_mutual_consent() {
        let mut w = WorldBuilder::new(8, 8)
            .agent(0, Team::A, 2, 2)
            .agent(1, Team::A, 5, 2)
            .block(3, 2, BlockType(0))
            .block(4, 2, BlockType(1))
            .attach_to_agent(0, 0)
            .attach_to_agent(1, 1)
            .build();
        // One-sided connect fails with failed_partner.
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Connect(AgentId(1), Vec2::new(1, 0)));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedPartner);
        // Mutual connect joins the two blocks.
        let mut actions = BTreeMap::new();
        actions.insert(AgentId(0), Action::Connect(AgentId(1), Vec2::new(1, 0)));
        actions.insert(AgentId(1), Action::Connect(AgentId(0), Vec2::new(-1, 0)));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert_eq!(results[&AgentId(1)], ActionResult::Success);
        let body = w.component(ThingId::Agent(AgentId(0)));
        assert!(body.contains(&ThingId::Agent(AgentId(1))));
        // A merged two-entity body refuses to move.
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Move(Direction::North));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedPath);
    }

    #[test]
    fn submit_scores_and_consumes_task() {
        let task = Task {
            name: "t0".to_string(),
            deadline: 100,
            reward: 10,
            pattern: vec![(Vec2::new(0, 1), BlockType(0))],
        };
        let mut w = WorldBuilder::new(6, 6)
            .agent(0, Team::A, 2, 2)
            .block(2, 3, BlockType(0))
            .attach_to_agent(0, 0)
            .goal(2, 2)
            .task(task.clone())
            .build();
        assert!(w.match_pattern(AgentId(0), &task));
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Submit("t0".to_string()));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::Success);
        assert_eq!(w.score(Team::A), 10);
        assert_eq!(w.score(Team::B), 0);
        assert!(w.tasks().is_empty());
        assert_eq!(w.blocks().count(), 0, "pattern blocks are consumed");
        // Submitting the consumed task again fails.
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Submit("t0".to_string()));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedTarget);
    }

    #[test]
    fn match_pattern_needs_goal_terrain() {
        let task = Task {
            name: "t0".to_string(),
            deadline: 100,
            reward: 10,
            pattern: vec![(Vec2::new(0, 1), BlockType(0))],
        };
        let w = WorldBuilder::new(6, 6)
            .agent(0, Team::A, 2, 2)
            .block(2, 3, BlockType(0))
            .attach_to_agent(0, 0)
            .task(task.clone())
            .build();
        assert!(!w.match_pattern(AgentId(0), &task));
    }

    #[test]
    fn match_pattern_needs_own_rigid_body() {
        let task = Task {
            name: "t0".to_string(),
            deadline: 100,
            reward: 10,
            pattern: vec![(Vec2::new(0, 1), BlockType(0))],
        };
        let w = WorldBuilder::new(6, 6)
            .agent(0, Team::A, 2, 2)
            .block(2, 3, BlockType(0))
            .goal(2, 2)
            .task(task.clone())
            .build();
        // Right type, right cell, but the block is not attached.
        assert!(!w.match_pattern(AgentId(0), &task));
    }

    #[test]
    fn percept_on_empty_map_is_empty() {
        let w = WorldBuilder::new(20, 20).agent(0, Team::A, 10, 10).build();
        let p = w.perceive(AgentId(0));
        assert!(p.things.is_empty());
        assert!(p.terrain.is_empty());
        assert_eq!(p.step, 0);
        assert_eq!(p.last_result, None);
    }

    #[test]
    fn vision_boundary_is_sharp() {
        let w = WorldBuilder::new(30, 30)
            .agent(0, Team::A, 15, 15)
            .agent(1, Team::B, 20, 15) // distance 5 = radius
            .agent(2, Team::B, 15, 21) // distance 6
            .build();
        let p = w.perceive(AgentId(0));
        assert_eq!(
            p.thing_at(Vec2::new(5, 0)),
            Some(&ThingView::Entity {
                team: Team::B,
                attached: false
            })
        );
        assert_eq!(p.thing_at(Vec2::new(0, 6)), None);
    }

    #[test]
    fn attached_flag_hides_the_owner() {
        let w = WorldBuilder::new(20, 20)
            .agent(0, Team::A, 10, 10)
            .agent(1, Team::A, 12, 10)
            .block(12, 9, BlockType(2))
            .attach_to_agent(1, 0)
            .build();
        let p = w.perceive(AgentId(0));
        assert_eq!(
            p.thing_at(Vec2::new(2, 0)),
            Some(&ThingView::Entity {
                team: Team::A,
                attached: true
            })
        );
        assert_eq!(
            p.thing_at(Vec2::new(2, -1)),
            Some(&ThingView::Block {
                block_type: BlockType(2),
                attached: true
            })
        );
    }

    #[test]
    fn out_of_bounds_reads_as_obstacle() {
        let w = WorldBuilder::new(8, 8).agent(0, Team::A, 0, 0).build();
        let p = w.perceive(AgentId(0));
        assert_eq!(p.terrain_at(Vec2::new(-1, 0)), Terrain::Obstacle);
        assert_eq!(p.terrain_at(Vec2::new(0, -1)), Terrain::Obstacle);
        assert_eq!(p.terrain_at(Vec2::new(1, 0)), Terrain::Empty);
    }

    #[test]
    fn disabled_agents_fail_their_actions() {
        let mut w = WorldBuilder::new(8, 8)
            .agent(0, Team::A, 2, 2)
            .config(WorldConfig {
                p_clear: 1.0,
                clear_radius: 8,
                clear_obstacle_prob: 0.0,
                task_interval: 0,
                initial_tasks: 0,
                ..WorldConfig::default()
            })
            .build();
        let (_, events) = w.resolve_step(&skip_all(&w)).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].step, 0);
        assert!(w.entity(AgentId(0)).disabled_until > w.step());
        let mut actions = skip_all(&w);
        actions.insert(AgentId(0), Action::Move(Direction::East));
        let (results, _) = w.resolve_step(&actions).unwrap();
        assert_eq!(results[&AgentId(0)], ActionResult::FailedDisabled);
        assert_eq!(w.entity(AgentId(0)).position, Vec2::new(2, 2));
    }

    #[test]
    fn missing_and_unknown_actions_are_contract_violations() {
        let mut w = WorldBuilder::new(5, 5).agent(0, Team::A, 1, 1).build();
        let err = w.resolve_step(&BTreeMap::new()).unwrap_err();
        assert_eq!(err, ContractViolation::MissingAction(AgentId(0)));
        let mut actions = skip_all(&w);
        actions.insert(AgentId(9), Action::Skip);
        let err = w.resolve_step(&actions).unwrap_err();
        assert_eq!(err, ContractViolation::UnknownAgent(AgentId(9)));
    }

    #[test]
    fn periodic_tasks_appear_and_expire() {
        let mut c = cfg(1);
        c.task_interval = 2;
        c.task_deadline = 3;
        c.initial_tasks = 0;
        let mut w = build_world(&c, "A.\nB.\n").unwrap();
        assert!(w.tasks().is_empty());
        w.resolve_step(&skip_all(&w)).unwrap();
        assert!(w.tasks().is_empty());
        w.resolve_step(&skip_all(&w)).unwrap();
        assert_eq!(w.tasks().len(), 1, "a task appears at step 2");
        assert_eq!(w.tasks()[0].deadline, 2 + 3);
        for _ in 0..4 {
            w.resolve_step(&skip_all(&w)).unwrap();
        }
        // The step-2 task expired after its deadline; the step-4 task kept.
        assert!(w.tasks().iter().all(|t| t.deadline >= w.step()));
    }
}

/// Test and scenario constructor: assemble an arbitrary valid world without
/// going through the map format or the task generator.
#[derive(Clone, Debug)]
pub struct WorldBuilder {
    width: i32,
    height: i32,
    cfg: WorldConfig,
    terrain: Vec<(Vec2, Terrain)>,
    dispensers: Vec<(Vec2, BlockType)>,
    agents: Vec<(AgentId, Team, Vec2)>,
    blocks: Vec<(Vec2, BlockType)>,
    edges: Vec<(ThingId, ThingId)>,
    tasks: Vec<Task>,
}

impl WorldBuilder {
    pub fn new(width: i32, height: i32) -> Self {
        WorldBuilder {
            width,
            height,
            cfg: WorldConfig {
                p_clear: 0.0,
                task_interval: 0,
                initial_tasks: 0,
                ..WorldConfig::default()
            },
            terrain: Vec::new(),
            dispensers: Vec::new(),
            agents: Vec::new(),
            blocks: Vec::new(),
            edges: Vec::new(),
            tasks: Vec::new(),
        }
    }

    pub fn config(mut self, cfg: WorldConfig) -> Self {
        self.cfg = cfg;
        self
    }

    pub fn terrain(mut self, pos: Vec2, t: Terrain) -> Self {
        self.terrain.push((pos, t));
        self
    }

    pub fn obstacle(self, x: i32, y: i32) -> Self {
        self.terrain(Vec2::new(x, y), Terrain::Obstacle)
    }

    pub fn goal(self, x: i32, y: i32) -> Self {
        self.terrain(Vec2::new(x, y), Terrain::Goal)
    }

    pub fn dispenser(mut self, x: i32, y: i32, t: BlockType) -> Self {
        self.dispensers.push((Vec2::new(x, y), t));
        self
    }

    pub fn agent(mut self, id: u16, team: Team, x: i32, y: i32) -> Self {
        self.agents.push((AgentId(id), team, Vec2::new(x, y)));
        self
    }

    /// Place a block; its id is the insertion index.
    pub fn block(mut self, x: i32, y: i32, t: BlockType) -> Self {
        self.blocks.push((Vec2::new(x, y), t));
        self
    }

    pub fn edge(mut self, a: ThingId, b: ThingId) -> Self {
        self.edges.push((a, b));
        self
    }

    pub fn attach_to_agent(self, agent: u16, block: u32) -> Self {
        self.edge(ThingId::Agent(AgentId(agent)), ThingId::Block(BlockId(block)))
    }

    pub fn task(mut self, task: Task) -> Self {
        self.tasks.push(task);
        self
    }

    pub fn build(self) -> GridState {
        let mut terrain = Vec::new();
        terrain.resize((self.width * self.height) as usize, Terrain::Empty);
        for (pos, t) in &self.terrain {
            terrain[(pos.y * self.width + pos.x) as usize] = *t;
        }
        let mut entities = BTreeMap::new();
        let mut occupancy = BTreeMap::new();
        let mut spawns = BTreeMap::new();
        for (id, team, pos) in &self.agents {
            entities.insert(
                *id,
                Entity {
                    id: *id,
                    team: *team,
                    position: *pos,
                    disabled_until: 0,
                },
            );
            let prev = occupancy.insert(*pos, ThingId::Agent(*id));
            assert!(prev.is_none(), "two things share cell {pos}");
            spawns.insert(*id, *pos);
        }
        let mut blocks = BTreeMap::new();
        for (i, (pos, t)) in self.blocks.iter().enumerate() {
            let id = BlockId(i as u32);
            blocks.insert(
                id,
                Block {
                    id,
                    position: *pos,
                    block_type: *t,
                },
            );
            let prev = occupancy.insert(*pos, ThingId::Block(id));
            assert!(prev.is_none(), "two things share cell {pos}");
        }
        let mut state = GridState {
            width: self.width,
            height: self.height,
            terrain,
            entities,
            blocks,
            dispensers: self.dispensers.into_iter().collect(),
            attach: BTreeMap::new(),
            occupancy,
            tasks: self.tasks,
            step: 0,
            scores: [0, 0],
            last_results: BTreeMap::new(),
            spawns,
            next_block: self.blocks.len() as u32,
            next_task: 0,
            cfg: self.cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.cfg.seed),
        };
        for (a, b) in self.edges {
            assert_eq!(
                state.thing_position(a).dist(state.thing_position(b)),
                1,
                "attach edges must connect 4-adjacent things"
            );
            state.add_edge(a, b);
        }
        state
    }
}
