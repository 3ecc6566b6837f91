//! Match orchestration: the per-step barrier loop (mailbox delivery,
//! percepts, belief updates, decisions, world resolution), statistics
//! accumulation and the replay record stream. Deterministic in the match
//! configuration alone; all file IO lives in the companion crate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::AgentShell;
use crate::comms::{Mailbox, Message, Recipient};
use crate::controller::StrategyParams;
use crate::grid::{AgentId, Team, Vec2};
use crate::world::{
    build_world, Action, ActionResult, BuildError, ContractViolation, GridState, Percept,
    WorldConfig,
};

/// Team B's behaviour: sit idle, or run the same strategy as team A.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Opponent {
    #[default]
    Idle,
    Mirror,
}

/// Where the map comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum MapSource {
    Text(String),
    Generate(MapGenConfig),
}

/// Parameters of the seeded map generator.
#[derive(Clone, Debug, PartialEq)]
pub struct MapGenConfig {
    pub width: u32,
    pub height: u32,
    pub obstacle_density: f64,
    /// Manhattan radius of the single goal area.
    pub goal_radius: u32,
    pub dispenser_count: u32,
    /// Dispenser types cycle through `b0..b<block_types>`.
    pub block_types: u8,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            width: 32,
            height: 32,
            obstacle_density: 0.08,
            goal_radius: 1,
            dispenser_count: 4,
            block_types: 2,
        }
    }
}

/// Full configuration of one match.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    pub steps: u32,
    pub world: WorldConfig,
    pub map: MapSource,
    /// Minimum deadline margin before the planner commits to a task.
    pub min_steps: u32,
    pub detach_distance: u32,
    pub weight_teammate: u32,
    pub weight_goal: u32,
    pub legacy_safe_exploration: bool,
    pub opponent: Opponent,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            steps: 500,
            world: WorldConfig::default(),
            map: MapSource::Generate(MapGenConfig::default()),
            min_steps: 80,
            detach_distance: 3,
            weight_teammate: 5,
            weight_goal: 1,
            legacy_safe_exploration: false,
            opponent: Opponent::Idle,
        }
    }
}

/// One sampled row of the match statistics, reflecting the world after the
/// step resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StatsRow {
    pub step: u32,
    pub score: [u32; 2],
    /// Cumulative successful attach and request actions.
    pub attached: [u32; 2],
    /// Cumulative submit actions issued, successful or not.
    pub submits: [u32; 2],
    /// Cumulative successful submits.
    pub tasks: [u32; 2],
    /// Cumulative clear events.
    pub clear_events: u32,
}

/// Per-step series of the match metrics; row 0 is the pre-match state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub rows: Vec<StatsRow>,
}

impl MatchStats {
    pub fn final_row(&self) -> StatsRow {
        *self.rows.last().expect("stats always hold row 0")
    }
}

/// One replay record. Records are appended in step order; within a step,
/// message digests come first, then one decision per agent in ascending id,
/// then clear events.
#[derive(Clone, Debug, PartialEq)]
pub enum ReplayRecord {
    Message {
        step: u32,
        sender: AgentId,
        recipient: Recipient,
        kind: &'static str,
    },
    Decision {
        step: u32,
        agent: AgentId,
        rule: String,
        action: Action,
        result: ActionResult,
    },
    Clear {
        step: u32,
        center: Vec2,
        radius: u32,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayLog {
    pub records: Vec<ReplayRecord>,
}

impl ReplayLog {
    /// The per-step action script, for feeding a replay back through the
    /// world.
    pub fn action_script(&self) -> BTreeMap<u32, BTreeMap<AgentId, Action>> {
        let mut script: BTreeMap<u32, BTreeMap<AgentId, Action>> = BTreeMap::new();
        for r in &self.records {
            if let ReplayRecord::Decision {
                step,
                agent,
                action,
                ..
            } = r
            {
                script.entry(*step).or_default().insert(*agent, action.clone());
            }
        }
        script
    }
}

/// Anything that can end a match before it completes.
#[derive(Clone, Debug, PartialEq)]
pub enum MatchError {
    Build(BuildError),
    Contract { step: u32, violation: ContractViolation },
}

impl fmt::Display for MatchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchError::Build(e) => write!(f, "{e}"),
            MatchError::Contract { step, violation } => {
                write!(f, "contract violation at step {step}: {violation}")
            }
        }
    }
}

impl core::error::Error for MatchError {}

impl From<BuildError> for MatchError {
    fn from(e: BuildError) -> Self {
        MatchError::Build(e)
    }
}

/// A running match. Tests drive it step by step to inspect world and
/// beliefs between barriers; [`run_match`] drives it to completion.
#[derive(Clone, Debug)]
pub struct Match {
    pub world: GridState,
    shells: BTreeMap<AgentId, AgentShell>,
    mailbox: Mailbox,
    roster: Vec<(AgentId, Team)>,
    stats: MatchStats,
    replay: ReplayLog,
    steps: u32,
    /// Inboxes delivered at the last barrier, kept for inspection.
    pub last_delivery: Vec<Message>,
}

impl Match {
    pub fn new(cfg: &MatchConfig) -> Result<Match, BuildError> {
        let map_text = match &cfg.map {
            MapSource::Text(text) => text.clone(),
            MapSource::Generate(gen) => {
                generate_map(gen, cfg.world.agents_per_team, cfg.world.seed)
            }
        };
        let world = build_world(&cfg.world, &map_text)?;
        let params = StrategyParams {
            detach_distance: cfg.detach_distance,
            weight_teammate: cfg.weight_teammate,
            weight_goal: cfg.weight_goal,
            no_candidate_penalty: 2 * (world.width() + world.height()) as u32,
            legacy_safe_exploration: cfg.legacy_safe_exploration,
        };
        let roster: Vec<(AgentId, Team)> = world
            .entities()
            .map(|e| (e.id, e.team))
            .collect();
        let mut shells = BTreeMap::new();
        for team in Team::BOTH {
            if team == Team::B && cfg.opponent == Opponent::Idle {
                continue;
            }
            let members: Vec<AgentId> = roster
                .iter()
                .filter(|(_, t)| *t == team)
                .map(|(id, _)| *id)
                .collect();
            let planning_agent = *members.first().expect("team has members");
            for id in members {
                shells.insert(
                    id,
                    AgentShell::new(id, team, planning_agent, cfg.min_steps, params.clone()),
                );
            }
        }
        let mut stats = MatchStats::default();
        stats.rows.push(StatsRow::default());
        Ok(Match {
            world,
            shells,
            mailbox: Mailbox::new(),
            roster,
            stats,
            replay: ReplayLog::default(),
            steps: cfg.steps,
            last_delivery: Vec::new(),
        })
    }

    pub fn shells(&self) -> impl Iterator<Item = &AgentShell> {
        self.shells.values()
    }

    pub fn shell(&self, id: AgentId) -> Option<&AgentShell> {
        self.shells.get(&id)
    }

    pub fn stats(&self) -> &MatchStats {
        &self.stats
    }

    pub fn replay(&self) -> &ReplayLog {
        &self.replay
    }

    pub fn done(&self) -> bool {
        self.world.step() >= self.steps
    }

    /// Run one barrier: deliver mail, perceive, update beliefs, decide,
    /// resolve, record.
    pub fn step_once(&mut self) -> Result<(), MatchError> {
        let step = self.world.step();
        let delivery = self.mailbox.advance(&self.roster, step);
        for m in &delivery.delivered {
            debug_assert_eq!(m.sent_step + 1, step, "mailbox delay invariant");
            self.replay.records.push(ReplayRecord::Message {
                step,
                sender: m.sender,
                recipient: m.recipient,
                kind: m.body.kind(),
            });
        }
        self.last_delivery = delivery.delivered;

        let mut percepts: BTreeMap<AgentId, Percept> = BTreeMap::new();
        for (id, _) in &self.roster {
            percepts.insert(*id, self.world.perceive(*id));
        }

        let empty: Vec<Message> = Vec::new();
        for (id, shell) in self.shells.iter_mut() {
            let inbox = delivery.inboxes.get(id).unwrap_or(&empty);
            shell.observe(&percepts[id], inbox, &mut self.mailbox, step);
        }

        let mut actions: BTreeMap<AgentId, Action> = BTreeMap::new();
        let mut traces: BTreeMap<AgentId, (String, Action)> = BTreeMap::new();
        for (id, _) in &self.roster {
            match self.shells.get_mut(id) {
                Some(shell) => {
                    let (action, trace) =
                        shell.decide_action(&percepts[id], &mut self.mailbox, step);
                    traces.insert(*id, (String::from(trace.rule), action.clone()));
                    actions.insert(*id, action);
                }
                None => {
                    traces.insert(*id, (String::from("idle"), Action::Skip));
                    actions.insert(*id, Action::Skip);
                }
            }
        }

        let (results, events) = self
            .world
            .resolve_step(&actions)
            .map_err(|violation| MatchError::Contract { step, violation })?;

        let mut row = self.stats.final_row();
        row.step = self.world.step();
        for team in Team::BOTH {
            row.score[team.index()] = self.world.score(team);
        }
        for (id, team) in &self.roster {
            let result = results[id];
            match &actions[id] {
                Action::Attach(_) | Action::Request(_) if result == ActionResult::Success => {
                    row.attached[team.index()] += 1;
                }
                Action::Submit(_) => {
                    row.submits[team.index()] += 1;
                    if result == ActionResult::Success {
                        row.tasks[team.index()] += 1;
                    }
                }
                _ => {}
            }
        }
        row.clear_events += events.len() as u32;
        self.stats.rows.push(row);

        for (id, _) in &self.roster {
            let (rule, action) = traces[id].clone();
            self.replay.records.push(ReplayRecord::Decision {
                step,
                agent: *id,
                rule,
                action,
                result: results[id],
            });
        }
        for e in &events {
            self.replay.records.push(ReplayRecord::Clear {
                step: e.step,
                center: e.center,
                radius: e.radius,
            });
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<(MatchStats, ReplayLog), MatchError> {
        while !self.done() {
            self.step_once()?;
        }
        Ok((self.stats, self.replay))
    }
}

/// Run a full match from a configuration.
pub fn run_match(cfg: &MatchConfig) -> Result<(MatchStats, ReplayLog), MatchError> {
    Match::new(cfg)?.run()
}

/// Generate a map deterministically from the seed: one goal area, a few
/// dispensers, spawn rows for both teams, then obstacle sprinkle.
pub fn generate_map(gen: &MapGenConfig, agents_per_team: u16, seed: u64) -> String {
    let w = gen.width as usize;
    let h = gen.height as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_7067_656e);
    let mut grid = alloc::vec![alloc::vec!['.'; w]; h];

    let free_cells = |grid: &Vec<Vec<char>>| -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for (y, row) in grid.iter().enumerate() {
            for (x, c) in row.iter().enumerate() {
                if *c == '.' {
                    cells.push((x, y));
                }
            }
        }
        cells
    };

    // Goal area somewhere away from the border.
    let r = gen.goal_radius as i64;
    let gx = rng.gen_range(r..w as i64 - r) as i64;
    let gy = rng.gen_range(r..h as i64 - r) as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx.abs() + dy.abs() <= r {
                let (x, y) = ((gx + dx) as usize, (gy + dy) as usize);
                grid[y][x] = 'g';
            }
        }
    }

    for i in 0..gen.dispenser_count {
        let cells = free_cells(&grid);
        if cells.is_empty() {
            break;
        }
        let (x, y) = cells[rng.gen_range(0..cells.len())];
        let t = (i as u8 % gen.block_types.max(1)).min(4);
        grid[y][x] = char::from(b'0' + t);
    }

    for team in ['A', 'B'] {
        for _ in 0..agents_per_team {
            let cells = free_cells(&grid);
            let (x, y) = cells[rng.gen_range(0..cells.len())];
            grid[y][x] = team;
        }
    }

    for y in 0..h {
        for x in 0..w {
            if grid[y][x] == '.' && rng.gen_bool(gen.obstacle_density) {
                grid[y][x] = '#';
            }
        }
    }

    let mut out = String::new();
    for row in &grid {
        for c in row {
            out.push(*c);
        }
        out.push('\n');
    }
    out
}

/// Render an action in the replay grammar; the inverse of
/// [`parse_action`].
pub fn format_action(a: &Action) -> String {
    format!("{a}")
}

/// Parse an action from the replay grammar.
pub fn parse_action(s: &str) -> Option<Action> {
    use crate::grid::{Direction, Rotation};
    if s == "skip" {
        return Some(Action::Skip);
    }
    let (head, rest) = s.split_once('(')?;
    let args = rest.strip_suffix(')')?;
    match head {
        "move" => Some(Action::Move(Direction::from_letter(args.chars().next()?)?)),
        "rotate" => match args {
            "cw" => Some(Action::Rotate(Rotation::Cw)),
            "ccw" => Some(Action::Rotate(Rotation::Ccw)),
            _ => None,
        },
        "attach" => Some(Action::Attach(Direction::from_letter(args.chars().next()?)?)),
        "detach" => Some(Action::Detach(Direction::from_letter(args.chars().next()?)?)),
        "request" => Some(Action::Request(Direction::from_letter(args.chars().next()?)?)),
        "connect" => {
            let mut parts = args.split(',');
            let partner: u16 = parts.next()?.parse().ok()?;
            let x: i32 = parts.next()?.parse().ok()?;
            let y: i32 = parts.next()?.parse().ok()?;
            if parts.next().is_some() {
                return None;
            }
            Some(Action::Connect(AgentId(partner), Vec2::new(x, y)))
        }
        "submit" => Some(Action::Submit(String::from(args))),
        _ => None,
    }
}
