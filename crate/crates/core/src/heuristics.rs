//! The five movement evaluation functions and direction selection with
//! step-seeded deterministic tie-breaking.
//!
//! Scores are exact rationals: every term is an integer or a small integer
//! divided by a squared step count, and direction ties must be detected by
//! exact equality for replays to be bit-stable across platforms.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::beliefs::VisitedEntry;
use crate::grid::{BlockType, Direction, Vec2};

/// Exact heuristic value.
pub type Score = BigRational;

fn int(n: i64) -> Score {
    BigRational::from_integer(BigInt::from(n))
}

fn ratio(num: i64, den: i64) -> Score {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Visited entries farther than this from the post-move position stop
/// contributing to exploration scores.
pub const EXPLORATION_CUTOFF: u32 = 30;

/// Everything the evaluation functions may look at. All positions are in
/// the agent's own frame; shifting every one of them by the same vector
/// leaves all values unchanged.
#[derive(Clone, Debug, Default)]
pub struct HeuristicContext {
    pub self_pos: Vec2,
    pub current_step: u32,
    pub visited: Vec<VisitedEntry>,
    /// Obstacles currently in vision.
    pub visible_obstacles: Vec<Vec2>,
    /// Positions to move away from (goal cells, nearby teammates), each with
    /// its repulsion weight.
    pub avoid: Vec<(Vec2, u32)>,
    /// Where the go-to variant is headed.
    pub target: Option<Vec2>,
    /// Pattern cells still to be provided by others, relative to the
    /// agent's final position in the plan.
    pub pattern_remainder: Vec<(Vec2, BlockType)>,
    /// Visible blocks not attached to this agent.
    pub candidate_blocks: Vec<(Vec2, BlockType)>,
    /// Visits per cell since the last clearing trigger.
    pub visit_counts: BTreeMap<Vec2, u32>,
    /// Sentinel added per pattern cell when no candidate of its type is
    /// visible; two grid perimeters, so any visible candidate wins.
    pub no_candidate_penalty: u32,
    /// Score the avoid set against the current position instead of the
    /// post-move position. With this flag the avoid term is constant across
    /// directions; it exists for comparison runs only.
    pub legacy_avoid_from_current: bool,
}

impl HeuristicContext {
    fn post(&self, d: Direction) -> Vec2 {
        self.self_pos + d.unit()
    }

    fn visit_count(&self, pos: Vec2) -> u32 {
        self.visit_counts.get(&pos).copied().unwrap_or(0)
    }
}

/// Which evaluation function drives the movement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HeuristicKind {
    Exploration,
    SafeExploration,
    GoTo,
    TaskPattern,
    Detach,
}

impl HeuristicKind {
    pub fn sense(self) -> Sense {
        match self {
            HeuristicKind::Exploration | HeuristicKind::SafeExploration | HeuristicKind::Detach => {
                Sense::HigherBetter
            }
            HeuristicKind::GoTo | HeuristicKind::TaskPattern => Sense::LowerBetter,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeuristicKind::Exploration => "exploration",
            HeuristicKind::SafeExploration => "safe_exploration",
            HeuristicKind::GoTo => "go_to",
            HeuristicKind::TaskPattern => "task_pattern",
            HeuristicKind::Detach => "detach",
        }
    }
}

/// Whether a higher or a lower value wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    HigherBetter,
    LowerBetter,
}

/// A scored direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionScore {
    pub direction: Direction,
    pub value: Score,
    pub sense: Sense,
}

/// Exploration: recently visited positions near the post-move cell push the
/// agent away; each entry contributes its distance divided by the squared
/// age of the visit, cut off beyond [`EXPLORATION_CUTOFF`].
pub fn h_exploration(ctx: &HeuristicContext, d: Direction) -> Score {
    let post = ctx.post(d);
    let mut sum = Score::zero();
    for entry in &ctx.visited {
        let dist = entry.pos.dist(post);
        if dist > EXPLORATION_CUTOFF || entry.step >= ctx.current_step {
            continue;
        }
        let age = (ctx.current_step - entry.step) as i64;
        if dist == 0 {
            continue;
        }
        sum += ratio(dist as i64, age * age);
    }
    sum
}

/// Safe exploration: exploration plus weighted distance to every position in
/// the avoid set, measured from the post-move cell.
pub fn h_safe_exploration(ctx: &HeuristicContext, d: Direction) -> Score {
    let reference = if ctx.legacy_avoid_from_current {
        ctx.self_pos
    } else {
        ctx.post(d)
    };
    let mut sum = h_exploration(ctx, d);
    for (pos, weight) in &ctx.avoid {
        let rel = *pos - reference;
        sum += int(*weight as i64 * rel.manhattan() as i64);
    }
    sum
}

/// Go to: distance from the post-move cell to the target plus the recent
/// visit count of the post-move cell. Lower is better.
pub fn h_goto(ctx: &HeuristicContext, d: Direction) -> Score {
    let target = ctx.target.expect("go-to heuristic needs a target");
    let post = ctx.post(d);
    int(target.dist(post) as i64 + ctx.visit_count(post) as i64)
}

/// Task pattern: the recent visit count of the post-move cell plus, for each
/// pattern cell still missing, the distance from the nearest visible
/// candidate block of its type to where that cell would sit if the agent
/// stood at the post-move position. Lower is better.
pub fn h_task_pattern(ctx: &HeuristicContext, d: Direction) -> Score {
    let post = ctx.post(d);
    let mut sum = int(ctx.visit_count(post) as i64);
    for (off, required) in &ctx.pattern_remainder {
        let target_cell = post + *off;
        let best = ctx
            .candidate_blocks
            .iter()
            .filter(|(_, t)| t == required)
            .map(|(pos, _)| pos.dist(target_cell))
            .min();
        sum += int(best.unwrap_or(ctx.no_candidate_penalty) as i64);
    }
    sum
}

/// Detach: exploration plus the summed distance to every visible obstacle
/// from the post-move cell, pushing toward open space.
pub fn h_detach(ctx: &HeuristicContext, d: Direction) -> Score {
    let post = ctx.post(d);
    let mut sum = h_exploration(ctx, d);
    for obstacle in &ctx.visible_obstacles {
        sum += int(obstacle.dist(post) as i64);
    }
    sum
}

/// Evaluate one direction under one variant.
pub fn evaluate(ctx: &HeuristicContext, kind: HeuristicKind, d: Direction) -> DirectionScore {
    let value = match kind {
        HeuristicKind::Exploration => h_exploration(ctx, d),
        HeuristicKind::SafeExploration => h_safe_exploration(ctx, d),
        HeuristicKind::GoTo => h_goto(ctx, d),
        HeuristicKind::TaskPattern => h_task_pattern(ctx, d),
        HeuristicKind::Detach => h_detach(ctx, d),
    };
    DirectionScore {
        direction: d,
        value,
        sense: kind.sense(),
    }
}

/// Score all unblocked directions and pick the optimum; exact ties are
/// broken pseudo-randomly by indexing the tied set, ordered N, E, S, W,
/// with the current step.
pub fn select_direction(
    ctx: &HeuristicContext,
    kind: HeuristicKind,
    blocked: &BTreeSet<Direction>,
) -> Option<Direction> {
    let mut best: Vec<DirectionScore> = Vec::new();
    for d in Direction::ALL {
        if blocked.contains(&d) {
            continue;
        }
        let score = evaluate(ctx, kind, d);
        match best.first() {
            None => best.push(score),
            Some(incumbent) => {
                let better = match kind.sense() {
                    Sense::HigherBetter => score.value > incumbent.value,
                    Sense::LowerBetter => score.value < incumbent.value,
                };
                if better {
                    best.clear();
                    best.push(score);
                } else if score.value == incumbent.value {
                    best.push(score);
                }
            }
        }
    }
    if best.is_empty() {
        return None;
    }
    let idx = ctx.current_step as usize % best.len();
    Some(best[idx].direction)
}
