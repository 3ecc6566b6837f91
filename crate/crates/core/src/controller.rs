//! Per-agent decision function: an ordered rule list over beliefs, the
//! current percept and the plan execution state. The first applicable rule
//! yields the action; skip is always applicable, so the function is total.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::beliefs::BeliefBase;
use crate::grid::{BlockType, Direction, Rotation, Terrain, Vec2};
use crate::heuristics::{select_direction, HeuristicContext, HeuristicKind};
use crate::planner::Assignment;
use crate::world::{Action, Percept, ThingView};

/// Strategy knobs shared by every agent of a team.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyParams {
    /// Minimum Manhattan distance from a drop cell to every known goal cell
    /// and visible obstacle before detaching is considered safe.
    pub detach_distance: u32,
    /// Avoid-set weight for nearby teammates in safe exploration.
    pub weight_teammate: u32,
    /// Avoid-set weight for known goal cells in safe exploration.
    pub weight_goal: u32,
    /// Sentinel for pattern cells with no visible candidate block.
    pub no_candidate_penalty: u32,
    /// Score the safe-exploration avoid set from the current position
    /// instead of the post-move position (comparison mode).
    pub legacy_safe_exploration: bool,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            detach_distance: 3,
            weight_teammate: 5,
            weight_goal: 1,
            no_candidate_penalty: 2 * (32 + 32),
            legacy_safe_exploration: false,
        }
    }
}

/// Mutable plan-execution bookkeeping owned by the agent shell; `decide`
/// only reads it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecState {
    /// Next entry of the own connect schedule.
    pub connect_cursor: usize,
    /// Index into the discovery-ordered goal list for methodical visiting.
    pub goal_cycle: usize,
    /// The shape-mismatch abort was already announced for this plan.
    pub mismatch_reported: bool,
    /// The own-disablement abort was already announced for this plan.
    pub disabled_reported: bool,
}

/// Record of which rule fired and what it chose.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTrace {
    pub step: u32,
    pub rule: &'static str,
    pub action: Action,
    pub heuristic: Option<HeuristicKind>,
}

/// How the current attachments relate to the plan's rotation target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RotationGoal {
    Aligned,
    Turn(Rotation),
    Mismatch,
}

/// The rotation bringing `attachments` onto `target`, if any, preferring
/// fewer quarter turns and clockwise on the two-turn tie.
pub fn rotation_needed(
    attachments: &BTreeSet<(Vec2, BlockType)>,
    target: &[(Vec2, BlockType)],
) -> RotationGoal {
    let target_set: BTreeSet<(Vec2, BlockType)> = target.iter().copied().collect();
    let rotated = |turns: u32| -> BTreeSet<(Vec2, BlockType)> {
        attachments
            .iter()
            .map(|(o, t)| (o.rotated_cw(turns), *t))
            .collect()
    };
    if *attachments == target_set {
        return RotationGoal::Aligned;
    }
    if rotated(1) == target_set || rotated(2) == target_set {
        return RotationGoal::Turn(Rotation::Cw);
    }
    if rotated(3) == target_set {
        return RotationGoal::Turn(Rotation::Ccw);
    }
    RotationGoal::Mismatch
}

/// True when dropping the block in `dir` leaves it at least
/// `detach_distance` away from every known goal cell and every visible
/// obstacle; the boundary is inclusive.
pub fn safe_detach(b: &BeliefBase, dir: Direction, detach_distance: u32) -> bool {
    let drop_rel = dir.unit();
    let drop_frame = b.self_pos + drop_rel;
    b.goal_cells.iter().all(|g| g.dist(drop_frame) >= detach_distance)
        && b.seen_obstacles.iter().all(|o| o.dist(drop_rel) >= detach_distance)
}

/// The decision function. `inbox` handling happens before this is called;
/// beliefs and exec state already reflect it.
pub fn decide(
    b: &BeliefBase,
    p: &Percept,
    exec: &ExecState,
    params: &StrategyParams,
) -> (Action, DecisionTrace) {
    Decider {
        b,
        p,
        exec,
        params,
    }
    .run()
}

struct Decider<'a> {
    b: &'a BeliefBase,
    p: &'a Percept,
    exec: &'a ExecState,
    params: &'a StrategyParams,
}

impl<'a> Decider<'a> {
    fn run(self) -> (Action, DecisionTrace) {
        let (rule, action, heuristic) = match self.b.active_plan.as_ref().and_then(|plan| {
            plan.assignments
                .get(&self.b.owner)
                .map(|a| (plan, a))
        }) {
            Some((plan, assignment)) => self.assigned_rules(plan, assignment),
            None => self.unassigned_rules(),
        };
        let trace = DecisionTrace {
            step: self.p.step,
            rule,
            action: action.clone(),
            heuristic,
        };
        (action, trace)
    }

    // ---------------------------------------------------------------
    // shared helpers
    // ---------------------------------------------------------------

    /// Directions whose move is visibly impossible right now: a cell the
    /// body would newly occupy is an obstacle (the map edge reads as one)
    /// or holds a thing. Cells outside vision count as free.
    fn blocked_moves(&self) -> BTreeSet<Direction> {
        let body: Vec<Vec2> = [Vec2::ZERO]
            .into_iter()
            .chain(self.b.attachments.iter().map(|(o, _)| *o))
            .collect();
        let mut blocked = BTreeSet::new();
        for d in Direction::ALL {
            let gained = body
                .iter()
                .map(|c| *c + d.unit())
                .filter(|c| !body.contains(c));
            for cell in gained {
                if self.p.terrain_at(cell) == Terrain::Obstacle || self.p.thing_at(cell).is_some()
                {
                    blocked.insert(d);
                    break;
                }
            }
        }
        blocked
    }

    /// Predict whether a rotation is currently free: every cell a block
    /// would sweep into must be empty or vacated by the body itself.
    fn rotation_free(&self, rot: Rotation) -> bool {
        let current: BTreeSet<Vec2> = self.b.attachments.iter().map(|(o, _)| *o).collect();
        current.iter().all(|o| {
            let dest = o.rotated(rot);
            current.contains(&dest)
                || (self.p.terrain_at(dest) != Terrain::Obstacle
                    && self.p.thing_at(dest).is_none())
        })
    }

    fn heuristic_ctx(&self) -> HeuristicContext {
        HeuristicContext {
            self_pos: self.b.self_pos,
            current_step: self.p.step,
            visited: self.b.visited.clone(),
            visible_obstacles: self
                .b
                .seen_obstacles
                .iter()
                .map(|o| self.b.self_pos + *o)
                .collect(),
            avoid: Vec::new(),
            target: None,
            pattern_remainder: Vec::new(),
            candidate_blocks: Vec::new(),
            visit_counts: self.b.visit_counts(),
            no_candidate_penalty: self.params.no_candidate_penalty,
            legacy_avoid_from_current: self.params.legacy_safe_exploration,
        }
    }

    fn move_by(
        &self,
        rule: &'static str,
        kind: HeuristicKind,
        ctx: &HeuristicContext,
    ) -> (&'static str, Action, Option<HeuristicKind>) {
        match select_direction(ctx, kind, &self.blocked_moves()) {
            Some(d) => (rule, Action::Move(d), Some(kind)),
            None => (rule, Action::Skip, Some(kind)),
        }
    }

    /// Believed frame position of the submitting agent, when known.
    fn submitter_anchor(&self, plan: &crate::planner::TaskPlan) -> Option<Vec2> {
        if plan.submit_agent == self.b.owner {
            Some(self.b.self_pos)
        } else {
            self.b.teammates.get(&plan.submit_agent).copied()
        }
    }

    /// A correctly typed block sits at the pattern cell, per percept.
    fn pattern_cell_filled(&self, anchor: Vec2, cell: Vec2, required: BlockType) -> bool {
        let off = anchor + cell - self.b.self_pos;
        self.p.in_vision(off)
            && matches!(self.p.block_at(off), Some((t, _)) if t == required)
    }

    /// All of the own sub-pattern cells hold the own attachments.
    fn own_part_placed(&self, anchor: Vec2, assignment: &Assignment) -> bool {
        assignment.sub_pattern.iter().all(|(cell, t)| {
            let off = anchor + *cell - self.b.self_pos;
            self.b.attachments.contains(&(off, *t))
        })
    }

    // ---------------------------------------------------------------
    // assigned agent
    // ---------------------------------------------------------------

    fn assigned_rules(
        &self,
        plan: &crate::planner::TaskPlan,
        assignment: &Assignment,
    ) -> (&'static str, Action, Option<HeuristicKind>) {
        let is_submitter = plan.submit_agent == self.b.owner;

        // Rule 1: shed blocks the plan does not need, somewhere harmless.
        let alignment = alignment_analysis(&self.b.attachments, &assignment.target_attachments);
        if let Some(surplus) = alignment.surplus_dirs.first() {
            if safe_detach(self.b, *surplus, self.params.detach_distance) {
                return ("detach_unneeded", Action::Detach(*surplus), None);
            }
            let ctx = self.heuristic_ctx();
            return self.move_by("detach_unneeded", HeuristicKind::Detach, &ctx);
        }

        // Rule 2: rotate the kept blocks into the planned arrangement.
        match alignment.rotation {
            RotationGoal::Mismatch => {
                // The shell notices this trace and announces the abort.
                return ("plan_mismatch", Action::Skip, None);
            }
            RotationGoal::Turn(rot) => {
                if self.rotation_free(rot) {
                    return ("rotate_align", Action::Rotate(rot), None);
                }
                let ctx = self.heuristic_ctx();
                return self.move_by("rotate_align", HeuristicKind::Exploration, &ctx);
            }
            RotationGoal::Aligned => {}
        }

        let anchor = self.submitter_anchor(plan);
        let on_goal = self.p.terrain_at(Vec2::ZERO) == Terrain::Goal;
        let full = anchor.is_some_and(|a| {
            plan.task
                .pattern
                .iter()
                .all(|(c, t)| self.pattern_cell_filled(a, *c, *t))
        });
        let own_placed = anchor.is_some_and(|a| self.own_part_placed(a, assignment));
        let schedule_done = self.exec.connect_cursor >= assignment.connects.len();

        // Rule 3: wait while others finish. The submitter waits on its goal
        // cell, anyone whose own share is in place waits for the rest, and
        // connected non-submitters hold still for the submit.
        if !full && is_submitter && on_goal {
            return ("wait_on_goal", Action::Skip, None);
        }
        if !full && own_placed && !is_submitter {
            return ("wait_part_placed", Action::Skip, None);
        }
        if full && schedule_done && !is_submitter {
            return ("wait_connected", Action::Skip, None);
        }

        // Rule 4: the whole pattern is visible, run the connect schedule.
        // Assembly happens where the submitter waits, so the submitter only
        // starts connecting once it actually stands on goal terrain.
        if full && !schedule_done && own_placed && (!is_submitter || on_goal) {
            let anchor = anchor.expect("full implies anchor");
            let entry = &assignment.connects[self.exec.connect_cursor];
            let own_cell_rel = anchor + entry.own_cell - self.b.self_pos;
            return ("connect", Action::Connect(entry.partner, own_cell_rel), None);
        }

        // Rule 5: everything is connected; the submitter hands the task in
        // from the goal cell.
        if full && schedule_done && is_submitter && own_placed && on_goal {
            return ("submit", Action::Submit(plan.task.name.clone()), None);
        }

        // Rule 6: the waiting submitter is in sight; align to the pattern.
        if !is_submitter {
            if let Some(a) = anchor {
                let off = a - self.b.self_pos;
                let submitter_visible = self.p.in_vision(off)
                    && matches!(
                        self.p.thing_at(off),
                        Some(ThingView::Entity { team, .. }) if *team == self.p.team
                    );
                if submitter_visible {
                    let mut ctx = self.heuristic_ctx();
                    let own_cells: BTreeSet<Vec2> =
                        assignment.sub_pattern.iter().map(|(c, _)| *c).collect();
                    ctx.pattern_remainder = plan
                        .task
                        .pattern
                        .iter()
                        .filter(|(c, _)| !own_cells.contains(c))
                        .map(|(c, t)| (*c - assignment.final_pos, *t))
                        .collect();
                    ctx.candidate_blocks = self
                        .b
                        .seen_blocks
                        .iter()
                        .filter(|(o, t, _)| !self.b.attachments.contains(&(*o, *t)))
                        .map(|(o, t, _)| (self.b.self_pos + *o, *t))
                        .collect();
                    return self.move_by("pattern_align", HeuristicKind::TaskPattern, &ctx);
                }
            }
        }

        // Rule 7: the submitter heads for the most open known goal cell.
        if is_submitter {
            if let Some(goal) = self.pick_goal_cell() {
                let mut ctx = self.heuristic_ctx();
                ctx.target = Some(goal);
                return self.move_by("goto_goal", HeuristicKind::GoTo, &ctx);
            }
        }

        // Rule 8: head for the believed submitter, or methodically tour the
        // known goal areas looking for it.
        if !is_submitter {
            if let Some(a) = anchor {
                let mut ctx = self.heuristic_ctx();
                ctx.target = Some(a);
                return self.move_by("goto_submitter", HeuristicKind::GoTo, &ctx);
            }
            if !self.b.goal_order.is_empty() {
                let target = self.b.goal_order[self.exec.goal_cycle % self.b.goal_order.len()];
                let mut ctx = self.heuristic_ctx();
                ctx.target = Some(target);
                return self.move_by("visit_goal_areas", HeuristicKind::GoTo, &ctx);
            }
        }

        // Rule 9: any known goal cell is better than nothing.
        if let Some(goal) = self.nearest_goal() {
            let mut ctx = self.heuristic_ctx();
            ctx.target = Some(goal);
            return self.move_by("goto_known_goal", HeuristicKind::GoTo, &ctx);
        }

        // Rule 10: explore.
        let ctx = self.heuristic_ctx();
        self.move_by("explore", HeuristicKind::Exploration, &ctx)
    }

    fn nearest_goal(&self) -> Option<Vec2> {
        self.b
            .goal_cells
            .iter()
            .min_by_key(|g| (g.dist(self.b.self_pos), g.y, g.x))
            .copied()
    }

    /// The goal cell the submitter parks on: maximize free neighbouring
    /// cells so the others have room, then prefer nearby.
    fn pick_goal_cell(&self) -> Option<Vec2> {
        self.b
            .goal_cells
            .iter()
            .map(|g| {
                let free = g
                    .neighbours()
                    .iter()
                    .filter(|n| {
                        let off = **n - self.b.self_pos;
                        !self.p.in_vision(off)
                            || (self.p.terrain_at(off) != Terrain::Obstacle
                                && self.p.thing_at(off).is_none())
                    })
                    .count() as u32;
                (*g, free)
            })
            .min_by_key(|(g, free)| (4 - *free, g.dist(self.b.self_pos), g.y, g.x))
            .map(|(g, _)| g)
    }

    // ---------------------------------------------------------------
    // unassigned agent
    // ---------------------------------------------------------------

    fn unassigned_rules(&self) -> (&'static str, Action, Option<HeuristicKind>) {
        // Rule 11: collect blocks while sides are free. A resource is only
        // worth chasing if no other teammate is already adjacent to it.
        if self.b.direct_attachments().count() < 4 {
            if let Some((offset, is_block)) = self.pick_resource() {
                if offset.is_unit() {
                    let facing_free = !self.b.attachments.iter().any(|(o, _)| *o == offset);
                    if !facing_free {
                        let rot = self.rotation_freeing(offset);
                        if self.rotation_free(rot) {
                            return ("collect_rotate", Action::Rotate(rot), None);
                        }
                        let ctx = self.heuristic_ctx();
                        return self.move_by("collect_rotate", HeuristicKind::Exploration, &ctx);
                    }
                    let dir = Direction::from_unit(offset).expect("unit offset");
                    if is_block {
                        return ("collect_attach", Action::Attach(dir), None);
                    }
                    return ("collect_request", Action::Request(dir), None);
                }
                let mut ctx = self.heuristic_ctx();
                ctx.target = Some(self.b.self_pos + offset);
                return self.move_by("collect_goto", HeuristicKind::GoTo, &ctx);
            }
        }

        // Rule 12: roam, keeping clear of goal areas and nearby teammates.
        let mut ctx = self.heuristic_ctx();
        ctx.avoid = self
            .b
            .goal_cells
            .iter()
            .map(|g| (*g, self.params.weight_goal))
            .chain(self.p.things.iter().filter_map(|(off, v)| match v {
                ThingView::Entity { team, .. } if *team == self.p.team => {
                    Some((self.b.self_pos + *off, self.params.weight_teammate))
                }
                _ => None,
            }))
            .collect();
        self.move_by("safe_explore", HeuristicKind::SafeExploration, &ctx)
    }

    /// Nearest collectible resource: a free block, or a dispenser with a
    /// clear cell, with no teammate 4-adjacent to it. Blocks win ties.
    fn pick_resource(&self) -> Option<(Vec2, bool)> {
        let teammate_adjacent = |off: Vec2| {
            self.p.things.iter().any(|(o, v)| {
                matches!(v, ThingView::Entity { team, .. } if *team == self.p.team)
                    && o.dist(off) == 1
            })
        };
        let blocks = self
            .b
            .seen_blocks
            .iter()
            .filter(|(_, _, attached)| !attached)
            .map(|(o, _, _)| (*o, true));
        let dispensers = self
            .b
            .seen_dispensers
            .iter()
            .filter(|(o, _)| self.p.block_at(*o).is_none() && *o != Vec2::ZERO)
            .map(|(o, _)| (*o, false));
        blocks
            .chain(dispensers)
            .filter(|(o, _)| !teammate_adjacent(*o))
            .min_by_key(|(o, is_block)| (o.manhattan(), !*is_block, o.y, o.x))
    }

    /// Rotation freeing the side that faces the resource, fewest turns
    /// first, clockwise on ties. A cw turn leaves `facing` free iff the
    /// offset one ccw step behind it is free, since that offset is what a
    /// cw turn maps onto `facing`.
    fn rotation_freeing(&self, facing: Vec2) -> Rotation {
        let occupied = |off: Vec2| self.b.attachments.iter().any(|(o, _)| *o == off);
        if !occupied(facing.rotated(Rotation::Ccw)) {
            return Rotation::Cw;
        }
        if !occupied(facing.rotated(Rotation::Cw)) {
            return Rotation::Ccw;
        }
        Rotation::Cw
    }
}

/// How the current attachments line up against the plan's target shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentAnalysis {
    /// Directions of directly attached surplus blocks, N-E-S-W order.
    pub surplus_dirs: Vec<Direction>,
    /// Rotation of the kept subset onto the target, once surplus is gone.
    pub rotation: RotationGoal,
}

/// Pick which attachments to keep for a rotation target: the subset with
/// matching types that some rotation maps exactly onto the target.
/// Everything else is surplus to shed.
pub fn alignment_analysis(
    attachments: &BTreeSet<(Vec2, BlockType)>,
    target: &[(Vec2, BlockType)],
) -> AlignmentAnalysis {
    let all: Vec<(Vec2, BlockType)> = attachments.iter().copied().collect();
    let n = all.len();
    let mut best: Option<(BTreeSet<(Vec2, BlockType)>, RotationGoal)> = None;
    for mask in 0..(1u32 << n) {
        let subset: BTreeSet<(Vec2, BlockType)> = all
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, x)| *x)
            .collect();
        if subset.len() != target.len() {
            continue;
        }
        match rotation_needed(&subset, target) {
            RotationGoal::Mismatch => continue,
            goal => {
                let better = match (&best, &goal) {
                    (None, _) => true,
                    (Some((_, RotationGoal::Turn(_))), RotationGoal::Aligned) => true,
                    _ => false,
                };
                if better {
                    best = Some((subset, goal));
                }
            }
        }
    }
    match best {
        Some((keep, rotation)) => {
            let mut surplus_dirs: Vec<Direction> = Vec::new();
            for d in Direction::ALL {
                if attachments
                    .iter()
                    .any(|(o, t)| *o == d.unit() && !keep.contains(&(*o, *t)))
                {
                    surplus_dirs.push(d);
                }
            }
            AlignmentAnalysis {
                surplus_dirs,
                rotation,
            }
        }
        None => AlignmentAnalysis {
            surplus_dirs: Vec::new(),
            rotation: RotationGoal::Mismatch,
        },
    }
}
