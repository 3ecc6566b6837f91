//! Per-agent memory: relative position tracking with the spawn cell as the
//! origin, the visited-position database and its clearing triggers, goal
//! cell memory, attachment tracking and teammate positions.
//!
//! Everything an agent remembers is expressed in its own frame, whose origin
//! is its spawn cell; it never learns absolute map coordinates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::grid::{AgentId, BlockType, Direction, Terrain, Vec2};
use crate::planner::TaskPlan;
use crate::world::{Action, ActionResult, Percept, ThingView};

/// One remembered visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisitedEntry {
    pub pos: Vec2,
    pub step: u32,
    pub is_goal: bool,
}

/// Why the visited database is being wiped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClearTrigger {
    Attached,
    Detached,
    Requested,
    TaskSubmitted,
}

/// Knowledge shared after a confirmed encounter, expressed in the sender's
/// frame together with the sender's own position at send time.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SharedKnowledge {
    pub goal_cells: Vec<Vec2>,
    pub teammates: Vec<(AgentId, Vec2)>,
    pub partner_self_pos: Vec2,
}

/// An agent's belief base.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefBase {
    pub owner: AgentId,
    /// Own position in the own frame; starts at the origin and moves only on
    /// successful move actions.
    pub self_pos: Vec2,
    pub visited: Vec<VisitedEntry>,
    /// Goal cells, own frame. Monotonically non-decreasing over a match.
    pub goal_cells: BTreeSet<Vec2>,
    /// Goal cells in discovery order, for methodical area visiting.
    pub goal_order: Vec<Vec2>,
    /// Blocks believed attached to this body: offset from self plus type.
    pub attachments: BTreeSet<(Vec2, BlockType)>,
    /// Known teammate positions, own frame.
    pub teammates: BTreeMap<AgentId, Vec2>,
    pub active_plan: Option<TaskPlan>,
    pub last_clear_trigger: u32,
    /// Transient view of the last percept, offsets from self. Rebuilt
    /// wholesale every step; nothing outside vision is retained.
    pub seen_obstacles: Vec<Vec2>,
    pub seen_blocks: Vec<(Vec2, BlockType, bool)>,
    pub seen_dispensers: Vec<(Vec2, BlockType)>,
    last_percept_step: Option<u32>,
}

impl BeliefBase {
    pub fn new(owner: AgentId) -> Self {
        BeliefBase {
            owner,
            self_pos: Vec2::ZERO,
            visited: Vec::new(),
            goal_cells: BTreeSet::new(),
            goal_order: Vec::new(),
            attachments: BTreeSet::new(),
            teammates: BTreeMap::new(),
            active_plan: None,
            last_clear_trigger: 0,
            seen_obstacles: Vec::new(),
            seen_blocks: Vec::new(),
            seen_dispensers: Vec::new(),
            last_percept_step: None,
        }
    }

    /// Fold the outcome of a past move action into the position track. On
    /// success the pre-move position is remembered as visited.
    pub fn record_move(&mut self, dir: Direction, result: ActionResult, current_step: u32) {
        if result != ActionResult::Success {
            return;
        }
        let pre = self.self_pos;
        self.visited.push(VisitedEntry {
            pos: pre,
            step: current_step,
            is_goal: self.goal_cells.contains(&pre),
        });
        self.self_pos = pre + dir.unit();
    }

    /// Wipe the visited database. Subtask boundaries make old visits
    /// irrelevant, and the map shifts under clear events anyway.
    pub fn clear_visited(&mut self, _trigger: ClearTrigger, current_step: u32) {
        self.visited.clear();
        self.last_clear_trigger = current_step;
    }

    /// Fold the outcome of the last attach/detach/rotate into the attachment
    /// set. Attach types come from the transient block view of the step the
    /// action was chosen in, so this must run before [`apply_percept`]
    /// replaces it.
    ///
    /// [`apply_percept`]: BeliefBase::apply_percept
    pub fn sync_attachments(&mut self, action: &Action, result: ActionResult) {
        if result != ActionResult::Success {
            return;
        }
        match action {
            Action::Attach(dir) => {
                let off = dir.unit();
                let block_type = self
                    .seen_blocks
                    .iter()
                    .find(|(o, _, _)| *o == off)
                    .map(|(_, t, _)| *t)
                    .expect("attach succeeded on a block that was never seen");
                self.attachments.insert((off, block_type));
            }
            Action::Detach(dir) => {
                let removed = detached_offsets(&self.attachments, dir.unit());
                self.attachments.retain(|(o, _)| !removed.contains(o));
            }
            Action::Rotate(rot) => {
                self.attachments = self
                    .attachments
                    .iter()
                    .map(|(o, t)| (o.rotated(*rot), *t))
                    .collect();
            }
            _ => {}
        }
    }

    /// Merge one fresh percept: goal cells within vision are learned for
    /// good, the transient obstacle/block/dispenser views are replaced, and
    /// attachment beliefs that the environment no longer backs are dropped.
    pub fn apply_percept(&mut self, p: &Percept) {
        if let Some(last) = self.last_percept_step {
            assert!(p.step > last, "stale percept fed to belief base");
        }
        self.last_percept_step = Some(p.step);

        for (off, t) in &p.terrain {
            if *t == Terrain::Goal {
                let cell = self.self_pos + *off;
                if self.goal_cells.insert(cell) {
                    self.goal_order.push(cell);
                }
            }
        }
        self.seen_obstacles = p
            .terrain
            .iter()
            .filter(|(_, t)| *t == Terrain::Obstacle)
            .map(|(o, _)| *o)
            .collect();
        self.seen_blocks = p
            .things
            .iter()
            .filter_map(|(o, v)| match v {
                ThingView::Block {
                    block_type,
                    attached,
                } => Some((*o, *block_type, *attached)),
                _ => None,
            })
            .collect();
        self.seen_dispensers = p
            .things
            .iter()
            .filter_map(|(o, v)| match v {
                ThingView::Dispenser { block_type } => Some((*o, *block_type)),
                _ => None,
            })
            .collect();
        let seen = &self.seen_blocks;
        self.attachments
            .retain(|(off, t)| seen.iter().any(|(o, bt, att)| o == off && bt == t && *att));
    }

    /// Add a partner's shared knowledge. `partner_offset` is the vector from
    /// the current own position to where the partner sat when it sent the
    /// payload, so `self_pos + partner_offset` anchors the partner's frame.
    pub fn integrate_shared(&mut self, payload: &SharedKnowledge, partner_offset: Vec2) {
        let origin = self.self_pos + partner_offset - payload.partner_self_pos;
        for g in &payload.goal_cells {
            let cell = origin + *g;
            if self.goal_cells.insert(cell) {
                self.goal_order.push(cell);
            }
        }
        for (id, pos) in &payload.teammates {
            if *id == self.owner {
                continue;
            }
            self.teammates.entry(*id).or_insert(origin + *pos);
        }
    }

    /// Number of visits of `pos` since the last clearing trigger.
    pub fn visit_count(&self, pos: Vec2) -> u32 {
        self.visited.iter().filter(|v| v.pos == pos).count() as u32
    }

    pub fn visit_counts(&self) -> BTreeMap<Vec2, u32> {
        let mut counts = BTreeMap::new();
        for v in &self.visited {
            *counts.entry(v.pos).or_insert(0) += 1;
        }
        counts
    }

    /// Direct attachments are the ones on the four adjacent cells.
    pub fn direct_attachments(&self) -> impl Iterator<Item = (Vec2, BlockType)> + '_ {
        self.attachments.iter().copied().filter(|(o, _)| o.is_unit())
    }
}

/// Offsets that stop being part of the body when the direct link in
/// direction `unit` is severed: everything no longer reachable from the
/// origin through the remaining direct links and offset adjacency.
pub fn detached_offsets(attachments: &BTreeSet<(Vec2, BlockType)>, unit: Vec2) -> BTreeSet<Vec2> {
    let offsets: BTreeSet<Vec2> = attachments.iter().map(|(o, _)| *o).collect();
    if !offsets.contains(&unit) {
        return BTreeSet::new();
    }
    let mut reachable: BTreeSet<Vec2> = BTreeSet::new();
    let mut stack: Vec<Vec2> = offsets
        .iter()
        .copied()
        .filter(|o| o.is_unit() && *o != unit)
        .collect();
    while let Some(o) = stack.pop() {
        if !reachable.insert(o) {
            continue;
        }
        for n in o.neighbours() {
            if n != Vec2::ZERO && offsets.contains(&n) && !reachable.contains(&n) {
                stack.push(n);
            }
        }
    }
    offsets.difference(&reachable).copied().collect()
}
