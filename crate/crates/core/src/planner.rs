//! Centralized task planning: the planning agent aggregates attachment
//! reports, selects a feasible task, partitions the pattern among agents and
//! monitors the single active plan.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::grid::{AgentId, BlockType, Vec2};
use crate::world::Task;

/// What every unassigned agent currently carries, keyed by agent. The full
/// attachment shapes are kept so the plan can pick rotation targets that the
/// agents can actually reach.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Inventory {
    pub shapes: BTreeMap<AgentId, Vec<(Vec2, BlockType)>>,
}

impl Inventory {
    pub fn type_counts(&self, agent: AgentId) -> BTreeMap<BlockType, u32> {
        let mut counts = BTreeMap::new();
        for (_, t) in self.shapes.get(&agent).into_iter().flatten() {
            *counts.entry(*t).or_insert(0) += 1;
        }
        counts
    }
}

/// One agent's share of a task plan. All cells are in pattern space, i.e.
/// relative to the submitting agent's final position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// Pattern cells this agent provides.
    pub sub_pattern: Vec<(Vec2, BlockType)>,
    /// Where the agent stands once its blocks sit in the pattern; `(0,0)`
    /// for the submitter.
    pub final_pos: Vec2,
    /// Attachment offsets (relative to the agent) its kept blocks must be
    /// rotated into.
    pub target_attachments: Vec<(Vec2, BlockType)>,
    /// This agent's connect steps, in global schedule order.
    pub connects: Vec<ConnectStep>,
    /// The whole pattern re-expressed relative to this agent's final
    /// position.
    pub expected_pattern: Vec<(Vec2, BlockType)>,
}

/// One scheduled connect between two assigned agents, in pattern space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectStep {
    pub partner: AgentId,
    pub own_cell: Vec2,
    pub partner_cell: Vec2,
}

/// A complete plan for one task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskPlan {
    pub task: Task,
    pub assignments: BTreeMap<AgentId, Assignment>,
    pub submit_agent: AgentId,
    pub created_step: u32,
}

/// Why an active plan is torn down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AbortReason {
    Completed,
    AgentDisabled,
    DeadlineExpired,
    TaskUnavailable,
    ShapeMismatch,
}

impl AbortReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::Completed => "completed",
            AbortReason::AgentDisabled => "agent_disabled",
            AbortReason::DeadlineExpired => "deadline_expired",
            AbortReason::TaskUnavailable => "task_unavailable",
            AbortReason::ShapeMismatch => "shape_mismatch",
        }
    }
}

/// Evidence the planning agent holds about the current step, fed to
/// [`monitor_plan`].
#[derive(Clone, Debug, Default)]
pub struct PlanEvents {
    pub step: u32,
    /// Assigned agents that reported themselves disabled.
    pub disabled_reports: BTreeSet<AgentId>,
    /// The plan's task was submitted by us.
    pub submitted: bool,
    /// The plan's task still exists in the current task list.
    pub task_available: bool,
}

/// Fold one delivery batch of attachment reports into an inventory. Agents
/// holding an active assignment are excluded; duplicate reports keep the
/// last one in batch order.
pub fn aggregate_reports(
    reports: &[(AgentId, Vec<(Vec2, BlockType)>)],
    assigned: &BTreeSet<AgentId>,
) -> Inventory {
    let mut inv = Inventory::default();
    for (agent, shape) in reports {
        if assigned.contains(agent) {
            continue;
        }
        inv.shapes.insert(*agent, shape.clone());
    }
    inv
}

/// Tasks whose deadline leaves at least `min_steps` of margin and whose type
/// multiset is covered by the combined inventory.
pub fn feasible_tasks(inv: &Inventory, tasks: &[Task], step: u32, min_steps: u32) -> Vec<Task> {
    let mut supply: BTreeMap<BlockType, u32> = BTreeMap::new();
    for agent in inv.shapes.keys() {
        for (t, n) in inv.type_counts(*agent) {
            *supply.entry(t).or_insert(0) += n;
        }
    }
    tasks
        .iter()
        .filter(|task| {
            task.deadline >= step
                && task.deadline - step >= min_steps
                && task
                    .type_counts()
                    .iter()
                    .all(|(t, n)| supply.get(t).copied().unwrap_or(0) >= *n)
        })
        .cloned()
        .collect()
}

/// The easiest feasible task: minimum reward, ties broken by name.
pub fn select_task(feasible: &[Task]) -> Option<&Task> {
    feasible.iter().min_by_key(|t| (t.reward, &t.name))
}

/// Build a plan for `task` from the current inventory, or `None` when no
/// geometrically executable partition exists.
///
/// The partition is deterministic: pattern cells are sorted by distance from
/// the origin, agents are considered in ascending id, and each agent takes
/// the largest prefix of unassigned cells it can cover with its own block
/// types and realize as attachments around a single standing position. The
/// agent covering the first sorted cell stands at the origin and submits.
pub fn build_plan(task: &Task, inv: &Inventory, step: u32) -> Option<TaskPlan> {
    let mut cells: Vec<(Vec2, BlockType)> = task.pattern.clone();
    cells.sort_by_key(|(c, _)| (c.manhattan(), c.y, c.x));
    let agents: Vec<AgentId> = inv.shapes.keys().copied().collect();

    let mut picks: Vec<Pick> = Vec::new();
    let mut used = BTreeSet::new();
    if !partition(&cells, &agents, &mut used, 0, inv, &mut picks) {
        return None;
    }

    let groups: BTreeMap<AgentId, BTreeSet<Vec2>> = picks
        .iter()
        .map(|p| (p.agent, p.cells.iter().map(|(c, _)| *c).collect()))
        .collect();
    let submit_agent = picks
        .iter()
        .find(|p| p.cells.iter().any(|(c, _)| *c == cells[0].0))
        .map(|p| p.agent)?;
    let schedule = connect_schedule(&groups, submit_agent)?;

    let mut assignments = BTreeMap::new();
    for pick in &picks {
        let connects: Vec<ConnectStep> = schedule
            .iter()
            .filter_map(|(a, b, cell_a, cell_b)| {
                if *a == pick.agent {
                    Some(ConnectStep {
                        partner: *b,
                        own_cell: *cell_a,
                        partner_cell: *cell_b,
                    })
                } else if *b == pick.agent {
                    Some(ConnectStep {
                        partner: *a,
                        own_cell: *cell_b,
                        partner_cell: *cell_a,
                    })
                } else {
                    None
                }
            })
            .collect();
        let expected_pattern: Vec<(Vec2, BlockType)> = task
            .pattern
            .iter()
            .map(|(c, t)| (*c - pick.final_pos, *t))
            .collect();
        assignments.insert(
            pick.agent,
            Assignment {
                sub_pattern: pick.cells.clone(),
                final_pos: pick.final_pos,
                target_attachments: pick.target_attachments.clone(),
                connects,
                expected_pattern,
            },
        );
    }

    Some(TaskPlan {
        task: task.clone(),
        assignments,
        submit_agent,
        created_step: step,
    })
}

/// Check an active plan against this step's evidence.
pub fn monitor_plan(plan: &TaskPlan, events: &PlanEvents) -> Option<AbortReason> {
    if events.submitted {
        return Some(AbortReason::Completed);
    }
    if events
        .disabled_reports
        .iter()
        .any(|a| plan.assignments.contains_key(a))
    {
        return Some(AbortReason::AgentDisabled);
    }
    if events.step > plan.task.deadline {
        return Some(AbortReason::DeadlineExpired);
    }
    if !events.task_available {
        return Some(AbortReason::TaskUnavailable);
    }
    None
}

struct Pick {
    agent: AgentId,
    cells: Vec<(Vec2, BlockType)>,
    final_pos: Vec2,
    target_attachments: Vec<(Vec2, BlockType)>,
}

/// Depth-first search assigning the sorted cells left to right: the next
/// chunk goes to the lowest-id unused agent that can cover it, largest
/// chunk first, with the geometric realizability check folded in. When the
/// plain greedy pass succeeds this reproduces it; when it cannot, later
/// agents may take earlier chunks so a coverable pattern still plans.
fn partition(
    cells: &[(Vec2, BlockType)],
    agents: &[AgentId],
    used: &mut BTreeSet<AgentId>,
    cell_idx: usize,
    inv: &Inventory,
    picks: &mut Vec<Pick>,
) -> bool {
    if cell_idx == cells.len() {
        return true;
    }
    for &agent in agents {
        if used.contains(&agent) {
            continue;
        }
        let counts = inv.type_counts(agent);
        let max_take = {
            let mut need: BTreeMap<BlockType, u32> = BTreeMap::new();
            let mut take = 0;
            for (_, t) in &cells[cell_idx..] {
                let n = need.entry(*t).or_insert(0);
                if *n + 1 > counts.get(t).copied().unwrap_or(0) {
                    break;
                }
                *n += 1;
                take += 1;
            }
            take
        };
        for take in (1..=max_take).rev() {
            let sub = &cells[cell_idx..cell_idx + take];
            let forced = if cell_idx == 0 { Some(Vec2::ZERO) } else { None };
            let taken: BTreeSet<Vec2> = picks.iter().map(|p| p.final_pos).collect();
            let pattern_cells: BTreeSet<Vec2> = cells.iter().map(|(c, _)| *c).collect();
            let shape = &inv.shapes[&agent];
            if let Some((pos, target)) = realize(shape, sub, forced, &taken, &pattern_cells) {
                picks.push(Pick {
                    agent,
                    cells: sub.to_vec(),
                    final_pos: pos,
                    target_attachments: target,
                });
                used.insert(agent);
                if partition(cells, agents, used, cell_idx + take, inv, picks) {
                    return true;
                }
                used.remove(&agent);
                picks.pop();
            }
        }
    }
    false
}

/// Find a standing position and rotation target letting one agent provide
/// `sub` with blocks it already carries: the position must be 4-adjacent to
/// every covered cell and the required attachment offsets must be a rotation
/// of a subset of the agent's current shape.
fn realize(
    shape: &[(Vec2, BlockType)],
    sub: &[(Vec2, BlockType)],
    forced_pos: Option<Vec2>,
    taken: &BTreeSet<Vec2>,
    pattern_cells: &BTreeSet<Vec2>,
) -> Option<(Vec2, Vec<(Vec2, BlockType)>)> {
    let candidates: Vec<Vec2> = match forced_pos {
        Some(p) => alloc::vec![p],
        None => {
            let mut set: BTreeSet<Vec2> = BTreeSet::new();
            for n in sub[0].0.neighbours() {
                if sub.iter().all(|(c, _)| n.dist(*c) == 1)
                    && n != Vec2::ZERO
                    && !pattern_cells.contains(&n)
                    && !taken.contains(&n)
                {
                    set.insert(n);
                }
            }
            set.into_iter().collect()
        }
    };
    for pos in candidates {
        let target: Vec<(Vec2, BlockType)> = sub.iter().map(|(c, t)| (*c - pos, *t)).collect();
        if !target.iter().all(|(o, _)| o.is_unit()) {
            continue;
        }
        let reachable = (0..4).any(|turns| {
            target.iter().all(|(o, t)| {
                shape
                    .iter()
                    .any(|(so, st)| so.rotated_cw(turns) == *o && st == t)
            })
        });
        if reachable {
            return Some((pos, target));
        }
    }
    None
}

/// Order connects so every join attaches a new agent's group to the
/// component already holding the submitter.
#[allow(clippy::type_complexity)]
fn connect_schedule(
    groups: &BTreeMap<AgentId, BTreeSet<Vec2>>,
    submit_agent: AgentId,
) -> Option<Vec<(AgentId, AgentId, Vec2, Vec2)>> {
    let mut connected: BTreeSet<AgentId> = BTreeSet::new();
    connected.insert(submit_agent);
    let mut component: BTreeMap<Vec2, AgentId> = groups[&submit_agent]
        .iter()
        .map(|c| (*c, submit_agent))
        .collect();
    let mut schedule = Vec::new();
    while connected.len() < groups.len() {
        let mut found = None;
        'search: for (agent, cells) in groups {
            if connected.contains(agent) {
                continue;
            }
            for cell in cells {
                for n in cell.neighbours() {
                    if let Some(owner) = component.get(&n) {
                        found = Some((*owner, *agent, n, *cell));
                        break 'search;
                    }
                }
            }
        }
        let (owner, agent, own_cell, new_cell) = found?;
        schedule.push((owner, agent, own_cell, new_cell));
        for c in &groups[&agent] {
            component.insert(*c, agent);
        }
        connected.insert(agent);
    }
    Some(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn task(name: &str, deadline: u32, reward: u32, pattern: &[(i32, i32, u8)]) -> Task {
        Task {
            name: name.to_string(),
            deadline,
            reward,
            pattern: pattern
                .iter()
                .map(|(x, y, t)| (Vec2::new(*x, *y), BlockType(*t)))
                .collect(),
        }
    }

    fn inv(entries: &[(u16, &[(i32, i32, u8)])]) -> Inventory {
        let mut inv = Inventory::default();
        for (id, shape) in entries {
            inv.shapes.insert(
                AgentId(*id),
                shape
                    .iter()
                    .map(|(x, y, t)| (Vec2::new(*x, *y), BlockType(*t)))
                    .collect(),
            );
        }
        inv
    }

    #[test]
    fn aggregate_keeps_last_duplicate_and_drops_assigned() {
        let reports = vec![
            (AgentId(1), vec![(Vec2::new(0, -1), BlockType(0))]),
            (AgentId(2), vec![(Vec2::new(1, 0), BlockType(1))]),
            (AgentId(1), vec![(Vec2::new(1, 0), BlockType(2))]),
        ];
        let mut assigned = BTreeSet::new();
        assigned.insert(AgentId(2));
        let inv = aggregate_reports(&reports, &assigned);
        assert_eq!(inv.shapes.len(), 1);
        assert_eq!(inv.shapes[&AgentId(1)], vec![(Vec2::new(1, 0), BlockType(2))]);
    }

    #[test]
    fn aggregate_empty() {
        let inv = aggregate_reports(&[], &BTreeSet::new());
        assert!(inv.shapes.is_empty());
    }

    #[test]
    fn feasibility_covers_supply_and_deadline() {
        let inv = inv(&[(1, &[(0, -1, 0)]), (2, &[(1, 0, 0)])]);
        let two_b0 = task("t", 250, 20, &[(0, 1, 0), (1, 1, 0)]);
        assert_eq!(feasible_tasks(&inv, &[two_b0.clone()], 50, 50).len(), 1);
        // Margin of 49 fails a 50-step gate.
        assert!(feasible_tasks(&inv, &[two_b0], 201, 50).is_empty());
        let needs_b2 = task("u", 250, 10, &[(0, 1, 2)]);
        assert!(feasible_tasks(&inv, &[needs_b2], 0, 50).is_empty());
    }

    #[test]
    fn select_lowest_reward_then_name() {
        let tasks = vec![
            task("t30", 500, 30, &[(0, 1, 0)]),
            task("t10", 500, 10, &[(0, 1, 0)]),
            task("t20", 500, 20, &[(0, 1, 0)]),
        ];
        assert_eq!(select_task(&tasks).unwrap().name, "t10");
        let tie = vec![task("t3", 500, 10, &[(0, 1, 0)]), task("t1", 500, 10, &[(0, 1, 0)])];
        assert_eq!(select_task(&tie).unwrap().name, "t1");
        assert!(select_task(&[]).is_none());
    }

    #[test]
    fn single_block_plan_has_lone_submitter() {
        let inv = inv(&[(1, &[(0, -1, 0)])]);
        let t = task("t", 500, 10, &[(0, 1, 0)]);
        let plan = build_plan(&t, &inv, 3).unwrap();
        assert_eq!(plan.submit_agent, AgentId(1));
        assert_eq!(plan.assignments.len(), 1);
        let a = &plan.assignments[&AgentId(1)];
        assert_eq!(a.sub_pattern, t.pattern);
        assert_eq!(a.final_pos, Vec2::ZERO);
        assert!(a.connects.is_empty());
        assert_eq!(a.target_attachments, vec![(Vec2::new(0, 1), BlockType(0))]);
    }

    #[test]
    fn two_agent_plan_connects_once() {
        // Pattern: b0 south of the submitter, b1 below that.
        let inv = inv(&[(1, &[(0, -1, 0)]), (2, &[(0, -1, 1)])]);
        let t = task("t", 500, 20, &[(0, 1, 0), (0, 2, 1)]);
        let plan = build_plan(&t, &inv, 0).unwrap();
        assert_eq!(plan.submit_agent, AgentId(1));
        assert_eq!(plan.assignments.len(), 2);
        let a1 = &plan.assignments[&AgentId(1)];
        let a2 = &plan.assignments[&AgentId(2)];
        assert_eq!(a1.sub_pattern, vec![(Vec2::new(0, 1), BlockType(0))]);
        assert_eq!(a2.sub_pattern, vec![(Vec2::new(0, 2), BlockType(1))]);
        assert_eq!(a1.connects.len(), 1);
        assert_eq!(a2.connects.len(), 1);
        assert_eq!(a1.connects[0].partner, AgentId(2));
        assert_eq!(a1.connects[0].own_cell, Vec2::new(0, 1));
        assert_eq!(a1.connects[0].partner_cell, Vec2::new(0, 2));
        // Expected pattern is anchored to each agent's final position.
        assert_eq!(a2.expected_pattern[0].0, Vec2::new(0, 1) - a2.final_pos);
    }

    #[test]
    fn pair_agent_covers_both_same_type_cells() {
        // The two b0 cells sit diagonally, so the pair agent can provide
        // both from their common free neighbour.
        let inv = inv(&[(1, &[(0, -1, 0), (1, 0, 0)]), (2, &[(0, -1, 1)])]);
        let t = task("t", 500, 30, &[(1, 0, 1), (2, 0, 0), (1, 1, 0)]);
        let plan = build_plan(&t, &inv, 0).unwrap();
        assert_eq!(plan.submit_agent, AgentId(2));
        let holder = &plan.assignments[&AgentId(1)];
        let b0_cells: Vec<Vec2> = holder
            .sub_pattern
            .iter()
            .filter(|(_, t)| *t == BlockType(0))
            .map(|(c, _)| *c)
            .collect();
        assert_eq!(b0_cells.len(), 2, "the b0 pair goes to the b0-pair agent");
        assert_eq!(holder.final_pos, Vec2::new(2, 1));
        // Plan validity: one connect hooks the pair agent to the submitter.
        assert_eq!(holder.connects.len(), 1);
        assert_eq!(holder.connects[0].partner, AgentId(2));
    }

    #[test]
    fn infeasible_geometry_yields_no_plan() {
        // One agent holds both b0 blocks but the two pattern cells are
        // 4-adjacent, which no single star-shaped body can provide.
        let inv = inv(&[(1, &[(0, -1, 0), (1, 0, 0)])]);
        let t = task("t", 500, 20, &[(0, 1, 0), (0, 2, 0)]);
        assert!(build_plan(&t, &inv, 0).is_none());
    }

    #[test]
    fn monitor_fires_in_priority_order() {
        let inv = inv(&[(1, &[(0, -1, 0)])]);
        let t = task("t", 100, 10, &[(0, 1, 0)]);
        let plan = build_plan(&t, &inv, 0).unwrap();
        let mut ev = PlanEvents {
            step: 5,
            task_available: true,
            ..PlanEvents::default()
        };
        assert_eq!(monitor_plan(&plan, &ev), None);
        ev.disabled_reports.insert(AgentId(1));
        assert_eq!(monitor_plan(&plan, &ev), Some(AbortReason::AgentDisabled));
        ev.disabled_reports.clear();
        ev.step = 101;
        assert_eq!(monitor_plan(&plan, &ev), Some(AbortReason::DeadlineExpired));
        ev.step = 5;
        ev.task_available = false;
        assert_eq!(monitor_plan(&plan, &ev), Some(AbortReason::TaskUnavailable));
        ev.submitted = true;
        assert_eq!(monitor_plan(&plan, &ev), Some(AbortReason::Completed));
    }

    #[test]
    fn disabled_reports_for_unassigned_agents_are_ignored() {
        let inv = inv(&[(1, &[(0, -1, 0)])]);
        let t = task("t", 100, 10, &[(0, 1, 0)]);
        let plan = build_plan(&t, &inv, 0).unwrap();
        let mut ev = PlanEvents {
            step: 5,
            task_available: true,
            ..PlanEvents::default()
        };
        ev.disabled_reports.insert(AgentId(7));
        assert_eq!(monitor_plan(&plan, &ev), None);
    }

}
