//! The per-agent shell: folds action outcomes and percepts into the belief
//! base, runs the encounter handshake and the other messaging duties over
//! the mailbox, hosts the planning role on the designated agent, and calls
//! the decision function.
//!
//! Everything an agent learns from teammates passes through [`Mailbox`]
//! messages; the shell never touches the world or another shell directly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::beliefs::{BeliefBase, ClearTrigger};
use crate::comms::{
    confirm_encounter, on_confirmed, report_attachments, vision_digest, Body, Mailbox, Message,
    Recipient, VisionDigest,
};
use crate::controller::{decide, DecisionTrace, ExecState, StrategyParams};
use crate::grid::{AgentId, Team, Vec2};
use crate::planner::{
    aggregate_reports, build_plan, feasible_tasks, monitor_plan, select_task, AbortReason,
    PlanEvents, TaskPlan,
};
use crate::world::{Action, ActionResult, Percept, ThingView};

/// One candidate teammate sighting from the previous step, kept until the
/// matching offers arrive.
#[derive(Clone, Debug, PartialEq)]
struct PendingCandidate {
    offset: Vec2,
    digest: VisionDigest,
    /// The candidate's position in my frame at sighting time.
    frame_pos: Vec2,
}

/// Planning-role state, present only on the designated planning agent.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerNode {
    pub min_steps: u32,
    pub active: Option<TaskPlan>,
}

/// A complete agent: beliefs, protocol state and strategy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentShell {
    pub id: AgentId,
    pub team: Team,
    pub beliefs: BeliefBase,
    pub exec: ExecState,
    pub planner: Option<PlannerNode>,
    pub last_action: Option<Action>,
    pub last_trace: Option<DecisionTrace>,
    params: StrategyParams,
    planning_agent: AgentId,
    pending_offers: Vec<PendingCandidate>,
    /// Partners confirmed from last step's offers, with their frame
    /// position at sighting time.
    confirms_sent: BTreeMap<AgentId, Vec2>,
    /// Last step each partner was mutually confirmed, for the
    /// once-per-encounter knowledge exchange.
    last_mutual: BTreeMap<AgentId, u32>,
}

impl AgentShell {
    pub fn new(
        id: AgentId,
        team: Team,
        planning_agent: AgentId,
        min_steps: u32,
        params: StrategyParams,
    ) -> Self {
        AgentShell {
            id,
            team,
            beliefs: BeliefBase::new(id),
            exec: ExecState::default(),
            planner: (id == planning_agent).then_some(PlannerNode {
                min_steps,
                active: None,
            }),
            last_action: None,
            last_trace: None,
            params,
            planning_agent,
            pending_offers: Vec::new(),
            confirms_sent: BTreeMap::new(),
            last_mutual: BTreeMap::new(),
        }
    }

    /// My assignment exists and I am part of the active plan.
    fn assigned(&self) -> bool {
        self.beliefs
            .active_plan
            .as_ref()
            .is_some_and(|p| p.assignments.contains_key(&self.id))
    }

    fn drop_plan(&mut self) {
        self.beliefs.active_plan = None;
        self.exec = ExecState {
            goal_cycle: self.exec.goal_cycle,
            ..ExecState::default()
        };
        if let Some(node) = &mut self.planner {
            node.active = None;
        }
    }

    /// Process everything that happened since the last decision: the own
    /// action's result, the fresh percept, and the delivered messages; then
    /// send this step's outgoing traffic.
    pub fn observe(&mut self, p: &Percept, inbox: &[Message], out: &mut Mailbox, step: u32) {
        self.fold_last_result(p, out, step);
        self.beliefs.apply_percept(p);
        self.process_inbox(p, inbox, out, step);
        self.update_goal_cycle();
        self.send_offers(p, out, step);
        if self.beliefs.active_plan.is_none() {
            if let Some(report) = report_attachments(&self.beliefs) {
                out.send(
                    self.id,
                    Recipient::Agent(self.planning_agent),
                    Body::AttachReport {
                        attachments: report,
                    },
                    step,
                );
            }
        }
    }

    /// Pick this step's action. The shell also intercepts the
    /// shape-mismatch trace, which doubles as the plan-abort announcement.
    pub fn decide_action(&mut self, p: &Percept, out: &mut Mailbox, step: u32) -> (Action, DecisionTrace) {
        let (action, trace) = decide(&self.beliefs, p, &self.exec, &self.params);
        if trace.rule == "plan_mismatch" && !self.exec.mismatch_reported {
            self.exec.mismatch_reported = true;
            out.send(
                self.id,
                Recipient::Team(self.team),
                Body::PlanAbort {
                    reason: AbortReason::ShapeMismatch,
                },
                step,
            );
            self.drop_plan();
        }
        self.last_action = Some(action.clone());
        self.last_trace = Some(trace.clone());
        (action, trace)
    }

    fn fold_last_result(&mut self, p: &Percept, out: &mut Mailbox, step: u32) {
        let (Some(action), Some(result)) = (self.last_action.clone(), p.last_result) else {
            return;
        };
        match &action {
            Action::Move(d) => {
                self.beliefs.record_move(*d, result, step);
                if result == ActionResult::Success {
                    out.send(
                        self.id,
                        Recipient::Team(self.team),
                        Body::Moved { direction: *d },
                        step,
                    );
                }
            }
            Action::Attach(_) | Action::Detach(_) | Action::Rotate(_) => {
                self.beliefs.sync_attachments(&action, result);
                if result == ActionResult::Success {
                    let trigger = match action {
                        Action::Attach(_) => Some(ClearTrigger::Attached),
                        Action::Detach(_) => Some(ClearTrigger::Detached),
                        _ => None,
                    };
                    if let Some(trigger) = trigger {
                        self.beliefs.clear_visited(trigger, step);
                    }
                }
            }
            Action::Request(_) => {
                if result == ActionResult::Success {
                    self.beliefs.clear_visited(ClearTrigger::Requested, step);
                }
            }
            Action::Connect(_, own_rel) => {
                if result == ActionResult::Success {
                    self.register_connect(*own_rel);
                    self.exec.connect_cursor += 1;
                }
            }
            Action::Submit(_) => {
                if result == ActionResult::Success {
                    out.send(
                        self.id,
                        Recipient::Team(self.team),
                        Body::PlanAbort {
                            reason: AbortReason::Completed,
                        },
                        step,
                    );
                    self.beliefs.clear_visited(ClearTrigger::TaskSubmitted, step);
                    self.drop_plan();
                }
            }
            Action::Skip => {}
        }
        if result == ActionResult::FailedDisabled && self.assigned() && !self.exec.disabled_reported
        {
            self.exec.disabled_reported = true;
            out.send(
                self.id,
                Recipient::Team(self.team),
                Body::PlanAbort {
                    reason: AbortReason::AgentDisabled,
                },
                step,
            );
            self.drop_plan();
        }
    }

    /// A connect succeeded: the partner's block at the scheduled cell is now
    /// part of this body.
    fn register_connect(&mut self, own_rel: Vec2) {
        let Some(plan) = &self.beliefs.active_plan else {
            return;
        };
        let Some(assignment) = plan.assignments.get(&self.id) else {
            return;
        };
        let Some(entry) = assignment.connects.get(self.exec.connect_cursor) else {
            return;
        };
        let partner_rel = own_rel + (entry.partner_cell - entry.own_cell);
        let block_type = plan
            .task
            .pattern
            .iter()
            .find(|(c, _)| *c == entry.partner_cell)
            .map(|(_, t)| *t);
        if let Some(t) = block_type {
            self.beliefs.attachments.insert((partner_rel, t));
        }
    }

    fn process_inbox(&mut self, p: &Percept, inbox: &[Message], out: &mut Mailbox, step: u32) {
        // Mutual confirmations first: they anchor teammate positions that
        // the later message kinds rely on.
        let mut mutual: Vec<AgentId> = Vec::new();
        for m in inbox {
            if matches!(m.body, Body::HandshakeConfirm) {
                if let Some(frame_pos) = self.confirms_sent.get(&m.sender) {
                    self.beliefs.teammates.insert(m.sender, *frame_pos);
                    mutual.push(m.sender);
                }
            }
        }
        for m in inbox {
            if let Body::Moved { direction } = &m.body {
                if let Some(pos) = self.beliefs.teammates.get_mut(&m.sender) {
                    *pos += direction.unit();
                }
            }
        }
        for m in inbox {
            if let Body::SharedKnowledge(payload) = &m.body {
                if let Some(partner_pos) = self.beliefs.teammates.get(&m.sender).copied() {
                    let partner_offset = partner_pos - self.beliefs.self_pos;
                    self.beliefs.integrate_shared(payload, partner_offset);
                }
            }
        }
        let mut reports: Vec<(AgentId, Vec<(Vec2, crate::grid::BlockType)>)> = Vec::new();
        for m in inbox {
            if let Body::AttachReport { attachments } = &m.body {
                reports.push((m.sender, attachments.clone()));
            }
        }
        // Aborts before assignments, so an abort of the previous plan and
        // the assignment of the next one can share a batch.
        for m in inbox {
            if let Body::PlanAbort { reason } = &m.body {
                self.drop_plan();
                if *reason == AbortReason::Completed {
                    self.beliefs.clear_visited(ClearTrigger::TaskSubmitted, step);
                }
            }
        }
        for m in inbox {
            if let Body::PlanAssign(plan) = &m.body {
                if plan.assignments.contains_key(&self.id) {
                    self.beliefs.active_plan = Some(plan.clone());
                    self.exec = ExecState {
                        goal_cycle: self.exec.goal_cycle,
                        ..ExecState::default()
                    };
                }
            }
        }
        self.evaluate_offers(inbox, out, step);
        self.exchange_knowledge(&mutual, out, step);
        self.run_planner(p, reports, out, step);
    }

    /// Match the offers delivered this step against last step's own
    /// sightings. A candidate confirms only when exactly one sender passes
    /// the check, and a sender passing for two different candidates is
    /// distrusted entirely; translated copies of the scene then withhold
    /// confirmation instead of mislocating a teammate.
    fn evaluate_offers(&mut self, inbox: &[Message], out: &mut Mailbox, step: u32) {
        let offers: Vec<(AgentId, &VisionDigest, Vec2)> = inbox
            .iter()
            .filter_map(|m| match &m.body {
                Body::HandshakeOffer {
                    digest,
                    partner_offset,
                } => Some((m.sender, digest, *partner_offset)),
                _ => None,
            })
            .collect();
        let mut matches: Vec<(AgentId, Vec2)> = Vec::new();
        let mut sender_hits: BTreeMap<AgentId, usize> = BTreeMap::new();
        for pending in &self.pending_offers {
            let passing: Vec<AgentId> = offers
                .iter()
                .filter(|(_, digest, their_offset)| {
                    confirm_encounter(&pending.digest, digest, pending.offset, *their_offset)
                })
                .map(|(sender, _, _)| *sender)
                .collect();
            if let [only] = passing.as_slice() {
                matches.push((*only, pending.frame_pos));
            }
            for s in passing {
                *sender_hits.entry(s).or_insert(0) += 1;
            }
        }
        self.confirms_sent.clear();
        for (sender, frame_pos) in matches {
            if sender_hits.get(&sender).copied().unwrap_or(0) != 1 {
                continue;
            }
            self.confirms_sent.insert(sender, frame_pos);
            out.send(self.id, Recipient::Agent(sender), Body::HandshakeConfirm, step);
        }
        self.pending_offers.clear();
    }

    /// Send the knowledge payload on freshly confirmed encounters. Contact
    /// that merely persists from the previous step exchanges nothing.
    fn exchange_knowledge(&mut self, mutual: &[AgentId], out: &mut Mailbox, step: u32) {
        for partner in mutual {
            let fresh = self.last_mutual.get(partner) != Some(&(step.wrapping_sub(1)));
            if fresh {
                out.send(
                    self.id,
                    Recipient::Agent(*partner),
                    Body::SharedKnowledge(on_confirmed(&self.beliefs)),
                    step,
                );
            }
            self.last_mutual.insert(*partner, step);
        }
    }

    fn run_planner(
        &mut self,
        p: &Percept,
        reports: Vec<(AgentId, Vec<(Vec2, crate::grid::BlockType)>)>,
        out: &mut Mailbox,
        step: u32,
    ) {
        let Some(node) = &mut self.planner else {
            return;
        };
        if let Some(plan) = &node.active {
            let events = PlanEvents {
                step,
                disabled_reports: BTreeSet::new(),
                submitted: false,
                task_available: p.tasks.iter().any(|t| t.name == plan.task.name),
            };
            if let Some(reason) = monitor_plan(plan, &events) {
                out.send(
                    self.id,
                    Recipient::Team(self.team),
                    Body::PlanAbort { reason },
                    step,
                );
                self.drop_plan();
            }
        }
        let Some(node) = &mut self.planner else {
            return;
        };
        if node.active.is_some() {
            return;
        }
        let inventory = aggregate_reports(&reports, &BTreeSet::new());
        let mut candidates = feasible_tasks(&inventory, &p.tasks, step, node.min_steps);
        while let Some(task) = select_task(&candidates).cloned() {
            if let Some(plan) = build_plan(&task, &inventory, step) {
                for agent in plan.assignments.keys() {
                    out.send(
                        self.id,
                        Recipient::Agent(*agent),
                        Body::PlanAssign(plan.clone()),
                        step,
                    );
                }
                node.active = Some(plan);
                break;
            }
            candidates.retain(|t| t.name != task.name);
        }
    }

    /// Advance the methodical goal-area tour when standing on its current
    /// target; only relevant for an assigned non-submitter that has not
    /// located the submitter yet.
    fn update_goal_cycle(&mut self) {
        let Some(plan) = &self.beliefs.active_plan else {
            return;
        };
        if plan.submit_agent == self.id || !plan.assignments.contains_key(&self.id) {
            return;
        }
        if self.beliefs.teammates.contains_key(&plan.submit_agent)
            || self.beliefs.goal_order.is_empty()
        {
            return;
        }
        let target = self.beliefs.goal_order[self.exec.goal_cycle % self.beliefs.goal_order.len()];
        if self.beliefs.self_pos == target {
            self.exec.goal_cycle += 1;
        }
    }

    /// Broadcast one handshake offer per visible teammate and remember the
    /// sightings for next step's evaluation.
    fn send_offers(&mut self, p: &Percept, out: &mut Mailbox, step: u32) {
        self.pending_offers.clear();
        for (off, view) in &p.things {
            let ThingView::Entity { team, .. } = view else {
                continue;
            };
            if *team != self.team {
                continue;
            }
            let digest = vision_digest(p, *off);
            out.send(
                self.id,
                Recipient::Team(self.team),
                Body::HandshakeOffer {
                    digest: digest.clone(),
                    partner_offset: *off,
                },
                step,
            );
            self.pending_offers.push(PendingCandidate {
                offset: *off,
                digest,
                frame_pos: self.beliefs.self_pos + *off,
            });
        }
    }
}
