//! Team messaging: the one-step-delayed mailbox, vision digests for the
//! encounter handshake, and the message bodies agents exchange.
//!
//! The mailbox is the only channel between agents. Anything sent during one
//! step becomes readable exactly one step later, so every protocol built on
//! top has to reason about positions at send time.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::beliefs::{BeliefBase, SharedKnowledge};
use crate::grid::{AgentId, BlockType, Direction, Team, Terrain, Vec2};
use crate::planner::{AbortReason, TaskPlan};
use crate::world::{Percept, ThingView};

/// Message destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Recipient {
    Agent(AgentId),
    Team(Team),
}

/// One message in flight. `sent_step` and `seq` are stamped by the mailbox.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub sender: AgentId,
    pub recipient: Recipient,
    pub sent_step: u32,
    pub seq: u32,
    pub body: Body,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    /// I saw a teammate at `partner_offset`; this is what our shared vision
    /// looks like from the midpoint between us.
    HandshakeOffer {
        digest: VisionDigest,
        partner_offset: Vec2,
    },
    /// Your offer matched mine; I now know who you are.
    HandshakeConfirm,
    SharedKnowledge(SharedKnowledge),
    Moved { direction: Direction },
    AttachReport { attachments: Vec<(Vec2, BlockType)> },
    PlanAssign(TaskPlan),
    PlanAbort { reason: AbortReason },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::HandshakeOffer { .. } => "offer",
            Body::HandshakeConfirm => "confirm",
            Body::SharedKnowledge(_) => "shared",
            Body::Moved { .. } => "moved",
            Body::AttachReport { .. } => "attach_report",
            Body::PlanAssign(_) => "plan_assign",
            Body::PlanAbort { .. } => "plan_abort",
        }
    }
}

/// Canonical description of everything two agents can both see, in
/// half-cell offsets from the midpoint between them. Because the midpoint
/// is the same world point for both parties and all agents share compass
/// orientation, two digests of the same encounter are equal entry for entry.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct VisionDigest {
    pub entries: Vec<DigestEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DigestEntry {
    /// `2 * offset_from_observer - offset_to_candidate`, i.e. the doubled
    /// offset from the midpoint between observer and candidate.
    pub half_offset: Vec2,
    pub item: DigestItem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DigestItem {
    Obstacle,
    Goal,
    Entity(Team),
    Block(BlockType),
    Dispenser(BlockType),
}

/// The store-and-forward mailbox. Messages sent while resolving step `s`
/// are delivered by the [`Mailbox::advance`] call of step `s + 1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mailbox {
    pending: Vec<Message>,
    seq: u32,
}

/// One delivery batch: per-recipient inboxes plus the digests the replay
/// log records.
#[derive(Clone, Debug, Default)]
pub struct Delivery {
    pub inboxes: BTreeMap<AgentId, Vec<Message>>,
    pub delivered: Vec<Message>,
}

impl Mailbox {
    pub fn new() -> Self {
        Mailbox::default()
    }

    pub fn send(&mut self, sender: AgentId, recipient: Recipient, body: Body, current_step: u32) {
        let seq = self.seq;
        self.seq += 1;
        self.pending.push(Message {
            sender,
            recipient,
            sent_step: current_step,
            seq,
            body,
        });
    }

    /// Deliver everything sent in the previous step, grouped per recipient
    /// and ordered by (sender, send sequence). Messages from the current
    /// step stay queued. Team recipients fan out to every team member except
    /// the sender.
    pub fn advance(&mut self, roster: &[(AgentId, Team)], current_step: u32) -> Delivery {
        let mut due: Vec<Message> = Vec::new();
        self.pending.retain(|m| {
            if current_step > 0 && m.sent_step == current_step - 1 {
                due.push(m.clone());
                false
            } else {
                debug_assert!(
                    m.sent_step >= current_step,
                    "message missed its delivery step"
                );
                true
            }
        });
        due.sort_by(|a, b| (a.sender, a.seq).cmp(&(b.sender, b.seq)));

        let mut inboxes: BTreeMap<AgentId, Vec<Message>> = BTreeMap::new();
        for m in &due {
            match m.recipient {
                Recipient::Agent(id) => inboxes.entry(id).or_default().push(m.clone()),
                Recipient::Team(team) => {
                    for (id, t) in roster {
                        if *t == team && *id != m.sender {
                            inboxes.entry(*id).or_default().push(m.clone());
                        }
                    }
                }
            }
        }
        Delivery {
            inboxes,
            delivered: due,
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
}

/// Build the digest of everything both the observer and the candidate
/// teammate at `candidate_offset` can see: the intersection of the two
/// vision balls, with both endpoint entities excluded.
pub fn vision_digest(p: &Percept, candidate_offset: Vec2) -> VisionDigest {
    debug_assert!(
        matches!(p.thing_at(candidate_offset), Some(ThingView::Entity { team, .. }) if *team == p.team),
        "candidate offset must point at a same-team entity"
    );
    let r = p.vision_radius;
    let shared = |off: Vec2| off.manhattan() <= r && (off - candidate_offset).manhattan() <= r;
    let mut entries: Vec<DigestEntry> = Vec::new();
    for (off, t) in &p.terrain {
        if !shared(*off) {
            continue;
        }
        let item = match t {
            Terrain::Obstacle => DigestItem::Obstacle,
            Terrain::Goal => DigestItem::Goal,
            Terrain::Empty => continue,
        };
        entries.push(DigestEntry {
            half_offset: Vec2::new(2 * off.x, 2 * off.y) - candidate_offset,
            item,
        });
    }
    for (off, view) in &p.things {
        if !shared(*off) {
            continue;
        }
        let item = match view {
            ThingView::Entity { team, .. } => {
                if *off == candidate_offset {
                    continue; // the candidate itself
                }
                DigestItem::Entity(*team)
            }
            ThingView::Block { block_type, .. } => DigestItem::Block(*block_type),
            ThingView::Dispenser { block_type } => DigestItem::Dispenser(*block_type),
        };
        entries.push(DigestEntry {
            half_offset: Vec2::new(2 * off.x, 2 * off.y) - candidate_offset,
            item,
        });
    }
    entries.sort();
    VisionDigest { entries }
}

/// Two agents agree they encountered each other iff their claimed offsets
/// mirror each other and their shared-vision digests are identical. The
/// relation is symmetric by construction.
pub fn confirm_encounter(
    mine: &VisionDigest,
    theirs: &VisionDigest,
    my_offset_to_them: Vec2,
    their_offset_to_me: Vec2,
) -> bool {
    my_offset_to_them == -their_offset_to_me && mine == theirs
}

/// The knowledge payload sent once an encounter is mutually confirmed.
pub fn on_confirmed(b: &BeliefBase) -> SharedKnowledge {
    SharedKnowledge {
        goal_cells: b.goal_cells.iter().copied().collect(),
        teammates: b.teammates.iter().map(|(id, pos)| (*id, *pos)).collect(),
        partner_self_pos: b.self_pos,
    }
}

/// The per-step attachment report to the planning agent; agents working on
/// a plan stay silent.
pub fn report_attachments(b: &BeliefBase) -> Option<Vec<(Vec2, BlockType)>> {
    if b.active_plan.is_some() {
        return None;
    }
    Some(b.attachments.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldBuilder;
    use alloc::vec;

    fn roster() -> Vec<(AgentId, Team)> {
        vec![
            (AgentId(0), Team::A),
            (AgentId(1), Team::A),
            (AgentId(2), Team::A),
            (AgentId(3), Team::B),
        ]
    }

    #[test]
    fn delivery_is_exactly_one_step_late() {
        let mut mb = Mailbox::new();
        mb.send(
            AgentId(0),
            Recipient::Agent(AgentId(1)),
            Body::HandshakeConfirm,
            7,
        );
        let at7 = mb.advance(&roster(), 7);
        assert!(at7.inboxes.is_empty(), "not delivered in the send step");
        let at8 = mb.advance(&roster(), 8);
        assert_eq!(at8.inboxes[&AgentId(1)].len(), 1);
        assert_eq!(at8.inboxes[&AgentId(1)][0].sent_step, 7);
        assert_eq!(mb.pending_len(), 0);
    }

    #[test]
    fn empty_mailbox_delivers_nothing() {
        let mut mb = Mailbox::new();
        assert!(mb.advance(&roster(), 3).inboxes.is_empty());
    }

    #[test]
    fn delivery_order_is_sender_then_sequence() {
        let mut mb = Mailbox::new();
        mb.send(AgentId(2), Recipient::Agent(AgentId(0)), Body::HandshakeConfirm, 4);
        mb.send(AgentId(1), Recipient::Agent(AgentId(0)), Body::HandshakeConfirm, 4);
        mb.send(AgentId(1), Recipient::Agent(AgentId(0)), Body::Moved { direction: Direction::North }, 4);
        let d = mb.advance(&roster(), 5);
        let inbox = &d.inboxes[&AgentId(0)];
        assert_eq!(inbox.len(), 3);
        assert_eq!(inbox[0].sender, AgentId(1));
        assert!(matches!(inbox[0].body, Body::HandshakeConfirm));
        assert_eq!(inbox[1].sender, AgentId(1));
        assert!(matches!(inbox[1].body, Body::Moved { .. }));
        assert_eq!(inbox[2].sender, AgentId(2));
    }

    #[test]
    fn broadcast_skips_sender_and_other_team() {
        let mut mb = Mailbox::new();
        mb.send(AgentId(0), Recipient::Team(Team::A), Body::HandshakeConfirm, 0);
        let d = mb.advance(&roster(), 1);
        assert!(!d.inboxes.contains_key(&AgentId(0)));
        assert!(d.inboxes.contains_key(&AgentId(1)));
        assert!(d.inboxes.contains_key(&AgentId(2)));
        assert!(!d.inboxes.contains_key(&AgentId(3)));
    }

    /// Two teammates four cells apart with a block midway between them.
    fn encounter_world() -> crate::world::GridState {
        WorldBuilder::new(20, 20)
            .agent(0, Team::A, 8, 10)
            .agent(1, Team::A, 12, 10)
            .block(10, 10, BlockType(0))
            .build()
    }

    #[test]
    fn symmetric_scene_digests_match() {
        let w = encounter_world();
        let p0 = w.perceive(AgentId(0));
        let p1 = w.perceive(AgentId(1));
        let d0 = vision_digest(&p0, Vec2::new(4, 0));
        let d1 = vision_digest(&p1, Vec2::new(-4, 0));
        assert_eq!(d0, d1);
        assert_eq!(d0.entries.len(), 1);
        assert!(confirm_encounter(&d0, &d1, Vec2::new(4, 0), Vec2::new(-4, 0)));
        assert!(confirm_encounter(&d1, &d0, Vec2::new(-4, 0), Vec2::new(4, 0)));
    }

    #[test]
    fn object_outside_intersection_is_absent() {
        // Obstacle west of agent 0 is visible to it but not to agent 1.
        let w = WorldBuilder::new(20, 20)
            .agent(0, Team::A, 8, 10)
            .agent(1, Team::A, 12, 10)
            .obstacle(4, 10)
            .build();
        let d0 = vision_digest(&w.perceive(AgentId(0)), Vec2::new(4, 0));
        let d1 = vision_digest(&w.perceive(AgentId(1)), Vec2::new(-4, 0));
        assert!(d0.entries.is_empty());
        assert_eq!(d0, d1);
    }

    #[test]
    fn differing_surroundings_break_agreement() {
        // Candidate pairs at the same relative offset but with different
        // scenery: the digests must differ.
        let w = WorldBuilder::new(30, 20)
            .agent(0, Team::A, 8, 10)
            .agent(1, Team::A, 12, 10)
            .agent(2, Team::A, 20, 10)
            .agent(3, Team::A, 24, 10)
            .block(10, 10, BlockType(0))
            .build();
        let d0 = vision_digest(&w.perceive(AgentId(0)), Vec2::new(4, 0));
        let d3 = vision_digest(&w.perceive(AgentId(3)), Vec2::new(-4, 0));
        assert_ne!(d0, d3);
        assert!(!confirm_encounter(&d0, &d3, Vec2::new(4, 0), Vec2::new(-4, 0)));
    }

    #[test]
    fn inconsistent_offsets_fail_regardless_of_digests() {
        let w = encounter_world();
        let d0 = vision_digest(&w.perceive(AgentId(0)), Vec2::new(4, 0));
        let d1 = vision_digest(&w.perceive(AgentId(1)), Vec2::new(-4, 0));
        assert!(!confirm_encounter(&d0, &d1, Vec2::new(4, 0), Vec2::new(-3, 0)));
    }

    #[test]
    fn shared_payload_carries_everything() {
        let mut b = BeliefBase::new(AgentId(0));
        b.self_pos = Vec2::new(2, 2);
        b.goal_cells.insert(Vec2::new(1, 1));
        b.goal_cells.insert(Vec2::new(4, 4));
        b.goal_cells.insert(Vec2::new(5, 5));
        b.teammates.insert(AgentId(1), Vec2::new(0, 3));
        b.teammates.insert(AgentId(2), Vec2::new(9, 9));
        let payload = on_confirmed(&b);
        assert_eq!(payload.goal_cells.len(), 3);
        assert_eq!(payload.teammates.len(), 2);
        assert_eq!(payload.partner_self_pos, Vec2::new(2, 2));

        let empty = on_confirmed(&BeliefBase::new(AgentId(4)));
        assert!(empty.goal_cells.is_empty());
        assert!(empty.teammates.is_empty());
    }

    #[test]
    fn attach_reports_only_without_plan() {
        let mut b = BeliefBase::new(AgentId(0));
        b.attachments.insert((Vec2::new(0, -1), BlockType(0)));
        assert_eq!(
            report_attachments(&b),
            Some(vec![(Vec2::new(0, -1), BlockType(0))])
        );
        b.attachments.insert((Vec2::new(1, 0), BlockType(1)));
        b.attachments.insert((Vec2::new(0, 1), BlockType(2)));
        b.attachments.insert((Vec2::new(-1, 0), BlockType(3)));
        let report = report_attachments(&b).unwrap();
        assert_eq!(report.len(), 4);
        assert!(report.windows(2).all(|w| w[0].0 < w[1].0), "sorted by offset");

        b.active_plan = Some(TaskPlan {
            task: crate::world::Task {
                name: "t".into(),
                deadline: 100,
                reward: 10,
                pattern: vec![(Vec2::new(0, 1), BlockType(0))],
            },
            assignments: Default::default(),
            submit_agent: AgentId(0),
            created_step: 0,
        });
        assert_eq!(report_attachments(&b), None);
    }
}
