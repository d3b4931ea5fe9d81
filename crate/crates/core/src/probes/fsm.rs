use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::predicate::Predicate;
use crate::model::Packet;

pub type StateId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: StateId,
    pub when: Predicate,
    pub to: StateId,
}

/// Per-flow transition table. Packets matching no transition leave the
/// state unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmTable {
    #[serde(default)]
    pub initial: StateId,
    pub transitions: Vec<Transition>,
    pub accepting: BTreeSet<StateId>,
}

impl FsmTable {
    /// `count` consecutive packets matching `p`; anything else resets.
    pub fn consecutive(p: Predicate, count: u32) -> FsmTable {
        let mut transitions = Vec::new();
        for s in 0..count {
            transitions.push(Transition {
                from: s,
                when: p.clone(),
                to: s + 1,
            });
            if s > 0 {
                transitions.push(Transition {
                    from: s,
                    when: Predicate::negate(p.clone()),
                    to: 0,
                });
            }
        }
        FsmTable {
            initial: 0,
            transitions,
            accepting: BTreeSet::from([count]),
        }
    }

    pub(crate) fn map_tags(&mut self, f: &impl Fn(&str) -> String) {
        for t in &mut self.transitions {
            t.when.map_tags(f);
        }
    }
}

/// Applies the first matching transition out of `state`. Returns the new
/// state and, when a transition lands in an accepting state, that state.
pub fn fsm_step(table: &FsmTable, state: StateId, packet: &Packet) -> (StateId, Option<StateId>) {
    match table
        .transitions
        .iter()
        .find(|t| t.from == state && t.when.eval(packet))
    {
        Some(t) => {
            let event = table.accepting.contains(&t.to).then_some(t.to);
            (t.to, event)
        }
        None => (state, None),
    }
}
