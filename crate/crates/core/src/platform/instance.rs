use serde::{Deserialize, Serialize};

use crate::engine::{AllocId, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceState {
    Cold,
    Starting,
    Idle,
    Busy,
    Paused,
    Evicted,
}

impl InstanceState {
    pub fn can_become(self, to: InstanceState) -> bool {
        use InstanceState::*;
        matches!(
            (self, to),
            (Cold, Starting)
                | (Starting, Idle)
                | (Idle, Busy)
                | (Busy, Idle)
                | (Idle, Paused)
                | (Paused, Idle)
        ) || (to == Evicted && self != Evicted)
    }

    pub fn is_live(self) -> bool {
        !matches!(self, InstanceState::Cold | InstanceState::Evicted)
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub id: InstanceId,
    pub class: usize,
    pub worker: WorkerId,
    pub state: InstanceState,
    pub created_at: f64,
    pub ready_at: Option<f64>,
    pub last_finished_at: Option<f64>,
    pub paused_at: Option<f64>,
    pub events_served: u64,
    pub container: Option<AllocId>,
    /// incremented on every pause so stale idle-timeout timers are ignored
    pub(crate) pause_gen: u64,
    pub(crate) pause_stamp: u64,
    pub(crate) job: Option<u64>,
}

impl Instance {
    pub(crate) fn new(id: InstanceId, class: usize, worker: WorkerId, now: f64) -> Self {
        Self {
            id,
            class,
            worker,
            state: InstanceState::Cold,
            created_at: now,
            ready_at: None,
            last_finished_at: None,
            paused_at: None,
            events_served: 0,
            container: None,
            pause_gen: 0,
            pause_stamp: 0,
            job: None,
        }
    }
}
