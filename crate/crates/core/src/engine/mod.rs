//! Deterministic discrete-event core and the worker processing model.
//!
//! Every worker owns a processor-sharing [`CpuSet`] and an LRU [`Memory`].
//! Compute work, memory reads and memory writes are all executions that
//! compete for the same CPU. The engine is generic over an opaque token
//! that callers attach to executions and timers and get back when they
//! complete.

mod cpu;
mod memory;
mod queue;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use cpu::CpuSet;
pub use memory::{AfterWrite, Allocation, Memory};
pub use queue::EventQueue;

pub type WorkerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExecId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AllocId(pub u64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),
    #[error("invalid execution demand {0}")]
    InvalidDemand(f64),
    #[error("allocation of {size} bytes cannot fit in memory of {capacity} bytes")]
    AllocationImpossible { size: u64, capacity: u64 },
    #[error("allocation {0:?} has been evicted")]
    Evicted(AllocId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecKind {
    Compute,
    MemRead(AllocId),
    MemWrite(AllocId),
}

#[derive(Debug, Clone)]
pub struct Execution<T> {
    pub worker: WorkerId,
    pub demand: f64,
    pub started_at: f64,
    pub kind: ExecKind,
    pub token: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Occurrence<T> {
    Completed {
        exec: ExecId,
        kind: ExecKind,
        started_at: f64,
        token: T,
    },
    /// The execution was interrupted because an allocation it depended on
    /// was evicted.
    Aborted {
        exec: ExecId,
        cause: AllocId,
        token: T,
    },
    Timer {
        token: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fired<T> {
    pub time: f64,
    pub what: Occurrence<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerSpec {
    pub cores: usize,
    pub memory_capacity: u64,
    /// memory read/write throughput, bytes per second
    pub memory_speed: f64,
}

enum Wake<T> {
    Cpu { worker: WorkerId, generation: u64 },
    Timer(T),
}

struct Node {
    cpu: CpuSet,
    memory: Memory,
    generation: u64,
}

pub struct Engine<T> {
    queue: EventQueue<Wake<T>>,
    nodes: Vec<Node>,
    execs: BTreeMap<ExecId, Execution<T>>,
    /// remaining demand of executions that are waiting for memory access
    blocked: BTreeMap<ExecId, f64>,
    subscriptions: BTreeMap<ExecId, Vec<AllocId>>,
    alloc_owner: BTreeMap<AllocId, WorkerId>,
    ready: VecDeque<Fired<T>>,
    next_exec: u64,
    next_alloc: u64,
}

impl<T> Engine<T> {
    pub fn new(workers: &[WorkerSpec]) -> Self {
        let nodes = workers
            .iter()
            .map(|spec| Node {
                cpu: CpuSet::new(spec.cores),
                memory: Memory::new(spec.memory_capacity, spec.memory_speed),
                generation: 0,
            })
            .collect();
        Self {
            queue: EventQueue::new(),
            nodes,
            execs: BTreeMap::new(),
            blocked: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            alloc_owner: BTreeMap::new(),
            ready: VecDeque::new(),
            next_exec: 0,
            next_alloc: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn worker_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn cpu(&self, worker: WorkerId) -> &CpuSet {
        &self.nodes[worker].cpu
    }

    pub fn memory(&self, worker: WorkerId) -> &Memory {
        &self.nodes[worker].memory
    }

    pub fn execution(&self, exec: ExecId) -> Option<&Execution<T>> {
        self.execs.get(&exec)
    }

    pub fn alloc_worker(&self, alloc: AllocId) -> Option<WorkerId> {
        self.alloc_owner.get(&alloc).copied()
    }

    /// Time of the next occurrence, if any is pending.
    pub fn peek_time(&self) -> Option<f64> {
        if !self.ready.is_empty() {
            return Some(self.now());
        }
        self.queue.peek_time()
    }

    fn check_worker(&self, worker: WorkerId) -> Result<(), EngineError> {
        if worker < self.nodes.len() {
            Ok(())
        } else {
            Err(EngineError::UnknownWorker(worker))
        }
    }

    fn new_exec(&mut self, worker: WorkerId, demand: f64, kind: ExecKind, token: T) -> ExecId {
        let id = ExecId(self.next_exec);
        self.next_exec += 1;
        self.execs.insert(
            id,
            Execution {
                worker,
                demand,
                started_at: self.queue.now(),
                kind,
                token,
            },
        );
        id
    }

    fn reschedule(&mut self, worker: WorkerId) {
        let node = &mut self.nodes[worker];
        node.generation += 1;
        if let Some(t) = node.cpu.next_completion() {
            let generation = node.generation;
            self.queue.push(t, Wake::Cpu { worker, generation });
        }
    }

    fn run_on_cpu(&mut self, worker: WorkerId, exec: ExecId, demand: f64) {
        let now = self.queue.now();
        self.nodes[worker].cpu.insert(now, exec, demand);
    }

    /// Moves a blocked execution onto the CPU with its remaining demand.
    fn unblock(&mut self, worker: WorkerId, exec: ExecId) {
        if let Some(left) = self.blocked.remove(&exec) {
            self.run_on_cpu(worker, exec, left);
        }
    }

    /// Adds a single-threaded compute execution to the worker's PS set.
    pub fn submit_execution(
        &mut self,
        worker: WorkerId,
        demand: f64,
        token: T,
    ) -> Result<ExecId, EngineError> {
        self.check_worker(worker)?;
        if !(demand >= 0.0 && demand.is_finite()) {
            return Err(EngineError::InvalidDemand(demand));
        }
        let id = self.new_exec(worker, demand, ExecKind::Compute, token);
        self.run_on_cpu(worker, id, demand);
        self.reschedule(worker);
        Ok(id)
    }

    pub fn start_timer(&mut self, delay: f64, token: T) {
        self.queue.push_after(delay.max(0.0), Wake::Timer(token));
    }

    pub fn start_timer_at(&mut self, time: f64, token: T) {
        self.queue.push(time, Wake::Timer(token));
    }

    /// Allocates `size` bytes on `worker`, evicting least recently used
    /// allocations as needed. Executions attached to evicted allocations
    /// are aborted. Returns the new id and the evicted ids.
    pub fn mem_allocate(
        &mut self,
        worker: WorkerId,
        size: u64,
    ) -> Result<(AllocId, Vec<AllocId>), EngineError> {
        self.check_worker(worker)?;
        let id = AllocId(self.next_alloc);
        let evicted = self.nodes[worker].memory.allocate(id, size)?;
        self.next_alloc += 1;
        self.alloc_owner.insert(id, worker);
        let mut ids = Vec::with_capacity(evicted.len());
        for alloc in evicted {
            ids.push(alloc.id);
            self.drop_allocation(worker, alloc);
        }
        Ok((id, ids))
    }

    /// Frees an allocation. Anything still attached to it is aborted.
    pub fn mem_release(&mut self, alloc: AllocId) -> Result<(), EngineError> {
        let worker = self.alloc_owner.get(&alloc).copied().ok_or(EngineError::Evicted(alloc))?;
        let dropped = self.nodes[worker]
            .memory
            .release(alloc)
            .ok_or(EngineError::Evicted(alloc))?;
        self.drop_allocation(worker, dropped);
        Ok(())
    }

    fn drop_allocation(&mut self, worker: WorkerId, alloc: Allocation) {
        self.alloc_owner.remove(&alloc.id);
        for exec in alloc.attached() {
            self.abort(exec, alloc.id);
        }
        self.reschedule(worker);
    }

    fn abort(&mut self, exec: ExecId, cause: AllocId) {
        let Some(entry) = self.execs.remove(&exec) else {
            return;
        };
        let worker = entry.worker;
        let now = self.queue.now();
        self.nodes[worker].cpu.remove(now, exec);
        self.blocked.remove(&exec);
        self.clear_subscriptions(exec);
        match entry.kind {
            ExecKind::MemRead(a) if a != cause => {
                self.detach_read(worker, a, exec);
            }
            ExecKind::MemWrite(a) if a != cause => {
                self.detach_write(worker, a, exec);
            }
            _ => {}
        }
        self.reschedule(worker);
        self.ready.push_back(Fired {
            time: now,
            what: Occurrence::Aborted {
                exec,
                cause,
                token: entry.token,
            },
        });
    }

    fn detach_read(&mut self, worker: WorkerId, alloc: AllocId, exec: ExecId) {
        self.nodes[worker].memory.read_done(alloc, exec);
        self.nodes[worker].memory.forget_blocked(alloc, exec);
    }

    fn detach_write(&mut self, worker: WorkerId, alloc: AllocId, exec: ExecId) {
        let memory = &mut self.nodes[worker].memory;
        if memory.get(alloc).and_then(|a| a.write_in_service) == Some(exec) {
            let next = memory.write_done(alloc, exec);
            self.apply_after_write(worker, next);
        } else {
            memory.forget_queued_write(alloc, exec);
        }
    }

    fn clear_subscriptions(&mut self, exec: ExecId) {
        if let Some(allocs) = self.subscriptions.remove(&exec) {
            for a in allocs {
                if let Some(&w) = self.alloc_owner.get(&a) {
                    self.nodes[w].memory.unsubscribe(a, exec);
                }
            }
        }
    }

    /// Marks an allocation as most recently used.
    pub fn mem_touch(&mut self, alloc: AllocId) {
        if let Some(&w) = self.alloc_owner.get(&alloc) {
            self.nodes[w].memory.touch(alloc);
        }
    }

    /// Interrupt `exec` if `alloc` is evicted before `exec` completes.
    pub fn subscribe(&mut self, alloc: AllocId, exec: ExecId) -> Result<(), EngineError> {
        let worker = self.alloc_owner.get(&alloc).copied().ok_or(EngineError::Evicted(alloc))?;
        self.nodes[worker].memory.subscribe(alloc, exec)?;
        self.subscriptions.entry(exec).or_default().push(alloc);
        Ok(())
    }

    /// Reads `bytes` from an allocation. Concurrent with other reads,
    /// blocked behind queued or in-service writes.
    pub fn mem_read(&mut self, alloc: AllocId, bytes: u64, token: T) -> Result<ExecId, EngineError> {
        let worker = self.alloc_owner.get(&alloc).copied().ok_or(EngineError::Evicted(alloc))?;
        let demand = self.nodes[worker].memory.transfer_work(bytes);
        let id = self.new_exec(worker, demand, ExecKind::MemRead(alloc), token);
        if self.nodes[worker].memory.request_read(alloc, id)? {
            self.run_on_cpu(worker, id, demand);
            self.reschedule(worker);
        } else {
            self.blocked.insert(id, demand);
        }
        Ok(id)
    }

    /// Writes `bytes` into an allocation. Writes are served FCFS and
    /// preempt reads in service; preempted reads resume afterwards with
    /// their remaining work.
    pub fn mem_write(&mut self, alloc: AllocId, bytes: u64, token: T) -> Result<ExecId, EngineError> {
        let worker = self.alloc_owner.get(&alloc).copied().ok_or(EngineError::Evicted(alloc))?;
        let demand = self.nodes[worker].memory.transfer_work(bytes);
        let id = self.new_exec(worker, demand, ExecKind::MemWrite(alloc), token);
        self.blocked.insert(id, demand);
        if let Some(preempted) = self.nodes[worker].memory.request_write(alloc, id)? {
            let now = self.queue.now();
            for r in preempted {
                if let Some(left) = self.nodes[worker].cpu.remove(now, r) {
                    self.blocked.insert(r, left);
                }
            }
            self.unblock(worker, id);
            self.reschedule(worker);
        }
        Ok(id)
    }

    fn apply_after_write(&mut self, worker: WorkerId, next: AfterWrite) {
        match next {
            AfterWrite::StartWrite(w) => self.unblock(worker, w),
            AfterWrite::ResumeReads(reads) => {
                for r in reads {
                    self.unblock(worker, r);
                }
            }
        }
    }

    fn finish_cpu(&mut self, worker: WorkerId) {
        let now = self.queue.now();
        let done = self.nodes[worker].cpu.pop_finished(now);
        for id in done {
            let Some(entry) = self.execs.remove(&id) else {
                continue;
            };
            self.clear_subscriptions(id);
            match entry.kind {
                ExecKind::Compute => {}
                ExecKind::MemRead(a) => self.nodes[worker].memory.read_done(a, id),
                ExecKind::MemWrite(a) => {
                    let next = self.nodes[worker].memory.write_done(a, id);
                    self.apply_after_write(worker, next);
                }
            }
            self.ready.push_back(Fired {
                time: now,
                what: Occurrence::Completed {
                    exec: id,
                    kind: entry.kind,
                    started_at: entry.started_at,
                    token: entry.token,
                },
            });
        }
        self.reschedule(worker);
    }

    /// Advances the simulation to the next occurrence and returns it.
    pub fn next(&mut self) -> Option<Fired<T>> {
        loop {
            if let Some(fired) = self.ready.pop_front() {
                return Some(fired);
            }
            let (time, wake) = self.queue.pop()?;
            match wake {
                Wake::Timer(token) => {
                    return Some(Fired {
                        time,
                        what: Occurrence::Timer { token },
                    })
                }
                Wake::Cpu { worker, generation } => {
                    if self.nodes[worker].generation == generation {
                        self.finish_cpu(worker);
                    }
                }
            }
        }
    }
}
