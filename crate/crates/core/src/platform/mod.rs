//! Serverless platform on top of the engine: replicated data items,
//! instance creation, invocation, pausing and eviction.
//!
//! Work is organised as jobs. A job waits on legs (engine executions,
//! timers or child jobs) and advances through its stages as legs finish.
//! Callers see the outcome as a stream of [`Notice`]s.

mod instance;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use instance::{Instance, InstanceId, InstanceState};

use crate::engine::{AllocId, Engine, EngineError, Occurrence, WorkerId, WorkerSpec};
use crate::rng;
use crate::workload::{ScenarioConfig, MB};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformDelays {
    /// CPU work of creating a container, in CPU-seconds
    pub container_create: f64,
    pub function_init: f64,
    pub cold_cache_init: f64,
    pub resume: f64,
    pub warm_start_min: f64,
    pub warm_start_max: f64,
    pub idle_timeout: f64,
    /// worker setup time t_W, charged by the worker-level cost objective
    pub worker_setup: f64,
}

impl Default for PlatformDelays {
    fn default() -> Self {
        Self {
            container_create: 0.482,
            function_init: 0.300,
            cold_cache_init: 1.475,
            resume: 0.0086,
            warm_start_min: 0.001,
            warm_start_max: 0.020,
            idle_timeout: 300.0,
            worker_setup: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub delays: PlatformDelays,
    pub image_bytes: u64,
    pub runtime_bytes: u64,
    pub code_bytes: u64,
    pub message_bytes: u64,
    /// charge the cold cache delay on the first repository pull of each item
    pub cold_cache: bool,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            delays: PlatformDelays::default(),
            image_bytes: 290 * MB,
            runtime_bytes: 140 * MB,
            code_bytes: MB,
            message_bytes: 1_000,
            cold_cache: false,
        }
    }
}

impl PlatformConfig {
    pub fn footprint(&self) -> u64 {
        self.image_bytes + self.runtime_bytes
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = &self.delays;
        let all = [
            d.container_create,
            d.function_init,
            d.cold_cache_init,
            d.resume,
            d.warm_start_min,
            d.warm_start_max,
            d.idle_timeout,
            d.worker_setup,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("platform delays must be finite and non-negative".into());
        }
        if d.warm_start_max < d.warm_start_min {
            return Err("warm_start_max is below warm_start_min".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("instance {inst:?} cannot go from {from:?} to {to:?}")]
    InvalidTransition {
        inst: InstanceId,
        from: InstanceState,
        to: InstanceState,
    },
    #[error("unknown class {0}")]
    UnknownClass(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvictionCause {
    IdleTimeout,
    MemoryPressure,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Notice<U> {
    Timer(U),
    InstanceReady {
        inst: InstanceId,
        setup: f64,
    },
    InstanceFailed {
        inst: InstanceId,
    },
    InvocationDone {
        inst: InstanceId,
        event: usize,
        /// resume delay paid before the event started
        setup: f64,
        /// wall time from the end of setup to completion
        exec: f64,
    },
    InvocationFailed {
        inst: InstanceId,
        event: usize,
    },
    InstanceEvicted {
        inst: InstanceId,
        cause: EvictionCause,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Repository,
    Worker(WorkerId),
    Container(InstanceId),
}

#[derive(Debug, Clone)]
pub struct DataItem {
    pub name: String,
    pub size: u64,
    pub replicas: BTreeMap<WorkerId, AllocId>,
    pulled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformStats {
    pub replications: u64,
    pub repository_pulls: u64,
    pub network_bytes: u64,
    pub memory_evictions: u64,
    pub timeout_evictions: u64,
}

pub const IMAGE: usize = 0;
pub const RUNTIME: usize = 1;

const PLAIN: u8 = 0;
const READ: u8 = 1;
const WRITE: u8 = 2;
const XFER: u8 = 3;
const CODE_REPL: u8 = 4;
const CODE_READ: u8 = 5;
const MAX_ATTEMPTS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LegRef {
    job: u64,
    epoch: u32,
    tag: u8,
}

enum Tok<U> {
    Leg(LegRef),
    User(U),
    IdleTimeout { inst: InstanceId, gen: u64 },
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Worker(WorkerId),
    Container(InstanceId),
}

struct Replication {
    item: usize,
    target: Target,
    dest: AllocId,
    pending: u32,
    attempts: u32,
    waiters: Vec<LegRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Deps,
    Copy,
    Container,
    Init,
}

struct Creation {
    inst: InstanceId,
    requested_at: f64,
    stage: Stage,
    pending: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InvStage {
    Resume,
    Warm,
    Exec,
}

struct Invocation {
    inst: InstanceId,
    event: usize,
    demand: f64,
    resume: f64,
    warm: f64,
    exec_start: f64,
    stage: InvStage,
}

enum Job {
    Replicate(Replication),
    Create(Creation),
    Invoke(Invocation),
}

struct JobEntry {
    epoch: u32,
    job: Job,
}

pub struct Platform<U> {
    engine: Engine<Tok<U>>,
    cfg: PlatformConfig,
    memory_speed: f64,
    disk_speed: f64,
    network_speed: f64,
    classes: usize,
    items: Vec<DataItem>,
    replica_of: BTreeMap<AllocId, (usize, WorkerId)>,
    container_of: BTreeMap<AllocId, InstanceId>,
    inflight: BTreeMap<(usize, WorkerId), u64>,
    jobs: BTreeMap<u64, JobEntry>,
    next_job: u64,
    instances: Vec<Instance>,
    paused: Vec<BTreeSet<(u64, InstanceId)>>,
    paused_by_class: BTreeMap<(WorkerId, usize), BTreeSet<(u64, InstanceId)>>,
    stamp: u64,
    immediate: VecDeque<(LegRef, bool)>,
    notices: VecDeque<(f64, Notice<U>)>,
    warm_rng: ChaCha8Rng,
    stats: PlatformStats,
}

impl<U> Platform<U> {
    pub fn new(sc: &ScenarioConfig, cfg: &PlatformConfig) -> Self {
        let spec = WorkerSpec {
            cores: sc.cores,
            memory_capacity: sc.memory_bytes,
            memory_speed: sc.memory_speed,
        };
        let mut items = vec![
            DataItem {
                name: "image".into(),
                size: cfg.image_bytes,
                replicas: BTreeMap::new(),
                pulled: false,
            },
            DataItem {
                name: "runtime".into(),
                size: cfg.runtime_bytes,
                replicas: BTreeMap::new(),
                pulled: false,
            },
        ];
        for k in 0..sc.num_classes {
            items.push(DataItem {
                name: format!("code-{k}"),
                size: cfg.code_bytes,
                replicas: BTreeMap::new(),
                pulled: false,
            });
        }
        Self {
            engine: Engine::new(&vec![spec; sc.num_workers]),
            cfg: cfg.clone(),
            memory_speed: sc.memory_speed,
            disk_speed: sc.disk_speed,
            network_speed: sc.network_speed,
            classes: sc.num_classes,
            items,
            replica_of: BTreeMap::new(),
            container_of: BTreeMap::new(),
            inflight: BTreeMap::new(),
            jobs: BTreeMap::new(),
            next_job: 0,
            instances: Vec::new(),
            paused: vec![BTreeSet::new(); sc.num_workers],
            paused_by_class: BTreeMap::new(),
            stamp: 0,
            immediate: VecDeque::new(),
            notices: VecDeque::new(),
            warm_rng: rng::stream(sc.seed, "warm-start", 0),
            stats: PlatformStats::default(),
        }
    }

    pub fn now(&self) -> f64 {
        self.engine.now()
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.cfg
    }

    pub fn worker_count(&self) -> usize {
        self.engine.worker_count()
    }

    pub fn engine_cpu_delivered(&self, w: WorkerId) -> f64 {
        self.engine.cpu(w).delivered()
    }

    pub fn memory_used(&self, w: WorkerId) -> u64 {
        self.engine.memory(w).used()
    }

    pub fn memory_capacity(&self, w: WorkerId) -> u64 {
        self.engine.memory(w).capacity()
    }

    pub fn stats(&self) -> &PlatformStats {
        &self.stats
    }

    pub fn instance(&self, id: InstanceId) -> &Instance {
        &self.instances[id.0 as usize]
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn item(&self, id: usize) -> &DataItem {
        &self.items[id]
    }

    pub fn code_item(&self, class: usize) -> usize {
        2 + class
    }

    pub fn replica_locations(&self, item: usize) -> Vec<Location> {
        self.items[item].replicas.keys().map(|w| Location::Worker(*w)).collect()
    }

    pub fn message_delay(&self) -> f64 {
        self.cfg.message_bytes as f64 / self.network_speed
    }

    pub fn start_timer(&mut self, delay: f64, token: U) {
        self.engine.start_timer(delay, Tok::User(token));
    }

    pub fn start_timer_at(&mut self, time: f64, token: U) {
        self.engine.start_timer_at(time, Tok::User(token));
    }

    /// Least recently paused instance on a worker.
    pub fn lru_paused(&self, w: WorkerId) -> Option<InstanceId> {
        self.paused[w].first().map(|(_, i)| *i)
    }

    /// Most recently paused instance of a class on a worker.
    pub fn paused_of(&self, w: WorkerId, class: usize) -> Option<InstanceId> {
        self.paused_by_class
            .get(&(w, class))
            .and_then(|s| s.last())
            .map(|(_, i)| *i)
    }

    pub fn paused_count(&self, w: WorkerId) -> usize {
        self.paused[w].len()
    }

    fn inst_mut(&mut self, id: InstanceId) -> &mut Instance {
        &mut self.instances[id.0 as usize]
    }

    fn transition(&mut self, id: InstanceId, to: InstanceState) -> Result<(), PlatformError> {
        let inst = self.inst_mut(id);
        if !inst.state.can_become(to) {
            return Err(PlatformError::InvalidTransition {
                inst: id,
                from: inst.state,
                to,
            });
        }
        inst.state = to;
        Ok(())
    }

    fn unindex_paused(&mut self, id: InstanceId) {
        let (w, class, stamp) = {
            let i = self.instance(id);
            (i.worker, i.class, i.pause_stamp)
        };
        self.paused[w].remove(&(stamp, id));
        if let Some(s) = self.paused_by_class.get_mut(&(w, class)) {
            s.remove(&(stamp, id));
        }
    }

    fn new_job(&mut self, job: Job) -> u64 {
        let id = self.next_job;
        self.next_job += 1;
        self.jobs.insert(id, JobEntry { epoch: 0, job });
        id
    }

    fn leg(&self, job: u64, tag: u8) -> LegRef {
        LegRef {
            job,
            epoch: self.jobs.get(&job).map_or(0, |j| j.epoch),
            tag,
        }
    }

    /// Starts creating an instance of `class` on `worker`. The instance
    /// reserves its memory footprint immediately, possibly evicting least
    /// recently used allocations. Completion is announced with
    /// [`Notice::InstanceReady`].
    pub fn create_instance(&mut self, class: usize, worker: WorkerId) -> Result<InstanceId, PlatformError> {
        if class >= self.classes {
            return Err(PlatformError::UnknownClass(class));
        }
        if worker >= self.worker_count() {
            return Err(EngineError::UnknownWorker(worker).into());
        }
        let (alloc, evicted) = self.engine.mem_allocate(worker, self.cfg.footprint())?;
        let id = InstanceId(self.instances.len() as u64);
        let now = self.now();
        self.instances.push(Instance::new(id, class, worker, now));
        self.transition(id, InstanceState::Starting)?;
        self.inst_mut(id).container = Some(alloc);
        self.container_of.insert(alloc, id);
        self.handle_evictions(evicted);
        let job = self.new_job(Job::Create(Creation {
            inst: id,
            requested_at: now,
            stage: Stage::Deps,
            pending: 2,
        }));
        self.inst_mut(id).job = Some(job);
        let l = self.leg(job, PLAIN);
        self.ensure_replica(IMAGE, worker, l);
        self.ensure_replica(RUNTIME, worker, l);
        Ok(id)
    }

    /// Runs one event on an idle or paused instance. Paused instances pay
    /// the resume delay first. Returns the resume delay.
    pub fn invoke(&mut self, id: InstanceId, demand: f64, event: usize) -> Result<f64, PlatformError> {
        let state = self.instance(id).state;
        let resume = match state {
            InstanceState::Paused => {
                self.unindex_paused(id);
                self.transition(id, InstanceState::Idle)?;
                self.cfg.delays.resume
            }
            InstanceState::Idle => 0.0,
            other => {
                return Err(PlatformError::InvalidTransition {
                    inst: id,
                    from: other,
                    to: InstanceState::Busy,
                })
            }
        };
        self.transition(id, InstanceState::Busy)?;
        if let Some(c) = self.instance(id).container {
            self.engine.mem_touch(c);
        }
        let d = &self.cfg.delays;
        let warm = if d.warm_start_max > d.warm_start_min {
            self.warm_rng.random_range(d.warm_start_min..d.warm_start_max)
        } else {
            d.warm_start_min
        };
        let now = self.now();
        let job = self.new_job(Job::Invoke(Invocation {
            inst: id,
            event,
            demand,
            resume,
            warm,
            exec_start: now,
            stage: InvStage::Resume,
        }));
        self.inst_mut(id).job = Some(job);
        let l = self.leg(job, PLAIN);
        if resume > 0.0 {
            self.engine.start_timer(resume, Tok::Leg(l));
        } else {
            self.start_warm(job);
        }
        Ok(resume)
    }

    fn start_warm(&mut self, job: u64) {
        let now = self.now();
        let l = self.leg(job, PLAIN);
        if let Some(JobEntry {
            job: Job::Invoke(inv), ..
        }) = self.jobs.get_mut(&job)
        {
            inv.stage = InvStage::Warm;
            inv.exec_start = now;
            let warm = inv.warm;
            self.engine.start_timer(warm, Tok::Leg(l));
        }
    }

    /// Pauses an idle instance and arms its idle timeout.
    pub fn pause(&mut self, id: InstanceId) -> Result<(), PlatformError> {
        self.transition(id, InstanceState::Paused)?;
        self.stamp += 1;
        let now = self.now();
        let stamp = self.stamp;
        let inst = self.inst_mut(id);
        inst.paused_at = Some(now);
        inst.pause_gen += 1;
        inst.pause_stamp = stamp;
        let (w, class, gen) = (inst.worker, inst.class, inst.pause_gen);
        self.paused[w].insert((stamp, id));
        self.paused_by_class.entry((w, class)).or_default().insert((stamp, id));
        let timeout = self.cfg.delays.idle_timeout;
        self.engine.start_timer(timeout, Tok::IdleTimeout { inst: id, gen });
        Ok(())
    }

    /// Evicts an idle or paused instance and frees its memory.
    pub fn evict(&mut self, id: InstanceId) -> Result<(), PlatformError> {
        let state = self.instance(id).state;
        if !matches!(state, InstanceState::Idle | InstanceState::Paused) {
            return Err(PlatformError::InvalidTransition {
                inst: id,
                from: state,
                to: InstanceState::Evicted,
            });
        }
        if state == InstanceState::Paused {
            self.unindex_paused(id);
        }
        self.transition(id, InstanceState::Evicted)?;
        if let Some(c) = self.inst_mut(id).container.take() {
            self.container_of.remove(&c);
            self.engine.mem_release(c)?;
        }
        Ok(())
    }

    /// Evicts every paused instance whose idle time reached the timeout.
    pub fn sweep(&mut self) -> Vec<InstanceId> {
        let now = self.now();
        let timeout = self.cfg.delays.idle_timeout;
        let expired: Vec<InstanceId> = self
            .instances
            .iter()
            .filter(|i| i.state == InstanceState::Paused && i.paused_at.is_some_and(|p| now - p >= timeout))
            .map(|i| i.id)
            .collect();
        for &id in &expired {
            self.evict(id).expect("paused instance can be evicted");
            self.stats.timeout_evictions += 1;
        }
        expired
    }

    fn ensure_replica(&mut self, item: usize, worker: WorkerId, waiter: LegRef) {
        if let Some(&a) = self.items[item].replicas.get(&worker) {
            self.engine.mem_touch(a);
            self.immediate.push_back((waiter, true));
            return;
        }
        if let Some(&j) = self.inflight.get(&(item, worker)) {
            if let Some(JobEntry {
                job: Job::Replicate(r), ..
            }) = self.jobs.get_mut(&j)
            {
                r.waiters.push(waiter);
                return;
            }
        }
        match self.engine.mem_allocate(worker, self.items[item].size) {
            Ok((dest, evicted)) => {
                self.handle_evictions(evicted);
                let job = self.new_job(Job::Replicate(Replication {
                    item,
                    target: Target::Worker(worker),
                    dest,
                    pending: 0,
                    attempts: 0,
                    waiters: vec![waiter],
                }));
                self.inflight.insert((item, worker), job);
                self.launch(job);
            }
            Err(_) => self.immediate.push_back((waiter, false)),
        }
    }

    fn copy_into_container(&mut self, item: usize, inst: InstanceId, waiter: LegRef) {
        let Some(dest) = self.instance(inst).container else {
            self.immediate.push_back((waiter, false));
            return;
        };
        let job = self.new_job(Job::Replicate(Replication {
            item,
            target: Target::Container(inst),
            dest,
            pending: 0,
            attempts: 0,
            waiters: vec![waiter],
        }));
        self.launch(job);
    }

    /// (Re)starts the three legs of a replication from the best source:
    /// a same-worker replica, else another worker, else the repository.
    fn launch(&mut self, job: u64) {
        let entry = self.jobs.get_mut(&job).expect("live job");
        entry.epoch += 1;
        let Job::Replicate(r) = &entry.job else {
            unreachable!("launch on a replication job")
        };
        let (item, target, dest) = (r.item, r.target, r.dest);
        let tw = match target {
            Target::Worker(w) => w,
            Target::Container(i) => self.instance(i).worker,
        };
        let size = self.items[item].size;
        let replicas = &self.items[item].replicas;
        let local = replicas.get(&tw).copied();
        let remote = replicas.iter().find(|(w, _)| **w != tw).map(|(_, a)| *a);
        let (src, speed, extra) = if let Some(a) = local {
            (Some(a), self.memory_speed, 0.0)
        } else if let Some(a) = remote {
            self.stats.network_bytes += size;
            (Some(a), self.network_speed, 0.0)
        } else {
            let extra = if self.cfg.cold_cache && !self.items[item].pulled {
                self.cfg.delays.cold_cache_init
            } else {
                0.0
            };
            self.items[item].pulled = true;
            self.stats.repository_pulls += 1;
            (None, self.disk_speed, extra)
        };
        self.stats.replications += 1;
        let mut pending = 0;
        if let Some(a) = src {
            let l = self.leg(job, READ);
            if self.engine.mem_read(a, size, Tok::Leg(l)).is_ok() {
                pending += 1;
            }
        }
        let l = self.leg(job, WRITE);
        match self.engine.mem_write(dest, size, Tok::Leg(l)) {
            Ok(_) => pending += 1,
            Err(_) => self.immediate.push_back((l, false)),
        }
        let l = self.leg(job, XFER);
        self.engine.start_timer(size as f64 / speed + extra, Tok::Leg(l));
        pending += 1;
        if let Some(JobEntry {
            job: Job::Replicate(r), ..
        }) = self.jobs.get_mut(&job)
        {
            r.pending = pending;
        }
    }

    fn on_leg(&mut self, l: LegRef, ok: bool) {
        let Some(entry) = self.jobs.get(&l.job) else {
            return;
        };
        if entry.epoch != l.epoch {
            return;
        }
        match entry.job {
            Job::Replicate(_) => self.on_replicate_leg(l, ok),
            Job::Create(_) => self.on_create_leg(l, ok),
            Job::Invoke(_) => self.on_invoke_leg(l, ok),
        }
    }

    fn replication(&mut self, job: u64) -> &mut Replication {
        match self.jobs.get_mut(&job) {
            Some(JobEntry {
                job: Job::Replicate(r), ..
            }) => r,
            _ => unreachable!("replication job"),
        }
    }

    fn on_replicate_leg(&mut self, l: LegRef, ok: bool) {
        if ok {
            let r = self.replication(l.job);
            r.pending -= 1;
            if r.pending == 0 {
                let dest = r.dest;
                if self.engine.alloc_worker(dest).is_none() {
                    self.retry_write(l.job);
                } else {
                    self.finish_replication(l.job, true);
                }
            }
            return;
        }
        match l.tag {
            READ => {
                let r = self.replication(l.job);
                r.attempts += 1;
                if r.attempts > MAX_ATTEMPTS {
                    self.finish_replication(l.job, false);
                } else {
                    self.launch(l.job);
                }
            }
            WRITE => self.retry_write(l.job),
            _ => self.finish_replication(l.job, false),
        }
    }

    /// The destination was evicted: a worker replica gets a fresh
    /// allocation, a container copy fails.
    fn retry_write(&mut self, job: u64) {
        let r = self.replication(job);
        r.attempts += 1;
        let (target, item, attempts) = (r.target, r.item, r.attempts);
        let Target::Worker(w) = target else {
            self.finish_replication(job, false);
            return;
        };
        if attempts > MAX_ATTEMPTS {
            self.finish_replication(job, false);
            return;
        }
        match self.engine.mem_allocate(w, self.items[item].size) {
            Ok((dest, evicted)) => {
                self.replication(job).dest = dest;
                self.handle_evictions(evicted);
                self.launch(job);
            }
            Err(_) => self.finish_replication(job, false),
        }
    }

    fn finish_replication(&mut self, job: u64, ok: bool) {
        let Some(JobEntry {
            job: Job::Replicate(r), ..
        }) = self.jobs.remove(&job)
        else {
            return;
        };
        if let Target::Worker(w) = r.target {
            self.inflight.remove(&(r.item, w));
            if ok {
                self.items[r.item].replicas.insert(w, r.dest);
                self.replica_of.insert(r.dest, (r.item, w));
            } else if self.engine.alloc_worker(r.dest).is_some() {
                let _ = self.engine.mem_release(r.dest);
            }
        }
        for w in r.waiters {
            self.immediate.push_back((w, ok));
        }
    }

    fn creation(&mut self, job: u64) -> &mut Creation {
        match self.jobs.get_mut(&job) {
            Some(JobEntry { job: Job::Create(c), .. }) => c,
            _ => unreachable!("creation job"),
        }
    }

    fn on_create_leg(&mut self, l: LegRef, ok: bool) {
        if !ok {
            self.fail_creation(l.job);
            return;
        }
        let c = self.creation(l.job);
        let inst = c.inst;
        let (worker, class, container) = {
            let i = self.instance(inst);
            (i.worker, i.class, i.container)
        };
        let Some(container) = container else {
            self.fail_creation(l.job);
            return;
        };
        let c = self.creation(l.job);
        match c.stage {
            Stage::Deps => {
                c.pending -= 1;
                if c.pending == 0 {
                    c.stage = Stage::Copy;
                    c.pending = 2;
                    let p = self.leg(l.job, PLAIN);
                    self.copy_into_container(IMAGE, inst, p);
                    self.copy_into_container(RUNTIME, inst, p);
                }
            }
            Stage::Copy => {
                c.pending -= 1;
                if c.pending == 0 {
                    c.stage = Stage::Container;
                    c.pending = 1;
                    let p = self.leg(l.job, PLAIN);
                    let work = self.cfg.delays.container_create;
                    let exec = self.engine.submit_execution(worker, work, Tok::Leg(p));
                    let subscribed = exec.and_then(|e| self.engine.subscribe(container, e));
                    if subscribed.is_err() {
                        self.fail_creation(l.job);
                    }
                }
            }
            Stage::Container => {
                c.stage = Stage::Init;
                c.pending = 2;
                let p = self.leg(l.job, PLAIN);
                self.engine.start_timer(self.cfg.delays.function_init, Tok::Leg(p));
                let code = self.code_item(class);
                let cr = self.leg(l.job, CODE_REPL);
                self.ensure_replica(code, worker, cr);
            }
            Stage::Init => {
                if l.tag == CODE_REPL {
                    let code = self.code_item(class);
                    let size = self.items[code].size;
                    match self.items[code].replicas.get(&worker).copied() {
                        Some(a) => {
                            let rd = self.leg(l.job, CODE_READ);
                            if self.engine.mem_read(a, size, Tok::Leg(rd)).is_err() {
                                self.fail_creation(l.job);
                            }
                        }
                        None => {
                            let cr = self.leg(l.job, CODE_REPL);
                            self.ensure_replica(code, worker, cr);
                        }
                    }
                    return;
                }
                c.pending -= 1;
                if c.pending == 0 {
                    let requested_at = c.requested_at;
                    self.jobs.remove(&l.job);
                    let now = self.now();
                    let i = self.inst_mut(inst);
                    i.job = None;
                    i.ready_at = Some(now);
                    self.transition(inst, InstanceState::Idle)
                        .expect("starting instance becomes idle");
                    self.notices.push_back((
                        now,
                        Notice::InstanceReady {
                            inst,
                            setup: now - requested_at,
                        },
                    ));
                }
            }
        }
    }

    fn fail_creation(&mut self, job: u64) {
        let Some(JobEntry { job: Job::Create(c), .. }) = self.jobs.remove(&job) else {
            return;
        };
        self.drop_instance(c.inst);
        let now = self.now();
        self.notices.push_back((now, Notice::InstanceFailed { inst: c.inst }));
    }

    /// Marks an instance evicted and frees its container if still held.
    fn drop_instance(&mut self, id: InstanceId) {
        if self.instance(id).state == InstanceState::Paused {
            self.unindex_paused(id);
        }
        let inst = self.inst_mut(id);
        inst.job = None;
        if inst.state != InstanceState::Evicted {
            inst.state = InstanceState::Evicted;
        }
        if let Some(c) = inst.container.take() {
            self.container_of.remove(&c);
            let _ = self.engine.mem_release(c);
        }
    }

    fn on_invoke_leg(&mut self, l: LegRef, ok: bool) {
        if !ok {
            self.fail_invocation(l.job);
            return;
        }
        let Some(JobEntry {
            job: Job::Invoke(inv), ..
        }) = self.jobs.get_mut(&l.job)
        else {
            return;
        };
        match inv.stage {
            InvStage::Resume => self.start_warm(l.job),
            InvStage::Warm => {
                inv.stage = InvStage::Exec;
                let (inst, demand) = (inv.inst, inv.demand);
                let (worker, container) = {
                    let i = self.instance(inst);
                    (i.worker, i.container)
                };
                let p = self.leg(l.job, PLAIN);
                let res = self
                    .engine
                    .submit_execution(worker, demand, Tok::Leg(p))
                    .and_then(|e| match container {
                        Some(c) => self.engine.subscribe(c, e),
                        None => Ok(()),
                    });
                if res.is_err() {
                    self.fail_invocation(l.job);
                }
            }
            InvStage::Exec => {
                let (inst, event, resume, start) = (inv.inst, inv.event, inv.resume, inv.exec_start);
                self.jobs.remove(&l.job);
                let now = self.now();
                self.transition(inst, InstanceState::Idle)
                    .expect("busy instance becomes idle");
                let i = self.inst_mut(inst);
                i.job = None;
                i.last_finished_at = Some(now);
                i.events_served += 1;
                self.notices.push_back((
                    now,
                    Notice::InvocationDone {
                        inst,
                        event,
                        setup: resume,
                        exec: now - start,
                    },
                ));
            }
        }
    }

    fn fail_invocation(&mut self, job: u64) {
        let Some(JobEntry {
            job: Job::Invoke(inv), ..
        }) = self.jobs.remove(&job)
        else {
            return;
        };
        self.drop_instance(inv.inst);
        let now = self.now();
        self.notices.push_back((
            now,
            Notice::InvocationFailed {
                inst: inv.inst,
                event: inv.event,
            },
        ));
    }

    fn handle_evictions(&mut self, evicted: Vec<AllocId>) {
        for a in evicted {
            if let Some((item, w)) = self.replica_of.remove(&a) {
                self.items[item].replicas.remove(&w);
            }
            if let Some(id) = self.container_of.remove(&a) {
                self.stats.memory_evictions += 1;
                self.inst_mut(id).container = None;
                let (state, job) = {
                    let i = self.instance(id);
                    (i.state, i.job)
                };
                match state {
                    InstanceState::Idle | InstanceState::Paused => {
                        self.drop_instance(id);
                        let now = self.now();
                        self.notices.push_back((
                            now,
                            Notice::InstanceEvicted {
                                inst: id,
                                cause: EvictionCause::MemoryPressure,
                            },
                        ));
                    }
                    InstanceState::Starting => {
                        if let Some(j) = job {
                            self.fail_creation(j);
                        }
                    }
                    InstanceState::Busy => {
                        if let Some(j) = job {
                            self.fail_invocation(j);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn on_idle_timeout(&mut self, id: InstanceId, gen: u64) {
        let i = self.instance(id);
        if i.state == InstanceState::Paused && i.pause_gen == gen {
            self.evict(id).expect("paused instance can be evicted");
            self.stats.timeout_evictions += 1;
            let now = self.now();
            self.notices.push_back((
                now,
                Notice::InstanceEvicted {
                    inst: id,
                    cause: EvictionCause::IdleTimeout,
                },
            ));
        }
    }

    /// Advances until the next notice for the caller.
    pub fn next(&mut self) -> Option<(f64, Notice<U>)> {
        loop {
            if let Some(n) = self.notices.pop_front() {
                return Some(n);
            }
            if let Some((l, ok)) = self.immediate.pop_front() {
                self.on_leg(l, ok);
                continue;
            }
            let fired = self.engine.next()?;
            match fired.what {
                Occurrence::Completed { token: Tok::Leg(l), .. } | Occurrence::Timer { token: Tok::Leg(l) } => {
                    self.on_leg(l, true)
                }
                Occurrence::Aborted { token: Tok::Leg(l), .. } => self.on_leg(l, false),
                Occurrence::Timer { token: Tok::User(u) } => return Some((fired.time, Notice::Timer(u))),
                Occurrence::Timer {
                    token: Tok::IdleTimeout { inst, gen },
                } => self.on_idle_timeout(inst, gen),
                Occurrence::Completed { .. } | Occurrence::Aborted { .. } => {}
            }
        }
    }
}
