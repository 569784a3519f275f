//! Experiment runner: one scheduling policy driving the platform over a
//! pre-generated workload until every event has completed.
//!
//! The controller picks a worker on arrival, the event reaches the worker
//! after one message delay and then waits in the worker's queue. Two
//! worker disciplines exist. The FCFS invoker serves a single queue with
//! one shared limit for concurrent and pooled instances. The NOAH invoker
//! keeps one queue per class and decides per class whether to wait for a
//! busy instance or to start a new one.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{InstanceRecord, SojournRecord};
use crate::platform::{EvictionCause, InstanceId, Notice, Platform, PlatformConfig, PlatformError, PlatformStats};
use crate::queueing::{estimate_allocations, pool_unsampled, RateEstimator};
use crate::rng;
use crate::schedulers::noah::{cap_targets, place_allocations, try_schedule};
use crate::schedulers::openwhisk::class_hash;
use crate::schedulers::{
    binpack_select, noah, ow_select_host, play_game, AllocationMap, FitPolicy, NoahParams, NoncoopParams,
    SchedulerConfig, WorkerAction,
};
use crate::workload::{sync_penalty_execution, Event, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("event ({class}, {seq}) failed at t={time:.6}: its instance was evicted")]
    EventFailed { class: usize, seq: u64, time: f64 },
    #[error("instance {inst} failed to start at t={time:.6}")]
    CreationFailed { inst: u64, time: f64 },
    #[error("invariant violated at t={time:.6}: {what}")]
    Invariant { time: f64, what: String },
    #[error("simulation stalled with {completed} of {expected} events complete")]
    Stalled { completed: usize, expected: usize },
}

#[derive(Debug, Clone, Copy)]
enum Tok {
    Arrival(usize),
    Deliver(usize),
    Tick,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    /// one record per input event, in input order
    pub records: Vec<SojournRecord>,
    pub instances: Vec<InstanceRecord>,
    pub dispatch_counts: Vec<u32>,
    pub completion_counts: Vec<u32>,
    /// allocation-map checks performed on NOAH ticks
    pub allocation_checks: u64,
    pub allocation_trace: Vec<AllocationSnapshot>,
    pub stats: PlatformStats,
    pub end_time: f64,
}

/// NOAH allocation map after one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSnapshot {
    pub time: f64,
    /// per-worker allocation cap
    pub cap: usize,
    /// estimated counts before capping
    pub targets: Vec<usize>,
    pub class_totals: Vec<usize>,
    pub worker_totals: Vec<usize>,
}

enum Policy {
    OpenWhisk {
        busy_alpha: usize,
        rng: ChaCha8Rng,
    },
    BinPack {
        fit: FitPolicy,
        cursor: usize,
    },
    Noncoop {
        p: NoncoopParams,
        fractions: Vec<Vec<f64>>,
        worker_est: Vec<RateEstimator>,
        rng: ChaCha8Rng,
    },
    Noah {
        p: NoahParams,
        z_n: usize,
        alloc_cap: usize,
        map: AllocationMap,
        reports: Vec<Vec<usize>>,
        /// per-worker log of the setup time of served events
        setups: Vec<RateEstimator>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum From {
    Idle,
    Paused,
    Ready,
}

struct WorkerState {
    fifo: VecDeque<usize>,
    queues: Vec<VecDeque<usize>>,
    /// starting plus busy instances
    active: usize,
    /// every live instance
    pool: usize,
    starting: Vec<usize>,
    busy: Vec<usize>,
    paused: Vec<usize>,
    last_taken: Vec<f64>,
}

#[derive(Default, Clone)]
struct EvState {
    worker: usize,
    worker_arrival: f64,
    wait: f64,
    setup: f64,
    dispatches: u32,
    completions: u32,
    record: Option<SojournRecord>,
}

struct InstMeta {
    class: usize,
    worker: usize,
    created_at: f64,
    churn: bool,
    bound: Option<usize>,
}

struct Sim<'a> {
    sc: &'a ScenarioConfig,
    events: &'a [Event],
    p: Platform<Tok>,
    policy: Policy,
    tick: Option<f64>,
    workers: Vec<WorkerState>,
    concurrency: usize,
    pool_limit: usize,
    ev: Vec<EvState>,
    inst: Vec<InstMeta>,
    outstanding: Vec<usize>,
    outstanding_class: Vec<Vec<usize>>,
    class_est: Vec<RateEstimator>,
    shares: Vec<VecDeque<(f64, usize)>>,
    completed: usize,
    checks: u64,
    alloc_trace: Vec<AllocationSnapshot>,
    msg_delay: f64,
}

/// Runs `events` to completion under `sched`. The events must be sorted
/// by arrival time.
pub fn simulate(
    sc: &ScenarioConfig,
    pc: &PlatformConfig,
    sched: &SchedulerConfig,
    events: &[Event],
) -> Result<SimResult, SimError> {
    sc.validate().map_err(SimError::Config)?;
    pc.validate().map_err(SimError::Config)?;
    sched.validate().map_err(SimError::Config)?;
    if let Some(e) = events.iter().find(|e| e.class >= sc.num_classes) {
        return Err(SimError::Config(format!("event of unknown class {}", e.class)));
    }
    if events.windows(2).any(|w| w[1].arrival < w[0].arrival) || events.first().is_some_and(|e| e.arrival < 0.0) {
        return Err(SimError::Config("events are not sorted by arrival time".into()));
    }
    let mut sim = Sim::new(sc, pc, sched, events);
    if events.is_empty() {
        return Ok(sim.finish());
    }
    if sim.tick.is_some() {
        sim.p.start_timer(0.0, Tok::Tick);
    }
    sim.p.start_timer_at(events[0].arrival, Tok::Arrival(0));
    while sim.completed < events.len() {
        let Some((_, notice)) = sim.p.next() else {
            return Err(SimError::Stalled {
                completed: sim.completed,
                expected: events.len(),
            });
        };
        sim.handle(notice)?;
    }
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(sc: &'a ScenarioConfig, pc: &PlatformConfig, sched: &SchedulerConfig, events: &'a [Event]) -> Self {
        let (nw, nk) = (sc.num_workers, sc.num_classes);
        let limit = |o: f64| ((o * sc.cores as f64).round() as usize).max(1);
        let mut window = 10.0;
        let mut tick = None;
        let (policy, concurrency, pool_limit) = match sched {
            SchedulerConfig::Openwhisk(p) => (
                Policy::OpenWhisk {
                    busy_alpha: p.busy_alpha,
                    rng: rng::stream(sc.seed, "openwhisk", 0),
                },
                limit(p.oversubscription),
                limit(p.oversubscription),
            ),
            SchedulerConfig::FirstFit(p) | SchedulerConfig::NextFit(p) | SchedulerConfig::BestFit(p) => {
                let fit = match sched {
                    SchedulerConfig::FirstFit(_) => FitPolicy::FirstFit,
                    SchedulerConfig::NextFit(_) => FitPolicy::NextFit,
                    _ => FitPolicy::BestFit,
                };
                (
                    Policy::BinPack { fit, cursor: 0 },
                    limit(p.oversubscription),
                    limit(p.oversubscription),
                )
            }
            SchedulerConfig::Noncoop(p) => {
                window = p.window;
                tick = Some(p.tick);
                (
                    Policy::Noncoop {
                        p: p.clone(),
                        fractions: vec![vec![1.0 / nw as f64; nw]; nk],
                        worker_est: (0..nw).map(|_| RateEstimator::new(p.window, 0.0)).collect(),
                        rng: rng::stream(sc.seed, "noncoop", 0),
                    },
                    limit(p.oversubscription),
                    limit(p.oversubscription),
                )
            }
            SchedulerConfig::Noah(p) => {
                window = p.window;
                tick = Some(p.tick);
                let (z_n, z_c, alloc_cap) = p.limits(sc.cores);
                (
                    Policy::Noah {
                        p: p.clone(),
                        z_n,
                        alloc_cap,
                        map: AllocationMap::new(nk, nw),
                        reports: vec![vec![0; nw]; nk],
                        setups: (0..nw).map(|_| RateEstimator::new(p.window, p.default_setup)).collect(),
                    },
                    z_n,
                    z_c,
                )
            }
        };
        let p = Platform::new(sc, pc);
        let msg_delay = p.message_delay();
        Self {
            sc,
            events,
            p,
            policy,
            tick,
            workers: (0..nw)
                .map(|_| WorkerState {
                    fifo: VecDeque::new(),
                    queues: vec![VecDeque::new(); nk],
                    active: 0,
                    pool: 0,
                    starting: vec![0; nk],
                    busy: vec![0; nk],
                    paused: vec![0; nk],
                    last_taken: vec![f64::NEG_INFINITY; nk],
                })
                .collect(),
            concurrency,
            pool_limit,
            ev: vec![EvState::default(); events.len()],
            inst: Vec::new(),
            outstanding: vec![0; nw],
            outstanding_class: vec![vec![0; nw]; nk],
            class_est: (0..nk).map(|_| RateEstimator::new(window, 0.0)).collect(),
            shares: vec![VecDeque::new(); nk],
            completed: 0,
            checks: 0,
            alloc_trace: Vec::new(),
            msg_delay,
        }
    }

    fn now(&self) -> f64 {
        self.p.now()
    }

    fn is_noah(&self) -> bool {
        matches!(self.policy, Policy::Noah { .. })
    }

    fn invariant(&self, what: impl Into<String>) -> SimError {
        SimError::Invariant {
            time: self.now(),
            what: what.into(),
        }
    }

    fn handle(&mut self, notice: Notice<Tok>) -> Result<(), SimError> {
        match notice {
            Notice::Timer(Tok::Arrival(e)) => self.arrive(e),
            Notice::Timer(Tok::Deliver(e)) => self.deliver(e),
            Notice::Timer(Tok::Tick) => self.on_tick(),
            Notice::InstanceReady { inst, setup } => self.ready(inst, setup),
            Notice::InstanceFailed { inst } => Err(SimError::CreationFailed {
                inst: inst.0,
                time: self.now(),
            }),
            Notice::InvocationDone { inst, event, setup, exec } => self.done(inst, event, setup, exec),
            Notice::InvocationFailed { event, .. } => Err(SimError::EventFailed {
                class: self.events[event].class,
                seq: self.events[event].seq,
                time: self.now(),
            }),
            Notice::InstanceEvicted { inst, cause } => {
                self.forget_paused(inst);
                if cause == EvictionCause::MemoryPressure {
                    let w = self.inst[inst.0 as usize].worker;
                    if let Some(m) = self.inst.iter_mut().rev().find(|m| m.worker == w) {
                        m.churn = true;
                    }
                }
                Ok(())
            }
        }
    }

    fn arrive(&mut self, e: usize) -> Result<(), SimError> {
        let now = self.now();
        let k = self.events[e].class;
        self.class_est[k].record_arrival(now);
        let w = self.choose(k)?;
        self.ev[e].worker = w;
        self.ev[e].dispatches += 1;
        self.outstanding[w] += 1;
        self.outstanding_class[k][w] += 1;
        if self.sc.beta(k) > 0.0 {
            self.shares[k].push_back((now, w));
        }
        self.p.start_timer(self.msg_delay, Tok::Deliver(e));
        if e + 1 < self.events.len() {
            self.p.start_timer_at(self.events[e + 1].arrival, Tok::Arrival(e + 1));
        }
        Ok(())
    }

    fn choose(&mut self, k: usize) -> Result<usize, SimError> {
        let nw = self.workers.len();
        let w = match &mut self.policy {
            Policy::OpenWhisk { busy_alpha, rng } => ow_select_host(class_hash(k), &self.outstanding, *busy_alpha, rng),
            Policy::BinPack { fit, cursor } => binpack_select(*fit, &self.outstanding, self.sc.cores, cursor).0,
            Policy::Noncoop { fractions, rng, .. } => match WeightedIndex::new(&fractions[k]) {
                Ok(d) => d.sample(rng),
                Err(_) => rng.random_range(0..nw),
            },
            Policy::Noah { map, reports, .. } => match noah::dispatch(k, map, reports, &self.outstanding_class) {
                Some(w) => w,
                None => return Err(self.invariant(format!("class {k} has no allocation"))),
            },
        };
        Ok(w)
    }

    fn deliver(&mut self, e: usize) -> Result<(), SimError> {
        let now = self.now();
        let (w, k) = (self.ev[e].worker, self.events[e].class);
        self.ev[e].worker_arrival = now;
        if self.is_noah() {
            self.workers[w].queues[k].push_back(e);
            self.schedule_class(w, k)?;
        } else {
            self.workers[w].fifo.push_back(e);
            self.pump(w, None)?;
        }
        self.check_worker(w)
    }

    fn check_worker(&self, w: usize) -> Result<(), SimError> {
        let s = &self.workers[w];
        if s.active > s.pool || s.pool > self.pool_limit {
            return Err(self.invariant(format!(
                "worker {w}: {} active, {} pooled, pool limit {}",
                s.active, s.pool, self.pool_limit
            )));
        }
        if !self.is_noah() && s.active > self.concurrency {
            return Err(self.invariant(format!("worker {w}: {} active over limit {}", s.active, self.concurrency)));
        }
        Ok(())
    }

    /// Removes `e` from its queue's bookkeeping, checking that a class's
    /// events leave a worker queue in arrival order.
    fn take(&mut self, w: usize, e: usize) -> Result<(), SimError> {
        let k = self.events[e].class;
        let t = self.ev[e].worker_arrival;
        if t < self.workers[w].last_taken[k] {
            return Err(self.invariant(format!("class {k} at worker {w} left its queue out of order")));
        }
        self.workers[w].last_taken[k] = t;
        Ok(())
    }

    fn demand(&mut self, e: usize, w: usize) -> f64 {
        let (k, p) = (self.events[e].class, self.events[e].demand);
        let beta = self.sc.beta(k);
        if beta <= 0.0 {
            return p;
        }
        let horizon = self.now() - self.sc.share_window;
        let recent = &mut self.shares[k];
        while recent.front().is_some_and(|(t, _)| *t < horizon) {
            recent.pop_front();
        }
        let phi = if recent.is_empty() {
            1.0
        } else {
            recent.iter().filter(|(_, x)| *x == w).count() as f64 / recent.len() as f64
        };
        sync_penalty_execution(p, beta, phi)
    }

    /// Starts event `e` on `inst`.
    fn begin(&mut self, e: usize, inst: InstanceId, wait: f64, setup: f64, from: From) -> Result<(), SimError> {
        let (w, k) = (self.ev[e].worker, self.events[e].class);
        self.take(w, e)?;
        self.ev[e].wait = wait;
        self.ev[e].setup = setup;
        let s = &mut self.workers[w];
        match from {
            From::Idle => s.active += 1,
            From::Paused => {
                s.active += 1;
                s.paused[k] -= 1;
            }
            From::Ready => s.starting[k] -= 1,
        }
        s.busy[k] += 1;
        if from == From::Paused {
            self.clamp_reports(w, k);
        }
        let demand = self.demand(e, w);
        self.p.invoke(inst, demand, e)?;
        Ok(())
    }

    /// Starts a new instance of `k` on `w`, evicting the least recently
    /// paused instance if the pool is full. Returns false when nothing
    /// can be evicted.
    fn create(&mut self, w: usize, k: usize, bound: Option<usize>) -> Result<bool, SimError> {
        let mut churn = false;
        if self.workers[w].pool >= self.pool_limit {
            let Some(victim) = self.p.lru_paused(w) else {
                return Ok(false);
            };
            self.p.evict(victim)?;
            self.forget_paused(victim);
            churn = true;
        }
        let id = self.p.create_instance(k, w)?;
        debug_assert_eq!(id.0 as usize, self.inst.len());
        self.inst.push(InstMeta {
            class: k,
            worker: w,
            created_at: self.now(),
            churn,
            bound,
        });
        let s = &mut self.workers[w];
        s.pool += 1;
        s.active += 1;
        s.starting[k] += 1;
        if let Some(e) = bound {
            self.take(w, e)?;
            self.ev[e].wait = self.now() - self.ev[e].worker_arrival;
        }
        Ok(true)
    }

    fn forget_paused(&mut self, inst: InstanceId) {
        let (w, k) = {
            let m = &self.inst[inst.0 as usize];
            (m.worker, m.class)
        };
        let s = &mut self.workers[w];
        s.paused[k] -= 1;
        s.pool -= 1;
        self.clamp_reports(w, k);
    }

    fn clamp_reports(&mut self, w: usize, k: usize) {
        let paused = self.workers[w].paused[k];
        if let Policy::Noah { reports, .. } = &mut self.policy {
            reports[k][w] = reports[k][w].min(paused);
        }
    }

    fn pause(&mut self, inst: InstanceId, report: bool) -> Result<(), SimError> {
        let (w, k) = {
            let m = &self.inst[inst.0 as usize];
            (m.worker, m.class)
        };
        self.p.pause(inst)?;
        self.workers[w].paused[k] += 1;
        if report {
            if let Policy::Noah { reports, .. } = &mut self.policy {
                reports[k][w] += 1;
            }
        }
        Ok(())
    }

    /// FCFS invoker. `fresh` is an instance that has just finished and is
    /// still idle; it serves the head event if the classes match and is
    /// paused otherwise.
    fn pump(&mut self, w: usize, mut fresh: Option<InstanceId>) -> Result<(), SimError> {
        let now = self.now();
        while let Some(&e) = self.workers[w].fifo.front() {
            let k = self.events[e].class;
            let wait = now - self.ev[e].worker_arrival;
            if let Some(i) = fresh.take() {
                if self.inst[i.0 as usize].class == k {
                    self.workers[w].fifo.pop_front();
                    self.begin(e, i, wait, 0.0, From::Idle)?;
                    continue;
                }
                self.pause(i, false)?;
            }
            if self.workers[w].active >= self.concurrency {
                break;
            }
            if let Some(i) = self.p.paused_of(w, k) {
                self.workers[w].fifo.pop_front();
                self.begin(e, i, wait, 0.0, From::Paused)?;
                continue;
            }
            self.workers[w].fifo.pop_front();
            if !self.create(w, k, Some(e))? {
                self.workers[w].fifo.push_front(e);
                break;
            }
        }
        if let Some(i) = fresh {
            self.pause(i, false)?;
        }
        Ok(())
    }


    /// NOAH worker decision loop for one class queue.
    fn schedule_class(&mut self, w: usize, k: usize) -> Result<(), SimError> {
        let z_n = match &self.policy {
            Policy::Noah { z_n, .. } => *z_n,
            _ => unreachable!("NOAH worker logic under another policy"),
        };
        let now = self.now();
        let mu_hat = self.class_est[k].estimate(k, now).mu_hat;
        let mean_setup = match &mut self.policy {
            Policy::Noah { setups, .. } => setups[w].estimate(w, now).mean_setup,
            _ => 0.0,
        };
        loop {
            let s = &self.workers[w];
            let queued = s.queues[k].len();
            let has_idle = self.p.paused_of(w, k).is_some();
            // each starting instance will take one queued event when ready
            if !has_idle && queued <= s.starting[k] {
                break;
            }
            let instances = s.starting[k] + s.busy[k];
            match try_schedule(has_idle, s.active, z_n, queued, instances, mu_hat, mean_setup) {
                WorkerAction::RunOnIdle => {
                    let e = self.workers[w].queues[k].pop_front().expect("queue is non-empty");
                    let i = self.p.paused_of(w, k).expect("paused instance exists");
                    let wait = now - self.ev[e].worker_arrival;
                    self.begin(e, i, wait, 0.0, From::Paused)?;
                }
                WorkerAction::LaunchInstance => {
                    if !self.create(w, k, None)? {
                        break;
                    }
                }
                WorkerAction::LeaveQueued => break,
            }
        }
        Ok(())
    }

    /// Offers freed capacity on `w` to every class queue, longest first.
    fn schedule_all(&mut self, w: usize) -> Result<(), SimError> {
        let mut order: Vec<usize> = (0..self.sc.num_classes)
            .filter(|&k| !self.workers[w].queues[k].is_empty())
            .collect();
        order.sort_by_key(|&k| (std::cmp::Reverse(self.workers[w].queues[k].len()), k));
        for k in order {
            self.schedule_class(w, k)?;
        }
        Ok(())
    }

    fn ready(&mut self, inst: InstanceId, setup: f64) -> Result<(), SimError> {
        let now = self.now();
        let (w, k, bound) = {
            let m = &self.inst[inst.0 as usize];
            (m.worker, m.class, m.bound)
        };
        if let Some(e) = bound {
            let wait = self.ev[e].wait;
            self.begin_bound(e, inst, wait, setup)?;
        } else if let Some(e) = self.workers[w].queues[k].pop_front() {
            // the part of this event's wait that overlapped the setup
            let waited = now - self.ev[e].worker_arrival;
            let share = setup.min(waited);
            self.begin(e, inst, waited - share, share, From::Ready)?;
        } else {
            let s = &mut self.workers[w];
            s.starting[k] -= 1;
            s.active -= 1;
            self.pause(inst, true)?;
            self.schedule_all(w)?;
        }
        self.check_worker(w)
    }

    /// A bound event was already taken from its queue at creation time.
    fn begin_bound(&mut self, e: usize, inst: InstanceId, wait: f64, setup: f64) -> Result<(), SimError> {
        let (w, k) = (self.ev[e].worker, self.events[e].class);
        self.ev[e].wait = wait;
        self.ev[e].setup = setup;
        let s = &mut self.workers[w];
        s.starting[k] -= 1;
        s.busy[k] += 1;
        let demand = self.demand(e, w);
        self.p.invoke(inst, demand, e)?;
        Ok(())
    }

    fn done(&mut self, inst: InstanceId, e: usize, resume: f64, exec: f64) -> Result<(), SimError> {
        let now = self.now();
        let ev = &self.events[e];
        let (w, k) = (self.ev[e].worker, ev.class);
        let m = &self.inst[inst.0 as usize];
        self.ev[e].record = Some(SojournRecord {
            class: k,
            seq: ev.seq,
            arrival: ev.arrival,
            dispatch: self.msg_delay,
            wait: self.ev[e].wait,
            setup: self.ev[e].setup + resume,
            exec,
            worker: w,
            instance: inst.0,
            completion: now,
            churn: m.churn,
        });
        self.ev[e].completions += 1;
        self.completed += 1;
        self.outstanding[w] -= 1;
        self.outstanding_class[k][w] -= 1;
        let s = &mut self.workers[w];
        s.busy[k] -= 1;
        s.active -= 1;
        self.class_est[k].record_execution(now, exec);
        match &mut self.policy {
            Policy::Noncoop { worker_est, .. } => worker_est[w].record_execution(now, exec),
            Policy::Noah { setups, .. } => setups[w].record_setup(now, self.ev[e].setup + resume),
            _ => {}
        }
        if self.is_noah() {
            if let Some(next) = self.workers[w].queues[k].pop_front() {
                let wait = now - self.ev[next].worker_arrival;
                self.begin(next, inst, wait, 0.0, From::Idle)?;
            } else {
                self.pause(inst, true)?;
            }
            self.schedule_all(w)?;
        } else {
            self.pump(w, Some(inst))?;
        }
        self.check_worker(w)
    }

    fn on_tick(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let nw = self.workers.len();
        let cores = self.sc.cores as f64;
        let demand = self.sc.demand.max(1e-3);
        let mut estimates: Vec<_> = (0..self.sc.num_classes)
            .map(|k| self.class_est[k].estimate(k, now))
            .collect();
        match &mut self.policy {
            Policy::Noah {
                p, z_n, alloc_cap, map, ..
            } => {
                pool_unsampled(&mut estimates);
                let cap = *z_n * nw;
                let targets: Vec<usize> = estimates
                    .iter()
                    .enumerate()
                    .map(|(k, est)| estimate_allocations(est, p.alpha_for(k), cap, p.bootstrap).count)
                    .collect();
                place_allocations(map, &targets, *alloc_cap);
                let (capped, _) = cap_targets(&targets, *alloc_cap * nw);
                if let Err(what) = map.check(*alloc_cap, Some(&capped)) {
                    return Err(SimError::Invariant { time: now, what });
                }
                self.checks += 1;
                self.alloc_trace.push(AllocationSnapshot {
                    time: now,
                    cap: *alloc_cap,
                    class_totals: (0..map.classes()).map(|k| map.class_total(k)).collect(),
                    worker_totals: (0..nw).map(|w| map.worker_total(w)).collect(),
                    targets,
                });
            }
            Policy::Noncoop {
                p, fractions, worker_est, ..
            } => {
                let phi: Vec<f64> = estimates.iter().map(|e| e.lambda_hat).collect();
                let mu: Vec<f64> = (0..nw)
                    .map(|w| {
                        let m = worker_est[w].estimate(w, now).mu_hat;
                        if m > 0.0 {
                            cores * m
                        } else {
                            cores / demand
                        }
                    })
                    .collect();
                *fractions = match play_game(&phi, &mu, p.epsilon, p.max_rounds) {
                    Ok(g) => g.fractions,
                    Err(_) => {
                        let total: f64 = mu.iter().sum();
                        vec![mu.iter().map(|m| m / total).collect(); phi.len()]
                    }
                };
            }
            _ => {}
        }
        if let Some(t) = self.tick {
            if self.completed < self.events.len() {
                self.p.start_timer(t, Tok::Tick);
            }
        }
        Ok(())
    }

    fn finish(self) -> SimResult {
        SimResult {
            records: self.ev.iter().filter_map(|e| e.record).collect(),
            instances: self
                .inst
                .iter()
                .enumerate()
                .map(|(i, m)| InstanceRecord {
                    id: i as u64,
                    class: m.class,
                    worker: m.worker,
                    created_at: m.created_at,
                    churn: m.churn,
                })
                .collect(),
            dispatch_counts: self.ev.iter().map(|e| e.dispatches).collect(),
            completion_counts: self.ev.iter().map(|e| e.completions).collect(),
            allocation_checks: self.checks,
            allocation_trace: self.alloc_trace,
            stats: self.p.stats().clone(),
            end_time: self.p.now(),
        }
    }
}
