use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{AllocId, EngineError, ExecId};

/// One live allocation and the accesses currently attached to it.
#[derive(Debug, Clone)]
pub struct Allocation {
    pub id: AllocId,
    pub size: u64,
    stamp: u64,
    /// reads currently being served on the CPU
    pub readers: BTreeSet<ExecId>,
    /// reads waiting for the write queue to drain (preempted ones first)
    pub blocked_reads: VecDeque<ExecId>,
    pub write_in_service: Option<ExecId>,
    pub write_queue: VecDeque<ExecId>,
    pub subscribers: BTreeSet<ExecId>,
}

impl Allocation {
    /// Every execution that must be interrupted if this allocation goes away.
    pub fn attached(&self) -> BTreeSet<ExecId> {
        let mut all: BTreeSet<ExecId> = self.subscribers.clone();
        all.extend(self.readers.iter().copied());
        all.extend(self.blocked_reads.iter().copied());
        all.extend(self.write_in_service);
        all.extend(self.write_queue.iter().copied());
        all
    }
}

/// What the CPU should do after a write finished.
#[derive(Debug, PartialEq, Eq)]
pub enum AfterWrite {
    StartWrite(ExecId),
    ResumeReads(Vec<ExecId>),
}

/// Capacitated memory with LRU eviction and write-priority access control.
#[derive(Debug, Clone)]
pub struct Memory {
    capacity: u64,
    used: u64,
    speed: f64,
    allocs: BTreeMap<AllocId, Allocation>,
    recency: BTreeMap<u64, AllocId>,
    clock: u64,
}

impl Memory {
    /// `speed` is the read/write throughput in bytes per second.
    pub fn new(capacity: u64, speed: f64) -> Self {
        Self {
            capacity,
            used: 0,
            speed,
            allocs: BTreeMap::new(),
            recency: BTreeMap::new(),
            clock: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// CPU-seconds needed to move `bytes` through this memory.
    pub fn transfer_work(&self, bytes: u64) -> f64 {
        bytes as f64 / self.speed
    }

    pub fn get(&self, id: AllocId) -> Option<&Allocation> {
        self.allocs.get(&id)
    }

    pub fn contains(&self, id: AllocId) -> bool {
        self.allocs.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.allocs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allocs.is_empty()
    }

    /// Allocation ids from least to most recently used.
    pub fn lru_order(&self) -> Vec<AllocId> {
        self.recency.values().copied().collect()
    }

    pub fn touch(&mut self, id: AllocId) {
        if let Some(alloc) = self.allocs.get_mut(&id) {
            self.recency.remove(&alloc.stamp);
            self.clock += 1;
            alloc.stamp = self.clock;
            self.recency.insert(alloc.stamp, id);
        }
    }

    /// Makes room for `size` bytes by evicting least recently used
    /// allocations, then registers the new allocation. Returns the evicted
    /// allocations in eviction order.
    pub fn allocate(&mut self, id: AllocId, size: u64) -> Result<Vec<Allocation>, EngineError> {
        if size > self.capacity {
            return Err(EngineError::AllocationImpossible {
                size,
                capacity: self.capacity,
            });
        }
        let mut evicted = Vec::new();
        while self.used + size > self.capacity {
            let (_, victim) = self
                .recency
                .first_key_value()
                .map(|(s, v)| (*s, *v))
                .expect("used > 0 implies a live allocation");
            evicted.push(self.release(victim).expect("victim is live"));
        }
        self.clock += 1;
        let alloc = Allocation {
            id,
            size,
            stamp: self.clock,
            readers: BTreeSet::new(),
            blocked_reads: VecDeque::new(),
            write_in_service: None,
            write_queue: VecDeque::new(),
            subscribers: BTreeSet::new(),
        };
        self.recency.insert(alloc.stamp, id);
        self.allocs.insert(id, alloc);
        self.used += size;
        Ok(evicted)
    }

    pub fn release(&mut self, id: AllocId) -> Option<Allocation> {
        let alloc = self.allocs.remove(&id)?;
        self.recency.remove(&alloc.stamp);
        self.used -= alloc.size;
        Some(alloc)
    }

    pub fn subscribe(&mut self, id: AllocId, exec: ExecId) -> Result<(), EngineError> {
        let alloc = self.allocs.get_mut(&id).ok_or(EngineError::Evicted(id))?;
        alloc.subscribers.insert(exec);
        Ok(())
    }

    pub fn unsubscribe(&mut self, id: AllocId, exec: ExecId) {
        if let Some(alloc) = self.allocs.get_mut(&id) {
            alloc.subscribers.remove(&exec);
        }
    }

    /// Registers a read. Returns `true` if it may be served immediately.
    pub fn request_read(&mut self, id: AllocId, exec: ExecId) -> Result<bool, EngineError> {
        self.touch(id);
        let alloc = self.allocs.get_mut(&id).ok_or(EngineError::Evicted(id))?;
        if alloc.write_in_service.is_some() || !alloc.write_queue.is_empty() {
            alloc.blocked_reads.push_back(exec);
            Ok(false)
        } else {
            alloc.readers.insert(exec);
            Ok(true)
        }
    }

    /// Registers a write. Returns the reads that must be preempted if the
    /// write starts now, or `None` if it was queued behind another write.
    pub fn request_write(
        &mut self,
        id: AllocId,
        exec: ExecId,
    ) -> Result<Option<Vec<ExecId>>, EngineError> {
        self.touch(id);
        let alloc = self.allocs.get_mut(&id).ok_or(EngineError::Evicted(id))?;
        if alloc.write_in_service.is_some() {
            alloc.write_queue.push_back(exec);
            return Ok(None);
        }
        alloc.write_in_service = Some(exec);
        let preempted: Vec<ExecId> = std::mem::take(&mut alloc.readers).into_iter().collect();
        // preempted reads go ahead of reads that were already blocked
        for r in preempted.iter().rev() {
            alloc.blocked_reads.push_front(*r);
        }
        Ok(Some(preempted))
    }

    pub fn read_done(&mut self, id: AllocId, exec: ExecId) {
        if let Some(alloc) = self.allocs.get_mut(&id) {
            alloc.readers.remove(&exec);
        }
    }

    pub fn forget_blocked(&mut self, id: AllocId, exec: ExecId) {
        if let Some(alloc) = self.allocs.get_mut(&id) {
            alloc.blocked_reads.retain(|r| *r != exec);
        }
    }

    pub fn forget_queued_write(&mut self, id: AllocId, exec: ExecId) {
        if let Some(alloc) = self.allocs.get_mut(&id) {
            alloc.write_queue.retain(|w| *w != exec);
        }
    }

    pub fn write_done(&mut self, id: AllocId, exec: ExecId) -> AfterWrite {
        let Some(alloc) = self.allocs.get_mut(&id) else {
            return AfterWrite::ResumeReads(Vec::new());
        };
        debug_assert_eq!(alloc.write_in_service, Some(exec));
        alloc.write_in_service = None;
        if let Some(next) = alloc.write_queue.pop_front() {
            alloc.write_in_service = Some(next);
            return AfterWrite::StartWrite(next);
        }
        let resumed: Vec<ExecId> = alloc.blocked_reads.drain(..).collect();
        alloc.readers.extend(resumed.iter().copied());
        AfterWrite::ResumeReads(resumed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_least_recently_used_first() {
        let mut mem = Memory::new(3, 1.0);
        for i in 0..3 {
            assert!(mem.allocate(AllocId(i), 1).unwrap().is_empty());
        }
        let evicted = mem.allocate(AllocId(3), 1).unwrap();
        assert_eq!(evicted.len(), 1);
        assert_eq!(evicted[0].id, AllocId(0));
    }

    #[test]
    fn touch_refreshes_recency() {
        let mut mem = Memory::new(3, 1.0);
        for i in 0..3 {
            mem.allocate(AllocId(i), 1).unwrap();
        }
        mem.touch(AllocId(0));
        let evicted = mem.allocate(AllocId(3), 1).unwrap();
        assert_eq!(evicted[0].id, AllocId(1));
    }

    #[test]
    fn full_size_allocation_evicts_everything() {
        let mut mem = Memory::new(3, 1.0);
        for i in 0..3 {
            mem.allocate(AllocId(i), 1).unwrap();
        }
        let evicted = mem.allocate(AllocId(9), 3).unwrap();
        assert_eq!(evicted.len(), 3);
        assert_eq!(mem.used(), 3);
    }

    #[test]
    fn oversized_allocation_is_rejected() {
        let mut mem = Memory::new(3, 1.0);
        assert!(matches!(
            mem.allocate(AllocId(0), 4),
            Err(EngineError::AllocationImpossible { .. })
        ));
    }

    #[test]
    fn write_preempts_reads_and_blocks_new_ones() {
        let mut mem = Memory::new(10, 1.0);
        let a = AllocId(0);
        mem.allocate(a, 5).unwrap();
        assert!(mem.request_read(a, ExecId(1)).unwrap());
        let preempted = mem.request_write(a, ExecId(2)).unwrap().unwrap();
        assert_eq!(preempted, vec![ExecId(1)]);
        assert_eq!(mem.request_write(a, ExecId(3)).unwrap(), None);
        assert!(!mem.request_read(a, ExecId(4)).unwrap());
        assert_eq!(mem.write_done(a, ExecId(2)), AfterWrite::StartWrite(ExecId(3)));
        assert_eq!(
            mem.write_done(a, ExecId(3)),
            AfterWrite::ResumeReads(vec![ExecId(1), ExecId(4)])
        );
    }
}
