//! Packet FIFO between main processor and checker, modeled as a
//! single-producer single-consumer ring over 64-bit records.
//!
//! The producer owns the tail index, the consumer owns the head index,
//! and one slot is always left open so full/empty are distinguishable
//! without shared counters.

use std::cell::UnsafeCell;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FifoFull;

#[derive(Debug)]
pub struct FifoMemory {
    base_addr: u32,
    capacity: usize,
    records: Box<[UnsafeCell<u64>]>,
    /// Consumer position; written only by `pop`.
    head: AtomicUsize,
    /// Producer position; written only by `push`.
    tail: AtomicUsize,
}

// One thread pushes, one thread pops; the open-slot discipline keeps
// their slot accesses disjoint.
unsafe impl Sync for FifoMemory {}
unsafe impl Send for FifoMemory {}

impl FifoMemory {
    /// `capacity_records` is the number of storage slots; usable
    /// occupancy is one less.
    pub fn new(base_addr: u32, capacity_records: usize) -> FifoMemory {
        assert!(capacity_records >= 2, "capacity must hold at least one record");
        FifoMemory {
            base_addr,
            capacity: capacity_records,
            records: (0..capacity_records).map(|_| UnsafeCell::new(0)).collect(),
            head: AtomicUsize::new(0),
            tail: AtomicUsize::new(0),
        }
    }

    pub fn base_addr(&self) -> u32 {
        self.base_addr
    }

    pub fn capacity_records(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        let head = self.head.load(Ordering::Acquire);
        let tail = self.tail.load(Ordering::Acquire);
        (tail + self.capacity - head) % self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy() == 0
    }

    pub fn is_full(&self) -> bool {
        self.occupancy() == self.capacity - 1
    }

    /// Producer side. Fails when only the open slot remains.
    pub fn push(&self, record: u64) -> Result<(), FifoFull> {
        let tail = self.tail.load(Ordering::Relaxed);
        let head = self.head.load(Ordering::Acquire);
        let next = (tail + 1) % self.capacity;
        if next == head {
            return Err(FifoFull);
        }
        unsafe {
            *self.records[tail].get() = record;
        }
        self.tail.store(next, Ordering::Release);
        Ok(())
    }

    /// Consumer side. `None` when head has caught up with tail.
    pub fn pop(&self) -> Option<u64> {
        let head = self.head.load(Ordering::Relaxed);
        let tail = self.tail.load(Ordering::Acquire);
        if head == tail {
            return None;
        }
        let record = unsafe { *self.records[head].get() };
        self.head.store((head + 1) % self.capacity, Ordering::Release);
        Some(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    #[test]
    fn push_then_pop_returns_record() {
        let fifo = FifoMemory::new(0xF000, 4);
        assert_eq!(fifo.pop(), None);
        fifo.push(42).unwrap();
        assert_eq!(fifo.occupancy(), 1);
        assert_eq!(fifo.pop(), Some(42));
        assert_eq!(fifo.pop(), None);
    }

    #[test]
    fn one_slot_stays_open() {
        let fifo = FifoMemory::new(0, 4);
        fifo.push(1).unwrap();
        fifo.push(2).unwrap();
        fifo.push(3).unwrap();
        assert!(fifo.is_full());
        assert_eq!(fifo.push(4), Err(FifoFull));
        assert_eq!(fifo.pop(), Some(1));
        fifo.push(4).unwrap();
    }

    #[test]
    fn randomized_interleaving_matches_unbounded_queue() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let fifo = FifoMemory::new(0, 8);
        let mut oracle: VecDeque<u64> = VecDeque::new();
        let mut next_value: u64 = 0;
        for _ in 0..100_000 {
            if rng.gen_bool(0.5) {
                if fifo.push(next_value).is_ok() {
                    oracle.push_back(next_value);
                }
                next_value += 1;
            } else {
                assert_eq!(fifo.pop(), oracle.pop_front());
            }
        }
        while let Some(v) = fifo.pop() {
            assert_eq!(Some(v), oracle.pop_front());
        }
        assert!(oracle.is_empty());
    }

    #[test]
    fn two_threads_lose_nothing() {
        use std::sync::Arc;
        let fifo = Arc::new(FifoMemory::new(0, 16));
        let producer = {
            let fifo = Arc::clone(&fifo);
            std::thread::spawn(move || {
                for v in 0..50_000u64 {
                    loop {
                        if fifo.push(v).is_ok() {
                            break;
                        }
                        std::hint::spin_loop();
                    }
                }
            })
        };
        let mut received = Vec::with_capacity(50_000);
        while received.len() < 50_000 {
            if let Some(v) = fifo.pop() {
                received.push(v);
            } else {
                std::hint::spin_loop();
            }
        }
        producer.join().unwrap();
        let expected: Vec<u64> = (0..50_000).collect();
        assert_eq!(received, expected);
    }
}
