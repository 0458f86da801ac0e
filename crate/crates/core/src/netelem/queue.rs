use std::collections::VecDeque;

use super::packet::Packet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Enqueued,
    Marked,
    Dropped,
}

/// Marking behaviour of an output queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aqm {
    /// Plain drop-tail (host NIC transmit queues).
    DropTail,
    /// CE-mark ECT packets when the instantaneous occupancy is at or above
    /// `threshold_pkts`; non-ECT packets are dropped at the same point.
    StepMark { threshold_pkts: usize },
}

/// Output queue counted in packets. `occupancy` excludes the packet currently
/// being serialized onto the link.
#[derive(Debug, Clone)]
pub struct PortQueue {
    capacity_pkts: usize,
    aqm: Aqm,
    buf: VecDeque<Packet>,
    pub cum_marks: u64,
    pub cum_drops: u64,
    pub cum_tx_bytes: u64,
    pub cum_enqueued: u64,
    pub cum_dequeued: u64,
}

impl PortQueue {
    pub fn new(capacity_pkts: usize, aqm: Aqm) -> Self {
        assert!(capacity_pkts > 0, "queue capacity must be positive");
        PortQueue {
            capacity_pkts,
            aqm,
            buf: VecDeque::with_capacity(capacity_pkts.min(1024)),
            cum_marks: 0,
            cum_drops: 0,
            cum_tx_bytes: 0,
            cum_enqueued: 0,
            cum_dequeued: 0,
        }
    }

    pub fn step_marking(capacity_pkts: usize, threshold_pkts: usize) -> Self {
        Self::new(capacity_pkts, Aqm::StepMark { threshold_pkts })
    }

    pub fn drop_tail(capacity_pkts: usize) -> Self {
        Self::new(capacity_pkts, Aqm::DropTail)
    }

    pub fn occupancy(&self) -> usize {
        self.buf.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity_pkts
    }

    pub fn aqm(&self) -> Aqm {
        self.aqm
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Admission decision plus marking. A packet that already carries CE is
    /// admitted unchanged and is not counted as a new mark.
    pub fn enqueue(&mut self, mut p: Packet) -> EnqueueOutcome {
        let occ = self.buf.len();
        if occ >= self.capacity_pkts {
            self.cum_drops += 1;
            return EnqueueOutcome::Dropped;
        }
        let mut outcome = EnqueueOutcome::Enqueued;
        if let Aqm::StepMark { threshold_pkts } = self.aqm {
            if occ >= threshold_pkts {
                if !p.ect {
                    self.cum_drops += 1;
                    return EnqueueOutcome::Dropped;
                }
                if !p.ce {
                    p.ce = true;
                    self.cum_marks += 1;
                    outcome = EnqueueOutcome::Marked;
                }
            }
        }
        self.buf.push_back(p);
        self.cum_enqueued += 1;
        outcome
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        let p = self.buf.pop_front()?;
        self.cum_dequeued += 1;
        self.cum_tx_bytes += p.size_bytes() as u64;
        Some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netelem::packet::{Proto, VmAddr, MSS};

    fn pkt(ect: bool) -> Packet {
        let mut p = Packet::data(0, VmAddr(1), VmAddr(2), Proto::Tcp, 0, MSS);
        p.ect = ect;
        p
    }

    fn filled(n: usize) -> PortQueue {
        let mut q = PortQueue::step_marking(100, 20);
        for _ in 0..n {
            // below-threshold fill uses ECT so nothing is dropped on the way
            q.buf.push_back(pkt(true));
        }
        q
    }

    #[test]
    fn marks_above_threshold() {
        let mut q = filled(25);
        assert_eq!(q.enqueue(pkt(true)), EnqueueOutcome::Marked);
        assert_eq!(q.cum_marks, 1);
        assert!(q.buf.back().unwrap().ce);
    }

    #[test]
    fn full_queue_drops_regardless_of_ect() {
        let mut q = filled(100);
        assert_eq!(q.enqueue(pkt(true)), EnqueueOutcome::Dropped);
        assert_eq!(q.enqueue(pkt(false)), EnqueueOutcome::Dropped);
        assert_eq!(q.cum_drops, 2);
        assert_eq!(q.occupancy(), 100);
    }

    #[test]
    fn below_threshold_no_mark() {
        let mut q = filled(10);
        assert_eq!(q.enqueue(pkt(true)), EnqueueOutcome::Enqueued);
        assert_eq!(q.cum_marks, 0);
        assert!(!q.buf.back().unwrap().ce);
    }

    #[test]
    fn non_ect_dropped_at_threshold() {
        let mut q = filled(20);
        assert_eq!(q.enqueue(pkt(false)), EnqueueOutcome::Dropped);
        let mut q = filled(19);
        assert_eq!(q.enqueue(pkt(false)), EnqueueOutcome::Enqueued);
    }

    #[test]
    fn already_marked_not_recounted() {
        let mut q = filled(30);
        let mut p = pkt(true);
        p.ce = true;
        assert_eq!(q.enqueue(p), EnqueueOutcome::Enqueued);
        assert_eq!(q.cum_marks, 0);
    }

    #[test]
    fn drop_tail_never_marks() {
        let mut q = PortQueue::drop_tail(3);
        for _ in 0..3 {
            assert_eq!(q.enqueue(pkt(true)), EnqueueOutcome::Enqueued);
        }
        assert_eq!(q.enqueue(pkt(true)), EnqueueOutcome::Dropped);
        assert_eq!(q.cum_marks, 0);
    }
}
