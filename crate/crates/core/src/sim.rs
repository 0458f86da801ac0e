//! Discrete-event engine: ordered event queue, cancellation, and an optional
//! trace digest used to check run-to-run determinism.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::hash::{DefaultHasher, Hasher};

use crate::time::SimTime;

/// Handle returned by [`Scheduler::schedule`]; pass to [`Scheduler::cancel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Implemented by event payloads so the trace can identify them.
pub trait EventKind {
    /// Short stable tag, e.g. "arrive" or "timer".
    fn kind(&self) -> &'static str;
    /// Extra stable discriminator folded into the trace (node id, flow id ...).
    fn target(&self) -> u64 {
        0
    }
}

struct Scheduled<E> {
    at: SimTime,
    seq: u64,
    ev: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so BinaryHeap (a max-heap) pops the earliest event, ties by insertion order.
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One processed event, as recorded in a full trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub seq: u64,
    pub kind: &'static str,
    pub target: u64,
}

pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Scheduled<E>>,
    cancelled: HashSet<u64>,
    processed: u64,
    digest: DefaultHasher,
    trace: Option<Vec<TraceRecord>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            processed: 0,
            digest: DefaultHasher::new(),
            trace: None,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Keep every processed event in memory (tests only; large runs produce millions).
    pub fn record_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    /// Running hash over (time, seq, kind, target) of every processed event.
    pub fn trace_digest(&self) -> u64 {
        self.digest.finish()
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Panics if `at` is earlier than the current clock: that is always a bug in the caller.
    pub fn schedule(&mut self, at: SimTime, ev: E) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past: at {at}, now {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { at, seq, ev });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, ev: E) -> EventHandle {
        self.schedule(self.now + delay, ev)
    }

    /// Cancelling an event that already fired (or was already cancelled) is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq && self.heap.iter().any(|s| s.seq == handle.0) {
            self.cancelled.insert(handle.0);
        }
    }

    fn pop_due(&mut self, t_end: SimTime) -> Option<(SimTime, u64, E)> {
        loop {
            match self.heap.peek() {
                Some(top) if top.at <= t_end => {}
                _ => return None,
            }
            let s = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&s.seq) {
                continue;
            }
            return Some((s.at, s.seq, s.ev));
        }
    }
}

impl<E: EventKind> Scheduler<E> {
    /// Processes every event with `fire_at <= t_end` in (time, insertion) order,
    /// then sets the clock to `t_end`. Returns the number of events handled.
    pub fn run_until<H>(&mut self, handler: &mut H, t_end: SimTime) -> u64
    where
        H: Handler<E> + ?Sized,
    {
        let mut count = 0;
        while let Some((at, seq, ev)) = self.pop_due(t_end) {
            debug_assert!(at >= self.now);
            self.now = at;
            let kind = ev.kind();
            let target = ev.target();
            self.digest.write_u64(at.as_nanos());
            self.digest.write_u64(seq);
            self.digest.write(kind.as_bytes());
            self.digest.write_u64(target);
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRecord { at, seq, kind, target });
            }
            handler.handle(self, ev);
            count += 1;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        self.processed += count;
        count
    }
}

/// The world the scheduler drives.
pub trait Handler<E> {
    fn handle(&mut self, sched: &mut Scheduler<E>, ev: E);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    enum Ev {
        Mark(u32),
        Tick,
    }

    impl EventKind for Ev {
        fn kind(&self) -> &'static str {
            match self {
                Ev::Mark(_) => "mark",
                Ev::Tick => "tick",
            }
        }
        fn target(&self) -> u64 {
            match self {
                Ev::Mark(n) => *n as u64,
                Ev::Tick => 0,
            }
        }
    }

    #[derive(Default)]
    struct Log {
        seen: Vec<(SimTime, u32)>,
        ticks: u64,
        period: SimTime,
    }

    impl Handler<Ev> for Log {
        fn handle(&mut self, sched: &mut Scheduler<Ev>, ev: Ev) {
            match ev {
                Ev::Mark(n) => self.seen.push((sched.now(), n)),
                Ev::Tick => {
                    self.ticks += 1;
                    sched.schedule_in(self.period, Ev::Tick);
                }
            }
        }
    }

    #[test]
    fn now_precedes_now_plus_one() {
        let mut s = Scheduler::new();
        let mut log = Log::default();
        s.schedule(SimTime(1), Ev::Mark(2));
        s.schedule(SimTime(0), Ev::Mark(1));
        s.run_until(&mut log, SimTime(10));
        assert_eq!(log.seen, vec![(SimTime(0), 1), (SimTime(1), 2)]);
    }

    #[test]
    fn ties_break_by_insertion() {
        let mut s = Scheduler::new();
        let mut log = Log::default();
        for n in 0..5 {
            s.schedule(SimTime(7), Ev::Mark(n));
        }
        s.run_until(&mut log, SimTime(7));
        let order: Vec<u32> = log.seen.iter().map(|x| x.1).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut s = Scheduler::new();
        let mut log = Log::default();
        let h = s.schedule(SimTime(5), Ev::Mark(9));
        s.schedule(SimTime(6), Ev::Mark(10));
        s.cancel(h);
        s.run_until(&mut log, SimTime(100));
        assert_eq!(log.seen, vec![(SimTime(6), 10)]);
        // cancelling again, after the fact, is harmless
        s.cancel(h);
        assert_eq!(s.pending(), 0);
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut s: Scheduler<Ev> = Scheduler::new();
        let mut log = Log::default();
        let n = s.run_until(&mut log, SimTime::from_secs(30));
        assert_eq!(n, 0);
        assert_eq!(s.now(), SimTime::from_secs(30));
    }

    #[test]
    fn periodic_timer_fires_2000_times_per_second() {
        let mut s = Scheduler::new();
        let mut log = Log {
            period: SimTime::from_micros(500),
            ..Default::default()
        };
        s.schedule(SimTime::from_micros(500), Ev::Tick);
        s.run_until(&mut log, SimTime::from_secs(1));
        assert_eq!(log.ticks, 2000);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn scheduling_in_the_past_panics() {
        let mut s = Scheduler::new();
        let mut log = Log::default();
        s.run_until(&mut log, SimTime(100));
        s.schedule(SimTime(50), Ev::Mark(0));
    }

    #[test]
    fn trace_is_reproducible() {
        let run = || {
            let mut s = Scheduler::new();
            s.record_trace();
            let mut log = Log {
                period: SimTime(3),
                ..Default::default()
            };
            s.schedule(SimTime(0), Ev::Tick);
            for n in 0..10 {
                s.schedule(SimTime(n as u64 * 2), Ev::Mark(n));
            }
            s.run_until(&mut log, SimTime(40));
            (s.trace().unwrap().to_vec(), s.trace_digest())
        };
        let (a, da) = run();
        let (b, db) = run();
        assert_eq!(a, b);
        assert_eq!(da, db);
        assert!(a.windows(2).all(|w| w[0].at <= w[1].at));
    }
}
