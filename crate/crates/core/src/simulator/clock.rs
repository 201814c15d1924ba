use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    EpochDone,
    EvalDone,
    UpdateCommit,
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub learner: usize,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    /// Reversed so that `BinaryHeap` pops the earliest `(time, seq)` first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Virtual clock plus pending-event queue. Events at equal times run in
/// the order they were scheduled.
#[derive(Debug, Default)]
pub struct EventQueue {
    now: f64,
    next_seq: u64,
    heap: BinaryHeap<Event>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn schedule(&mut self, delay: f64, learner: usize, kind: EventKind) {
        assert!(delay >= 0.0 && delay.is_finite(), "bad delay {delay}");
        let event = Event {
            time: self.now + delay,
            seq: self.next_seq,
            learner,
            kind,
        };
        self.next_seq += 1;
        self.heap.push(event);
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        let event = self.heap.pop()?;
        debug_assert!(event.time >= self.now);
        self.now = event.time;
        Some(event)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_seq() {
        let mut q = EventQueue::new();
        q.schedule(2.0, 0, EventKind::EpochDone);
        q.schedule(1.0, 1, EventKind::EpochDone);
        q.schedule(1.0, 2, EventKind::UpdateCommit);
        q.schedule(0.0, 3, EventKind::EvalDone);
        let order: Vec<usize> = std::iter::from_fn(|| q.pop()).map(|e| e.learner).collect();
        assert_eq!(order, vec![3, 1, 2, 0]);
        assert_eq!(q.now(), 2.0);
    }

    #[test]
    fn clock_never_moves_back() {
        let mut q = EventQueue::new();
        q.schedule(5.0, 0, EventKind::EpochDone);
        let e = q.pop().unwrap();
        q.schedule(0.0, 1, EventKind::EpochDone);
        q.schedule(1.0, 2, EventKind::EpochDone);
        let next = q.pop().unwrap();
        assert_eq!(next.learner, 1);
        assert!(next.time >= e.time);
    }
}
