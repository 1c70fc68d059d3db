use std::cmp::Reverse;
use std::collections::BTreeSet;

use crate::domain::{JobId, JobRecord, JobState};

/// Pending jobs ordered by (−priority, enqueue_seq): most urgent first, FIFO
/// within a priority.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PendingQueue {
    entries: BTreeSet<(Reverse<i32>, u64, JobId)>,
}

impl PendingQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_jobs<'a>(jobs: impl IntoIterator<Item = &'a JobRecord>) -> Self {
        let mut q = Self::new();
        for j in jobs.into_iter().filter(|j| j.state == JobState::Pending) {
            q.push(j.spec.priority, j.enqueue_seq, j.id);
        }
        q
    }

    pub fn push(&mut self, priority: i32, enqueue_seq: u64, job: JobId) {
        self.entries.insert((Reverse(priority), enqueue_seq, job));
    }

    pub fn pop(&mut self) -> Option<JobId> {
        self.entries.pop_first().map(|(_, _, id)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = JobId> + '_ {
        self.entries.iter().map(|(_, _, id)| *id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn higher_priority_first_then_fifo() {
        let mut q = PendingQueue::new();
        q.push(5, 0, JobId(0));
        q.push(9, 1, JobId(1));
        q.push(5, 2, JobId(2));
        assert_eq!(q.iter().collect::<Vec<_>>(), vec![JobId(1), JobId(0), JobId(2)]);
        assert_eq!(q.pop(), Some(JobId(1)));
        assert_eq!(q.len(), 2);
    }

    proptest! {
        #[test]
        fn pop_order_matches_sort(prios in prop::collection::vec(-5i32..5, 0..60)) {
            let mut q = PendingQueue::new();
            for (i, p) in prios.iter().enumerate() {
                q.push(*p, i as u64, JobId(i as u64));
            }
            let mut oracle: Vec<(i32, usize)> = prios.iter().copied().zip(0..).collect();
            oracle.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut popped = Vec::new();
            while let Some(id) = q.pop() {
                popped.push(id.0 as usize);
            }
            prop_assert_eq!(popped, oracle.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
        }
    }
}
