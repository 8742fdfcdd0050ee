//! Latest-value handoff between a fast producer (detection at 60 Hz) and a
//! slower consumer (planner at 10 Hz). Unread values are overwritten and
//! counted as dropped.

use std::sync::{Arc, Mutex};

#[derive(Debug)]
struct Slot<T> {
    value: Option<(u64, T)>,
    next_seq: u64,
    dropped: u64,
}

#[derive(Debug)]
pub struct Mailbox<T> {
    slot: Arc<Mutex<Slot<T>>>,
}

impl<T> Clone for Mailbox<T> {
    fn clone(&self) -> Self {
        Self {
            slot: Arc::clone(&self.slot),
        }
    }
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self {
            slot: Arc::new(Mutex::new(Slot {
                value: None,
                next_seq: 0,
                dropped: 0,
            })),
        }
    }

    /// Stores `value`, replacing any unread one. Returns its sequence number.
    pub fn post(&self, value: T) -> u64 {
        let mut s = self.slot.lock().expect("mailbox poisoned");
        let seq = s.next_seq;
        s.next_seq += 1;
        if s.value.replace((seq, value)).is_some() {
            s.dropped += 1;
        }
        seq
    }

    /// Takes the newest value, if one arrived since the last take.
    pub fn take(&self) -> Option<(u64, T)> {
        self.slot.lock().expect("mailbox poisoned").value.take()
    }

    pub fn dropped(&self) -> u64 {
        self.slot.lock().expect("mailbox poisoned").dropped
    }

    pub fn posted(&self) -> u64 {
        self.slot.lock().expect("mailbox poisoned").next_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_only_latest() {
        let m = Mailbox::new();
        assert!(m.take().is_none());
        for i in 0..6 {
            m.post(i);
        }
        assert_eq!(m.take(), Some((5, 5)));
        assert_eq!(m.dropped(), 5);
        assert!(m.take().is_none());
    }

    #[test]
    fn works_across_threads() {
        let m = Mailbox::new();
        let tx = m.clone();
        std::thread::spawn(move || {
            for i in 0..100u32 {
                tx.post(i);
            }
        })
        .join()
        .unwrap();
        assert_eq!(m.take().map(|(_, v)| v), Some(99));
        assert_eq!(m.posted(), 100);
    }
}
