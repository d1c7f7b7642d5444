//! Fan-out of samples to independent subscribers. Each subscriber owns a
//! bounded queue that drops its oldest entry on overflow, so a stalled
//! consumer never blocks the publisher or its peers.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

#[derive(Debug)]
struct Queue<T> {
    items: Mutex<(VecDeque<T>, bool)>,
    ready: Condvar,
    capacity: usize,
    drops: AtomicU64,
}

#[derive(Debug)]
pub struct Publisher<T> {
    subscribers: Mutex<Vec<Weak<Queue<T>>>>,
    capacity: usize,
}

impl<T: Clone> Default for Publisher<T> {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl<T: Clone> Publisher<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { subscribers: Mutex::new(Vec::new()), capacity }
    }

    /// New subscriber; it sees only items published after this call.
    pub fn subscribe(&self) -> Subscription<T> {
        let q = Arc::new(Queue {
            items: Mutex::new((VecDeque::with_capacity(self.capacity.min(4096)), false)),
            ready: Condvar::new(),
            capacity: self.capacity,
            drops: AtomicU64::new(0),
        });
        self.subscribers.lock().expect("publisher lock").push(Arc::downgrade(&q));
        Subscription { q }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.subscribers.lock().expect("publisher lock");
        subs.retain(|w| w.strong_count() > 0);
        subs.len()
    }

    pub fn publish(&self, item: T) {
        let mut subs = self.subscribers.lock().expect("publisher lock");
        subs.retain(|w| {
            let Some(q) = w.upgrade() else { return false };
            let mut guard = q.items.lock().expect("queue lock");
            if guard.0.len() == q.capacity {
                guard.0.pop_front();
                q.drops.fetch_add(1, Ordering::Relaxed);
            }
            guard.0.push_back(item.clone());
            drop(guard);
            q.ready.notify_one();
            true
        });
    }

    /// Wakes every subscriber; `recv` returns `None` once the queue drains.
    pub fn close(&self) {
        let mut subs = self.subscribers.lock().expect("publisher lock");
        for q in subs.drain(..).filter_map(|w| w.upgrade()) {
            q.items.lock().expect("queue lock").1 = true;
            q.ready.notify_all();
        }
    }
}

impl<T> Drop for Publisher<T> {
    fn drop(&mut self) {
        if let Ok(mut subs) = self.subscribers.lock() {
            for q in subs.drain(..).filter_map(|w| w.upgrade()) {
                if let Ok(mut g) = q.items.lock() {
                    g.1 = true;
                }
                q.ready.notify_all();
            }
        }
    }
}

#[derive(Debug)]
pub struct Subscription<T> {
    q: Arc<Queue<T>>,
}

impl<T> Subscription<T> {
    /// Items discarded because this subscriber fell behind.
    pub fn drops(&self) -> u64 {
        self.q.drops.load(Ordering::Relaxed)
    }

    pub fn pending(&self) -> usize {
        self.q.items.lock().expect("queue lock").0.len()
    }

    pub fn try_recv(&self) -> Option<T> {
        self.q.items.lock().expect("queue lock").0.pop_front()
    }

    /// Blocks until an item arrives or the publisher closes.
    pub fn recv(&self) -> Option<T> {
        let mut g = self.q.items.lock().expect("queue lock");
        loop {
            if let Some(v) = g.0.pop_front() {
                return Some(v);
            }
            if g.1 {
                return None;
            }
            g = self.q.ready.wait(g).expect("queue lock");
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<T> {
        let deadline = Instant::now() + timeout;
        let mut g = self.q.items.lock().expect("queue lock");
        loop {
            if let Some(v) = g.0.pop_front() {
                return Some(v);
            }
            let now = Instant::now();
            if g.1 || now >= deadline {
                return None;
            }
            g = self.q.ready.wait_timeout(g, deadline - now).expect("queue lock").0;
        }
    }

    /// Everything currently queued.
    pub fn drain(&self) -> Vec<T> {
        self.q.items.lock().expect("queue lock").0.drain(..).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn fast_subscriber_gets_everything_in_order() {
        let p = Arc::new(Publisher::<u32>::default());
        let sub = p.subscribe();
        let reader = thread::spawn(move || std::iter::from_fn(|| sub.recv()).collect::<Vec<_>>());
        for i in 0..500 {
            p.publish(i);
        }
        p.close();
        let got = reader.join().unwrap();
        assert_eq!(got, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn stalled_subscriber_drops_oldest() {
        let p = Publisher::<u32>::new(1024);
        let slow = p.subscribe();
        let fast = p.subscribe();
        let mut fast_got = Vec::new();
        for i in 0..2048 {
            p.publish(i);
            fast_got.extend(fast.drain());
        }
        assert_eq!(slow.drops(), 1024);
        assert_eq!(fast.drops(), 0);
        assert_eq!(fast_got.len(), 2048);
        let kept = slow.drain();
        assert_eq!(kept.first(), Some(&1024));
        assert_eq!(kept.last(), Some(&2047));
    }

    #[test]
    fn late_joiner_sees_only_new_items() {
        let p = Publisher::<u32>::default();
        p.publish(1);
        let s = p.subscribe();
        p.publish(2);
        assert_eq!(s.drain(), vec![2]);
        assert_eq!(s.recv_timeout(Duration::from_millis(5)), None);
    }

    #[test]
    fn dropped_subscribers_are_pruned() {
        let p = Publisher::<u8>::default();
        let a = p.subscribe();
        {
            let _b = p.subscribe();
        }
        p.publish(0);
        assert_eq!(p.subscriber_count(), 1);
        drop(a);
        assert_eq!(p.subscriber_count(), 0);
    }
}
