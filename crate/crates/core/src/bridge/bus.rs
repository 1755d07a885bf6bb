//! In-process publish/subscribe with one retained message per topic.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

struct Topic<T> {
    retained: Option<T>,
    subscribers: Vec<Sender<T>>,
}

impl<T> Default for Topic<T> {
    fn default() -> Self {
        Self {
            retained: None,
            subscribers: Vec::new(),
        }
    }
}

/// Cloneable handle to a shared bus.
///
/// Publishing holds the topic table lock while fanning out, so every
/// subscriber sees one topic's messages in a single global order.
pub struct Bus<T> {
    topics: Arc<Mutex<HashMap<String, Topic<T>>>>,
}

impl<T> Clone for Bus<T> {
    fn clone(&self) -> Self {
        Self {
            topics: Arc::clone(&self.topics),
        }
    }
}

impl<T: Clone + Send> Default for Bus<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone + Send> Bus<T> {
    pub fn new() -> Self {
        Self {
            topics: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    /// Delivers `message` to every live subscriber and retains it.
    /// Returns the number of subscribers reached.
    pub fn publish(&self, topic: &str, message: T) -> usize {
        let mut topics = self.topics.lock().expect("bus lock poisoned");
        let entry = topics.entry(topic.to_string()).or_default();
        entry.subscribers.retain(|s| s.send(message.clone()).is_ok());
        entry.retained = Some(message);
        entry.subscribers.len()
    }

    /// New subscription; the retained message, if any, is delivered first.
    pub fn subscribe(&self, topic: &str) -> Subscription<T> {
        let (tx, rx) = mpsc::channel();
        let mut topics = self.topics.lock().expect("bus lock poisoned");
        let entry = topics.entry(topic.to_string()).or_default();
        if let Some(m) = &entry.retained {
            tx.send(m.clone()).expect("receiver is alive");
        }
        entry.subscribers.push(tx);
        Subscription { rx }
    }

    pub fn retained(&self, topic: &str) -> Option<T> {
        let topics = self.topics.lock().expect("bus lock poisoned");
        topics.get(topic).and_then(|t| t.retained.clone())
    }
}

pub struct Subscription<T> {
    rx: Receiver<T>,
}

impl<T> Subscription<T> {
    /// Next message, or `None` if nothing is pending.
    pub fn try_recv(&self) -> Option<T> {
        match self.rx.try_recv() {
            Ok(m) => Some(m),
            Err(TryRecvError::Empty | TryRecvError::Disconnected) => None,
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<T> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    /// All pending messages in delivery order.
    pub fn drain(&self) -> Vec<T> {
        self.rx.try_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn retained_message_reaches_late_subscriber() {
        let bus = Bus::new();
        bus.publish("cmd", 1);
        bus.publish("cmd", 2);
        let sub = bus.subscribe("cmd");
        assert_eq!(sub.drain(), vec![2]);
        bus.publish("cmd", 3);
        assert_eq!(sub.try_recv(), Some(3));
        assert_eq!(sub.try_recv(), None);
        assert!(bus.subscribe("other").try_recv().is_none());
    }

    #[test]
    fn dropped_subscribers_are_pruned() {
        let bus = Bus::new();
        let a = bus.subscribe("t");
        drop(bus.subscribe("t"));
        assert_eq!(bus.publish("t", 0u8), 1);
        assert_eq!(a.drain(), vec![0]);
    }

    #[test]
    fn per_publisher_order_under_concurrency() {
        let bus: Bus<(usize, usize)> = Bus::new();
        let sub = bus.subscribe("t");
        let handles: Vec<_> = (0..4)
            .map(|p| {
                let bus = bus.clone();
                thread::spawn(move || {
                    for i in 0..2000 {
                        bus.publish("t", (p, i));
                    }
                })
            })
            .collect();
        handles.into_iter().for_each(|h| h.join().unwrap());
        let got = sub.drain();
        assert_eq!(got.len(), 8000);
        for p in 0..4 {
            let seq: Vec<usize> = got.iter().filter(|m| m.0 == p).map(|m| m.1).collect();
            assert_eq!(seq, (0..2000).collect::<Vec<_>>());
        }
    }
}
