//! In-process broker.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender, TryRecvError};

use super::payload::Envelope;
use super::topic::TopicFilter;
use super::{BusClient, BusError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Subscription {
    pub id: u64,
    pub subscriber_id: String,
    pub filter: String,
}

/// Number of subscriber queues an envelope was placed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryReport {
    pub matched: usize,
}

struct Slot {
    filters: Vec<(u64, TopicFilter)>,
    tx: Sender<Envelope>,
}

#[derive(Default)]
struct Inner {
    open: bool,
    slots: BTreeMap<String, Slot>,
    next_sub: u64,
    last_tick: HashMap<String, u64>,
}

/// Topic router with one FIFO queue per subscriber. Cheap to clone; clones share state.
#[derive(Clone)]
pub struct Broker {
    inner: Arc<Mutex<Inner>>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Broker { inner: Arc::new(Mutex::new(Inner { open: true, ..Default::default() })) }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Register a subscriber queue and return a client bound to it.
    pub fn connect(&self, subscriber_id: &str) -> Result<LocalClient, BusError> {
        let rx = self.open_queue(subscriber_id)?;
        Ok(LocalClient { id: subscriber_id.to_string(), broker: self.clone(), rx })
    }

    pub(crate) fn open_queue(&self, subscriber_id: &str) -> Result<Receiver<Envelope>, BusError> {
        let mut inner = self.lock();
        if !inner.open {
            return Err(BusError::Unavailable);
        }
        if inner.slots.contains_key(subscriber_id) {
            return Err(BusError::DuplicateClient(subscriber_id.to_string()));
        }
        let (tx, rx) = unbounded();
        inner.slots.insert(subscriber_id.to_string(), Slot { filters: Vec::new(), tx });
        Ok(rx)
    }

    /// Drop a subscriber and all its filters. Unknown ids are ignored.
    pub fn disconnect(&self, subscriber_id: &str) {
        self.lock().slots.remove(subscriber_id);
    }

    pub fn subscribe(&self, subscriber_id: &str, filter: &str) -> Result<Subscription, BusError> {
        let parsed = TopicFilter::new(filter)?;
        let mut inner = self.lock();
        if !inner.open {
            return Err(BusError::Unavailable);
        }
        let next = inner.next_sub;
        let slot = inner
            .slots
            .get_mut(subscriber_id)
            .ok_or_else(|| BusError::NotFound(format!("subscriber {subscriber_id}")))?;
        if let Some((id, _)) = slot.filters.iter().find(|(_, f)| f == &parsed) {
            return Ok(Subscription { id: *id, subscriber_id: subscriber_id.to_string(), filter: filter.to_string() });
        }
        slot.filters.push((next, parsed));
        inner.next_sub += 1;
        Ok(Subscription { id: next, subscriber_id: subscriber_id.to_string(), filter: filter.to_string() })
    }

    pub fn unsubscribe(&self, sub: &Subscription) -> Result<(), BusError> {
        let mut inner = self.lock();
        let slot = inner
            .slots
            .get_mut(&sub.subscriber_id)
            .ok_or_else(|| BusError::NotFound(format!("subscription {}", sub.id)))?;
        let before = slot.filters.len();
        slot.filters.retain(|(id, _)| *id != sub.id);
        if slot.filters.len() == before {
            return Err(BusError::NotFound(format!("subscription {}", sub.id)));
        }
        Ok(())
    }

    /// Route an envelope to every subscriber with at least one matching filter, once each.
    pub fn publish(&self, env: Envelope) -> Result<DeliveryReport, BusError> {
        env.validate()?;
        let mut inner = self.lock();
        if !inner.open {
            return Err(BusError::Unavailable);
        }
        if let Some(&last) = inner.last_tick.get(&env.publisher_id) {
            if env.tick < last {
                return Err(BusError::TickRegression { publisher: env.publisher_id.clone(), last, got: env.tick });
            }
        }
        inner.last_tick.insert(env.publisher_id.clone(), env.tick);
        let topic = env.topic.as_str();
        let mut matched = 0;
        for slot in inner.slots.values() {
            if slot.filters.iter().any(|(_, f)| f.matches_str(topic)) {
                // A receiver dropped without disconnecting just loses the message (QoS-0).
                let _ = slot.tx.send(env.clone());
                matched += 1;
            }
        }
        Ok(DeliveryReport { matched })
    }

    /// Refuse further traffic and close every queue.
    pub fn shutdown(&self) {
        let mut inner = self.lock();
        inner.open = false;
        inner.slots.clear();
    }

    pub fn is_open(&self) -> bool {
        self.lock().open
    }
}

/// A subscriber bound to an in-process broker.
pub struct LocalClient {
    id: String,
    broker: Broker,
    rx: Receiver<Envelope>,
}

impl LocalClient {
    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    /// Publish and report how many subscribers matched.
    pub fn publish_report(&self, env: Envelope) -> Result<DeliveryReport, BusError> {
        self.broker.publish(env)
    }

    pub fn pending(&self) -> usize {
        self.rx.len()
    }
}

impl Drop for LocalClient {
    fn drop(&mut self) {
        self.broker.disconnect(&self.id);
    }
}

impl BusClient for LocalClient {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn subscribe(&mut self, filter: &str) -> Result<Subscription, BusError> {
        self.broker.subscribe(&self.id, filter)
    }

    fn unsubscribe(&mut self, sub: &Subscription) -> Result<(), BusError> {
        if sub.subscriber_id != self.id {
            return Err(BusError::NotFound(format!("subscription {}", sub.id)));
        }
        self.broker.unsubscribe(sub)
    }

    fn publish(&mut self, env: Envelope) -> Result<(), BusError> {
        self.broker.publish(env).map(|_| ())
    }

    fn try_recv(&mut self) -> Result<Option<Envelope>, BusError> {
        match self.rx.try_recv() {
            Ok(env) => Ok(Some(env)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(BusError::Unavailable),
        }
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, BusError> {
        match self.rx.recv_timeout(timeout) {
            Ok(env) => Ok(Some(env)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(BusError::Unavailable),
        }
    }
}
