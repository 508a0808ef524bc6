//! Topic-based publish/subscribe with MQTT wildcard semantics.
//!
//! Delivery is at-most-once. The in-process [`Broker`] is the default transport;
//! [`wire`] carries the same envelopes over TCP.

mod broker;
mod payload;
mod topic;
pub mod wire;

use std::time::Duration;

pub use broker::{Broker, DeliveryReport, LocalClient, Subscription};
pub use payload::{check_schema, ControlVerb, Envelope, Payload};
pub use topic::{topic_matches, Topic, TopicFilter};

#[derive(Debug, thiserror::Error)]
pub enum BusError {
    #[error("invalid topic `{topic}`: {reason}")]
    InvalidTopic { topic: String, reason: &'static str },
    #[error("invalid filter `{filter}`: {reason}")]
    InvalidFilter { filter: String, reason: &'static str },
    #[error("payload schema `{schema}` not allowed on topic `{topic}`")]
    SchemaMismatch { topic: String, schema: &'static str },
    #[error("tick went backwards for publisher {publisher}: {got} after {last}")]
    TickRegression { publisher: String, last: u64, got: u64 },
    #[error("{0} not found")]
    NotFound(String),
    #[error("client id `{0}` already connected")]
    DuplicateClient(String),
    #[error("broker unavailable")]
    Unavailable,
    #[error("timed out waiting for broker")]
    Timeout,
    #[error("codec: {0}")]
    Codec(String),
    #[error("broker rejected request: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One connection to a broker, whichever transport carries it.
pub trait BusClient: Send {
    fn client_id(&self) -> &str;
    fn subscribe(&mut self, filter: &str) -> Result<Subscription, BusError>;
    fn unsubscribe(&mut self, sub: &Subscription) -> Result<(), BusError>;
    fn publish(&mut self, env: Envelope) -> Result<(), BusError>;
    /// Push buffered publishes to the transport.
    fn flush(&mut self) -> Result<(), BusError> {
        Ok(())
    }
    fn try_recv(&mut self) -> Result<Option<Envelope>, BusError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, BusError>;
}

impl<T: BusClient + ?Sized> BusClient for Box<T> {
    fn client_id(&self) -> &str {
        (**self).client_id()
    }
    fn subscribe(&mut self, filter: &str) -> Result<Subscription, BusError> {
        (**self).subscribe(filter)
    }
    fn unsubscribe(&mut self, sub: &Subscription) -> Result<(), BusError> {
        (**self).unsubscribe(sub)
    }
    fn publish(&mut self, env: Envelope) -> Result<(), BusError> {
        (**self).publish(env)
    }
    fn flush(&mut self) -> Result<(), BusError> {
        (**self).flush()
    }
    fn try_recv(&mut self) -> Result<Option<Envelope>, BusError> {
        (**self).try_recv()
    }
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, BusError> {
        (**self).recv_timeout(timeout)
    }
}
