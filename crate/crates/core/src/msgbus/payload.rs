//! Envelopes and the schema-tagged payloads carried on the bus.

use serde::{Deserialize, Serialize};

use super::topic::Topic;
use super::BusError;
use crate::der::{DerMode, DroopParams};

/// Device control verbs sent on `derms/setpoint/<device_id>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum ControlVerb {
    /// Switch to frequency-watt mode with the given curve.
    EnableDroop(DroopParams),
    SetMode { mode: DerMode },
    /// Snapshot the current output as the droop reference.
    Arm,
    Connect,
    Disconnect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schema", rename_all = "snake_case")]
pub enum Payload {
    Tick { tick: u64, sim_time_s: f64, step_s: f64 },
    Done { tick: u64 },
    Frequency { hz: f64 },
    Voltage { pu: f64 },
    /// Aggregate group exchange at the transmission interface, load convention.
    HeadPower { p_mw: f64, q_mvar: f64, losses_kw: f64 },
    /// Regulation signal plus the aggregate request and range it maps to.
    Agc { r_pu: f64, request_kw: f64, range_kw: f64 },
    Setpoint { p_kw: f64 },
    Control(ControlVerb),
    DerOutput { p_kw: f64, q_kvar: f64, p_available_kw: f64 },
}

impl Payload {
    pub fn schema(&self) -> &'static str {
        match self {
            Payload::Tick { .. } => "tick",
            Payload::Done { .. } => "done",
            Payload::Frequency { .. } => "frequency",
            Payload::Voltage { .. } => "voltage",
            Payload::HeadPower { .. } => "head_power",
            Payload::Agc { .. } => "agc",
            Payload::Setpoint { .. } => "setpoint",
            Payload::Control(_) => "control",
            Payload::DerOutput { .. } => "der_output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(with = "topic_serde")]
    pub topic: Topic,
    pub tick: u64,
    pub publisher_id: String,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(topic: Topic, tick: u64, publisher_id: impl Into<String>, payload: Payload) -> Self {
        Envelope { topic, tick, publisher_id: publisher_id.into(), payload }
    }

    /// Build from a topic string, validating topic syntax and namespace schema.
    pub fn build(topic: &str, tick: u64, publisher_id: &str, payload: Payload) -> Result<Self, BusError> {
        let env = Envelope::new(Topic::new(topic)?, tick, publisher_id, payload);
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), BusError> {
        check_schema(&self.topic, &self.payload)
    }
}

mod topic_serde {
    use super::Topic;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Topic, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(t.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Topic, D::Error> {
        let s = String::deserialize(d)?;
        Topic::new(s).map_err(D::Error::custom)
    }
}

/// Reserved namespaces fix the payload schema; other namespaces are unconstrained.
pub fn check_schema(topic: &Topic, payload: &Payload) -> Result<(), BusError> {
    let levels: Vec<&str> = topic.levels().collect();
    let ok = match levels.as_slice() {
        ["sync", "tick"] => matches!(payload, Payload::Tick { .. }),
        ["sync", "done", id] if !id.is_empty() => matches!(payload, Payload::Done { .. }),
        ["ts", id, "freq"] if !id.is_empty() => matches!(payload, Payload::Frequency { .. }),
        ["ts", id, "voltage"] if !id.is_empty() => matches!(payload, Payload::Voltage { .. }),
        ["ds", id, "headpower"] if !id.is_empty() => matches!(payload, Payload::HeadPower { .. }),
        ["derms", "agc"] => matches!(payload, Payload::Agc { .. }),
        ["derms", "setpoint", id] if !id.is_empty() => {
            matches!(payload, Payload::Setpoint { .. } | Payload::Control(_))
        }
        ["der", id, "output"] if !id.is_empty() => matches!(payload, Payload::DerOutput { .. }),
        [first, ..] if matches!(*first, "sync" | "ts" | "ds" | "derms" | "der") => false,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(BusError::SchemaMismatch { topic: topic.to_string(), schema: payload.schema() })
    }
}
