//! DER management: device registry, grouping, AGC mapping and dispatch.

mod agc;
mod allocate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use agc::{AgcSignal, SyntheticAgc};
pub use allocate::{allocate, water_fill, Allocation, Member, WeightBasis};

use crate::der::DroopParams;
use crate::msgbus::{ControlVerb, Envelope, Payload};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DermsError {
    #[error("group has no members")]
    EmptyGroup,
    #[error("{0}")]
    Validation(String),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("group `{0}` has no baseline/regulating range configured")]
    Unconfigured(String),
    #[error("AGC signal: {0}")]
    Signal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointCommand {
    pub device_id: String,
    pub p_setpoint_kw: f64,
    pub issue_tick: u64,
}

impl SetpointCommand {
    pub fn new(device_id: &str, p_setpoint_kw: f64, issue_tick: u64) -> Self {
        SetpointCommand { device_id: device_id.to_string(), p_setpoint_kw, issue_tick }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRecord {
    pub device_id: String,
    pub group_id: String,
    pub p_rated_kw: f64,
    pub last_available_kw: f64,
    pub last_output_kw: f64,
    /// Tick of the last report, or of registration if none arrived yet.
    pub last_seen_tick: u64,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DermsGroup {
    pub id: String,
    pub members: Vec<String>,
    pub baseline_kw: Option<f64>,
    pub range_kw: Option<f64>,
    pub basis: WeightBasis,
}

/// Registry of devices and groups. Telemetry updates it; allocation reads a snapshot.
#[derive(Debug, Clone)]
pub struct Registry {
    devices: BTreeMap<String, DeviceRecord>,
    groups: BTreeMap<String, DermsGroup>,
    pub stale_after_ticks: u64,
    dropped: u64,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new(5)
    }
}

impl Registry {
    pub fn new(stale_after_ticks: u64) -> Self {
        Registry { devices: BTreeMap::new(), groups: BTreeMap::new(), stale_after_ticks, dropped: 0 }
    }

    pub fn add_group(&mut self, id: &str, basis: WeightBasis) -> Result<(), DermsError> {
        if self.groups.contains_key(id) {
            return Err(DermsError::Validation(format!("duplicate group `{id}`")));
        }
        self.groups.insert(
            id.to_string(),
            DermsGroup { id: id.to_string(), members: Vec::new(), baseline_kw: None, range_kw: None, basis },
        );
        Ok(())
    }

    pub fn configure_regulation(&mut self, group: &str, baseline_kw: f64, range_kw: f64) -> Result<(), DermsError> {
        if !(baseline_kw.is_finite() && range_kw.is_finite() && baseline_kw >= 0.0 && range_kw >= 0.0) {
            return Err(DermsError::Validation(format!("group `{group}`: baseline and range must be >= 0")));
        }
        let g = self.groups.get_mut(group).ok_or_else(|| DermsError::UnknownGroup(group.to_string()))?;
        g.baseline_kw = Some(baseline_kw);
        g.range_kw = Some(range_kw);
        Ok(())
    }

    pub fn register_device(&mut self, device_id: &str, group: &str, p_rated_kw: f64, available_kw: f64, tick: u64) -> Result<(), DermsError> {
        if self.devices.contains_key(device_id) {
            return Err(DermsError::Validation(format!("device `{device_id}` registered twice")));
        }
        let g = self.groups.get_mut(group).ok_or_else(|| DermsError::UnknownGroup(group.to_string()))?;
        g.members.push(device_id.to_string());
        self.devices.insert(
            device_id.to_string(),
            DeviceRecord {
                device_id: device_id.to_string(),
                group_id: group.to_string(),
                p_rated_kw,
                last_available_kw: available_kw,
                last_output_kw: 0.0,
                last_seen_tick: tick,
                stale: false,
            },
        );
        Ok(())
    }

    pub fn device(&self, id: &str) -> Option<&DeviceRecord> {
        self.devices.get(id)
    }

    pub fn group(&self, id: &str) -> Option<&DermsGroup> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &DermsGroup> {
        self.groups.values()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Fold a `der/<id>/output` envelope into the registry. Returns false when dropped.
    pub fn ingest_telemetry(&mut self, env: &Envelope) -> bool {
        let Payload::DerOutput { p_kw, p_available_kw, .. } = env.payload else {
            self.dropped += 1;
            return false;
        };
        let id = env.topic.as_str().strip_prefix("der/").and_then(|s| s.strip_suffix("/output"));
        match id.and_then(|id| self.devices.get_mut(id)) {
            Some(rec) if env.tick >= rec.last_seen_tick => {
                rec.last_output_kw = p_kw;
                rec.last_available_kw = p_available_kw;
                rec.last_seen_tick = env.tick;
                rec.stale = false;
                true
            }
            Some(rec) => {
                log::warn!("out-of-order telemetry for {} (tick {} < {})", rec.device_id, env.tick, rec.last_seen_tick);
                self.dropped += 1;
                false
            }
            None => {
                log::warn!("telemetry from unregistered device on {}", env.topic);
                self.dropped += 1;
                false
            }
        }
    }

    /// Mark devices silent for `stale_after_ticks` or more as stale.
    pub fn refresh_staleness(&mut self, tick: u64) {
        for rec in self.devices.values_mut() {
            rec.stale = tick.saturating_sub(rec.last_seen_tick) >= self.stale_after_ticks;
        }
    }

    /// `baseline + r * range`, clamped to `[0, sum of ratings]`.
    pub fn agc_to_request(&self, r_pu: f64, group: &str) -> Result<f64, DermsError> {
        let g = self.groups.get(group).ok_or_else(|| DermsError::UnknownGroup(group.to_string()))?;
        let (Some(base), Some(range)) = (g.baseline_kw, g.range_kw) else {
            return Err(DermsError::Unconfigured(group.to_string()));
        };
        let rated: f64 = g.members.iter().filter_map(|m| self.devices.get(m)).map(|d| d.p_rated_kw).sum();
        Ok((base + r_pu * range).clamp(0.0, rated))
    }

    /// Allocate over the fresh members of `group`; stale devices receive no command.
    pub fn allocate(&self, p_request_kw: f64, group: &str, tick: u64) -> Result<Allocation, DermsError> {
        let g = self.groups.get(group).ok_or_else(|| DermsError::UnknownGroup(group.to_string()))?;
        if g.members.is_empty() {
            return Err(DermsError::EmptyGroup);
        }
        let members: Vec<Member> = g
            .members
            .iter()
            .filter_map(|m| self.devices.get(m))
            .filter(|d| !d.stale)
            .map(|d| Member { device_id: d.device_id.clone(), available_kw: d.last_available_kw, rated_kw: d.p_rated_kw })
            .collect();
        if members.is_empty() {
            return Ok(Allocation { commands: Vec::new(), shortfall: p_request_kw > 0.0 });
        }
        allocate(p_request_kw, &members, g.basis, tick)
    }

    /// Commands switching every member to frequency-watt; `None` means default curve.
    pub fn enable_droop(&self, group: &str, params: Option<DroopParams>) -> Result<Vec<(String, ControlVerb)>, DermsError> {
        let g = self.groups.get(group).ok_or_else(|| DermsError::UnknownGroup(group.to_string()))?;
        let params = params.unwrap_or_default();
        params.validate().map_err(|e| DermsError::Validation(format!("group `{group}`: {e}")))?;
        Ok(g.members.iter().map(|m| (m.clone(), ControlVerb::EnableDroop(params))).collect())
    }

    pub fn total_rated_kw(&self, group: &str) -> Option<f64> {
        let g = self.groups.get(group)?;
        Some(g.members.iter().filter_map(|m| self.devices.get(m)).map(|d| d.p_rated_kw).sum())
    }
}
