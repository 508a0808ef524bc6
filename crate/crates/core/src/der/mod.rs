//! PV units with headroom, setpoint tracking and frequency-watt droop.

use serde::{Deserialize, Serialize};

use crate::derms::SetpointCommand;
use crate::msgbus::ControlVerb;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DerError {
    #[error("device {device}: {reason}")]
    Validation { device: String, reason: String },
    #[error("frequency input is not finite")]
    NonFiniteFrequency,
    #[error("device {device} in mode {mode:?} does not accept setpoints")]
    WrongMode { device: String, mode: DerMode },
}

/// Frequency-watt curve. Defaults follow IEEE 1547-2018 category defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroopParams {
    pub db_of_hz: f64,
    pub db_uf_hz: f64,
    pub k_of: f64,
    pub k_uf: f64,
    pub f_nom_hz: f64,
}

impl Default for DroopParams {
    fn default() -> Self {
        DroopParams { db_of_hz: 0.036, db_uf_hz: 0.036, k_of: 0.05, k_uf: 0.05, f_nom_hz: 60.0 }
    }
}

impl DroopParams {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.db_of_hz, self.db_uf_hz, self.k_of, self.k_uf, self.f_nom_hz];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("droop parameters must be finite".into());
        }
        if self.db_of_hz < 0.0 || self.db_uf_hz < 0.0 {
            return Err("droop deadbands must be >= 0".into());
        }
        if self.k_of <= 0.0 || self.k_uf <= 0.0 {
            return Err("droop slopes must be > 0".into());
        }
        if self.f_nom_hz <= 0.0 {
            return Err("nominal frequency must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerMode {
    FixedSetpoint,
    FreqWatt,
    AgcFollow,
}

/// Piecewise-linear droop in per unit of rating, clamped to `[0, p_max_pu]`.
pub fn droop_pu(params: &DroopParams, p_pre_pu: f64, p_max_pu: f64, f_hz: f64) -> Result<f64, DerError> {
    if !f_hz.is_finite() {
        return Err(DerError::NonFiniteFrequency);
    }
    let f0 = params.f_nom_hz;
    let p = if f_hz > f0 + params.db_of_hz {
        p_pre_pu - (f_hz - f0 - params.db_of_hz) / (f0 * params.k_of)
    } else if f_hz < f0 - params.db_uf_hz {
        p_pre_pu + (f0 - params.db_uf_hz - f_hz) / (f0 * params.k_uf)
    } else {
        p_pre_pu
    };
    Ok(p.clamp(0.0, p_max_pu.max(0.0)))
}

/// Where a device is connected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerSite {
    pub group: String,
    pub node: String,
    /// `None` for a balanced three-phase unit.
    pub phase: Option<crate::dnet::Phase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerDevice {
    pub id: String,
    pub site: DerSite,
    pub p_rated_kw: f64,
    pub p_available_kw: f64,
    pub p_pre_kw: f64,
    pub p_output_kw: f64,
    pub q_output_kvar: f64,
    pub droop: DroopParams,
    pub mode: DerMode,
    pub ramp_limit_kw_per_s: Option<f64>,
    /// Open-loop response time (90 % of a step), as a first-order lag.
    pub olrt_s: Option<f64>,
    pub connected: bool,
    target_kw: f64,
    filtered_kw: f64,
}

impl DerDevice {
    /// A connected unit holding `p_output_kw`, in fixed-setpoint mode.
    pub fn new(id: impl Into<String>, site: DerSite, p_rated_kw: f64, p_available_kw: f64, p_output_kw: f64) -> Result<Self, DerError> {
        let id = id.into();
        let bad = |reason: &str| DerError::Validation { device: id.clone(), reason: reason.to_string() };
        if !(p_rated_kw.is_finite() && p_rated_kw > 0.0) {
            return Err(bad("p_rated_kw must be > 0"));
        }
        if !(0.0..=p_rated_kw).contains(&p_available_kw) {
            return Err(bad("p_available_kw must lie in [0, p_rated_kw]"));
        }
        if !(0.0..=p_available_kw).contains(&p_output_kw) {
            return Err(bad("p_output_kw must lie in [0, p_available_kw]"));
        }
        Ok(DerDevice {
            id,
            site,
            p_rated_kw,
            p_available_kw,
            p_pre_kw: p_output_kw,
            p_output_kw,
            q_output_kvar: 0.0,
            droop: DroopParams::default(),
            mode: DerMode::FixedSetpoint,
            ramp_limit_kw_per_s: None,
            olrt_s: None,
            connected: true,
            target_kw: p_output_kw,
            filtered_kw: p_output_kw,
        })
    }

    pub fn target_kw(&self) -> f64 {
        self.target_kw
    }

    /// Droop target in kW at frequency `f_hz`.
    pub fn droop_power(&self, f_hz: f64) -> Result<f64, DerError> {
        let pu = droop_pu(&self.droop, self.p_pre_kw / self.p_rated_kw, self.p_available_kw / self.p_rated_kw, f_hz)?;
        Ok(pu * self.p_rated_kw)
    }

    pub fn apply_setpoint(&mut self, cmd: &SetpointCommand) -> Result<(), DerError> {
        if !(cmd.p_setpoint_kw.is_finite() && cmd.p_setpoint_kw >= 0.0) {
            return Err(DerError::Validation { device: self.id.clone(), reason: "setpoint must be finite and >= 0".into() });
        }
        if self.mode == DerMode::FreqWatt {
            return Err(DerError::WrongMode { device: self.id.clone(), mode: self.mode });
        }
        self.target_kw = cmd.p_setpoint_kw.min(self.p_available_kw);
        Ok(())
    }

    pub fn apply_control(&mut self, verb: &ControlVerb) -> Result<(), DerError> {
        match verb {
            ControlVerb::EnableDroop(params) => {
                params.validate().map_err(|reason| DerError::Validation { device: self.id.clone(), reason })?;
                self.droop = *params;
                self.mode = DerMode::FreqWatt;
            }
            ControlVerb::SetMode { mode } => {
                if self.mode == DerMode::FreqWatt && *mode != DerMode::FreqWatt {
                    self.target_kw = self.p_output_kw;
                }
                self.mode = *mode;
            }
            ControlVerb::Arm => self.arm(),
            ControlVerb::Connect => self.connected = true,
            ControlVerb::Disconnect => self.connected = false,
        }
        Ok(())
    }

    /// Capture the present output as the droop reference.
    pub fn arm(&mut self) {
        self.p_pre_kw = self.p_output_kw;
    }

    /// Update the headroom ceiling; clamps it to the rating and pulls output under it.
    pub fn set_available(&mut self, kw: f64) {
        self.p_available_kw = kw.clamp(0.0, self.p_rated_kw);
        self.p_output_kw = self.p_output_kw.min(self.p_available_kw);
        self.target_kw = self.target_kw.min(self.p_available_kw);
        self.filtered_kw = self.filtered_kw.min(self.p_available_kw);
    }

    /// Advance by `dt_s` at local frequency `f_hz`; returns the new output in kW.
    pub fn step(&mut self, f_hz: f64, dt_s: f64) -> Result<f64, DerError> {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(DerError::Validation { device: self.id.clone(), reason: "dt must be > 0".into() });
        }
        let goal = if !self.connected {
            0.0
        } else {
            match self.mode {
                DerMode::FreqWatt => self.droop_power(f_hz)?,
                DerMode::FixedSetpoint | DerMode::AgcFollow => self.target_kw,
            }
        };
        let goal = match self.olrt_s {
            Some(olrt) if olrt > 0.0 => {
                let tau = olrt / std::f64::consts::LN_10;
                self.filtered_kw += (goal - self.filtered_kw) * (1.0 - (-dt_s / tau).exp());
                self.filtered_kw
            }
            _ => {
                self.filtered_kw = goal;
                goal
            }
        };
        let next = match self.ramp_limit_kw_per_s {
            Some(rate) => {
                let max_step = rate * dt_s;
                self.p_output_kw + (goal - self.p_output_kw).clamp(-max_step, max_step)
            }
            None => goal,
        };
        self.p_output_kw = next.clamp(0.0, self.p_available_kw);
        Ok(self.p_output_kw)
    }
}
