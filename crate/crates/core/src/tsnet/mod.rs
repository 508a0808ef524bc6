//! Coherent-area transmission dynamics.
//!
//! Per area `i`, in per unit of the area rating:
//!
//! ```text
//! d(delta)/dt = 2*pi*f0 * df
//! 2H d(df)/dt = Pm - Pload - D df - ties + boundary
//! Tg d(Pv)/dt = Pm_ref - df/R - Pv
//! Tt d(Pm)/dt = Pv - Pm                  (Tt = 0: Pm follows the governor equation directly)
//! ```
//!
//! Tie flows are `B (delta_i - delta_j) + K (df_i - df_j)` on the common MVA base.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const F_NOM_HZ: f64 = 60.0;
/// |df| above this flags the run unstable.
pub const UNSTABLE_DF_PU: f64 = 0.05;
const NX: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TsError {
    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("{id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("numerical divergence in area `{area}` at t = {time_s} s")]
    Divergence { area: String, time_s: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Area {
    pub id: String,
    pub h_s: f64,
    pub d_pu: f64,
    pub r_pu: f64,
    pub tg_s: f64,
    /// Turbine lag; zero means the governor drives mechanical power directly.
    pub tt_s: f64,
    pub rating_mva: f64,
    pub pm_pu: f64,
    pub pv_pu: f64,
    pub pm_ref_pu: f64,
    pub pload_pu: f64,
    pub delta_rad: f64,
    pub dfreq_pu: f64,
    pub boundary_inj_mw: f64,
    /// Hold Pm and Pv constant.
    pub governor_frozen: bool,
}

impl Area {
    pub fn new(id: &str, rating_mva: f64) -> Self {
        Area {
            id: id.to_string(),
            h_s: 5.0,
            d_pu: 1.0,
            r_pu: 0.05,
            tg_s: 0.5,
            tt_s: 0.0,
            rating_mva,
            pm_pu: 0.0,
            pv_pu: 0.0,
            pm_ref_pu: 0.0,
            pload_pu: 0.0,
            delta_rad: 0.0,
            dfreq_pu: 0.0,
            boundary_inj_mw: 0.0,
            governor_frozen: false,
        }
    }

    fn validate(&self) -> Result<(), TsError> {
        let bad = |reason: &str| Err(TsError::Invalid { id: self.id.clone(), reason: reason.into() });
        let vals = [self.h_s, self.d_pu, self.r_pu, self.tg_s, self.tt_s, self.rating_mva, self.pload_pu];
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        if self.h_s <= 0.0 {
            return bad("H must be > 0");
        }
        if self.rating_mva <= 0.0 {
            return bad("rating must be > 0");
        }
        if self.r_pu <= 0.0 {
            return bad("R must be > 0");
        }
        if self.d_pu < 0.0 {
            return bad("D must be >= 0");
        }
        if self.tg_s <= 0.0 {
            return bad("Tg must be > 0");
        }
        if self.tt_s < 0.0 {
            return bad("Tt must be >= 0");
        }
        Ok(())
    }

    pub fn frequency_hz(&self) -> f64 {
        F_NOM_HZ * (1.0 + self.dfreq_pu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieLine {
    pub id: String,
    pub from_area: String,
    pub to_area: String,
    /// Synchronizing coefficient, pu power per rad on the common base.
    pub b_pu: f64,
    /// Damping coefficient, pu power per pu frequency difference on the common base.
    pub damping_pu: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    LoadStep { area: String, delta_mw: f64 },
    TripTie { tie: String },
    TripGeneration { area: String, delta_mw: f64 },
    FaultClear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEvent {
    pub at_time_s: f64,
    pub kind: EventKind,
    pub applied: bool,
}

/// Transmission bus where distribution groups connect.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceBus {
    pub id: String,
    pub area: String,
    pub v0_pu: f64,
    /// Voltage sensitivity to active and reactive injection, pu per pu on the common base.
    pub r_th_pu: f64,
    pub x_th_pu: f64,
    /// Current injection into the transmission system (generation convention).
    pub p_mw: f64,
    pub q_mvar: f64,
    p0_mw: f64,
    q0_mvar: f64,
}

impl InterfaceBus {
    pub fn new(id: &str, area: &str, v0_pu: f64, r_th_pu: f64, x_th_pu: f64) -> Self {
        InterfaceBus {
            id: id.to_string(),
            area: area.to_string(),
            v0_pu,
            r_th_pu,
            x_th_pu,
            p_mw: 0.0,
            q_mvar: 0.0,
            p0_mw: 0.0,
            q0_mvar: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub frequency_hz: f64,
    pub voltages: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSystem {
    pub base_mva: f64,
    pub areas: Vec<Area>,
    pub ties: Vec<TieLine>,
    pub buses: Vec<InterfaceBus>,
    pub events: Vec<GridEvent>,
    pub time_s: f64,
    pub unstable: bool,
    area_idx: HashMap<String, usize>,
    tie_idx: HashMap<String, usize>,
    bus_idx: HashMap<String, usize>,
    tie_ends: Vec<(usize, usize)>,
}

impl TransmissionSystem {
    pub fn new(base_mva: f64, areas: Vec<Area>, ties: Vec<TieLine>, buses: Vec<InterfaceBus>, mut events: Vec<GridEvent>) -> Result<Self, TsError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(TsError::Invalid { id: "tsnet".into(), reason: "base MVA must be > 0".into() });
        }
        if areas.is_empty() {
            return Err(TsError::Invalid { id: "tsnet".into(), reason: "at least one area is required".into() });
        }
        let mut area_idx = HashMap::new();
        for (i, a) in areas.iter().enumerate() {
            a.validate()?;
            if area_idx.insert(a.id.clone(), i).is_some() {
                return Err(TsError::Invalid { id: a.id.clone(), reason: "duplicate area id".into() });
            }
        }
        let area_of = |kind: &'static str, id: &str| area_idx.get(id).copied().ok_or(TsError::NotFound { kind, id: id.to_string() });
        let mut tie_idx = HashMap::new();
        let mut tie_ends = Vec::new();
        for (i, t) in ties.iter().enumerate() {
            if tie_idx.insert(t.id.clone(), i).is_some() {
                return Err(TsError::Invalid { id: t.id.clone(), reason: "duplicate tie id".into() });
            }
            let ends = (area_of("area", &t.from_area)?, area_of("area", &t.to_area)?);
            if ends.0 == ends.1 {
                return Err(TsError::Invalid { id: t.id.clone(), reason: "tie connects an area to itself".into() });
            }
            if !(t.b_pu.is_finite() && t.b_pu > 0.0) {
                return Err(TsError::Invalid { id: t.id.clone(), reason: "B must be > 0".into() });
            }
            if !(t.damping_pu.is_finite() && t.damping_pu >= 0.0) {
                return Err(TsError::Invalid { id: t.id.clone(), reason: "damping must be >= 0".into() });
            }
            tie_ends.push(ends);
        }
        let mut bus_idx = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            area_of("area", &b.area)?;
            if bus_idx.insert(b.id.clone(), i).is_some() {
                return Err(TsError::Invalid { id: b.id.clone(), reason: "duplicate bus id".into() });
            }
        }
        for e in &events {
            if !(e.at_time_s.is_finite() && e.at_time_s >= 0.0) {
                return Err(TsError::Invalid { id: "event".into(), reason: "event time must be >= 0".into() });
            }
            match &e.kind {
                EventKind::LoadStep { area, delta_mw } | EventKind::TripGeneration { area, delta_mw } => {
                    area_of("area", area)?;
                    if !delta_mw.is_finite() {
                        return Err(TsError::Invalid { id: area.clone(), reason: "event MW must be finite".into() });
                    }
                }
                EventKind::TripTie { tie } => {
                    if !tie_idx.contains_key(tie) {
                        return Err(TsError::NotFound { kind: "tie", id: tie.clone() });
                    }
                }
                EventKind::FaultClear => {}
            }
        }
        events.sort_by(|a, b| a.at_time_s.total_cmp(&b.at_time_s));
        let mut sys = TransmissionSystem {
            base_mva,
            areas,
            ties,
            buses,
            events,
            time_s: 0.0,
            unstable: false,
            area_idx,
            tie_idx,
            bus_idx,
            tie_ends,
        };
        sys.sync_boundary();
        Ok(sys)
    }

    pub fn area_index(&self, id: &str) -> Result<usize, TsError> {
        self.area_idx.get(id).copied().ok_or(TsError::NotFound { kind: "area", id: id.to_string() })
    }

    pub fn area(&self, id: &str) -> Result<&Area, TsError> {
        Ok(&self.areas[self.area_index(id)?])
    }

    pub fn bus(&self, id: &str) -> Result<&InterfaceBus, TsError> {
        let i = self.bus_idx.get(id).copied().ok_or(TsError::NotFound { kind: "bus", id: id.to_string() })?;
        Ok(&self.buses[i])
    }

    /// Set a bus injection (MW, MVAr, generation convention) and refresh area boundaries.
    pub fn set_bus_injection(&mut self, bus: &str, p_mw: f64, q_mvar: f64) -> Result<(), TsError> {
        let i = self.bus_idx.get(bus).copied().ok_or(TsError::NotFound { kind: "bus", id: bus.to_string() })?;
        self.buses[i].p_mw = p_mw;
        self.buses[i].q_mvar = q_mvar;
        self.sync_boundary();
        Ok(())
    }

    fn sync_boundary(&mut self) {
        for a in &mut self.areas {
            a.boundary_inj_mw = 0.0;
        }
        for b in &self.buses {
            let i = self.area_idx[&b.area];
            self.areas[i].boundary_inj_mw += b.p_mw;
        }
    }

    /// Net tie export of each area in MW at the current state.
    pub fn tie_exports_mw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.areas.len()];
        for (t, &(i, j)) in self.ties.iter().zip(&self.tie_ends) {
            if t.in_service {
                let a = &self.areas;
                let flow = self.base_mva * (t.b_pu * (a[i].delta_rad - a[j].delta_rad) + t.damping_pu * (a[i].dfreq_pu - a[j].dfreq_pu));
                out[i] += flow;
                out[j] -= flow;
            }
        }
        out
    }

    /// Set mechanical power and references so the present state is stationary.
    /// Also latches bus injections as the voltage operating point.
    pub fn initialize_equilibrium(&mut self) {
        let exports = self.tie_exports_mw();
        for (a, ex) in self.areas.iter_mut().zip(exports) {
            a.dfreq_pu = 0.0;
            let pm = a.pload_pu + (ex - a.boundary_inj_mw) / a.rating_mva;
            a.pm_pu = pm;
            a.pv_pu = pm;
            a.pm_ref_pu = pm;
        }
        for b in &mut self.buses {
            b.p0_mw = b.p_mw;
            b.q0_mvar = b.q_mvar;
        }
    }

    fn pack(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.areas.len() * NX);
        for a in &self.areas {
            x.extend_from_slice(&[a.delta_rad, a.dfreq_pu, a.pv_pu, a.pm_pu]);
        }
        x
    }

    fn unpack(&mut self, x: &[f64]) {
        for (a, s) in self.areas.iter_mut().zip(x.chunks_exact(NX)) {
            a.delta_rad = s[0];
            a.dfreq_pu = s[1];
            a.pv_pu = s[2];
            a.pm_pu = s[3];
        }
    }

    fn deriv(&self, x: &[f64], dx: &mut [f64]) {
        let w0 = 2.0 * std::f64::consts::PI * F_NOM_HZ;
        let mut ties = vec![0.0; self.areas.len()];
        for (t, &(i, j)) in self.ties.iter().zip(&self.tie_ends) {
            if t.in_service {
                let flow = t.b_pu * (x[i * NX] - x[j * NX]) + t.damping_pu * (x[i * NX + 1] - x[j * NX + 1]);
                ties[i] += flow;
                ties[j] -= flow;
            }
        }
        for (k, a) in self.areas.iter().enumerate() {
            let s = &x[k * NX..(k + 1) * NX];
            let (df, pv, pm) = (s[1], s[2], s[3]);
            let d = &mut dx[k * NX..(k + 1) * NX];
            d[0] = w0 * df;
            d[1] = (pm - a.pload_pu - a.d_pu * df - ties[k] * self.base_mva / a.rating_mva + a.boundary_inj_mw / a.rating_mva) / (2.0 * a.h_s);
            if a.governor_frozen {
                d[2] = 0.0;
                d[3] = 0.0;
            } else if a.tt_s > 0.0 {
                d[2] = (a.pm_ref_pu - df / a.r_pu - pv) / a.tg_s;
                d[3] = (pv - pm) / a.tt_s;
            } else {
                d[3] = (a.pm_ref_pu - df / a.r_pu - pm) / a.tg_s;
                d[2] = d[3];
            }
        }
    }

    /// One classical RK4 step of length `dt_s`.
    pub fn step(&mut self, dt_s: f64) -> Result<(), TsError> {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(TsError::Invalid { id: "step".into(), reason: format!("dt = {dt_s} s") });
        }
        let x0 = self.pack();
        let n = x0.len();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut tmp = vec![0.0; n];
        self.deriv(&x0, &mut k1);
        for i in 0..n {
            tmp[i] = x0[i] + 0.5 * dt_s * k1[i];
        }
        self.deriv(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x0[i] + 0.5 * dt_s * k2[i];
        }
        self.deriv(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x0[i] + dt_s * k3[i];
        }
        self.deriv(&tmp, &mut k4);
        for i in 0..n {
            tmp[i] = x0[i] + dt_s / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.time_s += dt_s;
        if let Some(bad) = tmp.iter().position(|v| !v.is_finite()) {
            return Err(TsError::Divergence { area: self.areas[bad / NX].id.clone(), time_s: self.time_s });
        }
        self.unpack(&tmp);
        if self.areas.iter().any(|a| a.dfreq_pu.abs() > UNSTABLE_DF_PU) {
            self.unstable = true;
        }
        Ok(())
    }

    /// Integrate over `duration_s` with substeps no longer than `substep_s`.
    pub fn advance(&mut self, duration_s: f64, substep_s: f64) -> Result<(), TsError> {
        let n = (duration_s / substep_s).ceil().max(1.0) as usize;
        let h = duration_s / n as f64;
        let start = self.time_s;
        for k in 1..=n {
            self.step(h)?;
            self.time_s = start + k as f64 * h;
        }
        Ok(())
    }

    pub fn apply_event(&mut self, kind: &EventKind) -> Result<(), TsError> {
        match kind {
            EventKind::LoadStep { area, delta_mw } => {
                let i = self.area_index(area)?;
                let a = &mut self.areas[i];
                a.pload_pu += delta_mw / a.rating_mva;
            }
            EventKind::TripTie { tie } => {
                let i = self.tie_idx.get(tie).copied().ok_or(TsError::NotFound { kind: "tie", id: tie.clone() })?;
                if self.ties[i].in_service {
                    self.ties[i].in_service = false;
                } else {
                    log::warn!("tie `{tie}` is already out of service");
                }
            }
            EventKind::TripGeneration { area, delta_mw } => {
                let i = self.area_index(area)?;
                let a = &mut self.areas[i];
                let d = delta_mw / a.rating_mva;
                a.pm_ref_pu -= d;
                a.pm_pu -= d;
                a.pv_pu -= d;
            }
            EventKind::FaultClear => log::info!("fault cleared at t = {} s", self.time_s),
        }
        Ok(())
    }

    /// Apply every pending event due at or before `t_s`, in time order.
    pub fn apply_due_events(&mut self, t_s: f64) -> Result<usize, TsError> {
        let mut count = 0;
        for k in 0..self.events.len() {
            let e = &self.events[k];
            if !e.applied && e.at_time_s <= t_s + 1e-9 {
                let kind = e.kind.clone();
                self.apply_event(&kind)?;
                self.events[k].applied = true;
                count += 1;
            }
        }
        Ok(count)
    }

    pub fn bus_voltage(&self, bus: &InterfaceBus) -> f64 {
        bus.v0_pu + (bus.r_th_pu * (bus.p_mw - bus.p0_mw) + bus.x_th_pu * (bus.q_mvar - bus.q0_mvar)) / self.base_mva
    }

    pub fn measure(&self, area_id: &str) -> Result<Measurement, TsError> {
        let a = self.area(area_id)?;
        let voltages = self.buses.iter().filter(|b| b.area == area_id).map(|b| (b.id.clone(), self.bus_voltage(b))).collect();
        Ok(Measurement { frequency_hz: a.frequency_hz(), voltages })
    }
}
