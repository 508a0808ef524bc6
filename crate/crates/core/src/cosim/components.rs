//! The four simulators as bus participants.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;

use super::assemble::{DermsPlan, GroupRuntime};
use super::{tick_time, SimError};
use crate::der::DerDevice;
use crate::derms::{AgcSignal, Registry, SetpointCommand};
use crate::dnet::{head_power, head_power_instantiated, solve_power_flow, FeederError};
use crate::msgbus::{ControlVerb, Envelope, Payload};
use crate::tsnet::{TransmissionSystem, TsError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    pub tick: u64,
    pub step_s: f64,
}

impl Clock {
    pub fn t_s(&self) -> f64 {
        tick_time(self.tick, self.step_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickStatus {
    Continue,
    /// Stop the run after this tick; partial outputs are kept.
    Halt(String),
}

/// A participant in the tick loop. Envelopes are handed over only once their
/// tick is not later than the tick being executed.
pub trait Component: Send {
    fn id(&self) -> &str;
    /// Components whose `sync/done` for tick t must be seen before running tick t.
    fn upstream(&self) -> Vec<String>;
    fn subscriptions(&self) -> Vec<String>;
    fn on_envelope(&mut self, env: &Envelope);
    fn on_tick(&mut self, clock: &Clock, out: &mut Vec<Envelope>) -> Result<TickStatus, SimError>;
}

fn env(topic: &str, tick: u64, publisher: &str, payload: Payload) -> Result<Envelope, SimError> {
    Ok(Envelope::build(topic, tick, publisher, payload)?)
}

pub struct TsnetComponent {
    sys: TransmissionSystem,
    substep_s: f64,
    group_bus: HashMap<String, String>,
    head: BTreeMap<String, (f64, f64)>,
    initialized: bool,
}

impl TsnetComponent {
    pub fn new(sys: TransmissionSystem, substep_s: f64, groups: &[GroupRuntime]) -> Self {
        let group_bus = groups.iter().map(|g| (g.group.id.clone(), g.group.bus.clone())).collect();
        TsnetComponent { sys, substep_s, group_bus, head: BTreeMap::new(), initialized: false }
    }

    pub fn system(&self) -> &TransmissionSystem {
        &self.sys
    }

    fn push_boundary(&mut self) -> Result<(), SimError> {
        let mut per_bus: BTreeMap<&str, (f64, f64)> = self.sys.buses.iter().map(|b| (b.id.as_str(), (0.0, 0.0))).collect();
        for (g, &(p, q)) in &self.head {
            if let Some(bus) = self.group_bus.get(g) {
                let e = per_bus.get_mut(bus.as_str()).expect("bus exists");
                e.0 -= p;
                e.1 -= q;
            }
        }
        let per_bus: Vec<(String, f64, f64)> = per_bus.into_iter().map(|(b, (p, q))| (b.to_string(), p, q)).collect();
        for (b, p, q) in per_bus {
            self.sys.set_bus_injection(&b, p, q)?;
        }
        Ok(())
    }
}

impl Component for TsnetComponent {
    fn id(&self) -> &str {
        "tsnet"
    }
    fn upstream(&self) -> Vec<String> {
        Vec::new()
    }
    fn subscriptions(&self) -> Vec<String> {
        vec!["ds/+/headpower".into()]
    }
    fn on_envelope(&mut self, env: &Envelope) {
        if let Payload::HeadPower { p_mw, q_mvar, .. } = env.payload {
            let g = env.topic.as_str().trim_start_matches("ds/").trim_end_matches("/headpower");
            if self.group_bus.contains_key(g) {
                self.head.insert(g.to_string(), (p_mw, q_mvar));
            }
        }
    }
    fn on_tick(&mut self, clock: &Clock, out: &mut Vec<Envelope>) -> Result<TickStatus, SimError> {
        if clock.tick > 0 {
            // Boundary from the feeders' tick t-1 solution.
            self.push_boundary()?;
            if !self.initialized {
                self.sys.initialize_equilibrium();
                self.initialized = true;
            }
            let prev = Clock { tick: clock.tick - 1, ..*clock };
            self.sys.apply_due_events(prev.t_s())?;
            match self.sys.advance(clock.step_s, self.substep_s) {
                Ok(()) => {}
                Err(TsError::Divergence { .. }) => return Ok(TickStatus::Halt(format!("transmission state diverged at t = {} s", clock.t_s()))),
                Err(e) => return Err(e.into()),
            }
        }
        for a in &self.sys.areas {
            out.push(env(&format!("ts/{}/freq", a.id), clock.tick, "tsnet", Payload::Frequency { hz: a.frequency_hz() })?);
        }
        for b in &self.sys.buses {
            let v = self.sys.bus_voltage(b);
            out.push(env(&format!("ts/{}/voltage", b.id), clock.tick, "tsnet", Payload::Voltage { pu: v })?);
        }
        Ok(TickStatus::Continue)
    }
}

pub struct DerComponent {
    devices: Vec<DerDevice>,
    index: HashMap<String, usize>,
    area_of: Vec<String>,
    freq: HashMap<String, f64>,
    commands: Vec<(String, Payload)>,
    pub rejected: u64,
}

impl DerComponent {
    pub fn new(devices: Vec<DerDevice>, area_of: Vec<String>) -> Self {
        let index = devices.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        DerComponent { devices, index, area_of, freq: HashMap::new(), commands: Vec::new(), rejected: 0 }
    }
}

impl Component for DerComponent {
    fn id(&self) -> &str {
        "der"
    }
    fn upstream(&self) -> Vec<String> {
        vec!["tsnet".into()]
    }
    fn subscriptions(&self) -> Vec<String> {
        vec!["ts/+/freq".into(), "derms/setpoint/+".into()]
    }
    fn on_envelope(&mut self, env: &Envelope) {
        let topic = env.topic.as_str();
        match &env.payload {
            Payload::Frequency { hz } => {
                let area = topic.trim_start_matches("ts/").trim_end_matches("/freq");
                self.freq.insert(area.to_string(), *hz);
            }
            p @ (Payload::Setpoint { .. } | Payload::Control(_)) => {
                let id = topic.trim_start_matches("derms/setpoint/");
                self.commands.push((id.to_string(), p.clone()));
            }
            _ => {}
        }
    }
    fn on_tick(&mut self, clock: &Clock, out: &mut Vec<Envelope>) -> Result<TickStatus, SimError> {
        for (id, p) in std::mem::take(&mut self.commands) {
            let Some(&i) = self.index.get(&id) else {
                log::warn!("command for unknown device {id}");
                self.rejected += 1;
                continue;
            };
            let d = &mut self.devices[i];
            let res = match p {
                Payload::Setpoint { p_kw } => d.apply_setpoint(&SetpointCommand::new(&id, p_kw, clock.tick)),
                Payload::Control(v) => d.apply_control(&v),
                _ => Ok(()),
            };
            if let Err(e) = res {
                log::warn!("{e}");
                self.rejected += 1;
            }
        }
        for (d, area) in self.devices.iter_mut().zip(&self.area_of) {
            if clock.tick > 0 {
                let f = self.freq.get(area).copied().unwrap_or(crate::tsnet::F_NOM_HZ);
                d.step(f, clock.step_s)?;
            }
            out.push(env(
                &format!("der/{}/output", d.id),
                clock.tick,
                "der",
                Payload::DerOutput { p_kw: d.p_output_kw, q_kvar: d.q_output_kvar, p_available_kw: d.p_available_kw },
            )?);
        }
        Ok(TickStatus::Continue)
    }
}

pub struct DnetComponent {
    groups: Vec<GroupRuntime>,
    der_group: HashMap<String, usize>,
    der_out: Vec<BTreeMap<String, Complex64>>,
    bus_v: HashMap<String, f64>,
}

impl DnetComponent {
    pub fn new(groups: Vec<GroupRuntime>) -> Self {
        let mut der_group = HashMap::new();
        for (i, g) in groups.iter().enumerate() {
            for id in g.group.feeder.der_ids() {
                der_group.insert(id.to_string(), i);
            }
        }
        let der_out = vec![BTreeMap::new(); groups.len()];
        DnetComponent { groups, der_group, der_out, bus_v: HashMap::new() }
    }
}

impl Component for DnetComponent {
    fn id(&self) -> &str {
        "dnet"
    }
    fn upstream(&self) -> Vec<String> {
        vec!["tsnet".into(), "der".into()]
    }
    fn subscriptions(&self) -> Vec<String> {
        vec!["der/+/output".into(), "ts/+/voltage".into()]
    }
    fn on_envelope(&mut self, env: &Envelope) {
        let topic = env.topic.as_str();
        match env.payload {
            Payload::DerOutput { p_kw, q_kvar, .. } => {
                let id = topic.trim_start_matches("der/").trim_end_matches("/output");
                if let Some(&g) = self.der_group.get(id) {
                    self.der_out[g].insert(id.to_string(), Complex64::new(p_kw, q_kvar));
                }
            }
            Payload::Voltage { pu } => {
                let bus = topic.trim_start_matches("ts/").trim_end_matches("/voltage");
                self.bus_v.insert(bus.to_string(), pu);
            }
            _ => {}
        }
    }
    fn on_tick(&mut self, clock: &Clock, out: &mut Vec<Envelope>) -> Result<TickStatus, SimError> {
        for (g, der) in self.groups.iter().zip(&self.der_out) {
            let v = self.bus_v.get(&g.group.bus).copied().unwrap_or(1.0);
            let fg = &g.group;
            let (s, losses_kw) = if fg.instantiate {
                let sols: Vec<_> = (0..fg.replication)
                    .map(|_| solve_power_flow(&fg.feeder, der, v, &g.opts))
                    .collect::<Result<_, _>>()?;
                let losses: f64 = sols.iter().map(|s| s.losses_kw).sum();
                match head_power_instantiated(&sols, fg) {
                    Ok(s) => (s, losses),
                    Err(FeederError::Diverged { .. }) => return Ok(TickStatus::Halt(format!("feeder group `{}` diverged", fg.id))),
                    Err(e) => return Err(e.into()),
                }
            } else {
                let sol = solve_power_flow(&fg.feeder, der, v, &g.opts)?;
                match head_power(&sol, fg) {
                    Ok(s) => (s, sol.losses_kw * f64::from(fg.replication)),
                    Err(FeederError::Diverged { .. }) => return Ok(TickStatus::Halt(format!("feeder group `{}` diverged", fg.id))),
                    Err(e) => return Err(e.into()),
                }
            };
            out.push(env(
                &format!("ds/{}/headpower", fg.id),
                clock.tick,
                "dnet",
                Payload::HeadPower { p_mw: s.re, q_mvar: s.im, losses_kw },
            )?);
        }
        Ok(TickStatus::Continue)
    }
}

pub struct DermsComponent {
    registry: Registry,
    plans: Vec<DermsPlan>,
    agc: Option<AgcSignal>,
    cadence_ticks: u64,
    droop_tick: Option<u64>,
    droop_fleets: Vec<String>,
    arm_tick: Option<u64>,
}

impl DermsComponent {
    pub fn new(
        registry: Registry,
        plans: Vec<DermsPlan>,
        agc: Option<AgcSignal>,
        cadence_ticks: u64,
        droop: Option<(u64, Vec<String>)>,
        arm_tick: Option<u64>,
    ) -> Self {
        let (droop_tick, droop_fleets) = match droop {
            Some((t, f)) => (Some(t), f),
            None => (None, Vec::new()),
        };
        DermsComponent { registry, plans, agc, cadence_ticks: cadence_ticks.max(1), droop_tick, droop_fleets, arm_tick }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }
}

impl Component for DermsComponent {
    fn id(&self) -> &str {
        "derms"
    }
    fn upstream(&self) -> Vec<String> {
        vec!["der".into()]
    }
    fn subscriptions(&self) -> Vec<String> {
        vec!["der/+/output".into(), "ts/+/freq".into()]
    }
    fn on_envelope(&mut self, env: &Envelope) {
        if matches!(env.payload, Payload::DerOutput { .. }) {
            self.registry.ingest_telemetry(env);
        }
    }
    fn on_tick(&mut self, clock: &Clock, out: &mut Vec<Envelope>) -> Result<TickStatus, SimError> {
        let tick = clock.tick;
        self.registry.refresh_staleness(tick);
        let cmd = |id: &str, p: Payload| env(&format!("derms/setpoint/{id}"), tick, "derms", p);
        if self.droop_tick == Some(tick) {
            for plan in self.plans.iter().filter(|p| self.droop_fleets.contains(&p.fleet)) {
                for (id, verb) in self.registry.enable_droop(&plan.id, plan.droop)? {
                    out.push(cmd(&id, Payload::Control(verb))?);
                }
            }
        }
        if self.arm_tick == Some(tick) {
            for plan in &self.plans {
                let members = self.registry.group(&plan.id).map(|g| g.members.clone()).unwrap_or_default();
                for id in members {
                    out.push(cmd(&id, Payload::Control(ControlVerb::Arm))?);
                }
            }
        }
        if let Some(agc) = &self.agc {
            if tick % self.cadence_ticks == 0 {
                let r = agc.value_at(clock.t_s());
                let (mut req_total, mut range_total) = (0.0, 0.0);
                let mut any = false;
                for plan in self.plans.iter().filter(|p| p.agc) {
                    any = true;
                    let req = self.registry.agc_to_request(r, &plan.id)?;
                    let alloc = self.registry.allocate(req, &plan.id, tick)?;
                    if alloc.shortfall {
                        log::debug!("group {} short of request {req} kW at tick {tick}", plan.id);
                    }
                    for c in alloc.commands {
                        out.push(cmd(&c.device_id, Payload::Setpoint { p_kw: c.p_setpoint_kw })?);
                    }
                    let range = self.registry.group(&plan.id).and_then(|g| g.range_kw).unwrap_or(0.0);
                    req_total += req * plan.scale;
                    range_total += range * plan.scale;
                }
                if any {
                    out.push(env("derms/agc", tick, "derms", Payload::Agc { r_pu: r, request_kw: req_total, range_kw: range_total })?);
                }
            }
        }
        Ok(TickStatus::Continue)
    }
}
