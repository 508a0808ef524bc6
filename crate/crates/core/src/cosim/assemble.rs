//! Turn a scenario into the objects each component owns.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use super::config::{ConfigError, Diagnostic, PhaseRule, Scenario, Siting};
use super::SimError;
use crate::der::{DerDevice, DerMode, DerSite, DroopParams};
use crate::derms::{AgcSignal, Registry, SyntheticAgc};
use crate::dnet::{load_feeder, Feeder, FeederGroup, LoadModel, SolverOptions};
use crate::tsnet::{Area, GridEvent, InterfaceBus, TieLine, TransmissionSystem};

/// A feeder group with the solver settings it runs under.
#[derive(Debug, Clone)]
pub struct GroupRuntime {
    pub group: FeederGroup,
    pub opts: SolverOptions,
}

/// DERMS group formed by one fleet on one feeder group.
#[derive(Debug, Clone, PartialEq)]
pub struct DermsPlan {
    pub id: String,
    pub fleet: String,
    pub feeder_group: String,
    /// Feeder replication; aggregate quantities are per-feeder values times this.
    pub scale: f64,
    pub agc: bool,
    pub droop: Option<DroopParams>,
}

#[derive(Debug)]
pub struct Assembly {
    pub system: TransmissionSystem,
    pub groups: Vec<GroupRuntime>,
    pub devices: Vec<DerDevice>,
    /// Area whose frequency each device sees, parallel to `devices`.
    pub device_area: Vec<String>,
    pub registry: Registry,
    pub derms_plans: Vec<DermsPlan>,
    pub agc: Option<AgcSignal>,
}

fn cfg_err(s: &Scenario, id: &str, message: String) -> SimError {
    let line = s.text.lines().position(|l| l.contains(&format!("\"{id}\""))).map(|i| i + 1);
    SimError::Config(ConfigError(vec![Diagnostic { file: s.path.clone(), line, message }]))
}

pub fn assemble(s: &Scenario) -> Result<Assembly, SimError> {
    let f = &s.file;
    let t = &f.tsnet;

    let total_rating: f64 = t.areas.iter().map(|a| a.rating_mva).sum();
    let keep = 1.0 - t.retired_mw / total_rating;
    let areas = t
        .areas
        .iter()
        .map(|c| {
            let mut a = Area::new(&c.id, c.rating_mva);
            a.h_s = c.h_s * keep;
            a.r_pu = c.r_pu / keep;
            a.d_pu = c.d_pu;
            a.tg_s = c.tg_s;
            a.tt_s = c.tt_s;
            a.pload_pu = c.pload_mw / c.rating_mva;
            a
        })
        .collect();
    let ties = t
        .ties
        .iter()
        .map(|c| TieLine {
            id: c.id.clone(),
            from_area: c.from.clone(),
            to_area: c.to.clone(),
            b_pu: c.b_pu,
            damping_pu: c.damping_pu,
            in_service: c.in_service,
        })
        .collect();
    let buses = t.buses.iter().map(|b| InterfaceBus::new(&b.id, &b.area, b.v0_pu, b.r_th_pu, b.x_th_pu)).collect();
    let events = t.events.iter().map(|e| GridEvent { at_time_s: e.at_s, kind: e.kind.clone(), applied: false }).collect();
    let system = TransmissionSystem::new(t.base_mva, areas, ties, buses, events)?;

    let bus_area: HashMap<&str, &str> = t.buses.iter().map(|b| (b.id.as_str(), b.area.as_str())).collect();

    // Parse each feeder file once.
    let mut base_feeders: HashMap<PathBuf, Feeder> = HashMap::new();
    for g in &f.feeder_groups {
        let path = s.resolve(&g.feeder);
        if !base_feeders.contains_key(&path) {
            let feeder = load_feeder(&path).map_err(|e| cfg_err(s, &g.id, format!("feeder group `{}`: {}: {e}", g.id, path.display())))?;
            base_feeders.insert(path, feeder);
        }
    }

    let mut devices = Vec::new();
    let mut device_area = Vec::new();
    let mut registry = Registry::new(f.derms.stale_after_ticks);
    let mut derms_plans = Vec::new();
    let mut groups = Vec::new();
    for g in &f.feeder_groups {
        let mut feeder = base_feeders[&s.resolve(&g.feeder)].clone();
        feeder.scale_loads(g.load_scale);
        let area = bus_area[g.bus.as_str()].to_string();
        for fl in f.fleets.iter().filter(|fl| fl.groups.contains(&g.id)) {
            let sites: Vec<(usize, Option<crate::dnet::Phase>)> = match fl.siting {
                Siting::Head => vec![(feeder.head, None)],
                Siting::LoadNodes | Siting::Laterals => feeder
                    .load_entries()
                    .filter(|&(i, _, _)| fl.siting == Siting::LoadNodes || feeder.nodes[i].phases.len() == 1)
                    .map(|(i, p, _)| (i, (fl.phase == PhaseRule::Single).then_some(p)))
                    .collect(),
            };
            if sites.is_empty() {
                return Err(cfg_err(s, &fl.id, format!("fleet `{}`: feeder group `{}` has no eligible sites", fl.id, g.id)));
            }
            let plan_id = format!("{}_{}", fl.id, g.id);
            registry.add_group(&plan_id, f.derms.allocation)?;
            let width = fl.count.to_string().len().max(3);
            for k in 0..fl.count as usize {
                let id = format!("{}_{}_{:0width$}", fl.id, g.id, k + 1);
                let (node, phase) = sites[k % sites.len()];
                let node_id = feeder.nodes[node].id.clone();
                feeder.attach_der(&id, &node_id, phase)?;
                let rated = fl.p_rated_kw;
                let mut d = DerDevice::new(
                    &id,
                    DerSite { group: g.id.clone(), node: node_id, phase },
                    rated,
                    rated * fl.available_frac,
                    rated * fl.output_frac,
                )?;
                d.mode = fl.mode;
                d.ramp_limit_kw_per_s = fl.ramp_limit_kw_per_s;
                d.olrt_s = fl.olrt_s;
                if let Some(p) = fl.droop {
                    d.droop = p;
                }
                registry.register_device(&id, &plan_id, rated, d.p_available_kw, 0)?;
                devices.push(d);
                device_area.push(area.clone());
            }
            let agc = fl.mode == DerMode::AgcFollow;
            if agc {
                let rated = registry.total_rated_kw(&plan_id).unwrap_or(0.0);
                registry.configure_regulation(&plan_id, f.derms.baseline_frac * rated, f.derms.range_frac * rated)?;
            }
            derms_plans.push(DermsPlan {
                id: plan_id,
                fleet: fl.id.clone(),
                feeder_group: g.id.clone(),
                scale: f64::from(g.replication),
                agc,
                droop: fl.droop,
            });
        }
        let mut group = FeederGroup::new(&g.id, Arc::new(feeder), g.replication, &g.bus)?;
        group.instantiate = g.instantiate;
        let opts = SolverOptions {
            model: g.model,
            loads: g.zip.map(LoadModel::Zip).unwrap_or(LoadModel::ConstantPower),
            ..SolverOptions::default()
        };
        groups.push(GroupRuntime { group, opts });
    }

    let needs_agc = derms_plans.iter().any(|p| p.agc);
    let agc = match (&f.derms.agc_csv, &f.derms.agc_synthetic) {
        (Some(p), _) => Some(AgcSignal::load_csv(&s.resolve(p))?),
        (None, Some(c)) => Some(
            SyntheticAgc { duration_s: c.duration_s, interval_s: c.interval_s, ..SyntheticAgc::default() }.generate(f.scenario.seed)?,
        ),
        (None, None) => None,
    };
    if needs_agc && agc.is_none() {
        return Err(cfg_err(s, "", "agc_follow fleets need [derms] agc_csv or agc_synthetic".into()));
    }

    Ok(Assembly { system, groups, devices, device_area, registry, derms_plans, agc })
}

/// Rated kW of every fleet per feeder group, for reporting.
pub fn rated_by_group(a: &Assembly) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for d in &a.devices {
        *out.entry(d.site.group.clone()).or_insert(0.0) += d.p_rated_kw;
    }
    out
}
