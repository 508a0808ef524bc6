//! Scenario runs shared by the co-simulation tests and the acceptance harness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};
use tdcosim::cosim::recorder::ALL_FILES;
use tdcosim::cosim::{builtin_components, run_scenario, run_with_components, Clock, Component, TickStatus};
use tdcosim::msgbus::{ControlVerb, Envelope, Payload};
use tdcosim::{Mode, RunOptions, Scenario, SimError};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load(name: &str, sets: &[&str]) -> Scenario {
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    Scenario::load(&scenario_path(name), &sets).unwrap()
}

pub fn opts(mode: Mode, dir: &Path) -> RunOptions {
    RunOptions { mode, out_dir: Some(dir.to_path_buf()), ..RunOptions::default() }
}

pub fn read_rows(path: &Path) -> Vec<(String, String, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| {
        let rec = rec.unwrap();
        (rec[0].to_string(), rec[1].to_string(), rec[2].parse().unwrap())
    }).collect()
}

pub fn hash_outputs(dir: &Path) -> BTreeMap<String, String> {
    ALL_FILES
        .iter()
        .map(|f| {
            let bytes = std::fs::read(dir.join(f)).unwrap();
            (f.to_string(), format!("{:x}", Sha256::digest(&bytes)))
        })
        .collect()
}

/// Test participant driven by a closure.
pub struct Probe<F: FnMut(&Clock, &[Envelope], &mut Vec<Envelope>) + Send> {
    pub id: String,
    pub subs: Vec<String>,
    seen: Vec<Envelope>,
    f: F,
}

impl<F: FnMut(&Clock, &[Envelope], &mut Vec<Envelope>) + Send> Component for Probe<F> {
    fn id(&self) -> &str {
        &self.id
    }
    fn upstream(&self) -> Vec<String> {
        Vec::new()
    }
    fn subscriptions(&self) -> Vec<String> {
        self.subs.clone()
    }
    fn on_envelope(&mut self, env: &Envelope) {
        self.seen.push(env.clone());
    }
    fn on_tick(&mut self, clock: &Clock, out: &mut Vec<Envelope>) -> Result<TickStatus, SimError> {
        let seen = std::mem::take(&mut self.seen);
        (self.f)(clock, &seen, out);
        Ok(TickStatus::Continue)
    }
}

pub fn probe<F: FnMut(&Clock, &[Envelope], &mut Vec<Envelope>) + Send + 'static>(id: &str, subs: &[&str], f: F) -> Box<dyn Component> {
    Box::new(Probe { id: id.into(), subs: subs.iter().map(|s| s.to_string()).collect(), seen: Vec::new(), f })
}

/// A command stamped one tick ahead must leave every earlier tick untouched and take effect on its own tick.
pub fn canary_check() -> Result<(), String> {
    const T0: u64 = 40;
    let scn = load("studyA_case2.cfg", &["scenario.duration_s=6"]);
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_scenario(&scn, opts(Mode::Deterministic, base.path())).map_err(|e| e.to_string())?;

    // The canary runs first in each tick and, at T0, disconnects a PV unit with a command stamped T0+1.
    let canary = probe("canary", &[], |c, _, out| {
        if c.tick == T0 {
            let cmd = Payload::Control(ControlVerb::Disconnect);
            out.push(Envelope::build("derms/setpoint/pv_ds_central_001", T0 + 1, "canary-src", cmd).unwrap());
            out.push(Envelope::build("canary/probe", T0 + 1, "canary-src", Payload::Frequency { hz: 0.0 }).unwrap());
        }
    });
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = log.clone();
    let watcher = probe("watcher", &["canary/probe"], move |c, seen, _| {
        for e in seen {
            sink.lock().unwrap().push((c.tick, e.tick));
        }
    });
    let mut comps = vec![canary];
    comps.extend(builtin_components(&scn).unwrap());
    comps.push(watcher);
    let run = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_with_components(&scn, comps, opts(Mode::Deterministic, run.path())).map_err(|e| e.to_string())?;

    let seen = log.lock().unwrap().clone();
    if seen != vec![(T0 + 1, T0 + 1)] {
        return Err(format!("probe delivered as (tick, stamp) {seen:?}"));
    }
    let a = read_rows(&base.path().join("headpower.csv"));
    let b = read_rows(&run.path().join("headpower.csv"));
    for (ra, rb) in a.iter().zip(&b) {
        if ra.0 != rb.0 {
            return Err(format!("time columns differ: {} vs {}", ra.0, rb.0));
        }
        let tick = (ra.0.parse::<f64>().unwrap() / 0.1).round() as u64;
        if tick <= T0 && ra != rb {
            return Err(format!("tick {tick} changed: {ra:?} vs {rb:?}"));
        }
    }
    let at = |rows: &[(String, String, f64)], tick: u64| {
        rows.iter().find(|r| (r.0.parse::<f64>().unwrap() / 0.1).round() as u64 == tick && r.1 == "ds_central").unwrap().2
    };
    if (at(&a, T0 + 1) - at(&b, T0 + 1)).abs() <= 1.0 {
        return Err("the canary command never took effect".into());
    }
    Ok(())
}

/// Worst relative difference between two runs' outputs; errors if the rows do not line up.
pub fn max_rel_diff(a: &Path, b: &Path) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for f in ALL_FILES {
        let ra = read_rows(&a.join(f));
        let rb = read_rows(&b.join(f));
        if ra.len() != rb.len() {
            return Err(format!("{f}: {} vs {} rows", ra.len(), rb.len()));
        }
        for (x, y) in ra.iter().zip(&rb) {
            if (&x.0, &x.1) != (&y.0, &y.1) {
                return Err(format!("{f}: row keys {x:?} vs {y:?}"));
            }
            worst = worst.max((x.2 - y.2).abs() / x.2.abs().max(1.0));
        }
    }
    Ok(worst)
}

