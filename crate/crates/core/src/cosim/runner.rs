//! Tick loop drivers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use serde::{Deserialize, Serialize};

use super::assemble::assemble;
use super::barrier::TickBarrier;
use super::components::{Clock, Component, DerComponent, DermsComponent, DnetComponent, TickStatus, TsnetComponent};
use super::config::Scenario;
use super::metrics::{compute_metrics, MetricParams, RunManifest};
use super::recorder::{Recorder, RECORDED};
use super::{tick_time, SimError};
use crate::msgbus::wire::{WireClient, WireServer};
use crate::msgbus::{Broker, BusClient, BusError, Envelope, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One thread, components stepped in dependency order.
    #[default]
    Deterministic,
    /// One thread per component on the in-process broker.
    Threads,
    /// One thread per component, each with its own TCP connection to a loopback broker.
    Wire,
}

pub struct RunOptions {
    pub mode: Mode,
    /// Pace ticks to wall-clock time.
    pub realtime: bool,
    /// Overrides the scenario's output directory.
    pub out_dir: Option<PathBuf>,
    pub deadlock_timeout: Duration,
    /// Additional participants, run after the built-in four.
    pub extra: Vec<Box<dyn Component>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mode: Mode::Deterministic, realtime: false, out_dir: None, deadlock_timeout: Duration::from_secs(5), extra: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub final_tick: u64,
    pub halted: Option<String>,
    pub manifest: RunManifest,
}

struct Host {
    id: String,
    comp: Box<dyn Component>,
    client: Box<dyn BusClient>,
    upstream: Vec<String>,
    inbox: Vec<Envelope>,
    /// Number of ticks announced / completed upstream.
    announced: u64,
    upstream_done: HashMap<String, u64>,
    next: u64,
    step_s: f64,
}

impl Host {
    fn new(comp: Box<dyn Component>, mut client: Box<dyn BusClient>, step_s: f64) -> Result<Self, SimError> {
        let upstream = comp.upstream();
        for f in comp.subscriptions() {
            client.subscribe(&f)?;
        }
        client.subscribe("sync/tick")?;
        for u in &upstream {
            client.subscribe(&format!("sync/done/{u}"))?;
        }
        Ok(Host {
            id: comp.id().to_string(),
            comp,
            client,
            upstream,
            inbox: Vec::new(),
            announced: 0,
            upstream_done: HashMap::new(),
            next: 0,
            step_s,
        })
    }

    fn absorb(&mut self, env: Envelope) {
        match env.payload {
            Payload::Tick { tick, .. } if env.topic.as_str() == "sync/tick" => self.announced = self.announced.max(tick + 1),
            Payload::Done { tick } => {
                let e = self.upstream_done.entry(env.publisher_id.clone()).or_insert(0);
                *e = (*e).max(tick + 1);
            }
            _ => self.inbox.push(env),
        }
    }

    fn drain(&mut self) -> Result<(), SimError> {
        while let Some(env) = self.client.try_recv()? {
            self.absorb(env);
        }
        Ok(())
    }

    fn ready(&self) -> bool {
        self.announced > self.next && self.upstream.iter().all(|u| self.upstream_done.get(u).copied().unwrap_or(0) > self.next)
    }

    fn run_tick(&mut self) -> Result<TickStatus, SimError> {
        let tick = self.next;
        let (now, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.inbox).into_iter().partition(|e| e.tick <= tick);
        self.inbox = later;
        for env in &now {
            self.comp.on_envelope(env);
        }
        let mut out = Vec::new();
        let status = self.comp.on_tick(&Clock { tick, step_s: self.step_s }, &mut out)?;
        for env in out {
            self.client.publish(env)?;
        }
        self.client.publish(Envelope::build(&format!("sync/done/{}", self.id), tick, &self.id, Payload::Done { tick })?)?;
        self.client.flush()?;
        self.next += 1;
        Ok(status)
    }
}

fn spawn_host(
    mut host: Host,
    last_tick: u64,
    stop: Arc<AtomicBool>,
    halt: Arc<Mutex<Option<String>>>,
    errors: Sender<SimError>,
) -> std::thread::JoinHandle<()> {
    std::thread::Builder::new()
        .name(host.id.clone())
        .spawn(move || {
            let res = (|| -> Result<(), SimError> {
                while !stop.load(Ordering::Relaxed) && host.next <= last_tick {
                    match host.client.recv_timeout(Duration::from_millis(20)) {
                        Ok(Some(env)) => host.absorb(env),
                        Ok(None) => {}
                        Err(BusError::Unavailable) => return Ok(()),
                        Err(e) => return Err(e.into()),
                    }
                    while host.next <= last_tick && host.ready() {
                        if let TickStatus::Halt(why) = host.run_tick()? {
                            halt.lock().expect("halt lock").get_or_insert(why);
                        }
                    }
                }
                Ok(())
            })();
            if let Err(e) = res {
                let _ = errors.send(e);
            }
        })
        .expect("spawn component thread")
}

pub fn builtin_components(s: &Scenario) -> Result<Vec<Box<dyn Component>>, SimError> {
    let a = assemble(s)?;
    let f = &s.file;
    let step = f.scenario.step_s;
    let to_tick = |t: f64| (t / step).round() as u64;
    let cadence = to_tick(f.derms.cadence_s).max(1);
    let droop = f.derms.enable_droop_at_s.map(|t| (to_tick(t), f.derms.droop_fleets.clone()));
    let arm = f.derms.arm_at_s.map(to_tick);
    Ok(vec![
        Box::new(TsnetComponent::new(a.system, f.tsnet.substep_s, &a.groups)),
        Box::new(DerComponent::new(a.devices, a.device_area)),
        Box::new(DnetComponent::new(a.groups)),
        Box::new(DermsComponent::new(a.registry, a.derms_plans, a.agc, cadence, droop, arm)),
    ])
}

/// Run a scenario to completion (or halt) and write outputs plus `manifest.json`.
pub fn run_scenario(s: &Scenario, mut opts: RunOptions) -> Result<RunReport, SimError> {
    let mut comps = builtin_components(s)?;
    comps.append(&mut opts.extra);
    run_with_components(s, comps, opts)
}

/// Run an explicit component set under the scenario's clock and outputs.
/// `opts.extra` is appended to `comps`.
pub fn run_with_components(s: &Scenario, mut comps: Vec<Box<dyn Component>>, opts: RunOptions) -> Result<RunReport, SimError> {
    let f = &s.file;
    let step = f.scenario.step_s;
    let last_tick = (f.scenario.duration_s / step).round() as u64;
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| s.resolve(&f.output.dir));

    comps.extend(opts.extra);
    if comps.is_empty() {
        return Err(SimError::NoComponents);
    }
    let mut barrier = TickBarrier::new();
    for c in &comps {
        barrier.register_component(c.id())?;
    }
    let mut recorder = Recorder::create(&out_dir, step, f.output.der_stride)?;

    let broker = Broker::new();
    let server = match opts.mode {
        Mode::Wire => Some(WireServer::with_broker("127.0.0.1:0", broker.clone())?),
        _ => None,
    };
    let connect = |id: &str| -> Result<Box<dyn BusClient>, SimError> {
        Ok(match &server {
            Some(srv) => Box::new(WireClient::connect(srv.local_addr(), id)?),
            None => Box::new(broker.connect(id)?),
        })
    };
    let mut orch = connect("orchestrator")?;
    for filter in RECORDED {
        orch.subscribe(filter)?;
    }
    orch.subscribe("sync/done/+")?;
    let mut hosts = Vec::new();
    for c in comps {
        let id = c.id().to_string();
        hosts.push(Host::new(c, connect(&id)?, step)?);
    }

    let halt = Arc::new(Mutex::new(None::<String>));
    let stop = Arc::new(AtomicBool::new(false));
    let (err_tx, err_rx) = unbounded();
    let mut handles = Vec::new();
    let threaded = opts.mode != Mode::Deterministic;
    if threaded {
        for h in hosts.drain(..) {
            handles.push(spawn_host(h, last_tick, stop.clone(), halt.clone(), err_tx.clone()));
        }
    }

    let start = Instant::now();
    let mut final_tick = 0;
    let result = (|| -> Result<(), SimError> {
        for t in 0..=last_tick {
            if opts.realtime {
                let due = Duration::from_secs_f64(tick_time(t, step));
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            orch.publish(Envelope::build("sync/tick", t, "orchestrator", Payload::Tick { tick: t, sim_time_s: tick_time(t, step), step_s: step })?)?;
            orch.flush()?;
            barrier.begin(t);
            for h in hosts.iter_mut() {
                h.drain()?;
                if !h.ready() {
                    return Err(SimError::Deadlock { tick: t, missing: vec![h.id.clone()] });
                }
                if let TickStatus::Halt(why) = h.run_tick()? {
                    halt.lock().expect("halt lock").get_or_insert(why);
                }
            }
            let deadline = Instant::now() + opts.deadlock_timeout;
            while !barrier.is_complete() {
                if let Ok(e) = err_rx.try_recv() {
                    return Err(e);
                }
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    return Err(SimError::Deadlock { tick: t, missing: barrier.missing() });
                }
                if let Some(env) = orch.recv_timeout(left.min(Duration::from_millis(20)))? {
                    match env.payload {
                        Payload::Done { tick } => {
                            barrier.mark_done(&env.publisher_id, tick);
                        }
                        _ => recorder.record(&env),
                    }
                }
            }
            recorder.flush_through(t)?;
            final_tick = t;
            if halt.lock().expect("halt lock").is_some() {
                break;
            }
        }
        Ok(())
    })();
    stop.store(true, Ordering::Relaxed);
    for h in handles {
        let _ = h.join();
    }
    drop(hosts);
    drop(orch);
    if let Some(srv) = server {
        srv.shutdown();
    }
    result?;
    if let Ok(e) = err_rx.try_recv() {
        return Err(e);
    }

    let halted = halt.lock().expect("halt lock").clone();
    if let Some(why) = &halted {
        log::warn!("run halted at tick {final_tick}: {why}");
    }
    let params = MetricParams {
        step_s: step,
        monitor_area: f.scenario.monitor_area.clone(),
        oscillation_check: f.scenario.oscillation_check,
    };
    let metrics = compute_metrics(&out_dir, &params, halted.is_some())?;
    let manifest = RunManifest {
        scenario: f.scenario.name.clone(),
        study: f.scenario.study.clone(),
        case: f.scenario.case,
        config_path: s.path.display().to_string(),
        seed: f.scenario.seed,
        mode: opts.mode,
        step_s: step,
        duration_s: f.scenario.duration_s,
        final_tick,
        halted: halted.clone(),
        monitor_area: params.monitor_area.clone(),
        oscillation_check: params.oscillation_check,
        files: super::recorder::ALL_FILES.iter().map(|s| s.to_string()).collect(),
        metrics,
    };
    manifest.write(&out_dir)?;
    Ok(RunReport { out_dir, final_tick, halted, manifest })
}
