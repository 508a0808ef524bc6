//! Scenario files (TOML) and their static validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::der::{DerMode, DroopParams};
use crate::derms::WeightBasis;
use crate::dnet::PhaseModel;
use crate::tsnet::EventKind;

/// One validation finding, anchored to a line of the scenario file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.file.display(), l, self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<Diagnostic>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    BaseCase,
    Case1,
    Case2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default)]
    pub study: Option<String>,
    pub case: CaseLabel,
    pub duration_s: f64,
    #[serde(default = "default_step")]
    pub step_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Area whose frequency is summarized in the manifest.
    pub monitor_area: String,
    /// Flag growing oscillations over the final two 30 s windows as instability.
    #[serde(default)]
    pub oscillation_check: bool,
    /// If set, every feeder group's fleets must add up to exactly this rating per feeder.
    #[serde(default)]
    pub capacity_per_feeder_kw: Option<f64>,
}

fn default_step() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaCfg {
    pub id: String,
    pub rating_mva: f64,
    #[serde(default = "d_h")]
    pub h_s: f64,
    #[serde(default = "d_one")]
    pub d_pu: f64,
    #[serde(default = "d_r")]
    pub r_pu: f64,
    #[serde(default = "d_tg")]
    pub tg_s: f64,
    #[serde(default)]
    pub tt_s: f64,
    #[serde(default)]
    pub pload_mw: f64,
}

fn d_h() -> f64 {
    5.0
}
fn d_one() -> f64 {
    1.0
}
fn d_r() -> f64 {
    0.05
}
fn d_tg() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieCfg {
    pub id: String,
    pub from: String,
    pub to: String,
    pub b_pu: f64,
    #[serde(default)]
    pub damping_pu: f64,
    #[serde(default = "d_true")]
    pub in_service: bool,
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusCfg {
    pub id: String,
    pub area: String,
    #[serde(default = "d_one")]
    pub v0_pu: f64,
    #[serde(default)]
    pub r_th_pu: f64,
    #[serde(default)]
    pub x_th_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCfg {
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsnetCfg {
    #[serde(default = "d_base")]
    pub base_mva: f64,
    #[serde(default = "d_sub")]
    pub substep_s: f64,
    /// Synchronous capacity displaced by DERs. Scales every area's H by
    /// `1 - retired/total rating` and its R by the inverse.
    #[serde(default)]
    pub retired_mw: f64,
    #[serde(rename = "area")]
    pub areas: Vec<AreaCfg>,
    #[serde(rename = "tie", default)]
    pub ties: Vec<TieCfg>,
    #[serde(rename = "bus", default)]
    pub buses: Vec<BusCfg>,
    #[serde(rename = "event", default)]
    pub events: Vec<EventCfg>,
}

fn d_base() -> f64 {
    100.0
}
fn d_sub() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederGroupCfg {
    pub id: String,
    /// Feeder description file, relative to the scenario file.
    pub feeder: PathBuf,
    #[serde(default = "d_rep")]
    pub replication: u32,
    pub bus: String,
    #[serde(default)]
    pub model: PhaseModel,
    #[serde(default = "d_one")]
    pub load_scale: f64,
    #[serde(default)]
    pub instantiate: bool,
    #[serde(default)]
    pub zip: Option<crate::dnet::Zip>,
}

fn d_rep() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Siting {
    /// All units at the feeder head.
    Head,
    /// Round-robin over load entries.
    LoadNodes,
    /// Round-robin over load entries on single-phase nodes.
    Laterals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRule {
    /// Balanced three-phase units.
    Three,
    /// One phase, taken from the load entry the unit is sited at.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetCfg {
    pub id: String,
    /// Feeder groups that each get `count` units per feeder.
    pub groups: Vec<String>,
    pub count: u32,
    pub p_rated_kw: f64,
    pub siting: Siting,
    #[serde(default = "d_phase")]
    pub phase: PhaseRule,
    #[serde(default = "d_mode")]
    pub mode: DerMode,
    #[serde(default = "d_one")]
    pub available_frac: f64,
    #[serde(default = "d_one")]
    pub output_frac: f64,
    #[serde(default)]
    pub ramp_limit_kw_per_s: Option<f64>,
    #[serde(default)]
    pub olrt_s: Option<f64>,
    /// Curve used when droop is enabled; defaults fill missing fields.
    #[serde(default)]
    pub droop: Option<DroopParams>,
}

fn d_phase() -> PhaseRule {
    PhaseRule::Three
}
fn d_mode() -> DerMode {
    DerMode::FixedSetpoint
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticAgcCfg {
    #[serde(default = "d_syn_dur")]
    pub duration_s: f64,
    #[serde(default = "d_syn_int")]
    pub interval_s: f64,
}

fn d_syn_dur() -> f64 {
    300.0
}
fn d_syn_int() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DermsCfg {
    #[serde(default = "d_cadence")]
    pub cadence_s: f64,
    #[serde(default = "d_stale")]
    pub stale_after_ticks: u64,
    #[serde(default)]
    pub allocation: WeightBasis,
    #[serde(default = "d_half")]
    pub baseline_frac: f64,
    #[serde(default = "d_half")]
    pub range_frac: f64,
    #[serde(default)]
    pub agc_csv: Option<PathBuf>,
    #[serde(default)]
    pub agc_synthetic: Option<SyntheticAgcCfg>,
    /// Fleets that receive the droop-enable command at `enable_droop_at_s`.
    #[serde(default)]
    pub droop_fleets: Vec<String>,
    #[serde(default)]
    pub enable_droop_at_s: Option<f64>,
    /// Snapshot the droop reference of every device at this time.
    #[serde(default)]
    pub arm_at_s: Option<f64>,
}

fn d_cadence() -> f64 {
    4.0
}
fn d_stale() -> u64 {
    5
}
fn d_half() -> f64 {
    0.5
}

impl Default for DermsCfg {
    fn default() -> Self {
        DermsCfg {
            cadence_s: d_cadence(),
            stale_after_ticks: d_stale(),
            allocation: WeightBasis::Available,
            baseline_frac: d_half(),
            range_frac: d_half(),
            agc_csv: None,
            agc_synthetic: None,
            droop_fleets: Vec::new(),
            enable_droop_at_s: None,
            arm_at_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
    /// Record device outputs every this many ticks.
    #[serde(default = "d_stride")]
    pub der_stride: u64,
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_stride() -> u64 {
    1
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg { dir: d_out(), der_stride: d_stride() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioSection,
    pub tsnet: TsnetCfg,
    #[serde(rename = "feeder_group", default)]
    pub feeder_groups: Vec<FeederGroupCfg>,
    #[serde(rename = "fleet", default)]
    pub fleets: Vec<FleetCfg>,
    #[serde(default)]
    pub derms: DermsCfg,
    #[serde(default)]
    pub output: OutputCfg,
}

/// A parsed scenario plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub path: PathBuf,
    pub text: String,
    pub file: ScenarioFile,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Best-effort line of `key = "value"` in the raw text.
fn find_assignment(text: &str, key: &str, value: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.split('#').next().unwrap_or("");
        match l.split_once('=') {
            Some((k, v)) => k.trim() == key && v.trim().trim_matches('"') == value,
            None => false,
        }
    })
    .map(|i| i + 1)
}

fn find_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.split_once('=').map(|(k, _)| k.trim() == key).unwrap_or(false))
        .map(|i| i + 1)
}

/// Apply a dotted-path override (`tsnet.area.1.h_s=4.5`) to a TOML tree.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| format!("override `{spec}` is not key=value"))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = root;
    for (i, k) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(k.to_string(), value);
                    return Ok(());
                }
                t.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = k.parse().map_err(|_| format!("override `{path}`: `{k}` is not an array index"))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| format!("override `{path}`: index {idx} out of range ({len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("override `{path}`: `{k}` is not inside a table or array")),
        };
    }
    Err(format!("override `{spec}` has an empty key"))
}

impl Scenario {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError(vec![Diagnostic { file: path.to_path_buf(), line: None, message: format!("cannot read: {e}") }])
        })?;
        Self::parse(&text, path, overrides)
    }

    pub fn parse(text: &str, path: &Path, overrides: &[String]) -> Result<Scenario, ConfigError> {
        let diag = |line: Option<usize>, message: String| ConfigError(vec![Diagnostic { file: path.to_path_buf(), line, message }]);
        let file: ScenarioFile = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| diag(e.span().map(|s| line_of(text, s.start)), e.message().to_string()))?
        } else {
            let mut root: toml::Value = toml::from_str(text)
                .map_err(|e| diag(e.span().map(|s| line_of(text, s.start)), e.message().to_string()))?;
            for o in overrides {
                apply_override(&mut root, o).map_err(|m| diag(None, m))?;
            }
            root.try_into().map_err(|e: toml::de::Error| {
                let msg = e.message().to_string();
                let line = msg.split('`').nth(1).and_then(|k| find_key(text, k));
                diag(line, msg)
            })?
        };
        let scenario = Scenario { path: path.to_path_buf(), text: text.to_string(), file };
        let diags = scenario.static_checks();
        if diags.is_empty() {
            Ok(scenario)
        } else {
            Err(ConfigError(diags))
        }
    }

    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    fn diag_at(&self, key: &str, id: &str, message: String) -> Diagnostic {
        Diagnostic { file: self.path.clone(), line: find_assignment(&self.text, key, id), message }
    }

    /// Checks that need nothing beyond the scenario file itself.
    fn static_checks(&self) -> Vec<Diagnostic> {
        let f = &self.file;
        let mut out = Vec::new();
        let mut push = |key: &str, id: &str, msg: String| out.push(self.diag_at(key, id, msg));
        let s = &f.scenario;
        if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
            push("duration_s", &s.duration_s.to_string(), "duration_s must be > 0".into());
        }
        if !(s.step_s.is_finite() && s.step_s > 0.0) {
            push("step_s", &s.step_s.to_string(), "step_s must be > 0".into());
        }
        let t = &f.tsnet;
        if !(t.substep_s > 0.0 && t.substep_s.is_finite()) {
            push("substep_s", &t.substep_s.to_string(), "substep_s must be > 0".into());
        }
        let mut areas = BTreeSet::new();
        for a in &t.areas {
            if !areas.insert(a.id.as_str()) {
                push("id", &a.id, format!("duplicate area `{}`", a.id));
            }
            let checks = [
                (a.h_s > 0.0, "H must be > 0"),
                (a.rating_mva > 0.0, "rating_mva must be > 0"),
                (a.r_pu > 0.0, "R must be > 0"),
                (a.d_pu >= 0.0, "D must be >= 0"),
                (a.tg_s > 0.0, "Tg must be > 0"),
                (a.tt_s >= 0.0, "Tt must be >= 0"),
            ];
            for (ok, msg) in checks {
                if !ok {
                    push("id", &a.id, format!("area `{}`: {msg}", a.id));
                }
            }
        }
        if t.areas.is_empty() {
            push("", "", "at least one [[tsnet.area]] is required".into());
        }
        let total_rating: f64 = t.areas.iter().map(|a| a.rating_mva).sum();
        if !(t.retired_mw >= 0.0 && t.retired_mw < total_rating) {
            push("retired_mw", &t.retired_mw.to_string(), "retired_mw must be in [0, total area rating)".into());
        }
        if !areas.contains(s.monitor_area.as_str()) {
            push("monitor_area", &s.monitor_area, format!("monitor_area `{}` is not an area", s.monitor_area));
        }
        let mut ties = BTreeSet::new();
        for tie in &t.ties {
            ties.insert(tie.id.as_str());
            for end in [&tie.from, &tie.to] {
                if !areas.contains(end.as_str()) {
                    push("id", &tie.id, format!("tie `{}` references unknown area `{end}`", tie.id));
                }
            }
            if !(tie.b_pu > 0.0) {
                push("id", &tie.id, format!("tie `{}`: b_pu must be > 0", tie.id));
            }
            if !(tie.damping_pu >= 0.0) {
                push("id", &tie.id, format!("tie `{}`: damping_pu must be >= 0", tie.id));
            }
        }
        let mut buses = BTreeSet::new();
        for b in &t.buses {
            if !buses.insert(b.id.as_str()) {
                push("id", &b.id, format!("duplicate bus `{}`", b.id));
            }
            if !areas.contains(b.area.as_str()) {
                push("id", &b.id, format!("bus `{}` references unknown area `{}`", b.id, b.area));
            }
        }
        for e in &t.events {
            if !(e.at_s >= 0.0) {
                push("at_s", &e.at_s.to_string(), "event time must be >= 0".into());
            }
            match &e.kind {
                EventKind::LoadStep { area, .. } | EventKind::TripGeneration { area, .. } if !areas.contains(area.as_str()) => {
                    push("area", area, format!("event references unknown area `{area}`"))
                }
                EventKind::TripTie { tie } if !ties.contains(tie.as_str()) => {
                    push("tie", tie, format!("event references unknown tie `{tie}`"))
                }
                _ => {}
            }
        }
        let mut groups = BTreeSet::new();
        for g in &f.feeder_groups {
            if !groups.insert(g.id.as_str()) {
                push("id", &g.id, format!("duplicate feeder group `{}`", g.id));
            }
            if !buses.contains(g.bus.as_str()) {
                push("id", &g.id, format!("feeder group `{}` references unknown bus `{}`", g.id, g.bus));
            }
            if g.replication == 0 {
                push("id", &g.id, format!("feeder group `{}`: replication must be >= 1", g.id));
            }
            if !(g.load_scale >= 0.0 && g.load_scale.is_finite()) {
                push("id", &g.id, format!("feeder group `{}`: load_scale must be >= 0", g.id));
            }
            if g.instantiate && g.replication > 1000 {
                push("id", &g.id, format!("feeder group `{}`: instantiation limited to 1000 replicas", g.id));
            }
        }
        let mut fleets = BTreeSet::new();
        for fl in &f.fleets {
            if !fleets.insert(fl.id.as_str()) {
                push("id", &fl.id, format!("duplicate fleet `{}`", fl.id));
            }
            if fl.id.contains(['/', '+', '#']) {
                push("id", &fl.id, format!("fleet `{}`: id may not contain `/`, `+` or `#`", fl.id));
            }
            for g in &fl.groups {
                if !groups.contains(g.as_str()) {
                    push("id", &fl.id, format!("fleet `{}` references unknown feeder group `{g}`", fl.id));
                }
            }
            if fl.count == 0 {
                push("id", &fl.id, format!("fleet `{}`: count must be >= 1", fl.id));
            }
            if !(fl.p_rated_kw > 0.0 && fl.p_rated_kw.is_finite()) {
                push("id", &fl.id, format!("fleet `{}`: p_rated_kw must be > 0", fl.id));
            }
            if !(0.0..=1.0).contains(&fl.available_frac) || !(0.0..=fl.available_frac).contains(&fl.output_frac) {
                push("id", &fl.id, format!("fleet `{}`: need 0 <= output_frac <= available_frac <= 1", fl.id));
            }
            if let Some(r) = fl.ramp_limit_kw_per_s {
                if !(r > 0.0) {
                    push("id", &fl.id, format!("fleet `{}`: ramp_limit_kw_per_s must be > 0", fl.id));
                }
            }
            if let Some(d) = &fl.droop {
                if let Err(e) = d.validate() {
                    push("id", &fl.id, format!("fleet `{}`: {e}", fl.id));
                }
            }
            if fl.siting == Siting::Head && fl.phase == PhaseRule::Single {
                push("id", &fl.id, format!("fleet `{}`: head siting needs three-phase units", fl.id));
            }
        }
        let d = &f.derms;
        if !(d.cadence_s > 0.0) {
            push("cadence_s", &d.cadence_s.to_string(), "cadence_s must be > 0".into());
        }
        if !(0.0..=1.0).contains(&d.baseline_frac) || !(0.0..=1.0).contains(&d.range_frac) {
            push("baseline_frac", &d.baseline_frac.to_string(), "baseline_frac and range_frac must be in [0, 1]".into());
        }
        for fl in &d.droop_fleets {
            if !fleets.contains(fl.as_str()) {
                push("droop_fleets", "", format!("droop_fleets references unknown fleet `{fl}`"));
            }
        }
        if !d.droop_fleets.is_empty() && d.enable_droop_at_s.is_none() {
            push("droop_fleets", "", "droop_fleets needs enable_droop_at_s".into());
        }
        if d.agc_csv.is_some() && d.agc_synthetic.is_some() {
            push("agc_csv", "", "give either agc_csv or agc_synthetic, not both".into());
        }
        if let Some(cap) = s.capacity_per_feeder_kw {
            let mut per_group: BTreeMap<&str, f64> = BTreeMap::new();
            for fl in &f.fleets {
                for g in &fl.groups {
                    let e = per_group.entry(g.as_str()).or_insert(0.0);
                    for _ in 0..fl.count {
                        *e += fl.p_rated_kw;
                    }
                }
            }
            for g in &f.feeder_groups {
                let got = per_group.get(g.id.as_str()).copied().unwrap_or(0.0);
                if got != cap {
                    push("id", &g.id, format!("feeder group `{}`: fleets add up to {got} kW per feeder, expected {cap} kW", g.id));
                }
            }
        }
        if !(f.output.der_stride >= 1) {
            push("der_stride", "", "der_stride must be >= 1".into());
        }
        // Anchor lines for diagnostics whose key was not found.
        for d in &mut out {
            if d.line.is_none() && d.message.contains('`') {
                let id = d.message.split('`').nth(1).unwrap_or("");
                d.line = find_assignment(&self.text, "id", id);
            }
        }
        out
    }
}
