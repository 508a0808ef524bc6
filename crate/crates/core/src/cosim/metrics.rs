//! Run metrics, recomputed from the CSV outputs alone.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CaseLabel;
use super::recorder::{AGC, FREQUENCY, HEADPOWER, LOSSES, VOLTAGE};
use super::runner::Mode;
use super::SimError;
use crate::tsnet::{F_NOM_HZ, UNSTABLE_DF_PU};

/// Time series for one id in a long-format file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl Series {
    fn window(&self, from: f64, to: f64) -> impl Iterator<Item = f64> + '_ {
        self.t.iter().zip(&self.v).filter(move |(t, _)| **t >= from - 1e-9 && **t < to - 1e-9).map(|(_, v)| *v)
    }
}

#[derive(Deserialize)]
struct Row {
    t_s: f64,
    id: String,
    value: f64,
}

pub fn read_long_csv(path: &Path) -> Result<BTreeMap<String, Series>, SimError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| SimError::Output(format!("{}: {e}", path.display())))?;
    let mut out: BTreeMap<String, Series> = BTreeMap::new();
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(|e| SimError::Output(format!("{}: {e}", path.display())))?;
        let s = out.entry(r.id).or_default();
        s.t.push(r.t_s);
        s.v.push(r.value);
    }
    Ok(out)
}

/// Sum every id's series into one, keyed by time.
pub fn sum_by_time(all: &BTreeMap<String, Series>) -> Series {
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for s in all.values() {
        for (t, v) in s.t.iter().zip(&s.v) {
            let e = acc.entry(t.to_bits()).or_insert((*t, 0.0));
            e.1 += v;
        }
    }
    let mut pairs: Vec<(f64, f64)> = acc.into_values().collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Series { t: pairs.iter().map(|p| p.0).collect(), v: pairs.iter().map(|p| p.1).collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricParams {
    pub step_s: f64,
    pub monitor_area: String,
    pub oscillation_check: bool,
}

/// Window length for the oscillation-growth comparison.
pub const GROWTH_WINDOW_S: f64 = 30.0;
/// Peak-to-peak amplitude below which growth is not judged.
pub const GROWTH_FLOOR_HZ: f64 = 0.02;
pub const GROWTH_RATIO: f64 = 1.1;
/// A deviation held over the final window counts as a sustained excursion.
pub const SUSTAINED_DEV_HZ: f64 = 0.8;
pub const SUSTAINED_WINDOW_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub max_freq_hz: f64,
    pub min_freq_hz: f64,
    /// Mean monitor-area frequency over the final 10 s.
    pub settling_freq_hz: f64,
    /// Monitor-area frequency at the first local extremum after it departs from its start value.
    pub first_swing_hz: f64,
    /// Peak-to-peak over the last and the preceding 30 s window.
    pub osc_amp_last_hz: f64,
    pub osc_amp_prev_hz: f64,
    pub growing: bool,
    /// Largest |f - 60 Hz| over all areas.
    pub max_abs_dev_hz: f64,
    pub min_voltage_pu: f64,
    pub max_voltage_pu: f64,
    pub total_losses_kwh: f64,
    /// Mean of minus the summed head power (export positive).
    pub mean_delivered_mw: f64,
    pub agc_rms_error_kw: Option<f64>,
    pub agc_nrmse: Option<f64>,
    pub stable: bool,
}

fn peak_to_peak(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut lo, mut hi, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0);
    for v in it {
        lo = lo.min(v);
        hi = hi.max(v);
        n += 1;
    }
    (n > 0).then_some(hi - lo)
}

fn first_swing(s: &Series) -> f64 {
    let Some(&f0) = s.v.first() else { return F_NOM_HZ };
    let Some(k) = s.v.iter().position(|v| (v - f0).abs() > 1e-3) else { return f0 };
    let up = s.v[k] > f0;
    let mut best = s.v[k];
    for &v in &s.v[k..] {
        if (up && v >= best) || (!up && v <= best) {
            best = v;
        } else {
            break;
        }
    }
    best
}

/// Tracking error of delivered power against the request one tick earlier,
/// both mean-removed. Returns (rms kW, rms / range).
pub fn agc_tracking(agc: &BTreeMap<String, Series>, head: &Series, step_s: f64) -> Option<(f64, f64)> {
    let req = agc.get("request_kw")?;
    let range = agc.get("range_kw")?.v.first().copied()?;
    let first = *req.t.first()?;
    let mut pairs = Vec::new();
    let mut j = 0;
    for (t, p) in head.t.iter().zip(&head.v) {
        let t_req = t - step_s;
        if t_req < first - 1e-9 {
            continue;
        }
        while j + 1 < req.t.len() && req.t[j + 1] <= t_req + 1e-9 {
            j += 1;
        }
        pairs.push((-p * 1000.0, req.v[j]));
    }
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let md = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mr = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mse = pairs.iter().map(|(d, r)| ((d - md) - (r - mr)).powi(2)).sum::<f64>() / n;
    let rms = mse.sqrt();
    Some((rms, if range > 0.0 { rms / range } else { f64::NAN }))
}

pub fn compute_metrics(dir: &Path, p: &MetricParams, halted: bool) -> Result<RunMetrics, SimError> {
    let freq = read_long_csv(&dir.join(FREQUENCY))?;
    let volt = read_long_csv(&dir.join(VOLTAGE))?;
    let head = sum_by_time(&read_long_csv(&dir.join(HEADPOWER))?);
    let losses = sum_by_time(&read_long_csv(&dir.join(LOSSES))?);
    let agc = read_long_csv(&dir.join(AGC))?;

    let mon = freq.get(&p.monitor_area).cloned().unwrap_or_default();
    let end = mon.t.last().copied().unwrap_or(0.0) + p.step_s;
    let max_freq_hz = mon.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_freq_hz = mon.v.iter().copied().fold(f64::INFINITY, f64::min);
    let tail: Vec<f64> = mon.window(end - SUSTAINED_WINDOW_S, end).collect();
    let settling_freq_hz = if tail.is_empty() { f64::NAN } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    let osc_amp_last_hz = peak_to_peak(mon.window(end - GROWTH_WINDOW_S, end)).unwrap_or(0.0);
    let osc_amp_prev_hz = peak_to_peak(mon.window(end - 2.0 * GROWTH_WINDOW_S, end - GROWTH_WINDOW_S)).unwrap_or(0.0);
    let long_enough = end >= 2.0 * GROWTH_WINDOW_S;

    let mut growing = false;
    let mut max_abs_dev_hz: f64 = 0.0;
    let mut sustained = false;
    for s in freq.values() {
        max_abs_dev_hz = s.v.iter().fold(max_abs_dev_hz, |m, v| m.max((v - F_NOM_HZ).abs()));
        if long_enough {
            let last = peak_to_peak(s.window(end - GROWTH_WINDOW_S, end)).unwrap_or(0.0);
            let prev = peak_to_peak(s.window(end - 2.0 * GROWTH_WINDOW_S, end - GROWTH_WINDOW_S)).unwrap_or(0.0);
            growing |= last > GROWTH_FLOOR_HZ && last > GROWTH_RATIO * prev;
        }
        let tail: Vec<f64> = s.window(end - SUSTAINED_WINDOW_S, end).collect();
        sustained |= !tail.is_empty() && tail.iter().all(|v| (v - F_NOM_HZ).abs() > SUSTAINED_DEV_HZ);
    }

    let vals = || volt.values().flat_map(|s| s.v.iter().copied());
    let min_voltage_pu = vals().fold(f64::INFINITY, f64::min);
    let max_voltage_pu = vals().fold(f64::NEG_INFINITY, f64::max);

    let total_losses_kwh = losses.t.iter().zip(&losses.v).filter(|(t, _)| **t > 0.0).map(|(_, l)| l * p.step_s / 3600.0).sum();
    let mean_delivered_mw = if head.v.is_empty() { 0.0 } else { -head.v.iter().sum::<f64>() / head.v.len() as f64 };
    let tracking = agc_tracking(&agc, &head, p.step_s);

    let unstable = max_abs_dev_hz > UNSTABLE_DF_PU * F_NOM_HZ || sustained || (p.oscillation_check && growing);
    Ok(RunMetrics {
        max_freq_hz,
        min_freq_hz,
        settling_freq_hz,
        first_swing_hz: first_swing(&mon),
        osc_amp_last_hz,
        osc_amp_prev_hz,
        growing,
        max_abs_dev_hz,
        min_voltage_pu,
        max_voltage_pu,
        total_losses_kwh,
        mean_delivered_mw,
        agc_rms_error_kw: tracking.map(|t| t.0),
        agc_nrmse: tracking.map(|t| t.1),
        stable: !halted && !unstable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub study: Option<String>,
    pub case: CaseLabel,
    pub config_path: String,
    pub seed: u64,
    pub mode: Mode,
    pub step_s: f64,
    pub duration_s: f64,
    pub final_tick: u64,
    pub halted: Option<String>,
    pub monitor_area: String,
    pub oscillation_check: bool,
    pub files: Vec<String>,
    pub metrics: RunMetrics,
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SimError::Output(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, SimError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| SimError::Output(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SimError::Output(format!("{}: {e}", path.display())))
    }
}

/// Side-by-side summary of two runs on their common time span.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub t_s: Vec<f64>,
    pub head_a_mw: Vec<f64>,
    pub head_b_mw: Vec<f64>,
    pub freq_a_hz: Vec<f64>,
    pub freq_b_hz: Vec<f64>,
    /// Mean of (delivered A - delivered B), delivered being minus the head power.
    pub mean_delivered_offset_mw: f64,
    /// Mean of (losses B - losses A).
    pub mean_loss_increase_kw: f64,
    pub max_freq_a_hz: f64,
    pub max_freq_b_hz: f64,
    pub min_freq_a_hz: f64,
    pub min_freq_b_hz: f64,
    pub truncated: bool,
}

fn index_by_time(s: &Series) -> BTreeMap<u64, f64> {
    s.t.iter().zip(&s.v).map(|(t, v)| (t.to_bits(), *v)).collect()
}

pub fn compare_runs(a: &Path, b: &Path) -> Result<Comparison, SimError> {
    let ma = RunManifest::read(a)?;
    let mb = RunManifest::read(b)?;
    let load = |d: &Path, m: &RunManifest| -> Result<(Series, Series, Series), SimError> {
        let head = sum_by_time(&read_long_csv(&d.join(HEADPOWER))?);
        let loss = sum_by_time(&read_long_csv(&d.join(LOSSES))?);
        let freq = read_long_csv(&d.join(FREQUENCY))?.remove(&m.monitor_area).unwrap_or_default();
        Ok((head, loss, freq))
    };
    let (ha, la, fa) = load(a, &ma)?;
    let (hb, lb, fb) = load(b, &mb)?;
    let (iha, ila, ifa) = (index_by_time(&ha), index_by_time(&la), index_by_time(&fa));
    let (ihb, ilb, ifb) = (index_by_time(&hb), index_by_time(&lb), index_by_time(&fb));
    let common: Vec<u64> = iha.keys().filter(|k| ihb.contains_key(k) && ifa.contains_key(k) && ifb.contains_key(k)).copied().collect();
    if common.is_empty() {
        return Err(SimError::Output("runs share no time points".into()));
    }
    let truncated = common.len() != iha.len() || common.len() != ihb.len();
    if truncated {
        log::warn!("runs differ in length; comparing {} common samples", common.len());
    }
    let col = |m: &BTreeMap<u64, f64>| common.iter().map(|k| m[k]).collect::<Vec<f64>>();
    let (head_a_mw, head_b_mw, freq_a_hz, freq_b_hz) = (col(&iha), col(&ihb), col(&ifa), col(&ifb));
    let n = common.len() as f64;
    let mean_delivered_offset_mw = head_a_mw.iter().zip(&head_b_mw).map(|(a, b)| b - a).sum::<f64>() / n;
    let loss_pairs: Vec<f64> = common.iter().filter_map(|k| Some(ilb.get(k)? - ila.get(k)?)).collect();
    let mean_loss_increase_kw = if loss_pairs.is_empty() { 0.0 } else { loss_pairs.iter().sum::<f64>() / loss_pairs.len() as f64 };
    let mx = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mn = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Comparison {
        t_s: common.iter().map(|k| f64::from_bits(*k)).collect(),
        max_freq_a_hz: mx(&freq_a_hz),
        max_freq_b_hz: mx(&freq_b_hz),
        min_freq_a_hz: mn(&freq_a_hz),
        min_freq_b_hz: mn(&freq_b_hz),
        head_a_mw,
        head_b_mw,
        freq_a_hz,
        freq_b_hz,
        mean_delivered_offset_mw,
        mean_loss_increase_kw,
        truncated,
    })
}

impl Comparison {
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| SimError::Output(e.to_string()))?;
        let err = |e: csv::Error| SimError::Output(e.to_string());
        w.write_record(["t_s", "head_a_mw", "head_b_mw", "head_delta_mw", "freq_a_hz", "freq_b_hz", "freq_delta_hz"]).map_err(err)?;
        for i in 0..self.t_s.len() {
            let (ha, hb, fa, fb) = (self.head_a_mw[i], self.head_b_mw[i], self.freq_a_hz[i], self.freq_b_hz[i]);
            w.write_record([self.t_s[i], ha, hb, hb - ha, fa, fb, fb - fa].map(|x| x.to_string())).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}
