//! Regulation signal traces.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use super::DermsError;

/// A piecewise-constant regulation trace, `r_pu` in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AgcSignal {
    samples: Vec<(f64, f64)>,
    pub source: String,
}

#[derive(Deserialize)]
struct Row {
    t_s: f64,
    r_pu: f64,
}

impl AgcSignal {
    pub fn new(samples: Vec<(f64, f64)>, source: impl Into<String>) -> Result<Self, DermsError> {
        if samples.is_empty() {
            return Err(DermsError::Signal("trace has no samples".into()));
        }
        for (i, &(t, r)) in samples.iter().enumerate() {
            if !t.is_finite() || !r.is_finite() {
                return Err(DermsError::Signal(format!("sample {i} is not finite")));
            }
            if !(-1.0..=1.0).contains(&r) {
                return Err(DermsError::Signal(format!("sample {i}: r_pu {r} outside [-1, 1]")));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(DermsError::Signal(format!("sample {i}: time {t} s is not increasing")));
            }
        }
        Ok(AgcSignal { samples, source: source.into() })
    }

    /// Read a two-column CSV with header `t_s,r_pu`.
    pub fn load_csv(path: &Path) -> Result<Self, DermsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| DermsError::Signal(format!("{}: {e}", path.display())))?;
        let mut samples = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| DermsError::Signal(format!("{}: row {}: {e}", path.display(), i + 1)))?;
            samples.push((row.t_s, row.r_pu));
        }
        Self::new(samples, path.display().to_string())
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Zero-order hold; before the first sample the first value applies.
    pub fn value_at(&self, t_s: f64) -> f64 {
        let idx = self.samples.partition_point(|&(t, _)| t <= t_s + 1e-9);
        self.samples[idx.saturating_sub(1)].1
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DermsError> {
        let io = |e: csv::Error| DermsError::Signal(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["t_s", "r_pu"]).map_err(io)?;
        for &(t, r) in &self.samples {
            w.write_record([t.to_string(), r.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| DermsError::Signal(e.to_string()))?;
        Ok(())
    }
}

/// Settings for a synthetic regulation trace: a band-limited AR(1) process plus
/// two slow sinusoids, clipped to `limit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticAgc {
    pub duration_s: f64,
    pub interval_s: f64,
    pub corr_time_s: f64,
    pub sigma: f64,
    pub limit: f64,
}

impl Default for SyntheticAgc {
    fn default() -> Self {
        SyntheticAgc { duration_s: 300.0, interval_s: 2.0, corr_time_s: 20.0, sigma: 0.3, limit: 0.6 }
    }
}

impl SyntheticAgc {
    pub fn generate(&self, seed: u64) -> Result<AgcSignal, DermsError> {
        if !(self.interval_s > 0.0 && self.duration_s >= 0.0 && self.corr_time_s > 0.0) {
            return Err(DermsError::Signal("synthetic trace needs positive interval and correlation time".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).map_err(|e| DermsError::Signal(e.to_string()))?;
        let a = (-self.interval_s / self.corr_time_s).exp();
        let gain = self.sigma * (1.0 - a * a).sqrt();
        let n = (self.duration_s / self.interval_s).round() as usize + 1;
        let phase1 = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let phase2 = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
        let mut x = 0.0;
        let mut samples = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 * self.interval_s;
            x = a * x + gain * normal.sample(&mut rng);
            let slow = 0.25 * (2.0 * std::f64::consts::PI * t / 180.0 + phase1).sin()
                + 0.1 * (2.0 * std::f64::consts::PI * t / 47.0 + phase2).sin();
            let r = ((x + slow) * 1e4).round() / 1e4;
            samples.push((t, r.clamp(-self.limit, self.limit)));
        }
        AgcSignal::new(samples, format!("synthetic(seed={seed})"))
    }
}
