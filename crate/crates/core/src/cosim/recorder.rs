//! Long-format CSV outputs (`t_s,id,value`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{tick_time, SimError};
use crate::msgbus::{Envelope, Payload};

pub const FREQUENCY: &str = "frequency.csv";
pub const VOLTAGE: &str = "voltage.csv";
pub const HEADPOWER: &str = "headpower.csv";
pub const LOSSES: &str = "losses.csv";
pub const DER_OUTPUT: &str = "der_output.csv";
pub const AGC: &str = "agc.csv";
pub const ALL_FILES: [&str; 6] = [FREQUENCY, VOLTAGE, HEADPOWER, LOSSES, DER_OUTPUT, AGC];

/// Bus topics the recorder listens to.
pub const RECORDED: [&str; 5] = ["ts/+/freq", "ts/+/voltage", "ds/+/headpower", "der/+/output", "derms/agc"];

struct Sink {
    out: BufWriter<File>,
    rows: Vec<(u64, String, f64)>,
}

/// Buffers rows per tick and writes them sorted by id once the tick completes,
/// so output is independent of message arrival order.
pub struct Recorder {
    dir: PathBuf,
    step_s: f64,
    der_stride: u64,
    sinks: Vec<Sink>,
}

fn mid<'a>(topic: &'a str, prefix: &str, suffix: &str) -> &'a str {
    topic.strip_prefix(prefix).and_then(|s| s.strip_suffix(suffix)).unwrap_or(topic)
}

impl Recorder {
    pub fn create(dir: &Path, step_s: f64, der_stride: u64) -> Result<Self, SimError> {
        std::fs::create_dir_all(dir)?;
        let mut sinks = Vec::new();
        for name in ALL_FILES {
            let mut out = BufWriter::new(File::create(dir.join(name))?);
            writeln!(out, "t_s,id,value")?;
            sinks.push(Sink { out, rows: Vec::new() });
        }
        Ok(Recorder { dir: dir.to_path_buf(), step_s, der_stride: der_stride.max(1), sinks })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record(&mut self, env: &Envelope) {
        let t = env.topic.as_str();
        let tick = env.tick;
        let mut put = |k: usize, id: &str, v: f64| self.sinks[k].rows.push((tick, id.to_string(), v));
        match env.payload {
            Payload::Frequency { hz } => put(0, mid(t, "ts/", "/freq"), hz),
            Payload::Voltage { pu } => put(1, mid(t, "ts/", "/voltage"), pu),
            Payload::HeadPower { p_mw, losses_kw, .. } => {
                let g = mid(t, "ds/", "/headpower");
                put(2, g, p_mw);
                put(3, g, losses_kw);
            }
            Payload::DerOutput { p_kw, .. } if tick % self.der_stride == 0 => put(4, mid(t, "der/", "/output"), p_kw),
            Payload::Agc { r_pu, request_kw, range_kw } => {
                put(5, "r_pu", r_pu);
                put(5, "request_kw", request_kw);
                put(5, "range_kw", range_kw);
            }
            _ => {}
        }
    }

    /// Write every buffered row with tick <= `tick`.
    pub fn flush_through(&mut self, tick: u64) -> Result<(), SimError> {
        for s in &mut self.sinks {
            let (mut ready, rest): (Vec<_>, Vec<_>) = s.rows.drain(..).partition(|r| r.0 <= tick);
            s.rows = rest;
            ready.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            for (k, id, v) in ready {
                writeln!(s.out, "{},{},{}", tick_time(k, self.step_s), id, v)?;
            }
            s.out.flush()?;
        }
        Ok(())
    }
}
