//! Feeder description files.
//!
//! ```text
//! # comment
//! [transformer]
//! head = n1          # required
//! kv_high = 115.0
//! kv_low = 4.16      # feeder line-to-line base kV
//! base_mva = 5.0
//! r_pu = 0.01
//! x_pu = 0.08
//! tap = 1.0
//!
//! [linecodes]
//! # name r11 x11 r12 x12 r13 x13 r22 x22 r23 x23 r33 x33   (ohm/mile)
//! c1 0.4576 1.0780 0.1560 0.5017 0.1535 0.3849 0.4666 1.0482 0.1580 0.4236 0.4615 1.0651
//!
//! [nodes]
//! # id phases
//! n1 abc
//!
//! [lines]
//! # id from to phases length_ft (linecode | r=<ohm/mile> x=<ohm/mile>)
//! l1 n1 n2 abc 250 c1
//! l2 n2 n3 b 120 r=1.3292 x=1.3475
//!
//! [loads]
//! # node phase kW kvar
//! n3 b 20 10
//! ```
//!
//! Inline `r=`/`x=` impedances are per-phase self impedances with no mutual coupling.
//! Without `r_pu`/`x_pu` the head node is fed directly at source voltage.

use std::collections::HashMap;
use std::path::Path;

use num_complex::Complex64;

use super::{Feeder, FeederError, FeederNode, LineSegment, Mat3, Phase, PhaseSet, Transformer};

const FT_PER_MILE: f64 = 5280.0;

fn perr(line: usize, msg: impl Into<String>) -> FeederError {
    FeederError::Parse { line, msg: msg.into() }
}

fn num(line: usize, what: &str, s: &str) -> Result<f64, FeederError> {
    let v: f64 = s.parse().map_err(|_| perr(line, format!("{what}: `{s}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(perr(line, format!("{what}: `{s}` is not finite")))
    }
}

fn linecode(line: usize, f: &[&str]) -> Result<Mat3, FeederError> {
    if f.len() != 12 {
        return Err(perr(line, format!("linecode needs 12 numbers, found {}", f.len())));
    }
    let v: Vec<f64> = f.iter().map(|s| num(line, "linecode", s)).collect::<Result<_, _>>()?;
    let z = |k: usize| Complex64::new(v[2 * k], v[2 * k + 1]);
    Ok([[z(0), z(1), z(2)], [z(1), z(3), z(4)], [z(2), z(4), z(5)]])
}

/// Load and validate a feeder file.
pub fn load_feeder(path: &Path) -> Result<Feeder, FeederError> {
    let text = std::fs::read_to_string(path).map_err(|e| perr(0, format!("{}: {e}", path.display())))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("feeder");
    parse_feeder(&text, name)
}

pub fn parse_feeder(text: &str, name: &str) -> Result<Feeder, FeederError> {
    let mut section = String::new();
    let mut tr: HashMap<String, (usize, String)> = HashMap::new();
    let mut codes: HashMap<String, Mat3> = HashMap::new();
    let mut nodes: Vec<FeederNode> = Vec::new();
    let mut node_idx: HashMap<String, usize> = HashMap::new();
    let mut raw_lines: Vec<(usize, Vec<String>)> = Vec::new();
    let mut raw_loads: Vec<(usize, Vec<String>)> = Vec::new();
    let mut saw_content = false;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        saw_content = true;
        if let Some(s) = body.strip_prefix('[') {
            let s = s.strip_suffix(']').ok_or_else(|| perr(ln, "unterminated section header"))?;
            section = s.trim().to_ascii_lowercase();
            if !matches!(section.as_str(), "transformer" | "linecodes" | "nodes" | "lines" | "loads") {
                return Err(perr(ln, format!("unknown section [{section}]")));
            }
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        match section.as_str() {
            "transformer" => {
                let (k, v) = body.split_once('=').ok_or_else(|| perr(ln, "expected `key = value`"))?;
                tr.insert(k.trim().to_ascii_lowercase(), (ln, v.trim().to_string()));
            }
            "linecodes" => {
                codes.insert(fields[0].to_string(), linecode(ln, &fields[1..])?);
            }
            "nodes" => {
                if fields.len() != 2 {
                    return Err(perr(ln, "node needs `id phases`"));
                }
                let phases = PhaseSet::parse(fields[1]).ok_or_else(|| perr(ln, format!("bad phases `{}`", fields[1])))?;
                if node_idx.insert(fields[0].to_string(), nodes.len()).is_some() {
                    return Err(perr(ln, format!("duplicate node `{}`", fields[0])));
                }
                nodes.push(FeederNode {
                    id: fields[0].to_string(),
                    phases,
                    load: [Complex64::new(0.0, 0.0); 3],
                    attached_der_ids: Vec::new(),
                });
            }
            "lines" => raw_lines.push((ln, fields.iter().map(|s| s.to_string()).collect())),
            "loads" => raw_loads.push((ln, fields.iter().map(|s| s.to_string()).collect())),
            _ => return Err(perr(ln, "data outside of a section")),
        }
    }
    if !saw_content {
        return Err(perr(0, "empty feeder file"));
    }

    let get = |k: &str| tr.get(k);
    let tnum = |k: &str| -> Result<Option<f64>, FeederError> {
        match get(k) {
            Some((ln, v)) => num(*ln, k, v).map(Some),
            None => Ok(None),
        }
    };
    let head = get("head").map(|(_, v)| v.clone()).ok_or_else(|| perr(0, "[transformer] needs `head = <node>`"))?;
    let base_kv = tnum("kv_low")?.ok_or_else(|| perr(0, "[transformer] needs `kv_low`"))?;
    let base_mva = tnum("base_mva")?.ok_or_else(|| perr(0, "[transformer] needs `base_mva`"))?;
    let transformer = match (tnum("r_pu")?, tnum("x_pu")?) {
        (None, None) => None,
        (r, x) => Some(Transformer {
            kv_high: tnum("kv_high")?.unwrap_or(base_kv),
            kv_low: base_kv,
            r_pu: r.unwrap_or(0.0),
            x_pu: x.unwrap_or(0.0),
            tap: tnum("tap")?.unwrap_or(1.0),
        }),
    };

    let mut lines = Vec::with_capacity(raw_lines.len());
    for (ln, f) in raw_lines {
        if f.len() < 6 {
            return Err(perr(ln, "line needs `id from to phases length_ft linecode`"));
        }
        let phases = PhaseSet::parse(&f[3]).ok_or_else(|| perr(ln, format!("bad phases `{}`", f[3])))?;
        let length_ft = num(ln, "length_ft", &f[4])?;
        if length_ft < 0.0 {
            return Err(perr(ln, "negative length"));
        }
        let per_mile = if f[5].starts_with("r=") || f[5].starts_with("x=") {
            let mut r = 0.0;
            let mut x = 0.0;
            for kv in &f[5..] {
                match kv.split_once('=') {
                    Some(("r", v)) => r = num(ln, "r", v)?,
                    Some(("x", v)) => x = num(ln, "x", v)?,
                    _ => return Err(perr(ln, format!("unexpected `{kv}`"))),
                }
            }
            let z = Complex64::new(r, x);
            let o = Complex64::new(0.0, 0.0);
            [[z, o, o], [o, z, o], [o, o, z]]
        } else {
            if f.len() != 6 {
                return Err(perr(ln, "trailing fields after linecode"));
            }
            *codes.get(&f[5]).ok_or_else(|| perr(ln, format!("unknown linecode `{}`", f[5])))?
        };
        let mut z_ohm = [[Complex64::new(0.0, 0.0); 3]; 3];
        for p in phases.iter() {
            for q in phases.iter() {
                z_ohm[p.index()][q.index()] = per_mile[p.index()][q.index()] * (length_ft / FT_PER_MILE);
            }
        }
        lines.push(LineSegment { id: f[0].clone(), from: f[1].clone(), to: f[2].clone(), phases, z_ohm, length_ft });
    }

    for (ln, f) in raw_loads {
        if f.len() != 4 {
            return Err(perr(ln, "load needs `node phase kW kvar`"));
        }
        let &i = node_idx.get(&f[0]).ok_or_else(|| perr(ln, format!("load on unknown node `{}`", f[0])))?;
        let mut chars = f[1].chars();
        let phase = match (chars.next().and_then(Phase::from_char), chars.next()) {
            (Some(p), None) => p,
            _ => return Err(perr(ln, format!("bad load phase `{}`", f[1]))),
        };
        if !nodes[i].phases.contains(phase) {
            return Err(perr(ln, format!("load on node `{}` phase {phase}, which the node does not have", f[0])));
        }
        let kw = num(ln, "kW", &f[2])?;
        if kw < 0.0 {
            return Err(perr(ln, format!("negative load on node `{}`", f[0])));
        }
        let kvar = num(ln, "kvar", &f[3])?;
        nodes[i].load[phase.index()] += Complex64::new(kw, kvar);
    }

    Feeder::new(name, nodes, lines, &head, base_kv, base_mva, transformer)
}
