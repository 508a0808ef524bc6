//! Forward/backward sweep.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Feeder, FeederError, Mat3, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseModel {
    #[default]
    ThreePhase,
    /// Positive-sequence equivalent: `z1 = zs - zm` on three-phase segments,
    /// the self impedance elsewhere, loads lumped per node.
    Balanced,
}

/// Fractions of constant impedance, current and power; they should sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zip {
    pub z: f64,
    pub i: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LoadModel {
    #[default]
    ConstantPower,
    Zip(Zip),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub model: PhaseModel,
    pub loads: LoadModel,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 50, model: PhaseModel::ThreePhase, loads: LoadModel::ConstantPower }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederSolution {
    /// Phase-to-neutral voltage per node and phase, pu; zero on absent phases.
    pub voltages: Vec<[Complex64; 3]>,
    /// Power drawn from the transmission side of the substation, MW + j MVAr.
    pub head_power_mva: Complex64,
    pub losses_kw: f64,
    /// Load actually served at the solved voltages, kW + j kvar.
    pub load_kva: Complex64,
    pub der_kva: Complex64,
    pub iterations: usize,
    pub converged: bool,
    pub mismatch: f64,
}

impl FeederSolution {
    pub fn voltage_magnitudes(&self, feeder: &Feeder) -> impl Iterator<Item = (usize, Phase, f64)> + '_ {
        let phases: Vec<_> = feeder.nodes.iter().map(|n| n.phases).collect();
        self.voltages
            .iter()
            .enumerate()
            .flat_map(move |(i, v)| phases[i].iter().map(move |p| (i, p, v[p.index()].norm())))
    }
}

fn rot() -> [Complex64; 3] {
    let a = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0);
    [Complex64::new(1.0, 0.0), a, a * a]
}

/// Solve with DER outputs keyed by device id (kW + j kvar, generation positive).
pub fn solve_power_flow(
    feeder: &Feeder,
    der: &BTreeMap<String, Complex64>,
    source_v_pu: f64,
    opts: &SolverOptions,
) -> Result<FeederSolution, FeederError> {
    let zero = Complex64::new(0.0, 0.0);
    let mut inj = vec![[zero; 3]; feeder.nodes.len()];
    for (id, s) in der {
        let (node, phase) = feeder.der_site(id).ok_or_else(|| FeederError::UnknownDevice(id.clone()))?;
        match phase {
            Some(p) => inj[node][p.index()] += *s,
            None => {
                let ph = feeder.nodes[node].phases;
                let share = *s / ph.len() as f64;
                for p in ph.iter() {
                    inj[node][p.index()] += share;
                }
            }
        }
    }
    solve_injections(feeder, &inj, source_v_pu, opts)
}

/// Solve with per-node, per-phase generation (kW + j kvar).
pub fn solve_injections(
    feeder: &Feeder,
    der_kva: &[[Complex64; 3]],
    source_v_pu: f64,
    opts: &SolverOptions,
) -> Result<FeederSolution, FeederError> {
    let n = feeder.nodes.len();
    if der_kva.len() != n {
        return Err(FeederError::Invalid(format!("{} injection rows for {n} nodes", der_kva.len())));
    }
    if !(source_v_pu.is_finite() && source_v_pu > 0.0) {
        return Err(FeederError::Invalid(format!("source voltage {source_v_pu} pu")));
    }
    let zero = Complex64::new(0.0, 0.0);
    let balanced = opts.model == PhaseModel::Balanced;
    let zb = feeder.z_base_ohm();

    // Working model: in balanced mode everything lives on phase a with a 3-phase power base.
    let s_base_kva = if balanced { feeder.base_mva * 1000.0 } else { feeder.base_mva * 1000.0 / 3.0 };
    let mask: Vec<[bool; 3]> = feeder
        .nodes
        .iter()
        .map(|nd| if balanced { [true, false, false] } else { nd.phases.mask() })
        .collect();
    let load: Vec<[Complex64; 3]> = feeder
        .nodes
        .iter()
        .map(|nd| if balanced { [nd.load.iter().sum::<Complex64>() / s_base_kva, zero, zero] } else { nd.load.map(|s| s / s_base_kva) })
        .collect();
    let gen: Vec<[Complex64; 3]> = der_kva
        .iter()
        .map(|g| if balanced { [g.iter().sum::<Complex64>() / s_base_kva, zero, zero] } else { g.map(|s| s / s_base_kva) })
        .collect();
    let zline: Vec<Mat3> = feeder
        .lines
        .iter()
        .map(|l| {
            if balanced {
                let z = l.z_ohm;
                let z1 = if l.phases.len() == 3 {
                    let zs = (z[0][0] + z[1][1] + z[2][2]) / 3.0;
                    let zm = (z[0][1] + z[0][2] + z[1][2]) / 3.0;
                    zs - zm
                } else {
                    l.phases.iter().map(|p| z[p.index()][p.index()]).sum::<Complex64>() / l.phases.len() as f64
                };
                let mut m = [[zero; 3]; 3];
                m[0][0] = z1 / zb;
                m
            } else {
                l.z_ohm.map(|row| row.map(|z| z / zb))
            }
        })
        .collect();
    let (zt, tap) = match &feeder.transformer {
        Some(t) => (t.z_pu(), t.tap),
        None => (zero, 1.0),
    };
    let v_int: [Complex64; 3] = rot().map(|r| r * source_v_pu * tap);

    let load_at = |s0: Complex64, v: Complex64| -> Complex64 {
        match opts.loads {
            LoadModel::ConstantPower => s0,
            LoadModel::Zip(zip) => {
                let m = v.norm();
                s0 * (zip.z * m * m + zip.i * m + zip.p)
            }
        }
    };

    let order = feeder.order();
    let mut v: Vec<[Complex64; 3]> =
        mask.iter().map(|m| [0, 1, 2].map(|p| if m[p] { v_int[p] } else { zero })).collect();
    let mut cur = vec![[zero; 3]; n];
    let mut mismatch = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        for &i in order.iter().rev() {
            let mut c = [zero; 3];
            for p in 0..3 {
                if mask[i][p] {
                    let s = load_at(load[i][p], v[i][p]) - gen[i][p];
                    c[p] = (s / v[i][p]).conj();
                }
            }
            cur[i] = [0, 1, 2].map(|p| cur[i][p] + c[p]);
            if let Some((up, _)) = feeder.parent(i) {
                let child = cur[i];
                for p in 0..3 {
                    cur[up][p] += child[p];
                }
            }
        }

        mismatch = 0.0;
        let head = feeder.head;
        let new_head = [0, 1, 2].map(|p| if mask[head][p] { v_int[p] - zt * cur[head][p] } else { zero });
        for p in 0..3 {
            mismatch = f64::max(mismatch, (new_head[p] - v[head][p]).norm());
        }
        v[head] = new_head;
        for &i in &order[1..] {
            let (up, li) = feeder.parent(i).expect("tree");
            let z = &zline[li];
            let mut nv = [zero; 3];
            for p in 0..3 {
                if mask[i][p] {
                    let drop: Complex64 = (0..3).map(|q| z[p][q] * cur[i][q]).sum();
                    nv[p] = v[up][p] - drop;
                    mismatch = mismatch.max((nv[p] - v[i][p]).norm());
                }
            }
            v[i] = nv;
        }
        if !mismatch.is_finite() {
            break;
        }
        if mismatch < opts.tol {
            converged = true;
            break;
        }
        if iterations < opts.max_iter {
            cur.iter_mut().for_each(|c| *c = [zero; 3]);
        }
    }
    if !converged {
        return Err(FeederError::Diverged { iterations, mismatch });
    }

    let head = feeder.head;
    let mut s_head = zero;
    let mut loss = zero;
    for p in 0..3 {
        s_head += v_int[p] * cur[head][p].conj();
        loss += (v_int[p] - v[head][p]) * cur[head][p].conj();
    }
    for &i in &order[1..] {
        let (up, _) = feeder.parent(i).expect("tree");
        for p in 0..3 {
            loss += (v[up][p] - v[i][p]) * cur[i][p].conj();
        }
    }
    let mut served = zero;
    let mut gen_total = zero;
    for i in 0..n {
        for p in 0..3 {
            if mask[i][p] {
                served += load_at(load[i][p], v[i][p]);
                gen_total += gen[i][p];
            }
        }
    }

    let voltages = if balanced {
        let r = rot();
        feeder
            .nodes
            .iter()
            .zip(&v)
            .map(|(nd, vi)| [0, 1, 2].map(|p| if nd.phases.mask()[p] { vi[0] * r[p] } else { zero }))
            .collect()
    } else {
        v
    };

    Ok(FeederSolution {
        voltages,
        head_power_mva: s_head * s_base_kva / 1000.0,
        losses_kw: loss.re * s_base_kva,
        load_kva: served * s_base_kva,
        der_kva: gen_total * s_base_kva,
        iterations,
        converged,
        mismatch,
    })
}
