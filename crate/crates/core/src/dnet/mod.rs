//! Radial distribution feeders and the forward/backward sweep power flow.

mod group;
mod parse;
mod sweep;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use group::{head_power, head_power_instantiated, FeederGroup};
pub use parse::{load_feeder, parse_feeder};
pub use sweep::{solve_injections, solve_power_flow, FeederSolution, LoadModel, PhaseModel, SolverOptions, Zip};

pub type Mat3 = [[Complex64; 3]; 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeederError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("topology: {0}")]
    Topology(String),
    #[error("invalid feeder data: {0}")]
    Invalid(String),
    #[error("unknown DER `{0}`")]
    UnknownDevice(String),
    #[error("sweep did not converge after {iterations} iterations (last mismatch {mismatch:.3e} pu)")]
    Diverged { iterations: usize, mismatch: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(["a", "b", "c"][self.index()])
    }
}

/// A subset of {a, b, c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn parse(s: &str) -> Option<PhaseSet> {
        let mut bits = 0u8;
        for c in s.chars() {
            let p = Phase::from_char(c)?;
            if bits & (1 << p.index()) != 0 {
                return None;
            }
            bits |= 1 << p.index();
        }
        (bits != 0).then_some(PhaseSet(bits))
    }

    pub fn single(p: Phase) -> PhaseSet {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn mask(self) -> [bool; 3] {
        [self.contains(Phase::A), self.contains(Phase::B), self.contains(Phase::C)]
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederNode {
    pub id: String,
    pub phases: PhaseSet,
    /// Constant-power load per phase, kW + j kvar.
    pub load: [Complex64; 3],
    pub attached_der_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    pub id: String,
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    /// Series impedance of the whole segment in ohms; rows/columns of absent phases are zero.
    pub z_ohm: Mat3,
    pub length_ft: f64,
}

/// Substation transformer, impedance on the feeder base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transformer {
    pub kv_high: f64,
    pub kv_low: f64,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Off-nominal ratio applied to the source voltage.
    pub tap: f64,
}

impl Transformer {
    pub fn z_pu(&self) -> Complex64 {
        Complex64::new(self.r_pu, self.x_pu)
    }
}

/// A validated radial feeder.
#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    pub name: String,
    pub nodes: Vec<FeederNode>,
    pub lines: Vec<LineSegment>,
    pub head: usize,
    /// Line-to-line kV of the feeder (low side of the transformer).
    pub base_kv: f64,
    pub base_mva: f64,
    pub transformer: Option<Transformer>,
    index: HashMap<String, usize>,
    /// Nodes in breadth-first order from the head.
    order: Vec<usize>,
    /// For each node, the (parent node, line index) it is fed from.
    parent: Vec<Option<(usize, usize)>>,
    der_sites: BTreeMap<String, (usize, Option<Phase>)>,
}

impl Feeder {
    /// Validate topology and phasing, and orient the tree from `head`.
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<FeederNode>,
        lines: Vec<LineSegment>,
        head: &str,
        base_kv: f64,
        base_mva: f64,
        transformer: Option<Transformer>,
    ) -> Result<Feeder, FeederError> {
        if !(base_kv > 0.0 && base_mva > 0.0) {
            return Err(FeederError::Invalid("base kV and MVA must be > 0".into()));
        }
        if nodes.is_empty() {
            return Err(FeederError::Invalid("feeder has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(FeederError::Invalid(format!("duplicate node `{}`", n.id)));
            }
            if n.phases.is_empty() {
                return Err(FeederError::Invalid(format!("node `{}` has no phases", n.id)));
            }
            for p in Phase::ALL {
                let s = n.load[p.index()];
                if s != Complex64::new(0.0, 0.0) && !n.phases.contains(p) {
                    return Err(FeederError::Invalid(format!("node `{}`: load on absent phase {p}", n.id)));
                }
                if !(s.re.is_finite() && s.im.is_finite()) || s.re < 0.0 {
                    return Err(FeederError::Invalid(format!("node `{}`: load must be finite with kW >= 0", n.id)));
                }
            }
        }
        let head = *index
            .get(head)
            .ok_or_else(|| FeederError::Topology(format!("head node `{head}` is not defined")))?;
        if let Some(t) = &transformer {
            if !(t.r_pu >= 0.0 && t.x_pu.is_finite() && t.tap > 0.0 && t.kv_high > 0.0 && t.kv_low > 0.0) {
                return Err(FeederError::Invalid("transformer needs r >= 0, tap > 0 and positive kV".into()));
            }
        }

        // Union-find over the undirected graph: the first edge closing a cycle is named.
        let n = nodes.len();
        let mut uf: Vec<usize> = (0..n).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut line_ids = HashMap::new();
        for (li, l) in lines.iter().enumerate() {
            if line_ids.insert(l.id.clone(), li).is_some() {
                return Err(FeederError::Invalid(format!("duplicate line `{}`", l.id)));
            }
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| FeederError::Topology(format!("line `{}` references unknown node `{id}`", l.id)))
            };
            let (a, b) = (lookup(&l.from)?, lookup(&l.to)?);
            if a == b {
                return Err(FeederError::Topology(format!("line `{}` is a self-loop at `{}`", l.id, l.from)));
            }
            if l.phases.is_empty() {
                return Err(FeederError::Invalid(format!("line `{}` has no phases", l.id)));
            }
            if !(l.length_ft >= 0.0) {
                return Err(FeederError::Invalid(format!("line `{}`: negative length", l.id)));
            }
            for p in Phase::ALL {
                let zpp = l.z_ohm[p.index()][p.index()];
                if l.phases.contains(p) && zpp.re < 0.0 {
                    return Err(FeederError::Invalid(format!("line `{}`: negative resistance", l.id)));
                }
                if l.z_ohm[p.index()].iter().chain(l.z_ohm.iter().map(|r| &r[p.index()])).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                    return Err(FeederError::Invalid(format!("line `{}`: non-finite impedance", l.id)));
                }
            }
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra == rb {
                return Err(FeederError::Topology(format!("line `{}` ({} - {}) closes a loop", l.id, l.from, l.to)));
            }
            uf[ra] = rb;
            adj[a].push((b, li));
            adj[b].push((a, li));
        }

        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([head]);
        seen[head] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, li) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, li));
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            let missing: Vec<&str> = (0..n).filter(|&i| !seen[i]).map(|i| nodes[i].id.as_str()).take(10).collect();
            return Err(FeederError::Topology(format!("nodes not reachable from head: {}", missing.join(", "))));
        }
        for &v in &order[1..] {
            let (u, li) = parent[v].expect("non-head nodes have parents");
            let l = &lines[li];
            if !l.phases.is_subset(nodes[u].phases) || !nodes[v].phases.is_subset(l.phases) {
                return Err(FeederError::Topology(format!(
                    "line `{}` phasing {} does not fit `{}` ({}) -> `{}` ({})",
                    l.id, l.phases, nodes[u].id, nodes[u].phases, nodes[v].id, nodes[v].phases
                )));
            }
        }

        Ok(Feeder {
            name: name.into(),
            nodes,
            lines,
            head,
            base_kv,
            base_mva,
            transformer,
            index,
            order,
            parent,
            der_sites: BTreeMap::new(),
        })
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Upstream (node, line) of node `i`; `None` for the head.
    pub fn parent(&self, i: usize) -> Option<(usize, usize)> {
        self.parent[i]
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    /// Total constant-power load, kW + j kvar.
    pub fn total_load(&self) -> Complex64 {
        self.nodes.iter().flat_map(|n| n.load.iter()).sum()
    }

    /// Multiply every load by `k`.
    pub fn scale_loads(&mut self, k: f64) {
        for n in &mut self.nodes {
            for s in &mut n.load {
                *s *= k;
            }
        }
    }

    /// Connect a DER at `node` on `phase` (`None` spreads it evenly over the node's phases).
    pub fn attach_der(&mut self, device_id: &str, node: &str, phase: Option<Phase>) -> Result<(), FeederError> {
        let i = self.node_index(node).ok_or_else(|| FeederError::Invalid(format!("DER `{device_id}`: unknown node `{node}`")))?;
        if let Some(p) = phase {
            if !self.nodes[i].phases.contains(p) {
                return Err(FeederError::Invalid(format!("DER `{device_id}`: node `{node}` has no phase {p}")));
            }
        }
        if self.der_sites.insert(device_id.to_string(), (i, phase)).is_some() {
            return Err(FeederError::Invalid(format!("DER `{device_id}` attached twice")));
        }
        self.nodes[i].attached_der_ids.push(device_id.to_string());
        Ok(())
    }

    pub fn der_site(&self, device_id: &str) -> Option<(usize, Option<Phase>)> {
        self.der_sites.get(device_id).copied()
    }

    pub fn der_ids(&self) -> impl Iterator<Item = &str> {
        self.der_sites.keys().map(String::as_str)
    }

    /// Load entries (node, phase, kW + j kvar) in node order.
    pub fn load_entries(&self) -> impl Iterator<Item = (usize, Phase, Complex64)> + '_ {
        self.nodes.iter().enumerate().flat_map(|(i, n)| {
            n.phases.iter().filter_map(move |p| {
                let s = n.load[p.index()];
                (s != Complex64::new(0.0, 0.0)).then_some((i, p, s))
            })
        })
    }
}
