//! Dense Newton oracle for the radial sweep and random feeder generation.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdcosim::dnet::{load_feeder, parse_feeder, solve_injections, Feeder, PhaseModel, SolverOptions};

type C = Complex64;
const Z: C = C::new(0.0, 0.0);

/// Random radial feeder text with mixed phasing, mutual coupling and optional transformer.
pub fn random_feeder_text(seed: u64) -> (String, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=50);
    let mut t = String::new();
    writeln!(t, "[transformer]\nhead = n0\nkv_low = 4.16\nbase_mva = 5").unwrap();
    if rng.gen_bool(0.5) {
        writeln!(t, "kv_high = 115\nr_pu = {}\nx_pu = {}\ntap = {}", rng.gen_range(0.0..0.02), rng.gen_range(0.02..0.1), rng.gen_range(0.97..1.05)).unwrap();
    }
    let mut phases: Vec<Vec<usize>> = vec![vec![0, 1, 2]];
    let mut parents = vec![0usize];
    for k in 1..n {
        let p = rng.gen_range(0..k);
        let up = phases[p].clone();
        let mine: Vec<usize> = if up.len() == 1 || rng.gen_bool(0.6) {
            up
        } else {
            let keep: Vec<usize> = up.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
            if keep.is_empty() {
                vec![up[rng.gen_range(0..up.len())]]
            } else {
                keep
            }
        };
        phases.push(mine);
        parents.push(p);
    }
    let pname = |ph: &[usize]| ph.iter().map(|&i| ['a', 'b', 'c'][i]).collect::<String>();
    writeln!(t, "[linecodes]").unwrap();
    for k in 1..n {
        let diag = |rng: &mut ChaCha8Rng| (rng.gen_range(0.2..1.0), rng.gen_range(0.4..1.2));
        let off = |rng: &mut ChaCha8Rng| (rng.gen_range(0.0..0.2), rng.gen_range(0.0..0.5));
        let (r11, x11) = diag(&mut rng);
        let (r12, x12) = off(&mut rng);
        let (r13, x13) = off(&mut rng);
        let (r22, x22) = diag(&mut rng);
        let (r23, x23) = off(&mut rng);
        let (r33, x33) = diag(&mut rng);
        writeln!(t, "lc{k} {r11} {x11} {r12} {x12} {r13} {x13} {r22} {x22} {r23} {x23} {r33} {x33}").unwrap();
    }
    writeln!(t, "[nodes]").unwrap();
    for (k, ph) in phases.iter().enumerate() {
        writeln!(t, "n{k} {}", pname(ph)).unwrap();
    }
    writeln!(t, "[lines]").unwrap();
    for k in 1..n {
        writeln!(t, "l{k} n{} n{k} {} {} lc{k}", parents[k], pname(&phases[k]), rng.gen_range(100.0..2000.0)).unwrap();
    }
    writeln!(t, "[loads]").unwrap();
    for (k, ph) in phases.iter().enumerate().skip(1) {
        for &p in ph {
            if rng.gen_bool(0.7) {
                writeln!(t, "n{k} {} {} {}", ['a', 'b', 'c'][p], rng.gen_range(0.0..40.0), rng.gen_range(0.0..20.0)).unwrap();
            }
        }
    }
    (t, n)
}

pub fn random_injections(f: &Feeder, seed: u64) -> Vec<[C; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    f.nodes
        .iter()
        .map(|nd| {
            let mut g = [Z; 3];
            for p in nd.phases.iter() {
                if rng.gen_bool(0.2) {
                    g[p.index()] = C::new(rng.gen_range(0.0..60.0), rng.gen_range(-5.0..5.0));
                }
            }
            g
        })
        .collect()
}

fn inv3(m: &[[C; 3]; 3], idx: &[usize]) -> Vec<Vec<C>> {
    let k = idx.len();
    let mut a = DMatrix::<C>::zeros(k, k);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            a[(r, c)] = m[i][j];
        }
    }
    let inv = a.try_inverse().expect("invertible line impedance");
    (0..k).map(|r| (0..k).map(|c| inv[(r, c)]).collect()).collect()
}

/// Newton-Raphson on V * conj(Y V) = S with rectangular coordinates.
pub fn newton(f: &Feeder, gen_kva: &[[C; 3]], v_src: f64) -> Vec<[C; 3]> {
    let s_base_kva = f.base_mva * 1000.0 / 3.0;
    let zb = f.z_base_ohm();
    let a = C::from_polar(1.0, -2.0 * std::f64::consts::PI / 3.0);
    let rot = [C::new(1.0, 0.0), a, a * a];
    // Unknowns: every (node, phase) present. A source node sits behind the transformer when present.
    let mut var = Vec::new();
    let mut pos = vec![[usize::MAX; 3]; f.nodes.len()];
    for (i, nd) in f.nodes.iter().enumerate() {
        for p in nd.phases.iter() {
            pos[i][p.index()] = var.len();
            var.push((i, p.index()));
        }
    }
    let m = var.len();
    let mut y = DMatrix::<C>::zeros(m, m);
    let mut y_src = DVector::<C>::zeros(m);
    let src_v: Vec<C> = rot.iter().map(|r| r * v_src * f.transformer.as_ref().map(|t| t.tap).unwrap_or(1.0)).collect();
    let mut fixed_head = false;
    match &f.transformer {
        Some(t) => {
            let yt = 1.0 / t.z_pu();
            for p in f.nodes[f.head].phases.iter() {
                let k = pos[f.head][p.index()];
                y[(k, k)] += yt;
                y_src[k] -= yt * src_v[p.index()];
            }
        }
        None => fixed_head = true,
    }
    for l in &f.lines {
        let i = f.node_index(&l.from).unwrap();
        let j = f.node_index(&l.to).unwrap();
        let idx: Vec<usize> = l.phases.iter().map(|p| p.index()).collect();
        let zpu = l.z_ohm.map(|row| row.map(|z| z / zb));
        let yl = inv3(&zpu, &idx);
        for (r, &p) in idx.iter().enumerate() {
            for (c, &q) in idx.iter().enumerate() {
                let v = yl[r][c];
                y[(pos[i][p], pos[i][q])] += v;
                y[(pos[j][p], pos[j][q])] += v;
                y[(pos[i][p], pos[j][q])] -= v;
                y[(pos[j][p], pos[i][q])] -= v;
            }
        }
    }
    let s_spec: Vec<C> = var.iter().map(|&(i, p)| (gen_kva[i][p] - f.nodes[i].load[p]) / s_base_kva).collect();
    let is_fixed = |k: usize| fixed_head && var[k].0 == f.head;
    let mut v: Vec<C> = var.iter().map(|&(_, p)| src_v[p]).collect();
    for _ in 0..30 {
        let iv: Vec<C> = (0..m).map(|r| (0..m).map(|c| y[(r, c)] * v[c]).sum::<C>() + y_src[r]).collect();
        let mis: Vec<C> = (0..m).map(|k| if is_fixed(k) { Z } else { v[k] * iv[k].conj() - s_spec[k] }).collect();
        if mis.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        let mut rhs = DVector::<f64>::zeros(2 * m);
        for r in 0..m {
            rhs[r] = -mis[r].re;
            rhs[m + r] = -mis[r].im;
            if is_fixed(r) {
                jac[(r, r)] = 1.0;
                jac[(m + r, m + r)] = 1.0;
                continue;
            }
            for c in 0..m {
                // dS_r = A dV_c + B dconj(V_c)
                let a = if r == c { iv[r].conj() } else { Z };
                let b = v[r] * y[(r, c)].conj();
                let dre = a + b;
                let dim = C::new(0.0, 1.0) * (a - b);
                jac[(r, c)] = dre.re;
                jac[(r, m + c)] = dim.re;
                jac[(m + r, c)] = dre.im;
                jac[(m + r, m + c)] = dim.im;
            }
        }
        let dx = jac.lu().solve(&rhs).expect("nonsingular Jacobian");
        for k in 0..m {
            v[k] += C::new(dx[k], dx[m + k]);
        }
    }
    let mut out = vec![[Z; 3]; f.nodes.len()];
    for (k, &(i, p)) in var.iter().enumerate() {
        out[i][p] = v[k];
    }
    out
}

pub fn check(f: &Feeder, gen: &[[C; 3]], v_src: f64) -> Result<(), TestCaseError> {
    let opts = SolverOptions { tol: 1e-10, max_iter: 200, ..SolverOptions::default() };
    let sol = solve_injections(f, gen, v_src, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let want = newton(f, gen, v_src);
    for (i, nd) in f.nodes.iter().enumerate() {
        for p in nd.phases.iter() {
            let d = (sol.voltages[i][p.index()] - want[i][p.index()]).norm();
            prop_assert!(d < 1e-6, "node {} phase {}: sweep {} newton {}", nd.id, p, sol.voltages[i][p.index()], want[i][p.index()]);
        }
    }
    // Power balance: head = served load + losses - generation.
    let lhs = sol.head_power_mva * 1000.0;
    let rhs = sol.load_kva + C::new(sol.losses_kw, 0.0) - sol.der_kva;
    prop_assert!((lhs.re - rhs.re).abs() <= 1e-6 * lhs.norm().max(1.0), "P balance {} vs {}", lhs, rhs);
    Ok(())
}

/// One random feeder under the unbalanced model.
pub fn random_case(seed: u64, v_src: f64) -> Result<(), TestCaseError> {
    let (text, _) = random_feeder_text(seed);
    let f = parse_feeder(&text, "rand").map_err(|e| TestCaseError::fail(e.to_string()))?;
    let gen = random_injections(&f, seed);
    check(&f, &gen, v_src)
}

/// Active-power balance and non-negative losses under the balanced model.
pub fn balanced_balance(seed: u64) -> Result<(), TestCaseError> {
    let (text, _) = random_feeder_text(seed);
    let f = parse_feeder(&text, "rand").map_err(|e| TestCaseError::fail(e.to_string()))?;
    let gen = random_injections(&f, seed);
    let opts = SolverOptions { model: PhaseModel::Balanced, ..SolverOptions::default() };
    let sol = solve_injections(&f, &gen, 1.0, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let lhs = sol.head_power_mva * 1000.0;
    // Reactive line losses are not reported, so only P closes.
    let rhs = sol.load_kva + C::new(sol.losses_kw, 0.0) - sol.der_kva;
    prop_assert!((lhs.re - rhs.re).abs() <= 1e-6 * lhs.norm().max(1.0), "{} vs {}", lhs, rhs);
    prop_assert!(sol.losses_kw >= -1e-9);
    Ok(())
}

pub fn bundled_feeder() -> Feeder {
    load_feeder(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/feeder123.txt")).unwrap()
}

/// The bundled feeder with no injections and with a random set of them.
pub fn bundled_case() -> Result<(), TestCaseError> {
    let f = bundled_feeder();
    prop_assert_eq!(f.nodes.len(), 123);
    check(&f, &vec![[Z; 3]; f.nodes.len()], 1.0)?;
    check(&f, &random_injections(&f, 42), 1.01)
}
