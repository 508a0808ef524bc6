//! Three-area test system and an independent right-hand side for it.

use tdcosim::tsnet::{Area, EventKind, TieLine, TransmissionSystem};

pub const BASE: f64 = 100.0;

pub fn area(id: &str, rating: f64, h: f64, d: f64, r: f64, tg: f64, tt: f64, pload: f64) -> Area {
    let mut a = Area::new(id, rating);
    a.h_s = h;
    a.d_pu = d;
    a.r_pu = r;
    a.tg_s = tg;
    a.tt_s = tt;
    a.pload_pu = pload;
    a
}

pub fn tie(id: &str, from: &str, to: &str, b: f64, k: f64) -> TieLine {
    TieLine { id: id.into(), from_area: from.into(), to_area: to.into(), b_pu: b, damping_pu: k, in_service: true }
}

pub fn three_area() -> TransmissionSystem {
    let areas = vec![
        area("a", 1000.0, 5.0, 1.0, 0.05, 0.4, 0.5, 0.6),
        area("b", 800.0, 4.0, 0.8, 0.06, 0.5, 0.3, 0.5),
        area("c", 1200.0, 6.0, 1.2, 0.04, 0.3, 0.6, 0.7),
    ];
    let ties = vec![tie("ab", "a", "b", 2.0, 0.0), tie("bc", "b", "c", 1.5, 0.0), tie("ac", "a", "c", 1.0, 0.5)];
    let mut s = TransmissionSystem::new(BASE, areas, ties, vec![], vec![]).unwrap();
    s.initialize_equilibrium();
    s.apply_event(&EventKind::LoadStep { area: "b".into(), delta_mw: 40.0 }).unwrap();
    s
}

/// Hand-written right-hand side of the area model, used only by the reference integrator.
pub struct Model {
    w0: f64,
    h: Vec<f64>,
    d: Vec<f64>,
    r: Vec<f64>,
    tg: Vec<f64>,
    tt: Vec<f64>,
    rating: Vec<f64>,
    pload: Vec<f64>,
    pref: Vec<f64>,
    ties: Vec<(usize, usize, f64, f64)>,
}

impl Model {
    pub fn from(s: &TransmissionSystem) -> Self {
        let idx = |id: &str| s.areas.iter().position(|a| a.id == id).unwrap();
        Model {
            w0: 2.0 * std::f64::consts::PI * 60.0,
            h: s.areas.iter().map(|a| a.h_s).collect(),
            d: s.areas.iter().map(|a| a.d_pu).collect(),
            r: s.areas.iter().map(|a| a.r_pu).collect(),
            tg: s.areas.iter().map(|a| a.tg_s).collect(),
            tt: s.areas.iter().map(|a| a.tt_s).collect(),
            rating: s.areas.iter().map(|a| a.rating_mva).collect(),
            pload: s.areas.iter().map(|a| a.pload_pu - a.boundary_inj_mw / a.rating_mva).collect(),
            pref: s.areas.iter().map(|a| a.pm_ref_pu).collect(),
            ties: s.ties.iter().filter(|t| t.in_service).map(|t| (idx(&t.from_area), idx(&t.to_area), t.b_pu, t.damping_pu)).collect(),
        }
    }

    /// State per area: [delta, df, pv, pm].
    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        let n = self.h.len();
        let mut flow = vec![0.0; n];
        for &(i, j, b, k) in &self.ties {
            let p = b * (x[4 * i] - x[4 * j]) + k * (x[4 * i + 1] - x[4 * j + 1]);
            flow[i] += p * BASE / self.rating[i];
            flow[j] -= p * BASE / self.rating[j];
        }
        let mut out = vec![0.0; 4 * n];
        for i in 0..n {
            let (df, pv, pm) = (x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]);
            out[4 * i] = self.w0 * df;
            out[4 * i + 1] = (pm - self.pload[i] - self.d[i] * df - flow[i]) / (2.0 * self.h[i]);
            out[4 * i + 2] = (self.pref[i] - df / self.r[i] - pv) / self.tg[i];
            out[4 * i + 3] = (pv - pm) / self.tt[i];
        }
        out
    }

    pub fn integrate(&self, mut x: Vec<f64>, t_end: f64, dt: f64) -> Vec<f64> {
        let n = (t_end / dt).round() as usize;
        let axpy = |x: &[f64], a: f64, k: &[f64]| x.iter().zip(k).map(|(x, k)| x + a * k).collect::<Vec<_>>();
        for _ in 0..n {
            let k1 = self.f(&x);
            let k2 = self.f(&axpy(&x, dt / 2.0, &k1));
            let k3 = self.f(&axpy(&x, dt / 2.0, &k2));
            let k4 = self.f(&axpy(&x, dt, &k3));
            for i in 0..x.len() {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }
}

pub fn state(s: &TransmissionSystem) -> Vec<f64> {
    s.areas.iter().flat_map(|a| [a.delta_rad, a.dfreq_pu, a.pv_pu, a.pm_pu]).collect()
}


/// Log-log slope of the final-state error against step size, with the sample points.
pub fn rk4_slope() -> (f64, Vec<(f64, f64)>) {
    const T: f64 = 5.0;
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let s0 = three_area();
    let model = Model::from(&s0);
    let reference = model.integrate(state(&s0), T, dts[3] / 100.0);
    let mut pts = Vec::new();
    for dt in dts {
        let mut s = s0.clone();
        s.advance(T, dt).unwrap();
        let err = state(&s).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pts.push((dt.ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / pts.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    (slope, pts)
}
