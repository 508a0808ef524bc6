//! Breakpoint-form reference for the frequency-watt curve.

use proptest::prelude::*;
use tdcosim::der::{droop_pu, DroopParams};

/// Breakpoint form: linear interpolation between the deadband edge and the
/// frequency where the curve reaches its limit.
pub fn oracle(p: &DroopParams, pre: f64, pmax: f64, f: f64) -> f64 {
    let f0 = p.f_nom_hz;
    let of_start = f0 + p.db_of_hz;
    let uf_start = f0 - p.db_uf_hz;
    let raw = if f > of_start {
        if pre <= 0.0 {
            pre
        } else {
            let of_zero = of_start + f0 * p.k_of * pre;
            pre * (of_zero - f) / (of_zero - of_start)
        }
    } else if f < uf_start {
        let head = 1.0 - pre;
        let uf_full = uf_start - f0 * p.k_uf * head;
        if head <= 0.0 {
            pre
        } else {
            pre + head * (uf_start - f) / (uf_start - uf_full)
        }
    } else {
        pre
    };
    raw.max(0.0).min(pmax.max(0.0))
}

pub fn params() -> impl Strategy<Value = DroopParams> {
    (0.017f64..1.0, 0.017f64..1.0, 0.02f64..0.07, 0.02f64..0.07)
        .prop_map(|(db_of_hz, db_uf_hz, k_of, k_uf)| DroopParams { db_of_hz, db_uf_hz, k_of, k_uf, f_nom_hz: 60.0 })
}


pub fn matches_oracle(p: &DroopParams, pre: f64, pmax: f64, f: f64) -> Result<(), TestCaseError> {
    let got = droop_pu(p, pre, pmax, f).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let want = oracle(p, pre, pmax, f);
    prop_assert!((got - want).abs() <= 1e-12, "got {} want {}", got, want);
    Ok(())
}

pub fn deadband_and_range(p: &DroopParams, pre: f64, pmax: f64, x: f64) -> Result<(), TestCaseError> {
    let f = if x >= 0.0 { 60.0 + x * p.db_of_hz } else { 60.0 + x * p.db_uf_hz };
    prop_assert_eq!(droop_pu(p, pre, pmax, f).unwrap(), pre.min(pmax));
    for f in [55.0, 59.0, 61.0, 65.0] {
        let v = droop_pu(p, pre, pmax, f).unwrap();
        prop_assert!((0.0..=pmax).contains(&v));
    }
    Ok(())
}

pub fn non_increasing(p: &DroopParams, pre: f64, pmax: f64, a: f64, b: f64) -> Result<(), TestCaseError> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    prop_assert!(droop_pu(p, pre, pmax, lo).unwrap() >= droop_pu(p, pre, pmax, hi).unwrap());
    Ok(())
}
