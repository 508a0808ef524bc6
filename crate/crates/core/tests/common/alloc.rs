//! Brute-force reference for weighted water-filling.

use proptest::prelude::*;
use tdcosim::derms::{allocate, water_fill, Member, WeightBasis};

/// Brute force: find the set of saturated devices for which the remaining
/// request, split by weight over the rest, saturates exactly that set.
pub fn oracle(request: f64, caps: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = caps.len();
    let total: f64 = caps.iter().sum();
    let target = request.min(total).max(0.0);
    if target == 0.0 {
        return vec![0.0; n];
    }
    let eligible: Vec<bool> = (0..n).map(|i| caps[i] > 0.0 && weights[i] > 0.0).collect();
    for mask in 0u32..(1 << n) {
        let sat = |i: usize| mask & (1 << i) != 0;
        if (0..n).any(|i| sat(i) && !eligible[i]) {
            continue;
        }
        let fixed: f64 = (0..n).filter(|&i| sat(i)).map(|i| caps[i]).sum();
        let rest = target - fixed;
        let wsum: f64 = (0..n).filter(|&i| eligible[i] && !sat(i)).map(|i| weights[i]).sum();
        if wsum == 0.0 {
            if rest.abs() <= 1e-9 * target.max(1.0) {
                return (0..n).map(|i| if sat(i) { caps[i] } else { 0.0 }).collect();
            }
            continue;
        }
        if rest < 0.0 {
            continue;
        }
        let level = rest / wsum;
        let consistent = (0..n).filter(|&i| eligible[i]).all(|i| {
            if sat(i) {
                level * weights[i] >= caps[i] * (1.0 - 1e-12)
            } else {
                level * weights[i] <= caps[i] * (1.0 + 1e-12)
            }
        });
        if consistent {
            return (0..n)
                .map(|i| if sat(i) { caps[i] } else if eligible[i] { (level * weights[i]).min(caps[i]) } else { 0.0 })
                .collect();
        }
    }
    panic!("no consistent saturation set");
}

pub fn ulp(x: f64) -> f64 {
    let x = x.abs();
    f64::from_bits(x.to_bits() + 1) - x
}

pub fn group() -> impl Strategy<Value = (f64, Vec<f64>, Vec<f64>)> {
    (1usize..=10).prop_flat_map(|n| {
        let cap = prop_oneof![1 => Just(0.0), 6 => 0.0f64..100.0];
        (0.0f64..1200.0, prop::collection::vec(cap, n), prop::collection::vec(0.1f64..100.0, n))
    })
}


pub fn water_fill_case(request: f64, caps: &[f64], weights: &[f64]) -> Result<(), TestCaseError> {
    let got = water_fill(request, caps, weights);
    let want = oracle(request, caps, weights);
    let target = request.min(caps.iter().sum()).max(0.0);
    // Shares agree to within the rounding of a sum over at most ten terms.
    let tol = (caps.len() as f64 + 1.0) * ulp(target.max(1.0));
    for (g, w) in got.iter().zip(&want) {
        prop_assert!((g - w).abs() <= tol, "got {:?} want {:?}", got, want);
    }
    // And the total is the target up to one representable increment.
    let total: f64 = got.iter().sum();
    prop_assert!((total - target).abs() <= ulp(target) * 2.0 + 1e-300, "total {} target {}", total, target);
    Ok(())
}

pub fn caps_and_monotone(request: f64, caps: &[f64], weights: &[f64], extra: f64) -> Result<(), TestCaseError> {
    let a = water_fill(request, caps, weights);
    let b = water_fill(request + extra, caps, weights);
    for i in 0..caps.len() {
        prop_assert!(a[i] >= 0.0 && a[i] <= caps[i]);
        prop_assert!(b[i] + 1e-9 >= a[i]);
    }
    Ok(())
}

pub fn available_basis(request: f64, caps: &[f64]) -> Result<(), TestCaseError> {
    let members: Vec<Member> = caps
        .iter()
        .enumerate()
        .map(|(i, &c)| Member { device_id: format!("d{i}"), available_kw: c, rated_kw: 100.0 })
        .collect();
    let a = allocate(request, &members, WeightBasis::Available, 7).unwrap();
    let want = oracle(request, caps, caps);
    let tol = (caps.len() as f64 + 1.0) * ulp(request.max(1.0));
    for (c, w) in a.commands.iter().zip(&want) {
        prop_assert_eq!(c.issue_tick, 7);
        prop_assert!((c.p_setpoint_kw - w).abs() <= tol);
    }
    prop_assert_eq!(a.shortfall, request > caps.iter().sum::<f64>());
    Ok(())
}
