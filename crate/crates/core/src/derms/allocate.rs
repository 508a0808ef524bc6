//! Pro-rata water-filling.

use serde::{Deserialize, Serialize};

use super::{DermsError, SetpointCommand};

/// What the initial pro-rata shares are proportional to. Caps are always the
/// last reported availability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBasis {
    #[default]
    Available,
    Rated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub device_id: String,
    pub available_kw: f64,
    pub rated_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub commands: Vec<SetpointCommand>,
    /// Set when the request exceeded total availability.
    pub shortfall: bool,
}

impl Allocation {
    pub fn total_kw(&self) -> f64 {
        self.commands.iter().map(|c| c.p_setpoint_kw).sum()
    }
}

/// Split `min(request, sum(caps))` proportionally to `weights`, clamping at `caps`
/// and redistributing the excess until no share exceeds its cap.
///
/// The last unclamped entry takes `target - sum(others)` so the shares add up to
/// the target to within one rounding step.
pub fn water_fill(request: f64, caps: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(caps.len(), weights.len());
    let n = caps.len();
    let mut out = vec![0.0; n];
    let cap_sum: f64 = caps.iter().sum();
    let target = request.min(cap_sum).max(0.0);
    if target <= 0.0 {
        return out;
    }
    let mut clamped = vec![false; n];
    let mut active: Vec<usize> = (0..n).filter(|&i| caps[i] > 0.0 && weights[i] > 0.0).collect();
    loop {
        let fixed: f64 = (0..n).filter(|&i| clamped[i]).map(|i| caps[i]).sum();
        let residual = target - fixed;
        let wsum: f64 = active.iter().map(|&i| weights[i]).sum();
        if active.is_empty() || wsum <= 0.0 {
            break;
        }
        let over: Vec<usize> = active.iter().copied().filter(|&i| residual * weights[i] / wsum >= caps[i]).collect();
        if over.is_empty() {
            for &i in &active {
                out[i] = residual * weights[i] / wsum;
            }
            break;
        }
        for &i in &over {
            clamped[i] = true;
        }
        active.retain(|i| !clamped[*i]);
    }
    for i in 0..n {
        if clamped[i] {
            out[i] = caps[i];
        }
    }
    if let Some(&last) = active.last() {
        let others: f64 = (0..n).filter(|&i| i != last).map(|i| out[i]).sum();
        out[last] = (target - others).clamp(0.0, caps[last]);
    }
    out
}

/// Allocate a request over a device group.
pub fn allocate(p_request_kw: f64, members: &[Member], basis: WeightBasis, tick: u64) -> Result<Allocation, DermsError> {
    if members.is_empty() {
        return Err(DermsError::EmptyGroup);
    }
    if !(p_request_kw.is_finite() && p_request_kw >= 0.0) {
        return Err(DermsError::Validation(format!("request {p_request_kw} kW must be finite and >= 0")));
    }
    let caps: Vec<f64> = members.iter().map(|m| m.available_kw.max(0.0)).collect();
    let weights: Vec<f64> = match basis {
        WeightBasis::Available => caps.clone(),
        WeightBasis::Rated => members.iter().map(|m| m.rated_kw.max(0.0)).collect(),
    };
    let shares = water_fill(p_request_kw, &caps, &weights);
    let total_cap: f64 = caps.iter().sum();
    Ok(Allocation {
        commands: members
            .iter()
            .zip(shares)
            .map(|(m, p)| SetpointCommand::new(&m.device_id, p, tick))
            .collect(),
        shortfall: p_request_kw > total_cap,
    })
}
