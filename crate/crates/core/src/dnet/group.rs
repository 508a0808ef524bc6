//! Replicated feeders attached to one transmission bus.

use std::sync::Arc;

use num_complex::Complex64;

use super::sweep::FeederSolution;
use super::{Feeder, FeederError};

#[derive(Debug, Clone)]
pub struct FeederGroup {
    pub id: String,
    pub feeder: Arc<Feeder>,
    pub replication: u32,
    /// Transmission bus the group is attached to.
    pub bus: String,
    /// Solve each replica separately instead of scaling one solution.
    pub instantiate: bool,
}

impl FeederGroup {
    pub fn new(id: &str, feeder: Arc<Feeder>, replication: u32, bus: &str) -> Result<Self, FeederError> {
        if replication == 0 {
            return Err(FeederError::Invalid(format!("group `{id}`: replication must be >= 1")));
        }
        Ok(FeederGroup { id: id.to_string(), feeder, replication, bus: bus.to_string(), instantiate: false })
    }
}

/// Group exchange at the transmission interface (MW + j MVAr, load convention):
/// one replica's head power times the replication count.
pub fn head_power(solution: &FeederSolution, group: &FeederGroup) -> Result<Complex64, FeederError> {
    if !solution.converged {
        return Err(FeederError::Diverged { iterations: solution.iterations, mismatch: solution.mismatch });
    }
    Ok(solution.head_power_mva * f64::from(group.replication))
}

/// Sum over individually solved replicas.
pub fn head_power_instantiated(solutions: &[FeederSolution], group: &FeederGroup) -> Result<Complex64, FeederError> {
    if solutions.len() != group.replication as usize {
        return Err(FeederError::Invalid(format!(
            "group `{}`: {} replica solutions for replication {}",
            group.id,
            solutions.len(),
            group.replication
        )));
    }
    let mut total = Complex64::new(0.0, 0.0);
    for s in solutions {
        if !s.converged {
            return Err(FeederError::Diverged { iterations: s.iterations, mismatch: s.mismatch });
        }
        total += s.head_power_mva;
    }
    Ok(total)
}
