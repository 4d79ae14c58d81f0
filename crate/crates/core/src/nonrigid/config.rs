use serde::{Deserialize, Serialize};

use super::NonrigidError;
use crate::geom::MembraneScheme;

/// Registration weights, thresholds and the stiffness schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub alpha_p2point: f64,
    pub alpha_p2plane: f64,
    pub alpha_memb_init: f64,
    pub alpha_memb_stop: f64,
    /// Stiffness unit multiplying `alpha_memb` in the membrane term.
    pub membrane_scale: f64,
    pub membrane_scheme: MembraneScheme,
    /// Millimetres.
    pub prune_distance: f64,
    /// Degrees.
    pub prune_angle: f64,
    /// Initial multiple of both prune thresholds, decaying geometrically to 1
    /// as `alpha_memb` falls from its initial to its stop value. 1 disables
    /// the schedule.
    pub prune_schedule_start: f64,
    /// Frobenius norm (mm) of the position change that ends the inner loop.
    pub inner_tol: f64,
    pub max_inner_iterations: usize,
    /// Mean per-vertex motion (mm) below which `alpha_memb` is halved.
    pub outer_motion_tol: f64,
    /// Change in active pair count below which matching switches from the
    /// embedding to spatial nearest neighbours.
    pub pair_diff_switch: usize,
    pub max_outer_iterations: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            alpha_p2point: 0.1,
            alpha_p2plane: 1.0,
            alpha_memb_init: 1e8,
            alpha_memb_stop: 1e6,
            membrane_scale: DEFAULT_MEMBRANE_SCALE,
            membrane_scheme: MembraneScheme::Bilaplacian,
            prune_distance: 1.0,
            prune_angle: 5.0,
            prune_schedule_start: 1.0,
            inner_tol: 0.01,
            max_inner_iterations: 20,
            outer_motion_tol: 0.1,
            pair_diff_switch: 500,
            max_outer_iterations: 200,
        }
    }
}

/// Calibrated on the sphere registration fixture: at `1e8` the membrane
/// outweighs the data term, at `1e6` a 5 mm bump is fitted to well under
/// 0.1 mm surface distance.
pub const DEFAULT_MEMBRANE_SCALE: f64 = 1e-8;

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), NonrigidError> {
        let nonneg = [
            ("alpha_p2point", self.alpha_p2point),
            ("alpha_p2plane", self.alpha_p2plane),
            ("inner_tol", self.inner_tol),
            ("outer_motion_tol", self.outer_motion_tol),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NonrigidError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let positive = [
            ("alpha_memb_init", self.alpha_memb_init),
            ("alpha_memb_stop", self.alpha_memb_stop),
            ("membrane_scale", self.membrane_scale),
            ("prune_distance", self.prune_distance),
            ("prune_angle", self.prune_angle),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NonrigidError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.alpha_p2point + self.alpha_p2plane <= 0.0 {
            return Err(NonrigidError::InvalidConfig("alpha_p2point and alpha_p2plane cannot both be 0".into()));
        }
        if !(self.prune_schedule_start >= 1.0 && self.prune_schedule_start.is_finite()) {
            return Err(NonrigidError::InvalidConfig("prune_schedule_start must be >= 1".into()));
        }
        if self.max_inner_iterations == 0 {
            return Err(NonrigidError::InvalidConfig("max_inner_iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// Multiplier for the prune thresholds at stiffness `alpha`.
    pub fn prune_factor(&self, alpha: f64) -> f64 {
        let start = self.prune_schedule_start;
        if start <= 1.0 || self.alpha_memb_init <= self.alpha_memb_stop {
            return 1.0;
        }
        let progress = (alpha / self.alpha_memb_stop).ln() / (self.alpha_memb_init / self.alpha_memb_stop).ln();
        start.powf(progress).clamp(1.0, start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RegistrationConfig::default().validate().unwrap();
    }

    #[test]
    fn prune_factor_decays_from_start_to_one() {
        let cfg = RegistrationConfig { prune_schedule_start: 10.0, ..Default::default() };
        assert!((cfg.prune_factor(1e8) - 10.0).abs() < 1e-12);
        assert!((cfg.prune_factor(1e7) - 10f64.sqrt()).abs() < 1e-9);
        assert_eq!(cfg.prune_factor(5e5), 1.0);
        assert_eq!(RegistrationConfig::default().prune_factor(1e8), 1.0);
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = RegistrationConfig { prune_distance: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RegistrationConfig { alpha_p2point: 0.0, alpha_p2plane: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
