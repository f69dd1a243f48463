use serde::{Deserialize, Serialize};

/// Numerical thresholds shared by every stage of the construction.
///
/// Relative thresholds (`eps_pd_rel`, `eps_rank_rel`, `tol_recon_rel`,
/// `tol_global_rel`) are scaled by `1 + magnitude` of the quantity they
/// guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_zero: f64,
    pub tol_grad: f64,
    pub eps_pd_rel: f64,
    pub eps_rank_rel: f64,
    pub tol_newton: f64,
    pub newton_max_iter: usize,
    pub tol_recon_rel: f64,
    pub tol_global_rel: f64,
    pub r0: f64,
    pub r_min: f64,
    pub quad_nodes: usize,
    pub delta_cover: f64,
    pub seed: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_zero: 1e-10,
            tol_grad: 1e-8,
            eps_pd_rel: 1e-8,
            eps_rank_rel: 1e-8,
            tol_newton: 1e-12,
            newton_max_iter: 50,
            tol_recon_rel: 1e-8,
            tol_global_rel: 1e-6,
            r0: 1.0,
            r_min: 1e-4,
            quad_nodes: 8,
            delta_cover: 0.1,
            seed: 42,
        }
    }
}

impl Tolerances {
    /// Positive-definiteness margin for a matrix of spectral norm `norm`.
    pub fn eps_pd(&self, norm: f64) -> f64 {
        self.eps_pd_rel * (1.0 + norm)
    }

    pub fn eps_rank(&self, largest_singular: f64) -> f64 {
        self.eps_rank_rel * (1.0 + largest_singular)
    }

    pub fn tol_recon(&self, max_abs_f: f64) -> f64 {
        self.tol_recon_rel * (1.0 + max_abs_f)
    }

    pub fn tol_global(&self, max_abs_f: f64) -> f64 {
        self.tol_global_rel * (1.0 + max_abs_f)
    }

    /// Every override must be positive.
    pub fn validate(&self) -> Result<(), String> {
        let reals = [
            ("tol_zero", self.tol_zero),
            ("tol_grad", self.tol_grad),
            ("eps_pd_rel", self.eps_pd_rel),
            ("eps_rank_rel", self.eps_rank_rel),
            ("tol_newton", self.tol_newton),
            ("tol_recon_rel", self.tol_recon_rel),
            ("tol_global_rel", self.tol_global_rel),
            ("r0", self.r0),
            ("r_min", self.r_min),
            ("delta_cover", self.delta_cover),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("tolerance `{name}` must be positive, got {v}"));
            }
        }
        if self.quad_nodes == 0 || self.newton_max_iter == 0 {
            return Err("`quad_nodes` and `newton_max_iter` must be positive".into());
        }
        if self.r_min > self.r0 {
            return Err("`r_min` must not exceed `r0`".into());
        }
        if self.delta_cover >= 1.0 {
            return Err("`delta_cover` must be below 1".into());
        }
        Ok(())
    }
}
