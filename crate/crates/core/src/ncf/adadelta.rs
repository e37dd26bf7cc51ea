use serde::{Deserialize, Serialize};

/// Adadelta with unit learning rate.
///
/// ```text
/// E[g²] ← ρ E[g²] + (1−ρ) g²
/// Δx    = −√(E[Δx²] + ε) / √(E[g²] + ε) · g
/// E[Δx²]← ρ E[Δx²] + (1−ρ) Δx²
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adadelta {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for Adadelta {
    fn default() -> Self {
        Adadelta {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl Adadelta {
    pub fn step(&self, params: &mut [f64], grads: &[f64], grad_sq: &mut [f64], update_sq: &mut [f64]) {
        debug_assert!(params.len() == grads.len() && grads.len() == grad_sq.len());
        let (rho, eps) = (self.rho, self.epsilon);
        for (((p, &g), eg), edx) in params
            .iter_mut()
            .zip(grads)
            .zip(grad_sq.iter_mut())
            .zip(update_sq.iter_mut())
        {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let dx = -((*edx + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *edx = rho * *edx + (1.0 - rho) * dx * dx;
            *p += dx;
        }
    }
}
