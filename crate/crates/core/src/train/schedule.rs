use serde::{Deserialize, Serialize};

/// What the cosine schedule does once `t_max` epochs have passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CosineMode {
    /// Jump back to the base rate every `t_max` epochs.
    #[default]
    Restart,
    /// Stay at `eta_min` from epoch `t_max` on.
    Clamp,
}

/// `eta_min + (base - eta_min) * (1 + cos(pi * e' / t_max)) / 2`, with
/// `e' = epoch mod t_max` (restart) or `min(epoch, t_max)` (clamp).
pub fn cosine_lr(epoch: usize, base_lr: f64, eta_min: f64, t_max: usize, mode: CosineMode) -> f64 {
    if t_max == 0 {
        return base_lr;
    }
    let phase = match mode {
        CosineMode::Restart => epoch % t_max,
        CosineMode::Clamp => epoch.min(t_max),
    };
    let cos = (std::f64::consts::PI * phase as f64 / t_max as f64).cos();
    eta_min + 0.5 * (base_lr - eta_min) * (1.0 + cos)
}
