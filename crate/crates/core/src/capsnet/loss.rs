use crate::error::{bail, Result};

/// Margins of the capsule loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
}

impl Default for MarginLossConfig {
    fn default() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
        }
    }
}

impl MarginLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            bail!(
                Argument,
                "margins must satisfy 0 < m- < m+ < 1, got m-={} m+={}",
                self.m_minus,
                self.m_plus
            );
        }
        if !(self.lambda > 0.0) {
            bail!(Argument, "lambda must be positive, got {}", self.lambda);
        }
        Ok(())
    }
}

/// `Σ_k T_k·max(0, m⁺ − n_k)² + λ(1 − T_k)·max(0, n_k − m⁻)²` over capsule
/// lengths `n_k`.
pub fn margin_loss_from_norms(norms: &[f64], label: usize, cfg: &MarginLossConfig) -> Result<f64> {
    Ok(margin_terms(norms, label, cfg)?.0)
}

/// Loss and its derivative with respect to each capsule length.
pub(crate) fn margin_terms(
    norms: &[f64],
    label: usize,
    cfg: &MarginLossConfig,
) -> Result<(f64, alloc::vec::Vec<f64>)> {
    if label >= norms.len() {
        bail!(
            Argument,
            "label {label} out of range for {} classes",
            norms.len()
        );
    }
    let mut loss = 0.0;
    let mut grad = alloc::vec![0.0; norms.len()];
    for (k, &n) in norms.iter().enumerate() {
        if k == label {
            let gap = (cfg.m_plus - n).max(0.0);
            loss += gap * gap;
            grad[k] = -2.0 * gap;
        } else {
            let gap = (n - cfg.m_minus).max(0.0);
            loss += cfg.lambda * gap * gap;
            grad[k] = 2.0 * cfg.lambda * gap;
        }
    }
    Ok((loss, grad))
}
