//! Adam optimizer with bias correction.

use crate::gradcore::{GradError, Tensor};

/// Per-parameter first/second moment accumulators plus the step counter.
///
/// The state is index-aligned with the parameter list it was created from;
/// `t` increments by exactly one per [`AdamState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor], beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { beta1, beta2, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected update of `params` in place.
    ///
    /// Rejects non-finite gradient entries, identifying the offending
    /// parameter by its index in the list.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<(), GradError> {
        assert!(lr > 0.0, "learning rate must be positive");
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len(), "state built for a different parameter list");
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(GradError::ShapeMismatch {
                    prim: "adam_step",
                    detail: format!(
                        "parameter {index}: {:?} vs gradient {:?}",
                        p.shape(),
                        g.shape()
                    ),
                });
            }
            if !g.all_finite() {
                return Err(GradError::NonFiniteGrad { index });
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
            for ((pv, &gv), (mv, vv)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
