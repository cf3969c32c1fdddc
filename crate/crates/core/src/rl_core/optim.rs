/// RMSProp with one second-moment entry per parameter:
/// `m ← α·m + (1-α)·g²`, `θ ← θ - lr·g / (√m + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub second_moment: Vec<f64>,
}

impl RmsProp {
    pub fn new(len: usize, lr: f64, decay: f64, eps: f64) -> Self {
        Self {
            lr,
            decay,
            eps,
            second_moment: vec![0.0; len],
        }
    }

    /// Applies one update in place. Lengths must agree.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length");
        assert_eq!(params.len(), self.second_moment.len(), "optimizer state length");
        let (a, lr, eps) = (self.decay, self.lr, self.eps);
        for ((p, m), &g) in params.iter_mut().zip(&mut self.second_moment).zip(grads) {
            *m = a * *m + (1.0 - a) * g * g;
            *p -= lr * g / (m.sqrt() + eps);
        }
    }
}
