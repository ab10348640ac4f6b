//! Step-wise learning-rate decay.

/// `lr(e) = base_lr * gamma^k` with `k` the number of milestones `<= e`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStep {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStep {
    pub fn new(base_lr: f64, milestones: Vec<usize>, gamma: f64) -> Self {
        MultiStep {
            base_lr,
            milestones,
            gamma,
        }
    }

    /// Learning rate for the 0-based `epoch`. Decays are applied by repeated
    /// multiplication, so `0.01` becomes exactly `0.001` and then `0.0001`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|&&m| m <= epoch)
            .fold(self.base_lr, |lr, _| lr * self.gamma)
    }
}
