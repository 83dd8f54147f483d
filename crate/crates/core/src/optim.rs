//! SGD with classical momentum.

use alloc::vec::Vec;

#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: Vec::new() }
    }

    /// `v = momentum * v + grad; param -= lr * v` for parameter tensor `slot`.
    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        assert_eq!(param.len(), grad.len());
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, Vec::new());
        }
        let v = &mut self.velocity[slot];
        if v.len() != param.len() {
            *v = alloc::vec![0.0; param.len()];
        }
        for ((p, vi), g) in param.iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = self.momentum * *vi + g;
            *p -= self.lr * *vi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_accumulates() {
        let mut opt = SgdMomentum::new(0.1, 0.9);
        let mut p = [1.0];
        opt.update(0, &mut p, &[1.0]);
        assert!((p[0] - 0.9).abs() < 1e-15);
        opt.update(0, &mut p, &[1.0]);
        assert!((p[0] - (0.9 - 0.19)).abs() < 1e-15);
    }
}
