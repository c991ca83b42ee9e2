//! Stochastic gradient descent with heavy-ball momentum.

use super::model::Param;

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(params: &[Param], momentum: f32) -> Self {
        Self {
            momentum,
            velocity: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// `v ← μ·v + g`, `θ ← θ − lr·v`.
    pub fn step(&mut self, params: &mut [Param], grads: &[Vec<f32>], lr: f32) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((x, &gi), vi) in p.value.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *x -= lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_accumulates() {
        let mut params = vec![Param {
            name: "x".into(),
            shape: vec![1],
            value: vec![1.0],
        }];
        let mut opt = Sgd::new(&params, 0.5);
        opt.step(&mut params, &[vec![1.0]], 0.1);
        assert!((params[0].value[0] - 0.9).abs() < 1e-7);
        opt.step(&mut params, &[vec![1.0]], 0.1);
        // v = 0.5 + 1 = 1.5
        assert!((params[0].value[0] - 0.75).abs() < 1e-7);
    }
}
