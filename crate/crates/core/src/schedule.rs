//! Learning rate schedule.

/// Triangular cyclical learning rate: rises linearly from `lr_min` to
/// `lr_max` over `half_cycle` steps, falls back over the next `half_cycle`,
/// and repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicalLr {
    pub lr_min: f64,
    pub lr_max: f64,
    pub half_cycle: usize,
}

impl CyclicalLr {
    pub fn at(&self, step: usize) -> f64 {
        let half = self.half_cycle.max(1);
        let pos = step % (2 * half);
        let frac = if pos <= half {
            pos as f64 / half as f64
        } else {
            (2 * half - pos) as f64 / half as f64
        };
        self.lr_min + (self.lr_max - self.lr_min) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_shape() {
        let s = CyclicalLr {
            lr_min: 1e-4,
            lr_max: 1e-3,
            half_cycle: 10,
        };
        assert_eq!(s.at(0), 1e-4);
        assert!((s.at(10) - 1e-3).abs() < 1e-18);
        assert!((s.at(5) - 5.5e-4).abs() < 1e-15);
        assert!((s.at(15) - 5.5e-4).abs() < 1e-15);
        assert_eq!(s.at(20), 1e-4);
    }
}
