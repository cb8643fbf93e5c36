use serde::{Deserialize, Serialize};

/// Per-dataset min-max statistics. A constant column gets range 1 and its
/// `*_degenerate` flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x_min: f64,
    pub x_range: f64,
    pub y_min: f64,
    pub y_range: f64,
    pub x_degenerate: bool,
    pub y_degenerate: bool,
}

fn min_range(values: &[f64]) -> (f64, f64, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0, true);
    }
    let range = hi - lo;
    if range > 0.0 {
        (lo, range, false)
    } else {
        (lo, 1.0, true)
    }
}

impl NormStats {
    pub fn identity() -> Self {
        Self { x_min: 0.0, x_range: 1.0, y_min: 0.0, y_range: 1.0, x_degenerate: false, y_degenerate: false }
    }

    pub fn from_data(xs: &[f64], ys: &[f64]) -> Self {
        let (x_min, x_range, x_degenerate) = min_range(xs);
        let (y_min, y_range, y_degenerate) = min_range(ys);
        Self { x_min, x_range, y_min, y_range, x_degenerate, y_degenerate }
    }

    #[inline]
    pub fn normalize_x(&self, x: f64) -> f64 {
        (x - self.x_min) / self.x_range
    }

    #[inline]
    pub fn normalize_y(&self, y: f64) -> f64 {
        (y - self.y_min) / self.y_range
    }

    #[inline]
    pub fn denormalize_y(&self, y_hat: f64) -> f64 {
        self.y_min + self.y_range * y_hat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_is_flagged() {
        let s = NormStats::from_data(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]);
        assert_eq!((s.x_min, s.x_range, s.x_degenerate), (1.0, 2.0, false));
        assert_eq!((s.y_min, s.y_range, s.y_degenerate), (4.0, 1.0, true));
        assert_eq!(s.normalize_x(3.0), 1.0);
        assert_eq!(s.denormalize_y(s.normalize_y(7.5)), 7.5);
    }
}
