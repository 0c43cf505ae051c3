/// Default band width: scores inside a band are clamped to `[0, B)`.
pub const DEFAULT_BAND_WIDTH: f64 = 1000.0;

/// A priority class and the robot's score within it.
///
/// Higher ranks dominate lower ones regardless of score; rank 0 is "no
/// priority" and encodes to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub rank: u32,
    pub score: f64,
}

impl Band {
    pub const NONE: Band = Band { rank: 0, score: 0.0 };

    pub fn new(rank: u32, score: f64) -> Self {
        Band { rank, score }
    }

    /// Scalar encoding `rank * width + clamp(score, 0, width - eps)`.
    pub fn encode(self, width: f64) -> f64 {
        if self.rank == 0 {
            return 0.0;
        }
        // eps large enough to survive rounding at rank * width magnitudes.
        let eps = width * 1e-9;
        let score = if self.score.is_nan() { 0.0 } else { self.score.clamp(0.0, width - eps) };
        self.rank as f64 * width + score
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_zero_is_zero() {
        assert_eq!(Band::new(0, 5.0).encode(DEFAULT_BAND_WIDTH), 0.0);
        assert!(Band::new(1, 0.0).encode(DEFAULT_BAND_WIDTH) > 0.0);
    }

    proptest! {
        #[test]
        fn encoding_preserves_lexicographic_order(
            r1 in 0u32..5, s1 in 0.0f64..2000.0,
            r2 in 0u32..5, s2 in 0.0f64..2000.0,
        ) {
            let w = DEFAULT_BAND_WIDTH;
            let (a, b) = (Band::new(r1, s1), Band::new(r2, s2));
            let (ea, eb) = (a.encode(w), b.encode(w));
            prop_assert!(ea >= 0.0 && eb >= 0.0);
            if r1 > r2 && r1 > 0 {
                prop_assert!(ea > eb);
            }
            if r1 == r2 && r1 > 0 {
                let ca = s1.min(w - w * 1e-9);
                let cb = s2.min(w - w * 1e-9);
                prop_assert_eq!(ca.partial_cmp(&cb), ea.partial_cmp(&eb));
            }
        }
    }
}
