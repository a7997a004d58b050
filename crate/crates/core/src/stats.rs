//! Mergeable streaming moments (count / mean / M2).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

/// Standard deviation floor used for z-scoring.
pub const STD_FLOOR: f64 = 1e-6;

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, values: I) {
        for v in values {
            self.push(v);
        }
    }

    /// Chan et al. pairwise combination; associative up to rounding.
    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        RunningStats {
            count: n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn band_stats(&self) -> BandStats {
        BandStats {
            mean: self.mean,
            std: self.variance().sqrt().max(STD_FLOOR),
        }
    }
}

/// Per-band z-score parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: f64,
    pub std: f64,
}

impl BandStats {
    #[inline]
    pub fn normalize(&self, v: f32) -> f32 {
        ((v as f64 - self.mean) / self.std) as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_band_gets_std_floor() {
        let mut s = RunningStats::default();
        s.extend(std::iter::repeat(3.25).take(1000));
        let b = s.band_stats();
        assert_eq!(b.mean, 3.25);
        assert_eq!(b.std, STD_FLOOR);
    }

    proptest! {
        #[test]
        fn merge_order_does_not_matter(xs in proptest::collection::vec(-1e3f64..1e3, 3..200), cut1 in 0usize..100, cut2 in 0usize..100) {
            let n = xs.len();
            let (a, b) = (cut1.min(n), cut2.min(n));
            let (lo, hi) = (a.min(b), a.max(b));
            let chunk = |r: &[f64]| { let mut s = RunningStats::default(); s.extend(r.iter().copied()); s };
            let (p, q, r) = (chunk(&xs[..lo]), chunk(&xs[lo..hi]), chunk(&xs[hi..]));
            let left = p.merge(&q).merge(&r);
            let right = r.merge(&p.merge(&q));
            let serial = chunk(&xs);
            prop_assert_eq!(left.count, serial.count);
            prop_assert!((left.mean - serial.mean).abs() <= 1e-9 * (1.0 + serial.mean.abs()));
            prop_assert!((left.variance() - right.variance()).abs() <= 1e-9 * (1.0 + serial.variance()));
            prop_assert!((left.variance() - serial.variance()).abs() <= 1e-9 * (1.0 + serial.variance()));
        }
    }
}
