//! Confidence intervals and curve crossings.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes out of `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wilson {
    pub lo: f64,
    pub hi: f64,
}

impl Wilson {
    pub fn new(k: u64, n: u64) -> Self {
        if n == 0 {
            return Wilson { lo: 0.0, hi: 1.0 };
        }
        let n = n as f64;
        let p = k as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        // The bounds are exact at the extremes; rounding would leave ~1e-19.
        let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
        let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
        Wilson { lo, hi }
    }

    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    pub fn overlaps(&self, other: &Wilson) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// SNR at which a falling error-rate curve crosses `target`, by linear
/// interpolation of `log10(rate)` between the bracketing sweep points.
/// Points with zero rate carry no log value and are skipped.
pub fn crossing_db(points: &[(f64, f64)], target: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, r)| r > 0.0).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2).find_map(|w| {
        let ((x0, r0), (x1, r1)) = (w[0], w[1]);
        if r0 >= target && r1 < target {
            let (l0, l1, lt) = (r0.log10(), r1.log10(), target.log10());
            Some(x0 + (lt - l0) / (l1 - l0) * (x1 - x0))
        } else {
            None
        }
    })
}
