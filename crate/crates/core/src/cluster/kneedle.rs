use super::{ClusterError, Result};

/// Below this the difference curve is treated as zero (no curvature).
const FLAT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Knee {
    pub index: usize,
    pub x: f64,
    /// Set when no local maximum of the difference curve passed the
    /// sensitivity test; `index` is then the global maximum of the curve.
    pub weak: bool,
    pub difference: Vec<f64>,
}

/// Offline kneedle for a decreasing convex curve.
///
/// Both axes are min-max normalized, `y` is inverted, and the difference
/// curve `d = y_inv - x_norm` is scanned. A local maximum of `d` becomes the
/// knee once `d` falls below `d_max - sensitivity * mean(diff(x_norm))`
/// before the next local maximum. The first confirmed knee is returned.
pub fn kneedle(xs: &[f64], ys: &[f64], sensitivity: f64) -> Result<Knee> {
    let n = xs.len();
    if n < 3 {
        return Err(ClusterError::TooFew { needed: 3, got: n });
    }
    if ys.len() != n {
        return Err(ClusterError::Invalid(format!("{n} xs but {} ys", ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(ClusterError::Invalid("non-finite curve value".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ClusterError::Invalid("xs must be strictly increasing".into()));
    }
    if !(sensitivity.is_finite() && sensitivity >= 0.0) {
        return Err(ClusterError::Invalid(format!("sensitivity must be >= 0, got {sensitivity}")));
    }
    let (x0, x1) = (xs[0], xs[n - 1]);
    let (ymin, ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    let xn: Vec<f64> = xs.iter().map(|x| (x - x0) / (x1 - x0)).collect();
    let difference: Vec<f64> = if ymax > ymin {
        ys.iter().zip(&xn).map(|(y, x)| (ymax - y) / (ymax - ymin) - x).collect()
    } else {
        vec![0.0; n]
    };
    let d = &difference;
    let maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| d[i] > FLAT && d[i] > d[i - 1] && d[i] >= d[i + 1])
        .collect();
    let step = xn.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (n - 1) as f64;
    for (m, &i) in maxima.iter().enumerate() {
        let threshold = d[i] - sensitivity * step;
        let stop = maxima.get(m + 1).copied().unwrap_or(n);
        if (i + 1..stop).any(|j| d[j] < threshold) {
            return Ok(Knee {
                index: i,
                x: xs[i],
                weak: false,
                difference,
            });
        }
    }
    let mut best = 0;
    for i in 1..n {
        if d[i] > d[best] {
            best = i;
        }
    }
    Ok(Knee {
        index: best,
        x: xs[best],
        weak: true,
        difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(a: usize, b: usize) -> Vec<f64> {
        (a..=b).map(|v| v as f64).collect()
    }

    #[test]
    fn hyperbola_knee_at_three() {
        let xs = range(1, 9);
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 / x).collect();
        let k = kneedle(&xs, &ys, 1.0).unwrap();
        assert_eq!(k.x, 3.0);
        assert!(!k.weak);
    }

    #[test]
    fn linear_curve_is_weak() {
        let xs = range(1, 9);
        let ys: Vec<f64> = xs.iter().map(|x| 20.0 - 2.0 * x).collect();
        let k = kneedle(&xs, &ys, 1.0).unwrap();
        assert!(k.weak);
        assert!(k.difference.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn two_segment_elbow() {
        // steep line down to x=4, then shallow
        let xs = range(1, 10);
        let ys: Vec<f64> = xs.iter().map(|&x| if x <= 4.0 { 100.0 - 25.0 * (x - 1.0) } else { 25.0 - 2.0 * (x - 4.0) }).collect();
        let k = kneedle(&xs, &ys, 1.0).unwrap();
        assert_eq!(k.x, 4.0);
        assert!(!k.weak);
    }

    #[test]
    fn constant_curve_is_weak() {
        let k = kneedle(&range(1, 5), &[3.0; 5], 1.0).unwrap();
        assert!(k.weak);
        assert_eq!(k.index, 0);
    }

    #[test]
    fn preconditions() {
        assert!(kneedle(&[1.0, 2.0], &[2.0, 1.0], 1.0).is_err());
        assert!(kneedle(&[1.0, 1.0, 2.0], &[3.0, 2.0, 1.0], 1.0).is_err());
        assert!(kneedle(&[1.0, 2.0, 3.0], &[3.0, 2.0], 1.0).is_err());
    }
}
