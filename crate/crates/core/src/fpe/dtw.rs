//! Dynamic time warping with squared pointwise cost.

/// Full-alignment DTW with steps (1,0), (0,1), (1,1) and no window.
/// Returns 0 for two empty series and +∞ when exactly one is empty.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let d = x - b[j - 1];
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = d * d + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(dtw_distance(&[0.0, 0.0], &[1.0, 1.0]), 2.0);
        assert_eq!(dtw_distance(&[0.0, 1.0, 2.0], &[0.0, 0.0, 1.0, 2.0]), 0.0);
    }

    #[test]
    fn symmetric() {
        let a = [0.3, 1.2, -0.4, 2.0];
        let b = [1.0, 0.1, 0.5];
        assert_eq!(dtw_distance(&a, &b), dtw_distance(&b, &a));
    }
}
