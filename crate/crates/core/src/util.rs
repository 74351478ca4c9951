/// Radical-inverse (van der Corput) value of `i` in `base`.
pub fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Low-discrepancy points in the unit cube of dimension `dims` (at most 4).
pub fn halton_points(n: usize, dims: usize) -> Vec<[f64; 4]> {
    const BASES: [usize; 4] = [2, 3, 5, 7];
    (1..=n)
        .map(|i| {
            let mut x = [0.0; 4];
            for d in 0..dims {
                x[d] = halton(i, BASES[d]);
            }
            x
        })
        .collect()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Geometric interpolation between `a` and `b` (`a` at `t = 0`); falls back
/// to linear when the endpoints differ in sign or one is zero.
pub fn geometric_path(a: f64, b: f64, t: f64) -> f64 {
    if t >= 1.0 {
        return b;
    }
    if a == b {
        return a;
    }
    if a > 0.0 && b > 0.0 {
        a * (b / a).powf(t)
    } else {
        a + (b - a) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_base_two() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
    }

    #[test]
    fn geometric_endpoints() {
        assert_eq!(geometric_path(1e-4, 0.08, 0.0), 1e-4);
        assert_eq!(geometric_path(1e-4, 0.08, 1.0), 0.08);
        assert!((geometric_path(1.0, 4.0, 0.5) - 2.0).abs() < 1e-15);
    }
}
