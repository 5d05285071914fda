//! Central finite-difference checks of analytic gradients.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Params, Real};

/// Denominator floor of [`relative_error`]; below it errors are absolute.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest error, with its finite-difference and
    /// analytic values.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheck {
    pub fn merge(mut self, other: GradCheck) -> GradCheck {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self
    }
}

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(REL_FLOOR)
}

/// Compares `analytic[i]` with `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// `i` in `coords`.
pub fn check_coords(
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut probe = x.to_vec();
    for &i in coords {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = relative_error(fd, analytic[i]);
        out.checked += 1;
        if err > out.max_rel_err || out.worst.is_none() {
            out.max_rel_err = out.max_rel_err.max(err);
            out.worst = Some((i, fd, analytic[i]));
        }
    }
    out
}

/// Flat index range of every trainable tensor, in visit order.
pub fn tensor_ranges<T: Real, P: Params<T> + ?Sized>(p: &P) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut offset = 0;
    p.for_each("", &mut |name, _, s| {
        out.push((name.to_string(), offset..offset + s.len()));
        offset += s.len();
    });
    out
}

/// `n` distinct indices below `len` (all of them when `len <= n`), sorted.
pub fn sample_coords(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx = if len <= n {
        (0..len).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), len, n).into_vec()
    };
    idx.sort_unstable();
    idx
}

/// `n` coordinates spread as evenly as possible over the given tensors.
pub fn stratified_coords(ranges: &[(String, Range<usize>)], n: usize, seed: u64) -> Vec<usize> {
    // small tensors first, so their unused share passes to larger ones
    let mut order: Vec<usize> = (0..ranges.len()).collect();
    order.sort_by_key(|&k| ranges[k].1.len());
    let mut out = Vec::with_capacity(n);
    let mut left = n;
    for (done, &k) in order.iter().enumerate() {
        let r = &ranges[k].1;
        let share = left.div_ceil(ranges.len() - done).min(r.len());
        out.extend(sample_coords(r.len(), share, seed.wrapping_add(k as u64)).into_iter().map(|i| r.start + i));
        left -= share;
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes_and_wrong_one_fails() {
        let x = [0.5, -1.0, 2.0];
        let f = |v: &[f64]| v.iter().map(|a| a * a * a).sum::<f64>();
        let good: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        let r = check_coords(&x, &good, &[0, 1, 2], 1e-5, f);
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8);
        let bad = [good[0], good[1] * 1.01, good[2]];
        let r = check_coords(&x, &bad, &[0, 1, 2], 1e-5, f);
        assert_eq!(r.worst.unwrap().0, 1);
        assert!(r.max_rel_err > 5e-3);
    }

    #[test]
    fn coordinate_sampling() {
        let s = sample_coords(1000, 10, 3);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_coords(4, 10, 3), vec![0, 1, 2, 3]);
        let ranges = vec![("a".to_string(), 0..3), ("b".to_string(), 3..100), ("c".to_string(), 100..101)];
        let c = stratified_coords(&ranges, 20, 0);
        assert_eq!(c.len(), 20);
        assert_eq!(c.iter().filter(|&&i| i < 3).count(), 3);
        assert!(c.contains(&100));
    }
}
