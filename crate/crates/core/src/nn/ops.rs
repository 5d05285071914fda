//! Scalar activation functions and their derivatives.

use ndarray::{Array2, ArrayView2, Axis};

use super::Real;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)` with `Phi` the standard normal CDF.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let v = x.f64();
    T::of(0.5 * v * (1.0 + libm::erf(v * FRAC_1_SQRT_2)))
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let v = x.f64();
    let cdf = 0.5 * (1.0 + libm::erf(v * FRAC_1_SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * (-0.5 * v * v).exp();
    T::of(cdf + v * pdf)
}

/// Logistic sigmoid evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Row-wise softmax.
pub fn softmax_rows<T: Real>(x: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Backward of a row-wise softmax given its output `p` and upstream `dp`.
pub fn softmax_rows_backward<T: Real>(p: ArrayView2<'_, T>, dp: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((prow, dprow), mut orow) in p
        .axis_iter(Axis(0))
        .zip(dp.axis_iter(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        let dot: T = prow.iter().zip(dprow.iter()).map(|(&a, &b)| a * b).sum();
        for ((o, &pv), &dv) in orow.iter_mut().zip(prow.iter()).zip(dprow.iter()) {
            *o = pv * (dv - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // Phi(1) = 0.841344746...
        assert!((gelu(1.0f64) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(1.0f64) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(sigmoid(-1e4f64), 0.0);
        assert_eq!(sigmoid(1e4f64), 1.0);
    }

    #[test]
    fn softmax_backward_matches_finite_difference() {
        let x = array![[0.3, -1.0, 2.0], [0.0, 0.5, -0.5]];
        let w = array![[1.0, 2.0, -1.0], [0.5, -0.3, 0.7]];
        let loss = |x: &Array2<f64>| (softmax_rows(x.view()) * &w).sum();
        let p = softmax_rows(x.view());
        let dx = softmax_rows_backward(p.view(), w.view());
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let fd = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((fd - dx[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
