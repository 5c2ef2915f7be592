//! Pointwise maps, row softmax, and small reductions.

use crate::autodiff::array::NdArray;
use crate::par;

const PAR_THRESHOLD: usize = 1 << 14;

pub fn unary(x: &NdArray, f: impl Fn(f64) -> f64 + Sync) -> NdArray {
    let xd = x.data();
    let mut out = NdArray::zeros(x.shape().to_vec());
    let n = out.len();
    if n >= PAR_THRESHOLD {
        let chunk = n.div_ceil(64).max(1);
        par::for_each_chunk_mut(out.data_mut(), chunk, |ci, o| {
            let base = ci * chunk;
            for (i, v) in o.iter_mut().enumerate() {
                *v = f(xd[base + i]);
            }
        });
    } else {
        for (o, &v) in out.data_mut().iter_mut().zip(xd) {
            *o = f(v);
        }
    }
    out
}

pub fn binary(a: &NdArray, b: &NdArray, f: impl Fn(f64, f64) -> f64 + Sync) -> NdArray {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let ad = a.data();
    let bd = b.data();
    let mut out = NdArray::zeros(a.shape().to_vec());
    let n = out.len();
    if n >= PAR_THRESHOLD {
        let chunk = n.div_ceil(64).max(1);
        par::for_each_chunk_mut(out.data_mut(), chunk, |ci, o| {
            let base = ci * chunk;
            for (i, v) in o.iter_mut().enumerate() {
                *v = f(ad[base + i], bd[base + i]);
            }
        });
    } else {
        for i in 0..n {
            out.data_mut()[i] = f(ad[i], bd[i]);
        }
    }
    out
}

/// Gaussian error function CDF, the exact GELU gate.
pub fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn gauss_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * gauss_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    gauss_cdf(x) + x * gauss_pdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row softmax over the last axis. `-inf` entries map to exactly zero.
pub fn softmax_rows(x: &NdArray) -> NdArray {
    let c = *x.shape().last().expect("softmax needs rank >= 1");
    let xd = x.data();
    let mut y = NdArray::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(y.data_mut(), c, |r, yrow| {
        let xrow = &xd[r * c..(r + 1) * c];
        let mut max = f64::NEG_INFINITY;
        for &v in xrow {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for i in 0..c {
            let e = (xrow[i] - max).exp();
            yrow[i] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for v in yrow.iter_mut() {
            *v *= inv;
        }
    });
    y
}

/// Backward for softmax given its own output: `dx = y * (dy - sum(dy * y))`.
pub fn softmax_rows_grad(grad_out: &NdArray, y: &NdArray) -> NdArray {
    let c = *y.shape().last().unwrap();
    let gd = grad_out.data();
    let yd = y.data();
    let mut dx = NdArray::zeros(y.shape().to_vec());
    par::for_each_chunk_mut(dx.data_mut(), c, |r, dxrow| {
        let yrow = &yd[r * c..(r + 1) * c];
        let grow = &gd[r * c..(r + 1) * c];
        let mut dot = 0.0;
        for i in 0..c {
            dot += grow[i] * yrow[i];
        }
        for i in 0..c {
            dxrow[i] = yrow[i] * (grow[i] - dot);
        }
    });
    dx
}

/// Row log-softmax over the last axis.
pub fn log_softmax_rows(x: &NdArray) -> NdArray {
    let c = *x.shape().last().unwrap();
    let xd = x.data();
    let mut y = NdArray::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(y.data_mut(), c, |r, yrow| {
        let xrow = &xd[r * c..(r + 1) * c];
        let mut max = f64::NEG_INFINITY;
        for &v in xrow {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for &v in xrow {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        for i in 0..c {
            yrow[i] = xrow[i] - lse;
        }
    });
    y
}

/// Backward for log-softmax given its own output:
/// `dx = dy - softmax * sum(dy)` where `softmax = exp(y)`.
pub fn log_softmax_rows_grad(grad_out: &NdArray, y: &NdArray) -> NdArray {
    let c = *y.shape().last().unwrap();
    let gd = grad_out.data();
    let yd = y.data();
    let mut dx = NdArray::zeros(y.shape().to_vec());
    par::for_each_chunk_mut(dx.data_mut(), c, |r, dxrow| {
        let yrow = &yd[r * c..(r + 1) * c];
        let grow = &gd[r * c..(r + 1) * c];
        let mut sum = 0.0;
        for &g in grow {
            sum += g;
        }
        for i in 0..c {
            dxrow[i] = grow[i] - yrow[i].exp() * sum;
        }
    });
    dx
}

/// Sum of all elements, fixed left-to-right order.
pub fn sum_all(x: &NdArray) -> f64 {
    let mut acc = 0.0;
    for &v in x.data() {
        acc += v;
    }
    acc
}

/// Broadcast-add of a `[C]` vector over the last axis of `x`.
pub fn add_rowvec(x: &NdArray, v: &NdArray) -> NdArray {
    let c = *x.shape().last().unwrap();
    assert_eq!(v.len(), c, "row vector length mismatch");
    let xd = x.data();
    let vd = v.data();
    let mut out = NdArray::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(out.data_mut(), c, |r, orow| {
        let xrow = &xd[r * c..(r + 1) * c];
        for i in 0..c {
            orow[i] = xrow[i] + vd[i];
        }
    });
    out
}

/// Gradient of `add_rowvec` w.r.t. the vector: column sums of `grad_out`.
pub fn rowvec_grad(grad_out: &NdArray) -> NdArray {
    let c = *grad_out.shape().last().unwrap();
    let rows = grad_out.len() / c;
    let gd = grad_out.data();
    let mut dv = NdArray::zeros(vec![c]);
    for r in 0..rows {
        for i in 0..c {
            dv.data_mut()[i] += gd[r * c + i];
        }
    }
    dv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one_and_handle_neg_inf() {
        let x = NdArray::new(vec![1, 3], vec![0.0, 1.0, f64::NEG_INFINITY]);
        let y = softmax_rows(&x);
        assert_eq!(y.data()[2], 0.0);
        let s: f64 = y.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // phi-based GELU at 0 is 0; at large x approaches x
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        // gelu(1) = 1 * Phi(1) with Phi(1) ~ 0.841344746
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(100.0) - 100.0).abs() < 1e-9);
        assert!(softplus(-100.0) > 0.0);
        assert!(softplus(-100.0) < 1e-40);
    }

    #[test]
    fn sum_all_is_left_to_right() {
        let x = NdArray::new(vec![3], vec![1.0, 2.0, 3.0]);
        assert_eq!(sum_all(&x), 6.0);
    }
}
