//! Row normalization: layer norm over the last axis and instance norm over
//! spatial positions, with saved (mean, inv_std) for the backward pass.

use crate::autodiff::array::NdArray;
use crate::par;

fn row_stats(xd: &[f64], rows: usize, width: usize, eps: f64) -> (NdArray, NdArray) {
    let mut mean = NdArray::zeros(vec![rows]);
    let mut inv_std = NdArray::zeros(vec![rows]);
    for r in 0..rows {
        let xrow = &xd[r * width..(r + 1) * width];
        let mut mu = 0.0;
        for &v in xrow {
            mu += v;
        }
        mu /= width as f64;
        let mut var = 0.0;
        for &v in xrow {
            let d = v - mu;
            var += d * d;
        }
        var /= width as f64;
        mean.data_mut()[r] = mu;
        inv_std.data_mut()[r] = 1.0 / (var + eps).sqrt();
    }
    (mean, inv_std)
}

/// Layer norm over the last axis: `y = (x - mean) / sqrt(var + eps) * gamma + beta`
/// with population variance. Returns `(y, mean[R], inv_std[R])`.
pub fn layer_norm(
    x: &NdArray,
    gamma: &NdArray,
    beta: &NdArray,
    eps: f64,
) -> (NdArray, NdArray, NdArray) {
    let c = *x.shape().last().expect("layer_norm needs rank >= 1");
    assert_eq!(gamma.len(), c);
    assert_eq!(beta.len(), c);
    let rows = x.len() / c;
    let xd = x.data();
    let (mean, inv_std) = row_stats(xd, rows, c, eps);
    let gd = gamma.data();
    let bd = beta.data();
    let mut y = NdArray::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(y.data_mut(), c, |r, yrow| {
        let xrow = &xd[r * c..(r + 1) * c];
        let mu = mean.data()[r];
        let inv = inv_std.data()[r];
        for i in 0..c {
            yrow[i] = (xrow[i] - mu) * inv * gd[i] + bd[i];
        }
    });
    (y, mean, inv_std)
}

/// Backward for `layer_norm`; returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_grad(
    grad_out: &NdArray,
    x: &NdArray,
    gamma: &NdArray,
    mean: &NdArray,
    inv_std: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let c = *x.shape().last().unwrap();
    let rows = x.len() / c;
    let xd = x.data();
    let gd = grad_out.data();
    let gammad = gamma.data();
    let mut dx = NdArray::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(dx.data_mut(), c, |r, dxrow| {
        let xrow = &xd[r * c..(r + 1) * c];
        let grow = &gd[r * c..(r + 1) * c];
        let mu = mean.data()[r];
        let inv = inv_std.data()[r];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..c {
            let xhat = (xrow[i] - mu) * inv;
            let dxhat = grow[i] * gammad[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let n = c as f64;
        for i in 0..c {
            let xhat = (xrow[i] - mu) * inv;
            let dxhat = grow[i] * gammad[i];
            dxrow[i] = inv / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    });
    let mut dgamma = NdArray::zeros(vec![c]);
    let mut dbeta = NdArray::zeros(vec![c]);
    for r in 0..rows {
        let mu = mean.data()[r];
        let inv = inv_std.data()[r];
        for i in 0..c {
            let xhat = (xd[r * c + i] - mu) * inv;
            dgamma.data_mut()[i] += gd[r * c + i] * xhat;
            dbeta.data_mut()[i] += gd[r * c + i];
        }
    }
    (dx, dgamma, dbeta)
}

/// Instance norm for `[C, X, Y, Z]`: normalize each channel over its spatial
/// positions, then apply the per-channel affine. Returns `(y, mean[C], inv_std[C])`.
pub fn instance_norm(
    x: &NdArray,
    gamma: &NdArray,
    beta: &NdArray,
    eps: f64,
) -> (NdArray, NdArray, NdArray) {
    let c = x.shape()[0];
    let s: usize = x.shape()[1..].iter().product();
    assert_eq!(gamma.len(), c);
    let xd = x.data();
    let (mean, inv_std) = row_stats(xd, c, s, eps);
    let gd = gamma.data();
    let bd = beta.data();
    let mut y = NdArray::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(y.data_mut(), s, |r, yrow| {
        let xrow = &xd[r * s..(r + 1) * s];
        let mu = mean.data()[r];
        let inv = inv_std.data()[r];
        let (g, b) = (gd[r], bd[r]);
        for i in 0..s {
            yrow[i] = (xrow[i] - mu) * inv * g + b;
        }
    });
    (y, mean, inv_std)
}

/// Backward for `instance_norm`; returns `(dx, dgamma, dbeta)`.
pub fn instance_norm_grad(
    grad_out: &NdArray,
    x: &NdArray,
    gamma: &NdArray,
    mean: &NdArray,
    inv_std: &NdArray,
) -> (NdArray, NdArray, NdArray) {
    let c = x.shape()[0];
    let s: usize = x.shape()[1..].iter().product();
    let xd = x.data();
    let gd = grad_out.data();
    let mut dx = NdArray::zeros(x.shape().to_vec());
    let mut dgamma = NdArray::zeros(vec![c]);
    let mut dbeta = NdArray::zeros(vec![c]);
    par::for_each_chunk_mut(dx.data_mut(), s, |r, dxrow| {
        let xrow = &xd[r * s..(r + 1) * s];
        let grow = &gd[r * s..(r + 1) * s];
        let mu = mean.data()[r];
        let inv = inv_std.data()[r];
        let g = gamma.data()[r];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..s {
            let xhat = (xrow[i] - mu) * inv;
            let dxhat = grow[i] * g;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let n = s as f64;
        for i in 0..s {
            let xhat = (xrow[i] - mu) * inv;
            let dxhat = grow[i] * g;
            dxrow[i] = inv / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
        }
    });
    for r in 0..c {
        let mu = mean.data()[r];
        let inv = inv_std.data()[r];
        let mut dg = 0.0;
        let mut db = 0.0;
        for i in 0..s {
            let xhat = (xd[r * s + i] - mu) * inv;
            dg += gd[r * s + i] * xhat;
            db += gd[r * s + i];
        }
        dgamma.data_mut()[r] = dg;
        dbeta.data_mut()[r] = db;
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rows_normalize_to_beta() {
        // zero variance: epsilon damps the division, (x - mu) = 0 -> y = beta
        let x = NdArray::filled(vec![2, 4], 7.0);
        let g = NdArray::filled(vec![4], 1.0);
        let b = NdArray::zeros(vec![4]);
        let (y, _, _) = layer_norm(&x, &g, &b, 1e-5);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_row_normalizes_to_unit_pair() {
        // [1,3]: mean 2, population std 1 -> [-1, 1] as eps -> 0
        let x = NdArray::new(vec![1, 2], vec![1.0, 3.0]);
        let g = NdArray::filled(vec![2], 1.0);
        let b = NdArray::zeros(vec![2]);
        let (y, _, _) = layer_norm(&x, &g, &b, 1e-14);
        assert!((y.data()[0] + 1.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn affine_applies_after_normalization() {
        let x = NdArray::new(vec![1, 2], vec![1.0, 3.0]);
        let g = NdArray::filled(vec![2], 2.0);
        let b = NdArray::filled(vec![2], 1.0);
        let (y, _, _) = layer_norm(&x, &g, &b, 1e-14);
        assert!((y.data()[0] + 1.0).abs() < 1e-6); // 2*(-1)+1
        assert!((y.data()[1] - 3.0).abs() < 1e-6); // 2*(+1)+1
    }

    #[test]
    fn moments_near_zero_one_for_spread_input() {
        let x = NdArray::new(vec![1, 5], vec![0.3, -1.2, 2.0, 0.7, -0.4]);
        let g = NdArray::filled(vec![5], 1.0);
        let b = NdArray::zeros(vec![5]);
        let (y, _, _) = layer_norm(&x, &g, &b, 1e-12);
        let mu: f64 = y.data().iter().sum::<f64>() / 5.0;
        let var: f64 = y.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 5.0;
        assert!(mu.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn instance_norm_normalizes_each_channel() {
        let x = NdArray::new(
            vec![2, 1, 1, 4],
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 20.0, 20.0],
        );
        let g = NdArray::filled(vec![2], 1.0);
        let b = NdArray::zeros(vec![2]);
        let (y, _, _) = instance_norm(&x, &g, &b, 1e-12);
        for ch in 0..2 {
            let row = &y.data()[ch * 4..(ch + 1) * 4];
            let mu: f64 = row.iter().sum::<f64>() / 4.0;
            assert!(mu.abs() < 1e-9);
        }
    }
}
