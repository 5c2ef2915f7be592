//! Dense matrix products. Batched, row-parallel, fixed inner summation order
//! so parallel and sequential runs agree bit for bit.

use crate::autodiff::array::NdArray;
use crate::par;

/// `a [B,M,K] @ b [B,K,N] -> [B,M,N]`, or `a @ b^T` with `b [B,N,K]` when
/// `transpose_b` is set.
pub fn bmm(a: &NdArray, b: &NdArray, transpose_b: bool) -> NdArray {
    let (bs, m, k) = dims3(a.shape());
    let (bs2, bn0, bn1) = dims3(b.shape());
    assert_eq!(bs, bs2, "bmm batch mismatch");
    let n = if transpose_b {
        assert_eq!(bn1, k, "bmm inner mismatch");
        bn0
    } else {
        assert_eq!(bn0, k, "bmm inner mismatch");
        bn1
    };
    let ad = a.data();
    let bd = b.data();
    let mut out = NdArray::zeros(vec![bs, m, n]);
    par::for_each_chunk_mut(out.data_mut(), n, |row, out_row| {
        let bi = row / m;
        let mi = row % m;
        let a_row = &ad[(bi * m + mi) * k..(bi * m + mi + 1) * k];
        if transpose_b {
            // out[ni] = dot(a_row, b[bi, ni, :])
            for (ni, o) in out_row.iter_mut().enumerate() {
                let b_row = &bd[(bi * n + ni) * k..(bi * n + ni + 1) * k];
                let mut acc = 0.0;
                for (av, bv) in a_row.iter().zip(b_row) {
                    acc += av * bv;
                }
                *o = acc;
            }
        } else {
            for (ki, &av) in a_row.iter().enumerate() {
                let b_row = &bd[(bi * k + ki) * n..(bi * k + ki + 1) * n];
                for (o, bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    });
    out
}

/// `out[b,p,q] = sum_m x[b,m,p] * y[b,m,q]`, i.e. `x^T @ y` per batch.
/// This is the shared shape of both weight-side gradients of `bmm`.
pub fn bmm_at(x: &NdArray, y: &NdArray) -> NdArray {
    let (bs, m, p) = dims3(x.shape());
    let (bs2, m2, q) = dims3(y.shape());
    assert_eq!(bs, bs2);
    assert_eq!(m, m2);
    let xd = x.data();
    let yd = y.data();
    let mut out = NdArray::zeros(vec![bs, p, q]);
    par::for_each_chunk_mut(out.data_mut(), q, |row, out_row| {
        let bi = row / p;
        let pi = row % p;
        for mi in 0..m {
            let xv = xd[(bi * m + mi) * p + pi];
            let y_row = &yd[(bi * m + mi) * q..(bi * m + mi + 1) * q];
            for (o, yv) in out_row.iter_mut().zip(y_row) {
                *o += xv * yv;
            }
        }
    });
    out
}

/// 2-D convenience: `a [M,K] @ b [K,N] -> [M,N]`.
pub fn matmul(a: &NdArray, b: &NdArray) -> NdArray {
    let (m, k) = dims2(a.shape());
    let (k2, n) = dims2(b.shape());
    assert_eq!(k, k2, "matmul inner mismatch");
    let a3 = a.clone().reshaped(vec![1, m, k]);
    let b3 = b.clone().reshaped(vec![1, k2, n]);
    bmm(&a3, &b3, false).reshaped(vec![m, n])
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    assert_eq!(s.len(), 3, "expected rank-3 shape, got {:?}", s);
    (s[0], s[1], s[2])
}

fn dims2(s: &[usize]) -> (usize, usize) {
    assert_eq!(s.len(), 2, "expected rank-2 shape, got {:?}", s);
    (s[0], s[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bmm_matches_hand_product() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = NdArray::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = NdArray::new(vec![1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let c = bmm(&a, &b, false);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn bmm_transpose_b_matches_plain() {
        let a = NdArray::new(vec![1, 2, 3], (0..6).map(|v| v as f64).collect());
        let b = NdArray::new(vec![1, 3, 2], (0..6).map(|v| (v * v) as f64).collect());
        let plain = bmm(&a, &b, false);
        // b^T stored explicitly
        let mut bt = vec![0.0; 6];
        for i in 0..3 {
            for j in 0..2 {
                bt[j * 3 + i] = b.data()[i * 2 + j];
            }
        }
        let bt = NdArray::new(vec![1, 2, 3], bt);
        let via_t = bmm(&a, &bt, true);
        assert_eq!(plain.data(), via_t.data());
    }

    #[test]
    fn bmm_at_is_transposed_product() {
        let x = NdArray::new(vec![1, 3, 2], (0..6).map(|v| v as f64 + 1.0).collect());
        let y = NdArray::new(vec![1, 3, 2], (0..6).map(|v| (v as f64) * 0.5).collect());
        let out = bmm_at(&x, &y);
        // out[p,q] = sum_m x[m,p] y[m,q]
        for p in 0..2 {
            for q in 0..2 {
                let mut acc = 0.0;
                for m in 0..3 {
                    acc += x.data()[m * 2 + p] * y.data()[m * 2 + q];
                }
                assert_eq!(out.data()[p * 2 + q], acc);
            }
        }
    }
}
