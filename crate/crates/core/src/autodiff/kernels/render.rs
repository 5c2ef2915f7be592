//! Front-to-back compositing along sampled rays, with a hand-derived
//! backward pass in density and color.
//!
//! Per-sample weights are formed as transmittance differences
//! `w_i = T_i - T_{i+1}`, so `sum_i w_i + T_final` telescopes to exactly 1.0
//! in floating point.

use crate::autodiff::array::NdArray;
use crate::par;

/// Composites `rays x samples` densities and colors.
///
/// * `density`: `[R, S]`, nonnegative
/// * `rgb`: `[R, S, 3]`
/// * `deltas`: `[R, S]` segment lengths (treated as constants)
/// * `background`: `[3]`
///
/// Returns `(colors [R,3], transmittance [R, S+1])`; the transmittance ahead
/// of each sample plus the final value is saved for the backward pass.
pub fn composite(
    density: &NdArray,
    rgb: &NdArray,
    deltas: &NdArray,
    background: [f64; 3],
) -> (NdArray, NdArray) {
    let (r, s) = (density.shape()[0], density.shape()[1]);
    assert_eq!(rgb.shape(), &[r, s, 3]);
    assert_eq!(deltas.shape(), &[r, s]);
    let dd = density.data();
    let cd = rgb.data();
    let ld = deltas.data();
    let mut out = NdArray::zeros(vec![r, 3]);
    let mut trans = NdArray::zeros(vec![r, s + 1]);
    // transmittance rows first (sequential per ray, parallel across rays)
    {
        let td = trans.data_mut();
        par::for_each_chunk_mut(td, s + 1, |ri, trow| {
            let mut t = 1.0f64;
            trow[0] = t;
            for i in 0..s {
                let sigma = dd[ri * s + i];
                let alpha = 1.0 - (-sigma * ld[ri * s + i]).exp();
                t *= 1.0 - alpha;
                trow[i + 1] = t;
            }
        });
    }
    {
        let td = trans.data();
        par::for_each_chunk_mut(out.data_mut(), 3, |ri, orow| {
            let trow = &td[ri * (s + 1)..(ri + 1) * (s + 1)];
            let mut acc = [0.0f64; 3];
            for i in 0..s {
                let w = trow[i] - trow[i + 1];
                for ch in 0..3 {
                    acc[ch] += w * cd[(ri * s + i) * 3 + ch];
                }
            }
            let tf = trow[s];
            for ch in 0..3 {
                orow[ch] = acc[ch] + tf * background[ch];
            }
        });
    }
    (out, trans)
}

/// Backward of `composite`; returns `(d_density [R,S], d_rgb [R,S,3])`.
///
/// With `w_i = T_i * alpha_i` and suffix `S_k = sum_{i>k} w_i c_i + T_N * bg`:
/// `dC/d sigma_k = delta_k * (T_{k+1} c_k - S_k)` and `dC/d c_{k,ch} = w_k`.
pub fn composite_grad(
    grad_out: &NdArray,
    rgb: &NdArray,
    deltas: &NdArray,
    background: [f64; 3],
    trans: &NdArray,
) -> (NdArray, NdArray) {
    let (r, s) = (deltas.shape()[0], deltas.shape()[1]);
    let gd = grad_out.data();
    let cd = rgb.data();
    let ld = deltas.data();
    let td = trans.data();
    let mut d_density = NdArray::zeros(vec![r, s]);
    let mut d_rgb = NdArray::zeros(vec![r, s, 3]);
    par::for_each_chunk_mut(d_density.data_mut(), s, |ri, dsig| {
        let trow = &td[ri * (s + 1)..(ri + 1) * (s + 1)];
        let grow = &gd[ri * 3..ri * 3 + 3];
        // suffix starts at T_N * background
        let mut suffix = [
            trow[s] * background[0],
            trow[s] * background[1],
            trow[s] * background[2],
        ];
        for k in (0..s).rev() {
            let w = trow[k] - trow[k + 1];
            let c = &cd[(ri * s + k) * 3..(ri * s + k) * 3 + 3];
            let mut acc = 0.0;
            for ch in 0..3 {
                acc += grow[ch] * (trow[k + 1] * c[ch] - suffix[ch]);
            }
            dsig[k] = ld[ri * s + k] * acc;
            for ch in 0..3 {
                suffix[ch] += w * c[ch];
            }
        }
    });
    par::for_each_chunk_mut(d_rgb.data_mut(), s * 3, |ri, drow| {
        let trow = &td[ri * (s + 1)..(ri + 1) * (s + 1)];
        let grow = &gd[ri * 3..ri * 3 + 3];
        for k in 0..s {
            let w = trow[k] - trow[k + 1];
            for ch in 0..3 {
                drow[k * 3 + ch] = w * grow[ch];
            }
        }
    });
    (d_density, d_rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_returns_background() {
        let density = NdArray::zeros(vec![2, 4]);
        let rgb = NdArray::filled(vec![2, 4, 3], 0.9);
        let deltas = NdArray::filled(vec![2, 4], 0.25);
        let (c, trans) = composite(&density, &rgb, &deltas, [0.1, 0.2, 0.3]);
        assert_eq!(&c.data()[0..3], &[0.1, 0.2, 0.3]);
        assert_eq!(trans.data()[4], 1.0);
    }

    #[test]
    fn weights_plus_final_transmittance_is_exactly_one() {
        let density = NdArray::new(vec![1, 3], vec![5.0, 0.3, 12.0]);
        let rgb = NdArray::filled(vec![1, 3, 3], 0.5);
        let deltas = NdArray::new(vec![1, 3], vec![0.1, 0.5, 0.02]);
        let (_, trans) = composite(&density, &rgb, &deltas, [0.0; 3]);
        let t = trans.data();
        let mut acc = 0.0;
        for i in 0..3 {
            acc += t[i] - t[i + 1];
        }
        acc += t[3];
        assert_eq!(acc, 1.0); // telescoping sum is exact, not approximate
    }

    #[test]
    fn opaque_first_sample_returns_its_color() {
        let density = NdArray::new(vec![1, 2], vec![1e9, 3.0]);
        let rgb = NdArray::new(vec![1, 2, 3], vec![0.7, 0.1, 0.4, 0.9, 0.9, 0.9]);
        let deltas = NdArray::filled(vec![1, 2], 1.0);
        let (c, _) = composite(&density, &rgb, &deltas, [0.0; 3]);
        assert!((c.data()[0] - 0.7).abs() < 1e-12);
        assert!((c.data()[1] - 0.1).abs() < 1e-12);
        assert!((c.data()[2] - 0.4).abs() < 1e-12);
    }
}
