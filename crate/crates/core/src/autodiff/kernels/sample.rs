//! Trilinear interpolation: point sampling of a feature lattice and
//! whole-volume resizing. Both are linear in the source values, so their
//! backward passes are weighted scatters.

use crate::autodiff::array::NdArray;
use crate::par;

#[derive(Clone, Copy)]
struct Corner {
    i0: usize,
    i1: usize,
    frac: f64,
}

#[inline]
fn axis_corner(coord: f64, extent: usize) -> Corner {
    let max = (extent - 1) as f64;
    let c = coord.clamp(0.0, max);
    let i0 = (c.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    Corner {
        i0,
        i1,
        frac: c - i0 as f64,
    }
}

/// Samples `lattice [X,Y,Z,F]` at `coords [N,3]` (continuous lattice
/// coordinates, border-clamped). Returns `[N,F]`.
pub fn trilinear_sample(lattice: &NdArray, coords: &[[f64; 3]]) -> NdArray {
    let sh = lattice.shape();
    let (x, y, z, f) = (sh[0], sh[1], sh[2], sh[3]);
    let ld = lattice.data();
    let mut out = NdArray::zeros(vec![coords.len(), f]);
    par::for_each_chunk_mut(out.data_mut(), f, |n, orow| {
        let cx = axis_corner(coords[n][0], x);
        let cy = axis_corner(coords[n][1], y);
        let cz = axis_corner(coords[n][2], z);
        for (xi, wx) in [(cx.i0, 1.0 - cx.frac), (cx.i1, cx.frac)] {
            for (yi, wy) in [(cy.i0, 1.0 - cy.frac), (cy.i1, cy.frac)] {
                for (zi, wz) in [(cz.i0, 1.0 - cz.frac), (cz.i1, cz.frac)] {
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let base = ((xi * y + yi) * z + zi) * f;
                    for (o, &v) in orow.iter_mut().zip(&ld[base..base + f]) {
                        *o += w * v;
                    }
                }
            }
        }
    });
    out
}

/// Backward of `trilinear_sample`: scatter weighted gradients into the lattice.
pub fn trilinear_sample_grad(
    grad_out: &NdArray,
    coords: &[[f64; 3]],
    lattice_shape: &[usize],
) -> NdArray {
    let (x, y, z, f) = (
        lattice_shape[0],
        lattice_shape[1],
        lattice_shape[2],
        lattice_shape[3],
    );
    let gd = grad_out.data();
    let mut dl = NdArray::zeros(lattice_shape.to_vec());
    let dd = dl.data_mut();
    for (n, c) in coords.iter().enumerate() {
        let cx = axis_corner(c[0], x);
        let cy = axis_corner(c[1], y);
        let cz = axis_corner(c[2], z);
        let grow = &gd[n * f..(n + 1) * f];
        for (xi, wx) in [(cx.i0, 1.0 - cx.frac), (cx.i1, cx.frac)] {
            for (yi, wy) in [(cy.i0, 1.0 - cy.frac), (cy.i1, cy.frac)] {
                for (zi, wz) in [(cz.i0, 1.0 - cz.frac), (cz.i1, cz.frac)] {
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let base = ((xi * y + yi) * z + zi) * f;
                    for (d, &g) in dd[base..base + f].iter_mut().zip(grow) {
                        *d += w * g;
                    }
                }
            }
        }
    }
    dl
}

/// Resizes `[C, X, Y, Z]` to `[C, X2, Y2, Z2]` with center-aligned trilinear
/// sampling.
pub fn trilinear_resize(x: &NdArray, out_dims: [usize; 3]) -> NdArray {
    let sh = x.shape();
    let (c, ix, iy, iz) = (sh[0], sh[1], sh[2], sh[3]);
    let (ox, oy, oz) = (out_dims[0], out_dims[1], out_dims[2]);
    let xd = x.data();
    let src = |o: usize, os: usize, is: usize| (o as f64 + 0.5) * is as f64 / os as f64 - 0.5;
    let mut out = NdArray::zeros(vec![c, ox, oy, oz]);
    par::for_each_chunk_mut(out.data_mut(), ox * oy * oz, |ci, o| {
        let base = ci * ix * iy * iz;
        for xo in 0..ox {
            let cx = axis_corner(src(xo, ox, ix), ix);
            for yo in 0..oy {
                let cy = axis_corner(src(yo, oy, iy), iy);
                for zo in 0..oz {
                    let cz = axis_corner(src(zo, oz, iz), iz);
                    let mut acc = 0.0;
                    for (xi, wx) in [(cx.i0, 1.0 - cx.frac), (cx.i1, cx.frac)] {
                        for (yi, wy) in [(cy.i0, 1.0 - cy.frac), (cy.i1, cy.frac)] {
                            for (zi, wz) in [(cz.i0, 1.0 - cz.frac), (cz.i1, cz.frac)] {
                                acc += wx * wy * wz * xd[base + (xi * iy + yi) * iz + zi];
                            }
                        }
                    }
                    o[(xo * oy + yo) * oz + zo] = acc;
                }
            }
        }
    });
    out
}

/// Backward of `trilinear_resize`: per-channel weighted scatter (channels are
/// disjoint, so the channel loop parallelizes without races).
pub fn trilinear_resize_grad(grad_out: &NdArray, in_dims: [usize; 3]) -> NdArray {
    let sh = grad_out.shape();
    let (c, ox, oy, oz) = (sh[0], sh[1], sh[2], sh[3]);
    let (ix, iy, iz) = (in_dims[0], in_dims[1], in_dims[2]);
    let gd = grad_out.data();
    let src = |o: usize, os: usize, is: usize| (o as f64 + 0.5) * is as f64 / os as f64 - 0.5;
    let mut dx = NdArray::zeros(vec![c, ix, iy, iz]);
    par::for_each_chunk_mut(dx.data_mut(), ix * iy * iz, |ci, d| {
        let gbase = ci * ox * oy * oz;
        for xo in 0..ox {
            let cx = axis_corner(src(xo, ox, ix), ix);
            for yo in 0..oy {
                let cy = axis_corner(src(yo, oy, iy), iy);
                for zo in 0..oz {
                    let cz = axis_corner(src(zo, oz, iz), iz);
                    let g = gd[gbase + (xo * oy + yo) * oz + zo];
                    for (xi, wx) in [(cx.i0, 1.0 - cx.frac), (cx.i1, cx.frac)] {
                        for (yi, wy) in [(cy.i0, 1.0 - cy.frac), (cy.i1, cy.frac)] {
                            for (zi, wz) in [(cz.i0, 1.0 - cz.frac), (cz.i1, cz.frac)] {
                                d[(xi * iy + yi) * iz + zi] += wx * wy * wz * g;
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_at_lattice_points_is_exact() {
        let mut lat = NdArray::zeros(vec![2, 2, 2, 1]);
        for i in 0..8 {
            lat.data_mut()[i] = i as f64;
        }
        let out = trilinear_sample(&lat, &[[1.0, 0.0, 1.0]]);
        assert_eq!(out.data()[0], 5.0); // index (1,0,1) -> 4+0+1
    }

    #[test]
    fn sampling_midpoint_averages_corners() {
        let lat = NdArray::new(vec![2, 1, 1, 1], vec![1.0, 3.0]);
        let out = trilinear_sample(&lat, &[[0.5, 0.0, 0.0]]);
        assert_eq!(out.data()[0], 2.0);
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let x = NdArray::filled(vec![2, 3, 3, 3], 0.7);
        let y = trilinear_resize(&x, [7, 5, 4]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn out_of_range_coords_clamp_to_border() {
        let lat = NdArray::new(vec![2, 1, 1, 1], vec![4.0, 8.0]);
        let out = trilinear_sample(&lat, &[[-3.0, 0.0, 0.0], [9.0, 0.0, 0.0]]);
        assert_eq!(out.data(), &[4.0, 8.0]);
    }
}
