//! Direct 3D convolution and transposed convolution, forward and backward.
//!
//! Shapes follow channels-first layout: inputs `[C, X, Y, Z]`, conv weights
//! `[C_out, C_in, k, k, k]`, transposed-conv weights `[C_in, C_out, k, k, k]`.
//! Evaluation is direct (no FFT, no im2col buffer); output elements are
//! independent, so the channel-parallel loops are bit-deterministic.

use crate::autodiff::array::NdArray;
use crate::error::{Error, Result};
use crate::par;

pub fn conv3d_out_dims(in_dims: [usize; 3], k: usize, stride: usize, pad: usize) -> [usize; 3] {
    let f = |d: usize| (d + 2 * pad - k) / stride + 1;
    [f(in_dims[0]), f(in_dims[1]), f(in_dims[2])]
}

pub fn conv_transpose3d_out_dims(in_dims: [usize; 3], k: usize, stride: usize) -> [usize; 3] {
    let f = |d: usize| (d - 1) * stride + k;
    [f(in_dims[0]), f(in_dims[1]), f(in_dims[2])]
}

fn split_cx(shape: &[usize]) -> Result<(usize, [usize; 3])> {
    if shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "expected [C,X,Y,Z] input, got {:?}",
            shape
        )));
    }
    Ok((shape[0], [shape[1], shape[2], shape[3]]))
}

pub fn check_conv3d(input: &NdArray, weight: &NdArray, stride: usize, pad: usize) -> Result<()> {
    let (c_in, dims) = split_cx(input.shape())?;
    let ws = weight.shape();
    if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(Error::Dimension(format!(
            "conv3d weight must be [C_out,C_in,k,k,k], got {:?}",
            ws
        )));
    }
    if ws[1] != c_in {
        return Err(Error::Dimension(format!(
            "conv3d input has {} channels but weight expects {}",
            c_in, ws[1]
        )));
    }
    if stride < 1 {
        return Err(Error::Config("conv3d stride must be >= 1".into()));
    }
    let k = ws[2];
    if dims.iter().any(|&d| d + 2 * pad < k) {
        return Err(Error::Dimension(format!(
            "kernel {} exceeds padded extents {:?} (+2*{})",
            k, dims, pad
        )));
    }
    Ok(())
}

pub fn conv3d(
    input: &NdArray,
    weight: &NdArray,
    bias: Option<&NdArray>,
    stride: usize,
    pad: usize,
) -> NdArray {
    let (c_in, id) = split_cx(input.shape()).expect("conv3d input");
    let ws = weight.shape();
    let (c_out, k) = (ws[0], ws[2]);
    debug_assert_eq!(ws[1], c_in);
    let od = conv3d_out_dims(id, k, stride, pad);
    let (ox, oy, oz) = (od[0], od[1], od[2]);
    let (ix, iy, iz) = (id[0], id[1], id[2]);
    let xd = input.data();
    let wd = weight.data();
    let mut out = NdArray::zeros(vec![c_out, ox, oy, oz]);
    let per_co = ox * oy * oz;
    par::for_each_chunk_mut(out.data_mut(), per_co, |co, o| {
        if let Some(b) = bias {
            let bv = b.data()[co];
            o.iter_mut().for_each(|v| *v = bv);
        }
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * k * k * k;
            let xbase = ci * ix * iy * iz;
            for kx in 0..k {
                for ky in 0..k {
                    for kz in 0..k {
                        let wv = wd[wbase + (kx * k + ky) * k + kz];
                        if wv == 0.0 {
                            continue;
                        }
                        for xo in 0..ox {
                            let xi = (xo * stride + kx) as isize - pad as isize;
                            if xi < 0 || xi as usize >= ix {
                                continue;
                            }
                            for yo in 0..oy {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                if yi < 0 || yi as usize >= iy {
                                    continue;
                                }
                                let xrow = xbase + ((xi as usize) * iy + yi as usize) * iz;
                                let orow = (xo * oy + yo) * oz;
                                for zo in 0..oz {
                                    let zi = (zo * stride + kz) as isize - pad as isize;
                                    if zi < 0 || zi as usize >= iz {
                                        continue;
                                    }
                                    o[orow + zo] += wv * xd[xrow + zi as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of `conv3d` w.r.t. its input (gather form, parallel over C_in).
pub fn conv3d_input_grad(
    grad_out: &NdArray,
    weight: &NdArray,
    stride: usize,
    pad: usize,
    in_dims: [usize; 3],
) -> NdArray {
    let ws = weight.shape();
    let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
    let od = grad_out.shape();
    let (ox, oy, oz) = (od[1], od[2], od[3]);
    let (ix, iy, iz) = (in_dims[0], in_dims[1], in_dims[2]);
    let gd = grad_out.data();
    let wd = weight.data();
    let mut din = NdArray::zeros(vec![c_in, ix, iy, iz]);
    let per_ci = ix * iy * iz;
    par::for_each_chunk_mut(din.data_mut(), per_ci, |ci, d| {
        for co in 0..c_out {
            let wbase = (co * c_in + ci) * k * k * k;
            let gbase = co * ox * oy * oz;
            for kx in 0..k {
                for ky in 0..k {
                    for kz in 0..k {
                        let wv = wd[wbase + (kx * k + ky) * k + kz];
                        if wv == 0.0 {
                            continue;
                        }
                        for xo in 0..ox {
                            let xi = (xo * stride + kx) as isize - pad as isize;
                            if xi < 0 || xi as usize >= ix {
                                continue;
                            }
                            for yo in 0..oy {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                if yi < 0 || yi as usize >= iy {
                                    continue;
                                }
                                let drow = ((xi as usize) * iy + yi as usize) * iz;
                                let grow = gbase + (xo * oy + yo) * oz;
                                for zo in 0..oz {
                                    let zi = (zo * stride + kz) as isize - pad as isize;
                                    if zi < 0 || zi as usize >= iz {
                                        continue;
                                    }
                                    d[drow + zi as usize] += wv * gd[grow + zo];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    din
}

/// Gradient of `conv3d` w.r.t. its weight (parallel over C_out rows).
pub fn conv3d_weight_grad(
    grad_out: &NdArray,
    input: &NdArray,
    k: usize,
    stride: usize,
    pad: usize,
) -> NdArray {
    let (c_in, id) = split_cx(input.shape()).expect("conv3d input");
    let od = grad_out.shape();
    let (c_out, ox, oy, oz) = (od[0], od[1], od[2], od[3]);
    let (ix, iy, iz) = (id[0], id[1], id[2]);
    let xd = input.data();
    let gd = grad_out.data();
    let mut dw = NdArray::zeros(vec![c_out, c_in, k, k, k]);
    let per_co = c_in * k * k * k;
    par::for_each_chunk_mut(dw.data_mut(), per_co, |co, dwc| {
        let gbase = co * ox * oy * oz;
        for ci in 0..c_in {
            let xbase = ci * ix * iy * iz;
            for kx in 0..k {
                for ky in 0..k {
                    for kz in 0..k {
                        let mut acc = 0.0;
                        for xo in 0..ox {
                            let xi = (xo * stride + kx) as isize - pad as isize;
                            if xi < 0 || xi as usize >= ix {
                                continue;
                            }
                            for yo in 0..oy {
                                let yi = (yo * stride + ky) as isize - pad as isize;
                                if yi < 0 || yi as usize >= iy {
                                    continue;
                                }
                                let xrow = xbase + ((xi as usize) * iy + yi as usize) * iz;
                                let grow = gbase + (xo * oy + yo) * oz;
                                for zo in 0..oz {
                                    let zi = (zo * stride + kz) as isize - pad as isize;
                                    if zi < 0 || zi as usize >= iz {
                                        continue;
                                    }
                                    acc += gd[grow + zo] * xd[xrow + zi as usize];
                                }
                            }
                        }
                        dwc[(ci * k + kx) * k * k + ky * k + kz] = acc;
                    }
                }
            }
        }
    });
    dw
}

/// Per-channel bias gradient: sum of `grad_out` over spatial positions.
pub fn conv_bias_grad(grad_out: &NdArray) -> NdArray {
    let od = grad_out.shape();
    let c = od[0];
    let spatial: usize = od[1..].iter().product();
    let gd = grad_out.data();
    let mut db = NdArray::zeros(vec![c]);
    for co in 0..c {
        let mut acc = 0.0;
        for v in &gd[co * spatial..(co + 1) * spatial] {
            acc += v;
        }
        db.data_mut()[co] = acc;
    }
    db
}

pub fn check_conv_transpose3d(input: &NdArray, weight: &NdArray, stride: usize) -> Result<()> {
    let (c_in, _) = split_cx(input.shape())?;
    let ws = weight.shape();
    if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(Error::Dimension(format!(
            "conv_transpose3d weight must be [C_in,C_out,k,k,k], got {:?}",
            ws
        )));
    }
    if ws[0] != c_in {
        return Err(Error::Dimension(format!(
            "conv_transpose3d input has {} channels but weight expects {}",
            c_in, ws[0]
        )));
    }
    if stride < 1 {
        return Err(Error::Config("conv_transpose3d stride must be >= 1".into()));
    }
    Ok(())
}

/// Transposed convolution; exact adjoint of `conv3d` (stride matching, pad 0)
/// when the weight buffer is shared with axes read as `[C_in, C_out, k, k, k]`.
pub fn conv_transpose3d(
    input: &NdArray,
    weight: &NdArray,
    bias: Option<&NdArray>,
    stride: usize,
) -> NdArray {
    let (c_in, id) = split_cx(input.shape()).expect("conv_transpose3d input");
    let ws = weight.shape();
    let (c_out, k) = (ws[1], ws[2]);
    debug_assert_eq!(ws[0], c_in);
    let od = conv_transpose3d_out_dims(id, k, stride);
    let (ox, oy, oz) = (od[0], od[1], od[2]);
    let (ix, iy, iz) = (id[0], id[1], id[2]);
    let xd = input.data();
    let wd = weight.data();
    let mut out = NdArray::zeros(vec![c_out, ox, oy, oz]);
    let per_co = ox * oy * oz;
    par::for_each_chunk_mut(out.data_mut(), per_co, |co, o| {
        if let Some(b) = bias {
            let bv = b.data()[co];
            o.iter_mut().for_each(|v| *v = bv);
        }
        for ci in 0..c_in {
            let wbase = (ci * c_out + co) * k * k * k;
            let xbase = ci * ix * iy * iz;
            for kx in 0..k {
                for ky in 0..k {
                    for kz in 0..k {
                        let wv = wd[wbase + (kx * k + ky) * k + kz];
                        if wv == 0.0 {
                            continue;
                        }
                        for xi in 0..ix {
                            let xo = xi * stride + kx;
                            for yi in 0..iy {
                                let yo = yi * stride + ky;
                                let xrow = xbase + (xi * iy + yi) * iz;
                                let orow = (xo * oy + yo) * oz;
                                for zi in 0..iz {
                                    o[orow + zi * stride + kz] += wv * xd[xrow + zi];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of `conv_transpose3d` w.r.t. its input.
pub fn conv_transpose3d_input_grad(
    grad_out: &NdArray,
    weight: &NdArray,
    stride: usize,
    in_dims: [usize; 3],
) -> NdArray {
    let ws = weight.shape();
    let (c_in, c_out, k) = (ws[0], ws[1], ws[2]);
    let od = grad_out.shape();
    let (oy, oz) = (od[2], od[3]);
    let (ix, iy, iz) = (in_dims[0], in_dims[1], in_dims[2]);
    let gd = grad_out.data();
    let wd = weight.data();
    let mut din = NdArray::zeros(vec![c_in, ix, iy, iz]);
    let per_ci = ix * iy * iz;
    par::for_each_chunk_mut(din.data_mut(), per_ci, |ci, d| {
        for co in 0..c_out {
            let wbase = (ci * c_out + co) * k * k * k;
            let gbase = co * od[1] * oy * oz;
            for kx in 0..k {
                for ky in 0..k {
                    for kz in 0..k {
                        let wv = wd[wbase + (kx * k + ky) * k + kz];
                        if wv == 0.0 {
                            continue;
                        }
                        for xi in 0..ix {
                            let xo = xi * stride + kx;
                            for yi in 0..iy {
                                let yo = yi * stride + ky;
                                let drow = (xi * iy + yi) * iz;
                                let grow = gbase + (xo * oy + yo) * oz;
                                for zi in 0..iz {
                                    d[drow + zi] += wv * gd[grow + zi * stride + kz];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    din
}

/// Gradient of `conv_transpose3d` w.r.t. its weight (`[C_in,C_out,k,k,k]`).
pub fn conv_transpose3d_weight_grad(
    grad_out: &NdArray,
    input: &NdArray,
    k: usize,
    stride: usize,
) -> NdArray {
    let (c_in, id) = split_cx(input.shape()).expect("conv_transpose3d input");
    let od = grad_out.shape();
    let (c_out, oy, oz) = (od[0], od[2], od[3]);
    let (ix, iy, iz) = (id[0], id[1], id[2]);
    let xd = input.data();
    let gd = grad_out.data();
    let mut dw = NdArray::zeros(vec![c_in, c_out, k, k, k]);
    let per_ci = c_out * k * k * k;
    par::for_each_chunk_mut(dw.data_mut(), per_ci, |ci, dwc| {
        let xbase = ci * ix * iy * iz;
        for co in 0..c_out {
            let gbase = co * od[1] * oy * oz;
            for kx in 0..k {
                for ky in 0..k {
                    for kz in 0..k {
                        let mut acc = 0.0;
                        for xi in 0..ix {
                            let xo = xi * stride + kx;
                            for yi in 0..iy {
                                let yo = yi * stride + ky;
                                let xrow = xbase + (xi * iy + yi) * iz;
                                let grow = gbase + (xo * oy + yo) * oz;
                                for zi in 0..iz {
                                    acc += xd[xrow + zi] * gd[grow + zi * stride + kz];
                                }
                            }
                        }
                        dwc[(co * k + kx) * k * k + ky * k + kz] = acc;
                    }
                }
            }
        }
    });
    dw
}
