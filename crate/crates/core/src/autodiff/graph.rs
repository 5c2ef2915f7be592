//! Reverse-mode differentiation over recorded primitives.
//!
//! Model code is written once against the [`Ops`] trait and runs on two
//! backends: [`TapeOps`] records every primitive for `backward`, while
//! [`EvalOps`] evaluates eagerly with reference-counted buffers so forward
//! passes free intermediates as they go. Both call the same kernels, so the
//! two paths produce bit-identical values.

use std::rc::Rc;
use std::sync::Arc;

use crate::autodiff::array::NdArray;
use crate::autodiff::kernels::{conv, elementwise as ew, indexmap, matmul, norm, render, sample};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&Tape, &NdArray) -> Vec<(usize, NdArray)>>;

struct Node {
    value: NdArray,
    requires_grad: bool,
    back: Option<BackFn>,
}

/// Linear tape of recorded operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: NdArray, requires_grad: bool, back: Option<BackFn>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse sweep from `loss`; returns one gradient slot per node.
    /// Nodes unreachable from the loss keep `None` (read as zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<NdArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(NdArray::filled(lv.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &self.nodes[i].back {
                for (pid, pg) in back(self, &g) {
                    debug_assert_eq!(
                        pg.shape(),
                        self.nodes[pid].value.shape(),
                        "gradient shape mismatch at node {pid}"
                    );
                    grads[pid] = Some(match grads[pid].take() {
                        Some(prev) => ew::binary(&prev, &pg, |a, b| a + b),
                        None => pg,
                    });
                }
            }
            if i > loss.0 || self.nodes[i].back.is_some() || !self.nodes[i].requires_grad {
                continue;
            }
            // leaf gradient: keep it for readout
            grads[i] = Some(g);
        }
        Ok(Gradients { slots: grads })
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    slots: Vec<Option<NdArray>>,
}

impl Gradients {
    pub fn take(&mut self, v: Var) -> Option<NdArray> {
        self.slots[v.0].take()
    }

    pub fn get(&self, v: Var) -> Option<&NdArray> {
        self.slots[v.0].as_ref()
    }
}

/// The primitive set every model is written against.
pub trait Ops {
    type T: Clone;

    /// Differentiable leaf (parameters, inputs under gradient check).
    fn leaf(&mut self, value: &NdArray) -> Self::T;
    /// Non-differentiable input (targets, masks, plan constants).
    fn constant(&mut self, value: NdArray) -> Self::T;
    fn shape(&self, t: &Self::T) -> Vec<usize>;
    fn to_array(&self, t: &Self::T) -> NdArray;

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn div(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn minimum(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, k: f64) -> Self::T;
    fn add_scalar(&mut self, a: &Self::T, k: f64) -> Self::T;
    fn powf(&mut self, a: &Self::T, p: f64) -> Self::T;
    fn log(&mut self, a: &Self::T) -> Self::T;
    fn gelu(&mut self, a: &Self::T) -> Self::T;
    fn sigmoid(&mut self, a: &Self::T) -> Self::T;
    fn softplus(&mut self, a: &Self::T) -> Self::T;
    fn relu(&mut self, a: &Self::T) -> Self::T;
    fn softmax_last(&mut self, a: &Self::T) -> Self::T;
    fn log_softmax_last(&mut self, a: &Self::T) -> Self::T;

    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn bmm(&mut self, a: &Self::T, b: &Self::T, transpose_b: bool) -> Self::T;
    fn conv3d(
        &mut self,
        x: &Self::T,
        w: &Self::T,
        b: Option<&Self::T>,
        stride: usize,
        pad: usize,
    ) -> Self::T;
    fn conv_transpose3d(
        &mut self,
        x: &Self::T,
        w: &Self::T,
        b: Option<&Self::T>,
        stride: usize,
    ) -> Self::T;
    fn layer_norm(&mut self, x: &Self::T, gamma: &Self::T, beta: &Self::T, eps: f64) -> Self::T;
    fn instance_norm(&mut self, x: &Self::T, gamma: &Self::T, beta: &Self::T, eps: f64)
        -> Self::T;
    fn add_rowvec(&mut self, x: &Self::T, v: &Self::T) -> Self::T;
    fn gather(&mut self, x: &Self::T, plan: &Arc<indexmap::IndexPlan>) -> Self::T;
    fn concat_last(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sum_all(&mut self, x: &Self::T) -> Self::T;
    fn reshape(&mut self, x: &Self::T, shape: Vec<usize>) -> Self::T;
    fn composite(
        &mut self,
        density: &Self::T,
        rgb: &Self::T,
        deltas: &NdArray,
        background: [f64; 3],
    ) -> Self::T;
    fn trilinear_sample(&mut self, lattice: &Self::T, coords: &Arc<Vec<[f64; 3]>>) -> Self::T;
    fn trilinear_resize(&mut self, x: &Self::T, out_dims: [usize; 3]) -> Self::T;

    /// Mean over all elements.
    fn mean_all(&mut self, x: &Self::T) -> Self::T {
        let n = self.shape(x).iter().product::<usize>().max(1);
        let s = self.sum_all(x);
        self.scale(&s, 1.0 / n as f64)
    }

    /// `x @ w + b` over the last axis.
    fn linear(&mut self, x: &Self::T, w: &Self::T, b: &Self::T) -> Self::T {
        let y = self.matmul(x, w);
        self.add_rowvec(&y, b)
    }
}

/// Tape-recording backend.
pub struct TapeOps {
    pub tape: Tape,
}

impl TapeOps {
    pub fn new() -> Self {
        TapeOps { tape: Tape::new() }
    }

    pub fn value(&self, v: Var) -> &NdArray {
        self.tape.value(v)
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.tape.backward(loss)
    }
}

impl Default for TapeOps {
    fn default() -> Self {
        Self::new()
    }
}

fn unary_node(
    tape: &mut Tape,
    a: Var,
    value: NdArray,
    dfdx: impl Fn(&Tape, Var, usize, &NdArray) -> NdArray + 'static,
) -> Var {
    let needs = tape.needs(a);
    let self_id = tape.nodes.len();
    let back: Option<BackFn> = if needs {
        Some(Box::new(move |t: &Tape, g: &NdArray| {
            vec![(a.0, dfdx(t, a, self_id, g))]
        }))
    } else {
        None
    };
    tape.push(value, needs, back)
}

impl Ops for TapeOps {
    type T = Var;

    fn leaf(&mut self, value: &NdArray) -> Var {
        self.tape.push(value.clone(), true, None)
    }

    fn constant(&mut self, value: NdArray) -> Var {
        self.tape.push(value, false, None)
    }

    fn shape(&self, t: &Var) -> Vec<usize> {
        self.tape.value(*t).shape().to_vec()
    }

    fn to_array(&self, t: &Var) -> NdArray {
        self.tape.value(*t).clone()
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = ew::binary(self.tape.value(*a), self.tape.value(*b), |x, y| x + y);
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |_t, g| {
                let mut out = Vec::new();
                if na {
                    out.push((a.0, g.clone()));
                }
                if nb {
                    out.push((b.0, g.clone()));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, na || nb, back)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = ew::binary(self.tape.value(*a), self.tape.value(*b), |x, y| x - y);
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |_t, g| {
                let mut out = Vec::new();
                if na {
                    out.push((a.0, g.clone()));
                }
                if nb {
                    out.push((b.0, g.map(|x| -x)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, na || nb, back)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let v = ew::binary(self.tape.value(*a), self.tape.value(*b), |x, y| x * y);
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |t, g| {
                let mut out = Vec::new();
                if na {
                    out.push((a.0, ew::binary(g, t.value(b), |gv, bv| gv * bv)));
                }
                if nb {
                    out.push((b.0, ew::binary(g, t.value(a), |gv, av| gv * av)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, na || nb, back)
    }

    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let v = ew::binary(self.tape.value(*a), self.tape.value(*b), |x, y| x / y);
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |t, g| {
                let mut out = Vec::new();
                if na {
                    out.push((a.0, ew::binary(g, t.value(b), |gv, bv| gv / bv)));
                }
                if nb {
                    let num = ew::binary(g, t.value(a), |gv, av| gv * av);
                    out.push((
                        b.0,
                        ew::binary(&num, t.value(b), |nv, bv| -nv / (bv * bv)),
                    ));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, na || nb, back)
    }

    fn minimum(&mut self, a: &Var, b: &Var) -> Var {
        let v = ew::binary(self.tape.value(*a), self.tape.value(*b), f64::min);
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |t, g| {
                let av = t.value(a);
                let bv = t.value(b);
                let mut out = Vec::new();
                if na {
                    let sel = ew::binary(av, bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                    out.push((a.0, ew::binary(g, &sel, |gv, s| gv * s)));
                }
                if nb {
                    let sel = ew::binary(av, bv, |x, y| if y < x { 1.0 } else { 0.0 });
                    out.push((b.0, ew::binary(g, &sel, |gv, s| gv * s)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, na || nb, back)
    }

    fn scale(&mut self, a: &Var, k: f64) -> Var {
        let v = self.tape.value(*a).map(|x| x * k);
        unary_node(&mut self.tape, *a, v, move |_t, _a, _s, g| {
            g.map(|x| x * k)
        })
    }

    fn add_scalar(&mut self, a: &Var, k: f64) -> Var {
        let v = self.tape.value(*a).map(|x| x + k);
        unary_node(&mut self.tape, *a, v, |_t, _a, _s, g| g.clone())
    }

    fn powf(&mut self, a: &Var, p: f64) -> Var {
        let v = self.tape.value(*a).map(|x| x.powf(p));
        unary_node(&mut self.tape, *a, v, move |t, a, _s, g| {
            ew::binary(g, t.value(a), |gv, x| gv * p * x.powf(p - 1.0))
        })
    }

    fn log(&mut self, a: &Var) -> Var {
        let v = self.tape.value(*a).map(f64::ln);
        unary_node(&mut self.tape, *a, v, |t, a, _s, g| {
            ew::binary(g, t.value(a), |gv, x| gv / x)
        })
    }

    fn gelu(&mut self, a: &Var) -> Var {
        let v = ew::unary(self.tape.value(*a), ew::gelu);
        unary_node(&mut self.tape, *a, v, |t, a, _s, g| {
            ew::binary(g, t.value(a), |gv, x| gv * ew::gelu_grad(x))
        })
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let v = ew::unary(self.tape.value(*a), ew::sigmoid);
        unary_node(&mut self.tape, *a, v, |t, _a, s, g| {
            ew::binary(g, &t.nodes[s].value, |gv, y| gv * y * (1.0 - y))
        })
    }

    fn softplus(&mut self, a: &Var) -> Var {
        let v = ew::unary(self.tape.value(*a), ew::softplus);
        unary_node(&mut self.tape, *a, v, |t, a, _s, g| {
            ew::binary(g, t.value(a), |gv, x| gv * ew::sigmoid(x))
        })
    }

    fn relu(&mut self, a: &Var) -> Var {
        let v = ew::unary(self.tape.value(*a), |x| x.max(0.0));
        unary_node(&mut self.tape, *a, v, |t, a, _s, g| {
            ew::binary(g, t.value(a), |gv, x| if x > 0.0 { gv } else { 0.0 })
        })
    }

    fn softmax_last(&mut self, a: &Var) -> Var {
        let v = ew::softmax_rows(self.tape.value(*a));
        unary_node(&mut self.tape, *a, v, |t, _a, s, g| {
            ew::softmax_rows_grad(g, &t.nodes[s].value)
        })
    }

    fn log_softmax_last(&mut self, a: &Var) -> Var {
        let v = ew::log_softmax_rows(self.tape.value(*a));
        unary_node(&mut self.tape, *a, v, |t, _a, s, g| {
            ew::log_softmax_rows_grad(g, &t.nodes[s].value)
        })
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let (m, k) = {
            let s = self.tape.value(*a).shape();
            (s[0], s[1])
        };
        let n = self.tape.value(*b).shape()[1];
        let a3 = self.reshape(a, vec![1, m, k]);
        let b3 = self.reshape(b, vec![1, k, n]);
        let y = self.bmm(&a3, &b3, false);
        self.reshape(&y, vec![m, n])
    }

    fn bmm(&mut self, a: &Var, b: &Var, transpose_b: bool) -> Var {
        let v = matmul::bmm(self.tape.value(*a), self.tape.value(*b), transpose_b);
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |t, g| {
                let mut out = Vec::new();
                if na {
                    // dA = g @ B^T (plain) or g @ B (when b was transposed)
                    out.push((a.0, matmul::bmm(g, t.value(b), !transpose_b)));
                }
                if nb {
                    let db = if transpose_b {
                        matmul::bmm_at(g, t.value(a))
                    } else {
                        matmul::bmm_at(t.value(a), g)
                    };
                    out.push((b.0, db));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, na || nb, back)
    }

    fn conv3d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Var {
        let v = conv::conv3d(
            self.tape.value(*x),
            self.tape.value(*w),
            b.map(|bb| self.tape.value(*bb)),
            stride,
            pad,
        );
        let (x, w, b) = (*x, *w, b.copied());
        let nx = self.tape.needs(x);
        let nw = self.tape.needs(w);
        let nb = b.map(|bb| self.tape.needs(bb)).unwrap_or(false);
        let back: Option<BackFn> = if nx || nw || nb {
            Some(Box::new(move |t, g| {
                let mut out = Vec::new();
                let k = t.value(w).shape()[2];
                if nx {
                    let xs = t.value(x).shape();
                    out.push((
                        x.0,
                        conv::conv3d_input_grad(g, t.value(w), stride, pad, [xs[1], xs[2], xs[3]]),
                    ));
                }
                if nw {
                    out.push((w.0, conv::conv3d_weight_grad(g, t.value(x), k, stride, pad)));
                }
                if nb {
                    out.push((b.unwrap().0, conv::conv_bias_grad(g)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, nx || nw || nb, back)
    }

    fn conv_transpose3d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize) -> Var {
        let v = conv::conv_transpose3d(
            self.tape.value(*x),
            self.tape.value(*w),
            b.map(|bb| self.tape.value(*bb)),
            stride,
        );
        let (x, w, b) = (*x, *w, b.copied());
        let nx = self.tape.needs(x);
        let nw = self.tape.needs(w);
        let nb = b.map(|bb| self.tape.needs(bb)).unwrap_or(false);
        let back: Option<BackFn> = if nx || nw || nb {
            Some(Box::new(move |t, g| {
                let mut out = Vec::new();
                let k = t.value(w).shape()[2];
                if nx {
                    let xs = t.value(x).shape();
                    out.push((
                        x.0,
                        conv::conv_transpose3d_input_grad(
                            g,
                            t.value(w),
                            stride,
                            [xs[1], xs[2], xs[3]],
                        ),
                    ));
                }
                if nw {
                    out.push((
                        w.0,
                        conv::conv_transpose3d_weight_grad(g, t.value(x), k, stride),
                    ));
                }
                if nb {
                    out.push((b.unwrap().0, conv::conv_bias_grad(g)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, nx || nw || nb, back)
    }

    fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let (v, mean, inv_std) = norm::layer_norm(
            self.tape.value(*x),
            self.tape.value(*gamma),
            self.tape.value(*beta),
            eps,
        );
        let (x, gamma, beta) = (*x, *gamma, *beta);
        let nx = self.tape.needs(x);
        let ng = self.tape.needs(gamma);
        let nb = self.tape.needs(beta);
        let back: Option<BackFn> = if nx || ng || nb {
            Some(Box::new(move |t, g| {
                let (dx, dgamma, dbeta) =
                    norm::layer_norm_grad(g, t.value(x), t.value(gamma), &mean, &inv_std);
                let mut out = Vec::new();
                if nx {
                    out.push((x.0, dx));
                }
                if ng {
                    out.push((gamma.0, dgamma));
                }
                if nb {
                    out.push((beta.0, dbeta));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, nx || ng || nb, back)
    }

    fn instance_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Var {
        let (v, mean, inv_std) = norm::instance_norm(
            self.tape.value(*x),
            self.tape.value(*gamma),
            self.tape.value(*beta),
            eps,
        );
        let (x, gamma, beta) = (*x, *gamma, *beta);
        let nx = self.tape.needs(x);
        let ng = self.tape.needs(gamma);
        let nb = self.tape.needs(beta);
        let back: Option<BackFn> = if nx || ng || nb {
            Some(Box::new(move |t, g| {
                let (dx, dgamma, dbeta) =
                    norm::instance_norm_grad(g, t.value(x), t.value(gamma), &mean, &inv_std);
                let mut out = Vec::new();
                if nx {
                    out.push((x.0, dx));
                }
                if ng {
                    out.push((gamma.0, dgamma));
                }
                if nb {
                    out.push((beta.0, dbeta));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, nx || ng || nb, back)
    }

    fn add_rowvec(&mut self, x: &Var, v: &Var) -> Var {
        let y = ew::add_rowvec(self.tape.value(*x), self.tape.value(*v));
        let (x, v) = (*x, *v);
        let (nx, nv) = (self.tape.needs(x), self.tape.needs(v));
        let back: Option<BackFn> = if nx || nv {
            Some(Box::new(move |_t, g| {
                let mut out = Vec::new();
                if nx {
                    out.push((x.0, g.clone()));
                }
                if nv {
                    out.push((v.0, ew::rowvec_grad(g)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(y, nx || nv, back)
    }

    fn gather(&mut self, x: &Var, plan: &Arc<indexmap::IndexPlan>) -> Var {
        let v = indexmap::gather(self.tape.value(*x), plan);
        let plan = Arc::clone(plan);
        let x = *x;
        let nx = self.tape.needs(x);
        let back: Option<BackFn> = if nx {
            Some(Box::new(move |t, g| {
                vec![(x.0, indexmap::scatter_add(g, &plan, t.value(x).shape()))]
            }))
        } else {
            None
        };
        self.tape.push(v, nx, back)
    }

    fn concat_last(&mut self, a: &Var, b: &Var) -> Var {
        let av = self.tape.value(*a);
        let bv = self.tape.value(*b);
        let ca = *av.shape().last().unwrap();
        let cb = *bv.shape().last().unwrap();
        let rows = av.len() / ca;
        assert_eq!(rows, bv.len() / cb, "concat_last row mismatch");
        let mut shape: Vec<usize> = av.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let mut out = NdArray::zeros(shape);
        for r in 0..rows {
            out.data_mut()[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            out.data_mut()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let (a, b) = (*a, *b);
        let (na, nb) = (self.tape.needs(a), self.tape.needs(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |t, g| {
                let mut out = Vec::new();
                if na {
                    let mut da = NdArray::zeros(t.value(a).shape().to_vec());
                    for r in 0..rows {
                        da.data_mut()[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g.data()[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    out.push((a.0, da));
                }
                if nb {
                    let mut db = NdArray::zeros(t.value(b).shape().to_vec());
                    for r in 0..rows {
                        db.data_mut()[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g.data()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    out.push((b.0, db));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(out, na || nb, back)
    }

    fn sum_all(&mut self, x: &Var) -> Var {
        let v = NdArray::scalar(ew::sum_all(self.tape.value(*x)));
        unary_node(&mut self.tape, *x, v, |t, x, _s, g| {
            NdArray::filled(t.value(x).shape().to_vec(), g.item())
        })
    }

    fn reshape(&mut self, x: &Var, shape: Vec<usize>) -> Var {
        let v = self.tape.value(*x).clone().reshaped(shape);
        unary_node(&mut self.tape, *x, v, |t, x, _s, g| {
            g.clone().reshaped(t.value(x).shape().to_vec())
        })
    }

    fn composite(
        &mut self,
        density: &Var,
        rgb: &Var,
        deltas: &NdArray,
        background: [f64; 3],
    ) -> Var {
        let (v, trans) = render::composite(
            self.tape.value(*density),
            self.tape.value(*rgb),
            deltas,
            background,
        );
        let (density, rgb) = (*density, *rgb);
        let nd = self.tape.needs(density);
        let nr = self.tape.needs(rgb);
        let deltas = deltas.clone();
        let back: Option<BackFn> = if nd || nr {
            Some(Box::new(move |t, g| {
                let (dd, dr) = render::composite_grad(g, t.value(rgb), &deltas, background, &trans);
                let mut out = Vec::new();
                if nd {
                    out.push((density.0, dd));
                }
                if nr {
                    out.push((rgb.0, dr));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(v, nd || nr, back)
    }

    fn trilinear_sample(&mut self, lattice: &Var, coords: &Arc<Vec<[f64; 3]>>) -> Var {
        let v = sample::trilinear_sample(self.tape.value(*lattice), coords);
        let lattice = *lattice;
        let nl = self.tape.needs(lattice);
        let coords = Arc::clone(coords);
        let back: Option<BackFn> = if nl {
            Some(Box::new(move |t, g| {
                vec![(
                    lattice.0,
                    sample::trilinear_sample_grad(g, &coords, t.value(lattice).shape()),
                )]
            }))
        } else {
            None
        };
        self.tape.push(v, nl, back)
    }

    fn trilinear_resize(&mut self, x: &Var, out_dims: [usize; 3]) -> Var {
        let v = sample::trilinear_resize(self.tape.value(*x), out_dims);
        unary_node(&mut self.tape, *x, v, move |t, x, _s, g| {
            let xs = t.value(x).shape();
            sample::trilinear_resize_grad(g, [xs[1], xs[2], xs[3]])
        })
    }
}

/// Eager, gradient-free backend. Buffers are reference counted; rebinding in
/// straight-line forward code frees intermediates as soon as they go dead.
pub struct EvalOps;

impl EvalOps {
    pub fn new() -> Self {
        EvalOps
    }
}

impl Default for EvalOps {
    fn default() -> Self {
        Self::new()
    }
}

fn rc_reshape(x: &Rc<NdArray>, shape: Vec<usize>) -> Rc<NdArray> {
    Rc::new(x.as_ref().clone().reshaped(shape))
}

impl Ops for EvalOps {
    type T = Rc<NdArray>;

    fn leaf(&mut self, value: &NdArray) -> Rc<NdArray> {
        Rc::new(value.clone())
    }

    fn constant(&mut self, value: NdArray) -> Rc<NdArray> {
        Rc::new(value)
    }

    fn shape(&self, t: &Rc<NdArray>) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn to_array(&self, t: &Rc<NdArray>) -> NdArray {
        t.as_ref().clone()
    }

    fn add(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::binary(a, b, |x, y| x + y))
    }

    fn sub(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::binary(a, b, |x, y| x - y))
    }

    fn mul(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::binary(a, b, |x, y| x * y))
    }

    fn div(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::binary(a, b, |x, y| x / y))
    }

    fn minimum(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::binary(a, b, f64::min))
    }

    fn scale(&mut self, a: &Rc<NdArray>, k: f64) -> Rc<NdArray> {
        Rc::new(a.map(|x| x * k))
    }

    fn add_scalar(&mut self, a: &Rc<NdArray>, k: f64) -> Rc<NdArray> {
        Rc::new(a.map(|x| x + k))
    }

    fn powf(&mut self, a: &Rc<NdArray>, p: f64) -> Rc<NdArray> {
        Rc::new(a.map(|x| x.powf(p)))
    }

    fn log(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(a.map(f64::ln))
    }

    fn gelu(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::unary(a, ew::gelu))
    }

    fn sigmoid(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::unary(a, ew::sigmoid))
    }

    fn softplus(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::unary(a, ew::softplus))
    }

    fn relu(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::unary(a, |x| x.max(0.0)))
    }

    fn softmax_last(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::softmax_rows(a))
    }

    fn log_softmax_last(&mut self, a: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::log_softmax_rows(a))
    }

    fn matmul(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(matmul::matmul(a, b))
    }

    fn bmm(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>, transpose_b: bool) -> Rc<NdArray> {
        Rc::new(matmul::bmm(a, b, transpose_b))
    }

    fn conv3d(
        &mut self,
        x: &Rc<NdArray>,
        w: &Rc<NdArray>,
        b: Option<&Rc<NdArray>>,
        stride: usize,
        pad: usize,
    ) -> Rc<NdArray> {
        Rc::new(conv::conv3d(x, w, b.map(|v| v.as_ref()), stride, pad))
    }

    fn conv_transpose3d(
        &mut self,
        x: &Rc<NdArray>,
        w: &Rc<NdArray>,
        b: Option<&Rc<NdArray>>,
        stride: usize,
    ) -> Rc<NdArray> {
        Rc::new(conv::conv_transpose3d(x, w, b.map(|v| v.as_ref()), stride))
    }

    fn layer_norm(
        &mut self,
        x: &Rc<NdArray>,
        gamma: &Rc<NdArray>,
        beta: &Rc<NdArray>,
        eps: f64,
    ) -> Rc<NdArray> {
        Rc::new(norm::layer_norm(x, gamma, beta, eps).0)
    }

    fn instance_norm(
        &mut self,
        x: &Rc<NdArray>,
        gamma: &Rc<NdArray>,
        beta: &Rc<NdArray>,
        eps: f64,
    ) -> Rc<NdArray> {
        Rc::new(norm::instance_norm(x, gamma, beta, eps).0)
    }

    fn add_rowvec(&mut self, x: &Rc<NdArray>, v: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(ew::add_rowvec(x, v))
    }

    fn gather(&mut self, x: &Rc<NdArray>, plan: &Arc<indexmap::IndexPlan>) -> Rc<NdArray> {
        Rc::new(indexmap::gather(x, plan))
    }

    fn concat_last(&mut self, a: &Rc<NdArray>, b: &Rc<NdArray>) -> Rc<NdArray> {
        let ca = *a.shape().last().unwrap();
        let cb = *b.shape().last().unwrap();
        let rows = a.len() / ca;
        let mut shape: Vec<usize> = a.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let mut out = NdArray::zeros(shape);
        for r in 0..rows {
            out.data_mut()[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            out.data_mut()[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        Rc::new(out)
    }

    fn sum_all(&mut self, x: &Rc<NdArray>) -> Rc<NdArray> {
        Rc::new(NdArray::scalar(ew::sum_all(x)))
    }

    fn reshape(&mut self, x: &Rc<NdArray>, shape: Vec<usize>) -> Rc<NdArray> {
        rc_reshape(x, shape)
    }

    fn composite(
        &mut self,
        density: &Rc<NdArray>,
        rgb: &Rc<NdArray>,
        deltas: &NdArray,
        background: [f64; 3],
    ) -> Rc<NdArray> {
        Rc::new(render::composite(density, rgb, deltas, background).0)
    }

    fn trilinear_sample(
        &mut self,
        lattice: &Rc<NdArray>,
        coords: &Arc<Vec<[f64; 3]>>,
    ) -> Rc<NdArray> {
        Rc::new(sample::trilinear_sample(lattice, coords))
    }

    fn trilinear_resize(&mut self, x: &Rc<NdArray>, out_dims: [usize; 3]) -> Rc<NdArray> {
        Rc::new(sample::trilinear_resize(x, out_dims))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let mut o = TapeOps::new();
        let x = o.leaf(&NdArray::new(vec![3], vec![1.0, -2.0, 0.5]));
        let sq = o.mul(&x, &x);
        let loss = o.sum_all(&sq);
        let mut grads = o.backward(loss).unwrap();
        let gx = grads.take(x).unwrap();
        assert_eq!(gx.data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn mean_squared_error_gradient() {
        // f(x) = mean((x - t)^2): gradient 2(x - t)/n
        let mut o = TapeOps::new();
        let x = o.leaf(&NdArray::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]));
        let t = o.constant(NdArray::new(vec![4], vec![0.0, 0.0, 6.0, 4.0]));
        let d = o.sub(&x, &t);
        let sq = o.mul(&d, &d);
        let loss = o.mean_all(&sq);
        let mut grads = o.backward(loss).unwrap();
        let gx = grads.take(x).unwrap();
        assert_eq!(gx.data(), &[0.5, 1.0, -1.5, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut o = TapeOps::new();
        let x = o.leaf(&NdArray::new(vec![2], vec![1.0, 2.0]));
        let y = o.mul(&x, &x);
        assert!(matches!(o.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_parameter_gets_no_gradient() {
        let mut o = TapeOps::new();
        let x = o.leaf(&NdArray::new(vec![2], vec![1.0, 2.0]));
        let unused = o.leaf(&NdArray::new(vec![2], vec![5.0, 5.0]));
        let sq = o.mul(&x, &x);
        let loss = o.sum_all(&sq);
        let mut grads = o.backward(loss).unwrap();
        assert!(grads.take(unused).is_none());
        assert!(grads.take(x).is_some());
    }

    #[test]
    fn eval_and_tape_agree_bitwise() {
        let x = NdArray::new(vec![2, 3], vec![0.1, -0.7, 1.3, 2.0, -0.2, 0.4]);
        let w = NdArray::new(vec![3, 2], vec![0.5, -1.0, 0.25, 0.75, -0.5, 0.1]);
        let b = NdArray::new(vec![2], vec![0.01, -0.02]);

        let mut t = TapeOps::new();
        let (xt, wt, bt) = (t.leaf(&x), t.leaf(&w), t.leaf(&b));
        let yt = t.linear(&xt, &wt, &bt);
        let yt = t.gelu(&yt);
        let tape_out = t.to_array(&yt);

        let mut e = EvalOps::new();
        let (xe, we, be) = (e.leaf(&x), e.leaf(&w), e.leaf(&b));
        let ye = e.linear(&xe, &we, &be);
        let ye = e.gelu(&ye);
        assert_eq!(tape_out.data(), ye.data());
    }
}
