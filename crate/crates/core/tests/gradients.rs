//! Finite-difference checks for every differentiable primitive on randomized
//! small shapes, plus composite blocks (attention, swin block).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxmae::autodiff::gradcheck::grad_check;
use voxmae::autodiff::graph::{Ops, TapeOps, Var};
use voxmae::autodiff::kernels::indexmap::IndexPlan;
use voxmae::autodiff::params::{ParamKind, ParamSet};
use voxmae::autodiff::NdArray;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn randomized(params: &mut ParamSet, seed: u64, lo: f64, hi: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..params.len() {
        for v in params.value_mut(id).data_mut() {
            *v = rng.gen_range(lo..hi);
        }
    }
}

fn check<F>(name: &str, params: &mut ParamSet, build: F)
where
    F: Fn(&mut TapeOps, &[Var]) -> Var,
{
    let report = grad_check(params, build, STEP, TOL).unwrap();
    assert!(
        report.pass,
        "{name}: max rel error {} over tolerance {}",
        report.max_rel_error, report.tolerance
    );
}

fn single(shape: Vec<usize>, seed: u64, lo: f64, hi: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.register("x", shape, ParamKind::Weight);
    randomized(&mut p, seed, lo, hi);
    p
}

#[test]
fn elementwise_unary_primitives() {
    for (name, f) in [
        ("gelu", (|o: &mut TapeOps, v: &Var| o.gelu(v)) as fn(&mut TapeOps, &Var) -> Var),
        ("sigmoid", |o, v| o.sigmoid(v)),
        ("softplus", |o, v| o.softplus(v)),
        ("relu", |o, v| o.relu(v)),
        ("scale", |o, v| o.scale(v, -1.7)),
        ("add_scalar", |o, v| o.add_scalar(v, 0.3)),
    ] {
        let mut p = single(vec![2, 5], 3, -1.5, 1.5);
        check(name, &mut p, |o, vars| {
            let y = f(o, &vars[0]);
            let sq = o.mul(&y, &y);
            o.sum_all(&sq)
        });
    }
    // log and powf need positive inputs
    for (name, f) in [
        ("log", (|o: &mut TapeOps, v: &Var| o.log(v)) as fn(&mut TapeOps, &Var) -> Var),
        ("powf", |o, v| o.powf(v, 1.7)),
    ] {
        let mut p = single(vec![7], 5, 0.2, 2.0);
        check(name, &mut p, |o, vars| {
            let y = f(o, &vars[0]);
            o.sum_all(&y)
        });
    }
}

#[test]
fn elementwise_binary_primitives() {
    let mut p = ParamSet::new();
    p.register("a", vec![3, 4], ParamKind::Weight);
    p.register("b", vec![3, 4], ParamKind::Weight);
    randomized(&mut p, 7, 0.3, 1.8); // positive so div is well conditioned
    for (name, f) in [
        (
            "add",
            (|o: &mut TapeOps, a: &Var, b: &Var| o.add(a, b)) as fn(&mut TapeOps, &Var, &Var) -> Var,
        ),
        ("sub", |o, a, b| o.sub(a, b)),
        ("mul", |o, a, b| o.mul(a, b)),
        ("div", |o, a, b| o.div(a, b)),
        ("minimum", |o, a, b| o.minimum(a, b)),
    ] {
        check(name, &mut p, |o, vars| {
            let y = f(o, &vars[0], &vars[1]);
            let sq = o.mul(&y, &y);
            o.sum_all(&sq)
        });
    }
}

#[test]
fn softmax_and_log_softmax() {
    let mut p = single(vec![4, 6], 9, -2.0, 2.0);
    check("softmax_last", &mut p, |o, vars| {
        let y = o.softmax_last(&vars[0]);
        // weight rows so the gradient is nontrivial
        let w = o.constant(NdArray::new(
            vec![4, 6],
            (0..24).map(|i| (i as f64 * 0.37).sin()).collect(),
        ));
        let wy = o.mul(&y, &w);
        o.sum_all(&wy)
    });
    check("log_softmax_last", &mut p, |o, vars| {
        let y = o.log_softmax_last(&vars[0]);
        let w = o.constant(NdArray::new(
            vec![4, 6],
            (0..24).map(|i| (i as f64 * 0.13).cos()).collect(),
        ));
        let wy = o.mul(&y, &w);
        o.sum_all(&wy)
    });
}

#[test]
fn matmul_and_bmm() {
    let mut p = ParamSet::new();
    p.register("a", vec![3, 4], ParamKind::Weight);
    p.register("b", vec![4, 2], ParamKind::Weight);
    randomized(&mut p, 11, -1.0, 1.0);
    check("matmul", &mut p, |o, vars| {
        let y = o.matmul(&vars[0], &vars[1]);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });

    let mut p = ParamSet::new();
    p.register("a", vec![2, 3, 4], ParamKind::Weight);
    p.register("b", vec![2, 4, 3], ParamKind::Weight);
    p.register("bt", vec![2, 5, 4], ParamKind::Weight);
    randomized(&mut p, 13, -1.0, 1.0);
    check("bmm", &mut p, |o, vars| {
        let y = o.bmm(&vars[0], &vars[1], false);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });
    check("bmm_transposed", &mut p, |o, vars| {
        // a [2,3,4] @ bt^T with bt [2,5,4] -> [2,3,5]
        let y = o.bmm(&vars[0], &vars[2], true);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });
}

#[test]
fn linear_layers_and_rowvec() {
    let mut p = ParamSet::new();
    p.register("x", vec![5, 3], ParamKind::Weight);
    p.register("w", vec![3, 4], ParamKind::Weight);
    p.register("b", vec![4], ParamKind::Bias);
    randomized(&mut p, 15, -1.0, 1.0);
    check("linear", &mut p, |o, vars| {
        let y = o.linear(&vars[0], &vars[1], &vars[2]);
        let g = o.gelu(&y);
        o.sum_all(&g)
    });
}

#[test]
fn conv3d_gradients() {
    for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 0)] {
        let mut p = ParamSet::new();
        p.register("x", vec![2, 4, 4, 4], ParamKind::Weight);
        p.register("w", vec![3, 2, 2, 2, 2], ParamKind::Weight);
        p.register("b", vec![3], ParamKind::Bias);
        randomized(&mut p, 17 + stride as u64, -0.8, 0.8);
        check(&format!("conv3d s{stride} p{pad}"), &mut p, move |o, vars| {
            let y = o.conv3d(&vars[0], &vars[1], Some(&vars[2]), stride, pad);
            let sq = o.mul(&y, &y);
            o.sum_all(&sq)
        });
    }
}

#[test]
fn conv_transpose3d_gradients() {
    let mut p = ParamSet::new();
    p.register("x", vec![3, 2, 2, 2], ParamKind::Weight);
    p.register("w", vec![3, 2, 2, 2, 2], ParamKind::Weight);
    p.register("b", vec![2], ParamKind::Bias);
    randomized(&mut p, 19, -0.8, 0.8);
    check("conv_transpose3d", &mut p, |o, vars| {
        let y = o.conv_transpose3d(&vars[0], &vars[1], Some(&vars[2]), 2);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });
}

#[test]
fn norm_gradients() {
    let mut p = ParamSet::new();
    p.register("x", vec![4, 6], ParamKind::Weight);
    p.register("g", vec![6], ParamKind::NormGamma);
    p.register("b", vec![6], ParamKind::NormBeta);
    randomized(&mut p, 21, -1.2, 1.2);
    check("layer_norm", &mut p, |o, vars| {
        let y = o.layer_norm(&vars[0], &vars[1], &vars[2], 1e-5);
        let s = o.sigmoid(&y);
        o.sum_all(&s)
    });

    let mut p = ParamSet::new();
    p.register("x", vec![2, 3, 2, 2], ParamKind::Weight);
    p.register("g", vec![2], ParamKind::NormGamma);
    p.register("b", vec![2], ParamKind::NormBeta);
    randomized(&mut p, 23, -1.2, 1.2);
    check("instance_norm", &mut p, |o, vars| {
        let y = o.instance_norm(&vars[0], &vars[1], &vars[2], 1e-5);
        let s = o.gelu(&y);
        o.sum_all(&s)
    });
}

#[test]
fn gather_concat_reshape_gradients() {
    let plan = IndexPlan::new(vec![6], vec![2, 0, 1, 1, 4, u32::MAX], 5);
    let mut p = ParamSet::new();
    p.register("x", vec![5], ParamKind::Weight);
    randomized(&mut p, 25, -1.0, 1.0);
    check("gather", &mut p, move |o, vars| {
        let y = o.gather(&vars[0], &plan);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });

    let mut p = ParamSet::new();
    p.register("a", vec![3, 2], ParamKind::Weight);
    p.register("b", vec![3, 4], ParamKind::Weight);
    randomized(&mut p, 27, -1.0, 1.0);
    check("concat_last", &mut p, |o, vars| {
        let y = o.concat_last(&vars[0], &vars[1]);
        let g = o.gelu(&y);
        o.sum_all(&g)
    });

    let mut p = single(vec![2, 6], 29, -1.0, 1.0);
    check("reshape", &mut p, |o, vars| {
        let y = o.reshape(&vars[0], vec![3, 4]);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });
}

#[test]
fn composite_volume_rendering_gradients() {
    let mut p = ParamSet::new();
    p.register("density", vec![2, 5], ParamKind::Weight);
    p.register("rgb", vec![2, 5, 3], ParamKind::Weight);
    randomized(&mut p, 31, 0.05, 2.0);
    let deltas = NdArray::filled(vec![2, 5], 0.2);
    check("composite", &mut p, move |o, vars| {
        let c = o.composite(&vars[0], &vars[1], &deltas, [0.2, 0.4, 0.6]);
        let sq = o.mul(&c, &c);
        o.sum_all(&sq)
    });
}

#[test]
fn trilinear_gradients() {
    let coords = Arc::new(vec![
        [0.3, 0.7, 1.2],
        [1.9, 0.1, 0.4],
        [-0.5, 2.8, 1.0], // clamped
    ]);
    let mut p = ParamSet::new();
    p.register("lattice", vec![3, 3, 3, 2], ParamKind::Weight);
    randomized(&mut p, 33, -1.0, 1.0);
    check("trilinear_sample", &mut p, move |o, vars| {
        let y = o.trilinear_sample(&vars[0], &coords);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });

    let mut p = ParamSet::new();
    p.register("x", vec![2, 3, 3, 3], ParamKind::Weight);
    randomized(&mut p, 35, -1.0, 1.0);
    check("trilinear_resize", &mut p, |o, vars| {
        let y = o.trilinear_resize(&vars[0], [5, 4, 6]);
        let sq = o.mul(&y, &y);
        o.sum_all(&sq)
    });
}

#[test]
fn softmax_attention_micro_block() {
    // 2 tokens, 1 head: q,k,v projections through softmax attention
    let mut p = ParamSet::new();
    p.register("x", vec![2, 3], ParamKind::Weight);
    p.register("wq", vec![3, 3], ParamKind::Weight);
    p.register("wk", vec![3, 3], ParamKind::Weight);
    p.register("wv", vec![3, 3], ParamKind::Weight);
    randomized(&mut p, 37, -0.9, 0.9);
    check("attention_micro", &mut p, |o, vars| {
        let q = o.matmul(&vars[0], &vars[1]);
        let k = o.matmul(&vars[0], &vars[2]);
        let v = o.matmul(&vars[0], &vars[3]);
        let q3 = o.reshape(&q, vec![1, 2, 3]);
        let k3 = o.reshape(&k, vec![1, 2, 3]);
        let v3 = o.reshape(&v, vec![1, 2, 3]);
        let q3 = o.scale(&q3, 1.0 / (3.0f64).sqrt());
        let scores = o.bmm(&q3, &k3, true);
        let attn = o.softmax_last(&scores);
        let out = o.bmm(&attn, &v3, false);
        let sq = o.mul(&out, &out);
        o.sum_all(&sq)
    });
}
