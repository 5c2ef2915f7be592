//! Central finite-difference checking of recorded gradients.

use crate::autodiff::array::NdArray;
use crate::autodiff::graph::{TapeOps, Var};
use crate::autodiff::params::ParamSet;
use crate::error::{Error, Result};

const EPS_DENOM: f64 = 1e-8;

#[derive(Debug)]
pub struct GradReportEntry {
    pub name: String,
    pub analytic: NdArray,
    pub numeric: NdArray,
    pub max_rel_error: f64,
}

/// Per-parameter analytic vs numeric gradients of one scalar loss.
#[derive(Debug)]
pub struct GradReport {
    pub entries: Vec<GradReportEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks the recorded gradient of `build` against central differences
/// `(f(p+h) - f(p-h)) / 2h` on every parameter entry.
///
/// `build` must be a deterministic function of the parameters; the baseline
/// is evaluated twice and a mismatch is reported as a determinism error.
pub fn grad_check<F>(params: &mut ParamSet, build: F, step: f64, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut TapeOps, &[Var]) -> Var,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut ops = TapeOps::new();
        let vars = params.bind(&mut ops);
        let loss = build(&mut ops, &vars);
        let v = ops.value(loss);
        if !v.is_scalar() {
            return Err(Error::Contract(format!(
                "grad_check loss must be scalar, got {:?}",
                v.shape()
            )));
        }
        Ok(v.item())
    };

    let base1 = eval(params)?;
    let base2 = eval(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::Determinism(format!(
            "two baseline evaluations differ: {base1} vs {base2}"
        )));
    }

    // analytic pass
    let mut ops = TapeOps::new();
    let vars = params.bind(&mut ops);
    let loss = build(&mut ops, &vars);
    let mut grads = ops.backward(loss)?;
    let analytic: Vec<NdArray> = params
        .iter()
        .map(|(id, p)| {
            grads
                .take(vars[id])
                .unwrap_or_else(|| NdArray::zeros(p.value.shape().to_vec()))
        })
        .collect();

    let mut entries = Vec::new();
    let mut max_rel = 0.0f64;
    for id in 0..params.len() {
        let n = params.value(id).len();
        let mut numeric = NdArray::zeros(params.value(id).shape().to_vec());
        for j in 0..n {
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + step;
            let fp = eval(params)?;
            params.value_mut(id).data_mut()[j] = orig - step;
            let fm = eval(params)?;
            params.value_mut(id).data_mut()[j] = orig;
            numeric.data_mut()[j] = (fp - fm) / (2.0 * step);
        }
        let mut worst = 0.0f64;
        for j in 0..n {
            let a = analytic[id].data()[j];
            let m = numeric.data()[j];
            let rel = (a - m).abs() / a.abs().max(m.abs()).max(EPS_DENOM);
            if rel > worst {
                worst = rel;
            }
        }
        if worst > max_rel {
            max_rel = worst;
        }
        entries.push(GradReportEntry {
            name: params.get(id).name.clone(),
            analytic: analytic[id].clone(),
            numeric,
            max_rel_error: worst,
        });
    }
    Ok(GradReport {
        entries,
        max_rel_error: max_rel,
        tolerance,
        pass: max_rel < tolerance,
    })
}
