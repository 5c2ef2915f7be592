//! Adaptive-moment optimizer, global-norm clipping, and the one-cycle
//! learning-rate schedule used by every training loop in the crate.

use crate::autodiff::array::NdArray;
use crate::autodiff::params::{ParamKind, ParamSet};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to `Weight` parameters only.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<NdArray>,
    v: Vec<NdArray>,
    pub step_count: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let m = params
            .iter()
            .map(|(_, p)| NdArray::zeros(p.value.shape().to_vec()))
            .collect();
        let v = params
            .iter()
            .map(|(_, p)| NdArray::zeros(p.value.shape().to_vec()))
            .collect();
        Adam {
            cfg,
            m,
            v,
            step_count: 0,
        }
    }

    /// One update. `grads` is aligned with the parameter set; `None` entries
    /// (unreachable parameters) are skipped entirely.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<NdArray>], lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for id in 0..params.len() {
            let g = match &grads[id] {
                Some(g) => g,
                None => continue,
            };
            if !params.get(id).requires_grad {
                continue;
            }
            let decay = if params.get(id).kind == ParamKind::Weight {
                self.cfg.weight_decay
            } else {
                0.0
            };
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let p = params.value_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + self.cfg.eps) + decay * p[i]);
            }
        }
    }

    /// Moment buffers for checkpointing, aligned with parameter ids.
    pub fn moments(&self) -> (&[NdArray], &[NdArray]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, m: Vec<NdArray>, v: Vec<NdArray>, step_count: u64) {
        self.m = m;
        self.v = v;
        self.step_count = step_count;
    }
}

/// Scales gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Option<NdArray>], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter().flatten() {
        for &v in g.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One-cycle schedule: cosine ramp from `max_lr / div_factor` up to exactly
/// `max_lr` at the peak step, then cosine anneal down to
/// `max_lr / final_div_factor`.
#[derive(Debug, Clone)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle {
            max_lr,
            total_steps: total_steps.max(1),
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn peak_step(&self) -> usize {
        (((self.total_steps - 1) as f64) * self.pct_start).round() as usize
    }

    /// Learning rate for a zero-based step index.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps - 1);
        let peak = self.peak_step();
        let initial = self.max_lr / self.div_factor;
        let final_lr = self.max_lr / self.final_div_factor;
        if step >= peak {
            let span = (self.total_steps - 1 - peak).max(1) as f64;
            if step == peak {
                return self.max_lr; // exact at the peak
            }
            let frac = (step - peak) as f64 / span;
            final_lr + (self.max_lr - final_lr) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            let frac = step as f64 / peak as f64;
            initial
                + (self.max_lr - initial) * 0.5 * (1.0 - (std::f64::consts::PI * frac).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_peaks_exactly_at_max_lr() {
        let sched = OneCycle::new(3e-4, 200);
        let peak = sched.peak_step();
        assert_eq!(sched.lr_at(peak), 3e-4);
        for s in 0..200 {
            assert!(sched.lr_at(s) <= 3e-4 + 1e-18);
        }
        assert!(sched.lr_at(0) < 3e-4 / 10.0);
        assert!(sched.lr_at(199) < sched.lr_at(peak) / 100.0);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = vec![Some(NdArray::new(vec![2], vec![0.03, 0.04]))];
        let norm = clip_global_norm(&mut grads, 0.1);
        assert!((norm - 0.05).abs() < 1e-12);
        assert_eq!(grads[0].as_ref().unwrap().data(), &[0.03, 0.04]);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = vec![
            Some(NdArray::new(vec![2], vec![3.0, 0.0])),
            Some(NdArray::new(vec![1], vec![4.0])),
        ];
        let norm = clip_global_norm(&mut grads, 0.1);
        assert!((norm - 5.0).abs() < 1e-12);
        let mut sq = 0.0;
        for g in grads.iter().flatten() {
            for &v in g.data() {
                sq += v * v;
            }
        }
        assert!((sq.sqrt() - 0.1).abs() <= 1e-9);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        use crate::autodiff::params::ParamKind;
        let mut p = ParamSet::new();
        let x = p.register("x", vec![1], ParamKind::Bias);
        p.value_mut(x).data_mut()[0] = 5.0;
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..400 {
            let g = 2.0 * p.value(x).data()[0];
            let grads = vec![Some(NdArray::new(vec![1], vec![g]))];
            opt.step(&mut p, &grads, 0.05);
        }
        assert!(p.value(x).data()[0].abs() < 0.5);
    }
}
