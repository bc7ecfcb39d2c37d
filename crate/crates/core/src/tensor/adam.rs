//! Adam with bias correction over a [`ParamSet`].

use super::params::ParamSet;
use super::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { cfg, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `grads` must be aligned with `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(
            grads.len(),
            params.len(),
            "adam: {} grads for {} params",
            grads.len(),
            params.len()
        );
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for pid in params.ids() {
            let i = pid.index();
            let g = &grads[i];
            assert_eq!(
                g.shape(),
                params.get(pid).shape(),
                "adam: grad shape {:?} vs param {:?} ({})",
                g.shape(),
                params.get(pid).shape(),
                params.name(pid)
            );
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(pid).data_mut();
            for k in 0..g.len() {
                let gk = g.data()[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(v: f64) -> (ParamSet, AdamState) {
        let mut ps = ParamSet::new();
        ps.add("p", Tensor::from_vec(vec![v]));
        let st = AdamState::new(&ps, AdamConfig::default());
        (ps, st)
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let (mut ps, mut st) = setup(1.25);
        st.step(&mut ps, &[Tensor::from_vec(vec![0.0])]);
        assert_eq!(ps.by_name("p").unwrap().data(), &[1.25]);
    }

    #[test]
    fn first_step_is_minus_lr_times_sign() {
        // With bias correction, step 1 gives lr * g / (|g| + eps) ~ lr * sign(g).
        for &g in &[3.0, -0.04] {
            let (mut ps, mut st) = setup(0.0);
            st.step(&mut ps, &[Tensor::from_vec(vec![g])]);
            let got = ps.by_name("p").unwrap().data()[0];
            let want = -0.001 * g.signum();
            assert!((got - want).abs() < 1e-6, "g={}: got {}", g, got);
        }
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let (mut ps, mut st) = setup(0.0);
        assert_eq!(st.step_count(), 0);
        st.step(&mut ps, &[Tensor::from_vec(vec![1.0])]);
        assert_eq!(st.step_count(), 1);
        st.step(&mut ps, &[Tensor::from_vec(vec![1.0])]);
        assert_eq!(st.step_count(), 2);
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut grads = vec![Tensor::from_vec(vec![3.0, 4.0])];
        let norm = clip_global_norm(&mut grads, 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0].data(), &[3.0, 4.0]);
        let norm = clip_global_norm(&mut grads, 1.0);
        assert_eq!(norm, 5.0);
        let clipped: f64 = grads[0].data().iter().map(|x| x * x).sum::<f64>();
        assert!((clipped.sqrt() - 1.0).abs() < 1e-12);
    }
}
