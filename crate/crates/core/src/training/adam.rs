use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for a list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(array_lens: impl IntoIterator<Item = usize>) -> Self {
        let lens: Vec<usize> = array_lens.into_iter().collect();
        AdamState {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter arrays, {} gradient arrays, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "array {i}: parameter/gradient/state lengths differ"
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState::new([2]);
        adam_step(
            &mut [&mut p],
            &[&[0.0, 0.0]],
            &mut st,
            &AdamConfig::with_lr(0.1),
        )
        .unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut st = AdamState::new([3]);
        let cfg = AdamConfig {
            eps: 0.0,
            ..AdamConfig::with_lr(0.01)
        };
        adam_step(&mut [&mut p], &[&[3.0, -0.002, 1e5]], &mut st, &cfg).unwrap();
        for (v, expected) in p.iter().zip([-0.01, 0.01, -0.01]) {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut p: Vec<f64> = vec![1.0, 2.0];
            let mut st = AdamState::new([2]);
            for k in 0..50 {
                let g = [p[0].sin() * k as f64, p[1] - 0.3];
                adam_step(&mut [&mut p], &[&g], &mut st, &AdamConfig::with_lr(0.05)).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn shape_errors() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new([3]);
        let cfg = AdamConfig::with_lr(0.1);
        assert!(adam_step(&mut [&mut p], &[&[0.0, 0.0]], &mut st, &cfg).is_err());
        let mut st = AdamState::new([2]);
        assert!(adam_step(&mut [&mut p], &[&[0.0]], &mut st, &cfg).is_err());
        assert!(adam_step(
            &mut [&mut p],
            &[&[0.0, 0.0]],
            &mut st,
            &AdamConfig::with_lr(0.0)
        )
        .is_err());
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut p = vec![3.0];
        let mut st = AdamState::new([1]);
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.25)];
            adam_step(&mut [&mut p], &[&g], &mut st, &AdamConfig::with_lr(0.01)).unwrap();
        }
        assert!((p[0] - 1.25).abs() < 1e-3);
    }
}
