use serde::{Deserialize, Serialize};

use crate::error::{DrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            learning_rate,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for a fixed list of parameter tensors. One trainer owns
/// and mutates a state; nothing here is shared.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, tensor_lengths: &[usize]) -> Result<Self> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(DrError::config(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        let (first, second) = match config.kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (
                tensor_lengths.iter().map(|&n| vec![0.0; n]).collect(),
                tensor_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        Ok(Self {
            config,
            first,
            second,
            step: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. Every gradient is checked before any parameter is
    /// touched, so a rejected step leaves params and state unchanged.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DrError::shape(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(DrError::shape(format!(
                    "tensor {t}: {} params vs {} grads",
                    p.len(),
                    g.len()
                )));
            }
            if let OptimizerKind::Adam { .. } = self.config.kind {
                if self.first.get(t).map(Vec::len) != Some(p.len()) {
                    return Err(DrError::shape(format!(
                        "tensor {t} does not match optimizer moments"
                    )));
                }
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(DrError::NonFinite {
                    tensor: t,
                    index: i,
                    value: g[i],
                });
            }
        }
        if let OptimizerKind::Adam { .. } = self.config.kind {
            if self.first.len() != params.len() {
                return Err(DrError::shape(
                    "tensor count does not match optimizer moments",
                ));
            }
        }

        self.step += 1;
        let lr = self.config.learning_rate;
        let wd = self.config.weight_decay;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * (gi + wd * *pi);
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    for i in 0..p.len() {
                        let gi = g[i] + wd * p[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step1(state: &mut OptimizerState, p: &mut f64, g: f64) -> Result<()> {
        let mut pv = [*p];
        let r = state.step(&mut [&mut pv[..]], &[&[g][..]]);
        *p = pv[0];
        r
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        for cfg in [OptimizerConfig::adam(0.1), OptimizerConfig::sgd(0.1)] {
            let mut st = OptimizerState::new(cfg, &[3]).unwrap();
            let mut p = vec![1.0, -2.0, 0.5];
            let orig = p.clone();
            st.step(&mut [&mut p[..]], &[&[0.0, 0.0, 0.0][..]]).unwrap();
            assert_eq!(p, orig);
        }
    }

    #[test]
    fn sgd_single_step() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd(0.1), &[1]).unwrap();
        let mut p = 2.0;
        step1(&mut st, &mut p, 1.0).unwrap();
        assert!((p - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_hand_unrolled_recurrence() {
        // f(x) = (x - 3)², grad = 2(x - 3); three steps from x = 0.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.05f64);
        let mut st = OptimizerState::new(OptimizerConfig::adam(lr), &[1]).unwrap();
        let mut x = 0.0;

        let (mut xr, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (xr - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            xr -= lr * mh / (vh.sqrt() + eps);

            let gx = 2.0 * (x - 3.0);
            step1(&mut st, &mut x, gx).unwrap();
            assert_eq!(x, xr, "step {t}");
        }
        // First Adam step moves by ~lr regardless of gradient scale.
        assert!(x > 0.14 && x < 0.16, "{x}");
        assert_eq!(st.steps_taken(), 3);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.1), &[2, 1]).unwrap();
        let mut a = vec![1.0, 2.0];
        let mut b = vec![3.0];
        let err = st
            .step(
                &mut [&mut a[..], &mut b[..]],
                &[&[0.1, 0.1][..], &[f64::NAN][..]],
            )
            .unwrap_err();
        match err {
            DrError::NonFinite { tensor, index, .. } => assert_eq!((tensor, index), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(a, vec![1.0, 2.0]);
        assert_eq!(st.steps_taken(), 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut st = OptimizerState::new(OptimizerConfig::sgd(0.1), &[2]).unwrap();
        let mut a = vec![1.0, 2.0];
        assert!(st.step(&mut [&mut a[..]], &[&[0.1][..]]).is_err());
    }

    #[test]
    fn optimizer_is_deterministic() {
        let run = || {
            let mut st = OptimizerState::new(OptimizerConfig::adam(0.01), &[4]).unwrap();
            let mut p = vec![0.1, 0.2, 0.3, 0.4];
            for k in 0..10 {
                let g: Vec<f64> = p.iter().map(|x| x * (k as f64 + 1.0)).collect();
                st.step(&mut [&mut p[..]], &[&g[..]]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
