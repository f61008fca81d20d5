use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Optimizer state. Adam keeps first/second moments per parameter tensor in
/// the order of [`Mlp::params_mut`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, net: &Mlp) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => {
                let mut probe = net.clone();
                let zeros: Vec<Vec<f64>> = probe.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
                Optimizer::Adam {
                    lr,
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                    t: 0,
                    m: zeros.clone(),
                    v: zeros,
                }
            }
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        let grads = grads.slices();
        let mut params = net.params_mut();
        debug_assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    for (w, d) in p.iter_mut().zip(g.iter()) {
                        *w -= *lr * d;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(&grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((w, &d), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = *beta1 * *m + (1.0 - *beta1) * d;
                        *v = *beta2 * *v + (1.0 - *beta2) * d * d;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= *lr * m_hat / (v_hat.sqrt() + *eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grads_like(net: &Mlp, value: f64) -> Gradients {
        let mut g = Gradients {
            dense: net.dense().to_vec(),
            norms: Vec::new(),
        };
        for d in &mut g.dense {
            d.weights.fill(value);
            d.bias.fill(value);
        }
        let mut tmp = net.clone();
        g.norms = tmp.norms_mut().to_vec();
        for n in &mut g.norms {
            n.scale.fill(value);
            n.shift.fill(value);
        }
        g
    }

    #[test]
    fn sgd_zero_gradient_is_noop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[3, 4, 5], &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, &net);
        opt.step(&mut net, &grads_like(&before, 0.0));
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[2, 3, 5], &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, &net);
        opt.step(&mut net, &grads_like(&before, 0.5));
        let w0 = before.dense()[0].weights[[0, 0]];
        let w1 = net.dense()[0].weights[[0, 0]];
        assert!((w0 - w1 - 1e-3).abs() < 1e-9);
    }
}
