use super::config::OptimizerKind;
use super::params::ModelParams;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMSPROP_DECAY: f64 = 0.99;
const EPS: f64 = 1e-8;

/// Adam or RMSprop over every tensor of [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(_, _, data)| vec![0.0; data.len()]).collect();
        Self {
            kind,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let grads: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, _, g)| g).collect();
        let t = self.step;
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[k];
            let v = &mut self.second[k];
            match self.kind {
                OptimizerKind::Adam => {
                    let m = &mut self.first[k];
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    for i in 0..p.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                    }
                }
                OptimizerKind::Rmsprop => {
                    for i in 0..p.len() {
                        v[i] = RMSPROP_DECAY * v[i] + (1.0 - RMSPROP_DECAY) * g[i] * g[i];
                        p[i] -= self.lr * g[i] / (v[i].sqrt() + EPS);
                    }
                }
            }
        }
    }
}
