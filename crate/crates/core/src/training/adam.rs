use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::Checkpoint;
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter in store order.
/// Frozen parameters keep empty buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| {
                    if p.frozen {
                        Vec::new()
                    } else {
                        vec![0.0; p.value.numel()]
                    }
                })
                .collect()
        };
        AdamState {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update. `grads[i]` belongs to parameter `i`;
    /// `None` counts as a zero gradient. All gradients are checked for
    /// finiteness before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        for (p, g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.value.numel() {
                    return Err(TrainError::Config(format!(
                        "gradient for {} has {} entries, parameter has {}",
                        p.name,
                        g.len(),
                        p.value.numel()
                    )));
                }
                if !p.frozen && g.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let id = ParamId(i);
            if store.get(id).frozen {
                continue;
            }
            let mut w = store.get(id).value.to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..w.len() {
                let gk = g.as_ref().map_or(0.0, |g| g[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] -= lr * mh / (vh.sqrt() + epsilon);
            }
            store.set_data(id, w);
        }
        Ok(())
    }

    pub(crate) fn append_records(&self, store: &ParamStore, ck: &mut Checkpoint) {
        for (i, p) in store.iter().enumerate() {
            if p.frozen {
                continue;
            }
            let shape = p.value.shape();
            for (prefix, buf) in [(M_PREFIX, &self.m[i]), (V_PREFIX, &self.v[i])] {
                let t = Tensor::new(shape, buf.clone()).expect("moment buffer mirrors parameter");
                ck.records.push((format!("{prefix}{}", p.name), t));
            }
        }
    }

    /// Loads moments from `ck` if present; `t` is set to the checkpoint step.
    pub(crate) fn restore(&mut self, store: &ParamStore, ck: &Checkpoint) -> Result<()> {
        if !ck.records.iter().any(|(n, _)| n.starts_with(M_PREFIX)) {
            return Ok(());
        }
        for (i, p) in store.iter().enumerate() {
            if p.frozen {
                continue;
            }
            for (prefix, buf) in [(M_PREFIX, &mut self.m[i]), (V_PREFIX, &mut self.v[i])] {
                let name = format!("{prefix}{}", p.name);
                let t = ck.get(&name).ok_or_else(|| {
                    TrainError::Config(format!("checkpoint lacks optimizer record {name}"))
                })?;
                if t.shape() != p.value.shape() {
                    return Err(TrainError::Config(format!(
                        "optimizer record {name} has the wrong shape"
                    )));
                }
                *buf = t.to_vec();
            }
        }
        self.t = ck.step;
        Ok(())
    }
}
