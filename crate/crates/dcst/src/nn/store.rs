//! Named parameter collections with Adam optimizer state.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::DcstError;

/// Shape + row-major data, the serialization form of a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorValue {
    pub fn from_array(a: &Array2<f64>) -> Self {
        TensorValue {
            shape: vec![a.nrows(), a.ncols()],
            data: a.iter().cloned().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>, DcstError> {
        if self.shape.len() != 2 {
            return Err(DcstError::Shape(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|e| DcstError::Shape(e.to_string()))
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Array2<f64>,
    v: Array2<f64>,
}

/// Hyperparameters of the Adam update.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named tensors plus per-parameter Adam moments and a shared step counter.
///
/// Iteration order is the lexicographic order of parameter names, which keeps
/// updates and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Array2<f64>>,
    adam: BTreeMap<String, AdamState>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            !self.params.contains_key(name),
            "duplicate parameter name {:?}",
            name
        );
        self.params.insert(name.to_string(), value);
    }

    pub fn set(&mut self, name: &str, value: Array2<f64>) {
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {:?}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|v| v.len()).sum()
    }

    /// Merge another store under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: &ParameterStore) {
        for (name, value) in &other.params {
            self.insert(&format!("{prefix}{name}"), value.clone());
        }
    }

    /// Bias-corrected Adam step over the given gradients. Parameters without
    /// a gradient entry are left untouched; the step counter increments once
    /// per call. `skip` filters out parameters excluded from updating
    /// (frozen encoders).
    pub fn adam_update(
        &mut self,
        grads: &BTreeMap<String, Array2<f64>>,
        cfg: &AdamConfig,
        skip: &dyn Fn(&str) -> bool,
    ) -> Result<(), DcstError> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (name, grad) in grads {
            if skip(name) {
                continue;
            }
            let param = self.params.get_mut(name).ok_or_else(|| {
                DcstError::Shape(format!("gradient for unknown parameter {:?}", name))
            })?;
            if grad.dim() != param.dim() {
                return Err(DcstError::Shape(format!(
                    "gradient shape {:?} != parameter shape {:?} for {:?}",
                    grad.dim(),
                    param.dim(),
                    name
                )));
            }
            let state = self.adam.entry(name.clone()).or_insert_with(|| AdamState {
                m: Array2::zeros(grad.dim()),
                v: Array2::zeros(grad.dim()),
            });
            state.m.zip_mut_with(grad, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            state.v.zip_mut_with(grad, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            ndarray::Zip::from(&mut *param)
                .and(&state.m)
                .and(&state.v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn no_skip(_: &str) -> bool {
        false
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut store = ParameterStore::new();
        store.insert("w", array![[1.0, -2.0]]);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), array![[0.5, -3.0]]);
        let cfg = AdamConfig { lr: 0.002, ..Default::default() };
        store.adam_update(&grads, &cfg, &no_skip).unwrap();
        // At step 1, m_hat/sqrt(v_hat) = g/|g|, so the update is -lr*sign(g)
        // up to the eps term.
        assert_abs_diff_eq!(store.get("w")[(0, 0)], 0.998, epsilon = 1e-9);
        assert_abs_diff_eq!(store.get("w")[(0, 1)], -1.998, epsilon = 1e-7);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn zero_grad_leaves_parameters() {
        let mut store = ParameterStore::new();
        store.insert("w", array![[1.5]]);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), array![[0.0]]);
        store.adam_update(&grads, &AdamConfig::default(), &no_skip).unwrap();
        assert_abs_diff_eq!(store.get("w")[(0, 0)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", array![[1.0, 2.0]]);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), array![[1.0]]);
        assert!(store.adam_update(&grads, &AdamConfig::default(), &no_skip).is_err());
    }

    #[test]
    fn skip_excludes_parameter() {
        let mut store = ParameterStore::new();
        store.insert("frozen.w", array![[1.0]]);
        let mut grads = BTreeMap::new();
        grads.insert("frozen.w".to_string(), array![[7.0]]);
        store
            .adam_update(&grads, &AdamConfig::default(), &|n| n.starts_with("frozen."))
            .unwrap();
        assert_eq!(store.get("frozen.w")[(0, 0)], 1.0);
    }

    #[test]
    fn tensor_value_round_trip() {
        let a = array![[1.0, 2.5], [-3.0, 0.0]];
        let tv = TensorValue::from_array(&a);
        assert_eq!(tv.shape, vec![2, 2]);
        assert_eq!(tv.to_array().unwrap(), a);
    }
}
