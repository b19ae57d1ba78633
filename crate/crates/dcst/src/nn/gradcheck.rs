//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use crate::error::DcstError;

use super::store::ParameterStore;
use super::tape::{NodeId, Tape};

/// Per-parameter maximum relative error between tape and finite-difference
/// gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    /// Parameters whose error exceeds the tolerance.
    pub fn failures(&self) -> Vec<(&str, f64)> {
        self.per_param
            .iter()
            .filter(|(_, &e)| e > self.tol)
            .map(|(n, &e)| (n.as_str(), e))
            .collect()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Compare the tape gradient of a deterministic scalar function against
/// central finite differences over every coordinate of every parameter.
///
/// The function must be deterministic across calls (dropout off, any RNG
/// re-seeded inside `f`).
pub fn grad_check<F>(
    store: &ParameterStore,
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, DcstError>
where
    F: Fn(&ParameterStore, &mut Tape) -> NodeId,
{
    let mut tape = Tape::new();
    let loss = f(store, &mut tape);
    let base = tape.scalar_value(loss);
    if !base.is_finite() {
        return Err(DcstError::Numeric(format!("non-finite loss {base} in grad_check")));
    }
    let analytic = tape.backward(loss);

    let mut work = store.clone();
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    let mut per_param = BTreeMap::new();
    let mut max_rel = 0.0f64;
    for name in names {
        let dim = store.get(&name).dim();
        let zero = ndarray::Array2::zeros(dim);
        let grad = analytic.get(&name).unwrap_or(&zero);
        let mut worst = 0.0f64;
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = store.get(&name)[(r, c)];
                let mut eval_at = |x: f64| -> Result<f64, DcstError> {
                    let mut p = work.get(&name).clone();
                    p[(r, c)] = x;
                    work.set(&name, p);
                    let mut t = Tape::new();
                    let l = f(&work, &mut t);
                    let v = t.scalar_value(l);
                    if !v.is_finite() {
                        return Err(DcstError::Numeric(format!(
                            "non-finite loss while perturbing {name}[{r},{c}]"
                        )));
                    }
                    Ok(v)
                };
                let plus = eval_at(orig + h)?;
                let minus = eval_at(orig - h)?;
                eval_at(orig)?; // restore
                let fd = (plus - minus) / (2.0 * h);
                worst = worst.max(rel_err(grad[(r, c)], fd));
            }
        }
        max_rel = max_rel.max(worst);
        per_param.insert(name, worst);
    }
    Ok(GradCheckReport { per_param, max_rel_err: max_rel, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_matches_analytic() {
        let mut store = ParameterStore::new();
        store.insert("w", array![[3.0]]);
        let report = grad_check(
            &store,
            |s, t| {
                let w = t.param("w", s.get("w").clone());
                let sq = t.mul(w, w);
                t.sum(sq)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "report: {:?}", report);
        // analytic gradient at w=3 is 6
        assert!(report.per_param["w"] < 1e-7);
    }

    #[test]
    fn broken_gradient_is_flagged() {
        let mut store = ParameterStore::new();
        store.insert("w", array![[2.0]]);
        // Loss is w^2 but we only report the gradient of 0.5*w^2 by scaling
        // after the sum is taken from a detached copy.
        let report = grad_check(
            &store,
            |s, t| {
                let w = t.param("w", s.get("w").clone());
                let detached = t.leaf(s.get("w").clone());
                let half = t.mul(w, detached); // d/dw = detached only
                t.sum(half)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().len(), 1);
    }

    #[test]
    fn mixed_primitive_chain_passes() {
        let mut store = ParameterStore::new();
        store.insert("w", array![[0.3, -0.2], [0.5, 0.1]]);
        store.insert("b", array![[0.05], [-0.4]]);
        let report = grad_check(
            &store,
            |s, t| {
                let w = t.param("w", s.get("w").clone());
                let b = t.param("b", s.get("b").clone());
                let x = t.leaf(array![[1.0, -0.5], [0.2, 0.8]]);
                let y = t.affine(w, x, b);
                let y = t.tanh(y);
                let y = t.elu(y);
                let sm = t.softmax_cols_node(y);
                let y2 = t.mul(sm, y);
                t.sum(y2)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "max err {}", report.max_rel_err);
    }
}
