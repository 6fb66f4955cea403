//! Weighted linear merging of same-architecture checkpoints.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Tensor, TensorStore};

/// Allowed deviation of un-normalized weights from a unit sum.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("need at least 2 inputs, got {0}")]
    TooFewInputs(usize),
    #[error("{stores} stores but {weights} weights")]
    CountMismatch { stores: usize, weights: usize },
    #[error("weight {index} is {weight}; weights must be finite and non-negative")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("weights sum to {sum}, not 1 (pass normalize to rescale)")]
    WeightSum { sum: f64 },
    #[error("input {index} key set differs: only in first input {only_first:?}, only in input {index} {only_other:?}")]
    KeyMismatch { index: usize, only_first: Vec<String>, only_other: Vec<String> },
    #[error("tensor `{name}`: shape {first:?} in first input but {other:?} in input {index}")]
    ShapeMismatch { name: String, index: usize, first: Vec<usize>, other: Vec<usize> },
    #[error("tensor `{name}`: dtype differs in input {index}")]
    DtypeMismatch { name: String, index: usize },
    #[error("tensor `{name}`: merged value is not finite")]
    NonFinite { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecipe {
    pub weights: Vec<f64>,
    pub normalize: bool,
}

impl MergeRecipe {
    pub fn new(weights: Vec<f64>, normalize: bool) -> Self {
        Self { weights, normalize }
    }

    pub fn equal(n: usize) -> Self {
        Self { weights: vec![1.0 / n as f64; n], normalize: true }
    }

    /// Checks the recipe and returns the weights actually applied.
    pub fn effective_weights(&self) -> Result<Vec<f64>, MergeError> {
        if self.weights.len() < 2 {
            return Err(MergeError::TooFewInputs(self.weights.len()));
        }
        for (index, &weight) in self.weights.iter().enumerate() {
            if !weight.is_finite() || weight < 0.0 {
                return Err(MergeError::InvalidWeight { index, weight });
            }
        }
        // Sorted so the sum, like the merge itself, ignores input order.
        let mut sorted = self.weights.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let sum: f64 = sorted.iter().sum();
        if self.normalize {
            if sum <= 0.0 {
                return Err(MergeError::WeightSum { sum });
            }
            Ok(self.weights.iter().map(|w| w / sum).collect())
        } else if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            Err(MergeError::WeightSum { sum })
        } else {
            Ok(self.weights.clone())
        }
    }
}

fn check_compatible(stores: &[TensorStore]) -> Result<(), MergeError> {
    let first = &stores[0];
    for (index, other) in stores.iter().enumerate().skip(1) {
        let a: BTreeSet<&String> = first.entries.keys().collect();
        let b: BTreeSet<&String> = other.entries.keys().collect();
        if a != b {
            return Err(MergeError::KeyMismatch {
                index,
                only_first: a.difference(&b).map(|s| s.to_string()).collect(),
                only_other: b.difference(&a).map(|s| s.to_string()).collect(),
            });
        }
        for (name, t) in &first.entries {
            let o = &other.entries[name];
            if t.dtype != o.dtype {
                return Err(MergeError::DtypeMismatch { name: name.clone(), index });
            }
            if t.shape != o.shape {
                return Err(MergeError::ShapeMismatch {
                    name: name.clone(),
                    index,
                    first: t.shape.clone(),
                    other: o.shape.clone(),
                });
            }
        }
    }
    Ok(())
}

/// `out[name][i] = Σ_k w_k · store_k[name][i]`.
///
/// Terms are accumulated in f64, in ascending order of value, and rounded to
/// f32 once. The fixed accumulation order makes the result independent of
/// input order. Tensors are merged in parallel.
pub fn linear_merge(stores: &[TensorStore], recipe: &MergeRecipe) -> Result<TensorStore, MergeError> {
    if stores.len() != recipe.weights.len() {
        return Err(MergeError::CountMismatch { stores: stores.len(), weights: recipe.weights.len() });
    }
    let weights = recipe.effective_weights()?;
    check_compatible(stores)?;

    let names: Vec<&String> = stores[0].entries.keys().collect();
    let merged: Vec<(String, Tensor)> = names
        .par_iter()
        .map(|&name| {
            let inputs: Vec<&Tensor> = stores.iter().map(|s| &s.entries[name]).collect();
            let first = inputs[0];
            let mut terms = vec![0f64; inputs.len()];
            let mut data = Vec::with_capacity(first.data.len());
            for i in 0..first.data.len() {
                for (term, (t, w)) in terms.iter_mut().zip(inputs.iter().zip(&weights)) {
                    *term = w * f64::from(t.data[i]);
                }
                terms.sort_unstable_by(f64::total_cmp);
                let value = terms.iter().sum::<f64>() as f32;
                if !value.is_finite() {
                    return Err(MergeError::NonFinite { name: name.clone() });
                }
                data.push(value);
            }
            Ok((name.clone(), Tensor { dtype: first.dtype, shape: first.shape.clone(), data }))
        })
        .collect::<Result<_, _>>()?;

    Ok(TensorStore { entries: merged.into_iter().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f32]) -> TensorStore {
        let mut s = TensorStore::new();
        s.insert("w", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn identity_weights() {
        let a = store(&[1.5, -2.0, 3.25]);
        let b = store(&[9.0, 9.0, 9.0]);
        let out = linear_merge(&[a.clone(), b], &MergeRecipe::new(vec![1.0, 0.0], false)).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn half_half() {
        let out = linear_merge(&[store(&[2.0]), store(&[4.0])], &MergeRecipe::new(vec![0.5, 0.5], false))
            .unwrap();
        assert_eq!(out.get("w").unwrap().data, vec![3.0]);
    }

    #[test]
    fn quarter_three_quarters() {
        let out = linear_merge(
            &[store(&[0.0, 8.0]), store(&[4.0, 0.0])],
            &MergeRecipe::new(vec![0.25, 0.75], false),
        )
        .unwrap();
        assert_eq!(out.get("w").unwrap().data, vec![3.0, 2.0]);
    }

    #[test]
    fn weight_sum_enforced_unless_normalized() {
        let stores = [store(&[1.0]), store(&[3.0])];
        let err = linear_merge(&stores, &MergeRecipe::new(vec![0.5, 0.4], false)).unwrap_err();
        assert!(matches!(err, MergeError::WeightSum { .. }));
        let out = linear_merge(&stores, &MergeRecipe::new(vec![1.0, 1.0], true)).unwrap();
        assert_eq!(out.get("w").unwrap().data, vec![2.0]);
    }

    #[test]
    fn invalid_weights() {
        let stores = [store(&[1.0]), store(&[3.0])];
        assert!(matches!(
            linear_merge(&stores, &MergeRecipe::new(vec![1.5, -0.5], false)),
            Err(MergeError::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            linear_merge(&stores, &MergeRecipe::new(vec![0.0, 0.0], true)),
            Err(MergeError::WeightSum { .. })
        ));
        assert!(matches!(
            linear_merge(&stores[..1], &MergeRecipe::new(vec![1.0], false)),
            Err(MergeError::TooFewInputs(1))
        ));
        assert!(matches!(
            linear_merge(&stores, &MergeRecipe::new(vec![0.5, 0.25, 0.25], false)),
            Err(MergeError::CountMismatch { .. })
        ));
    }

    #[test]
    fn key_mismatch_reports_symmetric_difference() {
        let mut a = store(&[1.0]);
        a.insert("only_a", Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        let mut b = store(&[1.0]);
        b.insert("only_b", Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        let err = linear_merge(&[a, b], &MergeRecipe::equal(2)).unwrap_err();
        assert_eq!(
            err,
            MergeError::KeyMismatch {
                index: 1,
                only_first: vec!["only_a".into()],
                only_other: vec!["only_b".into()]
            }
        );
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let a = store(&[1.0, 2.0]);
        let mut b = TensorStore::new();
        b.insert("w", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let err = linear_merge(&[a, b], &MergeRecipe::equal(2)).unwrap_err();
        assert!(matches!(err, MergeError::ShapeMismatch { ref name, .. } if name == "w"));
    }
}
