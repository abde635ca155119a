//! Dense real vectors.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{FedroError, Result};

/// A point in `R^d` with finite entries.
///
/// Construction through [`Vector::new`] rejects NaN and infinities. The
/// arithmetic helpers do not re-check, so callers that may overflow (the
/// training loop under attack) test [`Vector::is_finite`] themselves.
#[derive(Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(FedroError::dim("vector must have dimension >= 1"));
        }
        if let Some(pos) = entries.iter().position(|x| !x.is_finite()) {
            return Err(FedroError::Value(format!(
                "entry {pos} is not finite ({})",
                entries[pos]
            )));
        }
        Ok(Vector(entries))
    }

    pub fn scalar(x: f64) -> Self {
        Vector::new(vec![x]).expect("finite scalar")
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "vector must have dimension >= 1");
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "vector must have dimension >= 1");
        Vector(vec![value; dim])
    }

    /// Wraps raw entries without the finiteness check.
    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        debug_assert!(!entries.is_empty());
        Vector(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|a| alpha * a).collect())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &Vector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&x| f(x)).collect())
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = FedroError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        Vector::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Checks that `xs` is non-empty with a common dimension and returns it.
pub(crate) fn common_dim(xs: &[Vector]) -> Result<usize> {
    let first = xs
        .first()
        .ok_or_else(|| FedroError::dim("empty input: at least one vector required"))?;
    let d = first.dim();
    if let Some(k) = xs.iter().position(|x| x.dim() != d) {
        return Err(FedroError::dim(format!(
            "vector {k} has dimension {} but vector 0 has dimension {d}",
            xs[k].dim()
        )));
    }
    Ok(d)
}

/// Mean of `xs` accumulated as offsets from the first point, so a set of
/// identical points averages to that point bit for bit.
pub(crate) fn anchored_mean<'a>(xs: impl IntoIterator<Item = &'a Vector>) -> Vector {
    let mut iter = xs.into_iter();
    let anchor = iter.next().expect("anchored_mean needs a point");
    let mut acc = vec![0.0; anchor.dim()];
    let mut count = 1usize;
    for x in iter {
        for (a, (xi, ai)) in acc.iter_mut().zip(x.0.iter().zip(&anchor.0)) {
            *a += xi - ai;
        }
        count += 1;
    }
    let inv = count as f64;
    Vector(
        anchor
            .0
            .iter()
            .zip(acc)
            .map(|(a, s)| a + s / inv)
            .collect(),
    )
}
