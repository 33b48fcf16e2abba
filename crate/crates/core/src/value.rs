//! Dense row-major tensors without gradient tracking.
//!
//! [`Value`] is the storage type shared by the tape (node payloads), the
//! parameter set, and the data pipeline. Shape `[]` denotes a scalar; the
//! element count is always the product of the dimensions.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Product of the dimensions; the empty shape is a scalar with one element.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, len, inner) so that flat index
/// `(o * len + a) * inner + i` walks the tensor with `a` running along `axis`.
pub fn axis_parts(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Views an n-d shape as a matrix: (rows = product of leading dims, last dim).
pub fn rows_last(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((last, lead)) => (lead.iter().product(), *last),
        None => (1, 1),
    }
}

pub fn fmt_shape(shape: &[usize]) -> String {
    format!("{:?}", shape)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Value<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Value<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "Value::new",
                format!("{} elements for shape {:?}", numel(&shape), shape),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Value { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Value {
            shape: shape.to_vec(),
            data: vec![S::ZERO; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        Value {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: S) -> Self {
        Value {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_f64s(shape: &[usize], vals: &[f64]) -> Result<Self> {
        Value::new(shape.to_vec(), vals.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn to_f64s(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Flat index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite_s())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.first_non_finite() {
            Some(index) => Err(Error::NonFinite {
                context: context.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numel_of_empty_shape_is_one() {
        assert_eq!(numel(&[]), 1);
        assert_eq!(numel(&[2, 3, 4]), 24);
    }

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Value::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn axis_decomposition() {
        assert_eq!(axis_parts(&[2, 5, 3], 1), (2, 5, 3));
        assert_eq!(axis_parts(&[4, 7], 0), (1, 4, 7));
        assert_eq!(rows_last(&[2, 5, 3]), (10, 3));
        assert_eq!(rows_last(&[]), (1, 1));
    }

    #[test]
    fn finite_scan_reports_first_offender() {
        let v = Value::<f64>::new(vec![3], vec![1.0, f64::NAN, f64::INFINITY]).unwrap();
        assert_eq!(v.first_non_finite(), Some(1));
        let e = v.ensure_finite("test").unwrap_err();
        assert!(e.to_string().contains("index 1"));
    }
}
