use serde::{Deserialize, Serialize};

use crate::linalg::{LinalgError, Matrix};

/// Declaration of one named model parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Hidden 2-D weights are Muon-governed; everything else uses AdamW.
    pub hidden: bool,
}

impl ParamDecl {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, hidden: bool) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            hidden,
        }
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

/// Ordered, named collection of matrices: one model replica's parameters
/// (or anything shaped like them: gradients, deltas, momenta).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Matrix>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn zeros(decls: &[ParamDecl]) -> Self {
        let mut out = Self::new();
        for d in decls {
            out.push(d.name.clone(), Matrix::zeros(d.rows, d.cols));
        }
        out
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.names.push(name.into());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Matrix {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Matrix::zeros_like).collect(),
        }
    }

    /// Errors unless both sets have the same names and shapes in order.
    pub fn check_same_layout(&self, other: &ParamSet) -> Result<(), LinalgError> {
        if self.len() != other.len() {
            return Err(LinalgError::ShapeMismatch {
                left: (self.len(), 0),
                right: (other.len(), 0),
            });
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            a.check_same_shape(b)?;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet, LinalgError> {
        self.check_same_layout(other)?;
        let tensors = self
            .tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            names: self.names.clone(),
            tensors,
        })
    }

    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.len() == other.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bitwise_eq(b))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}
