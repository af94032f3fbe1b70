use super::tensor::Real;

/// A named parameter or statistics array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn filled(name: impl Into<String>, shape: Vec<usize>, value: T) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Trainable parameters plus normalization statistics, in the fixed order
/// the architecture declares them. The same type carries gradients, in
/// which case `buffers` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .chain(&self.buffers)
            .find(|t| t.name == name)
    }

    /// Zeroed copy of the trainable part.
    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|t| Tensor::filled(t.name.clone(), t.shape.clone(), T::zero()))
                .collect(),
            buffers: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.buffers)
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Parameters then buffers, in declaration order.
    pub fn flatten(&self) -> Vec<T> {
        self.params
            .iter()
            .chain(&self.buffers)
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let conv = |t: &Tensor<T>| Tensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
        };
        ParamSet {
            params: self.params.iter().map(conv).collect(),
            buffers: self.buffers.iter().map(conv).collect(),
        }
    }

    /// Euclidean norm over the trainable part.
    pub fn norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}
