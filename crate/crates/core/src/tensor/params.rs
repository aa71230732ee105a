use rand::Rng;

use super::{Real, TResult, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors, in registration order. The optimizer and the
/// checkpoint format both walk this order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> TResult<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor with the same-named tensor of `other`; shapes
    /// must agree.
    pub fn load_from<U: Real>(&mut self, other: &ParamStore<U>) -> TResult<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let id = other
                .id(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            let src = other.get(id);
            if src.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_params",
                    left: t.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            *t = src.cast();
        }
        Ok(())
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-bound..bound)))
}
