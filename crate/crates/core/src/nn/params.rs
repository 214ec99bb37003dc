use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};

use super::Real;

/// Named array. Names double as checkpoint keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub value: ArrayD<T>,
}

/// Ordered collection of tensors addressed by the index returned from
/// [`ParamSet::push`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<T>) -> usize {
        self.tensors.push(Tensor {
            name: name.into(),
            value,
        });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: usize) -> &ArrayD<T> {
        &self.tensors[id].value
    }

    pub fn get_mut(&mut self, id: usize) -> &mut ArrayD<T> {
        &mut self.tensors[id].value
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn m2(&self, id: usize) -> ArrayView2<'_, T> {
        self.get(id)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matrix parameter")
    }

    pub fn v1(&self, id: usize) -> ArrayView1<'_, T> {
        self.get(id)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("vector parameter")
    }

    pub fn m2_mut(&mut self, id: usize) -> ArrayViewMut2<'_, T> {
        self.get_mut(id)
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("matrix parameter")
    }

    pub fn v1_mut(&mut self, id: usize) -> ArrayViewMut1<'_, T> {
        self.get_mut(id)
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("vector parameter")
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    value: ArrayD::zeros(IxDyn(t.value.shape())),
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.value.fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    value: t.value.mapv(|v| U::lit(v.f64())),
                })
                .collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ParamSet<T>, scale: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.value.scaled_add(scale, &b.value);
        }
    }

    /// Bitwise equality of every value, used to assert that inference leaves
    /// parameters untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors {
            for v in t.value.iter() {
                h ^= v.f64().to_bits();
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}
