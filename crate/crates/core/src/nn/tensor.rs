use super::error::NnError;
use super::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) && !data.is_empty() {
            return Err(NnError::shape("tensor", format!("invalid shape {shape:?}")));
        }
        if expected != data.len() {
            return Err(NnError::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![T::zero(); len] }
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![value; len] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NnError> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Number of elements in one entry along axis 0.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, index: usize) -> &[T] {
        let len = self.row_len();
        &self.data[index * len..(index + 1) * len]
    }

    /// Copies the listed rows (along axis 0) into a new tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let len = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    /// Contiguous rows `start..end` along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let len = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self { shape, data: self.data[start * len..end * len].to_vec() }
    }

    /// Concatenates tensors along axis 0; trailing dims must agree.
    pub fn concat_rows(parts: &[Tensor<T>]) -> Result<Self, NnError> {
        let first = parts.first().ok_or_else(|| NnError::shape("concat", "no tensors to concatenate"))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(NnError::shape("concat", format!("trailing dims {:?} vs {:?}", &p.shape[1..], tail)));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_length() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("needs 6"));
    }

    #[test]
    fn gather_and_slice_rows() {
        let t = Tensor::<f32>::new(vec![3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(t.gather_rows(&[2, 0]).data(), &[4., 5., 0., 1.]);
        assert_eq!(t.slice_rows(1, 3).shape(), &[2, 2]);
        let c = Tensor::concat_rows(&[t.slice_rows(0, 1), t.slice_rows(1, 3)]).unwrap();
        assert_eq!(c, t);
    }
}
