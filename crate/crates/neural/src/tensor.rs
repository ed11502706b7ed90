use crate::error::{NeuralError, Result};

/// Dense real tensor in `(batch, channels, height, width)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(NeuralError::InvalidModel(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    /// Per-sample shape `(channels, height, width)`.
    pub fn sample_dims(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.dims;
        ((n * cs + c) * hs + h) * ws + w
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Same values, new per-sample shape. The element count must agree.
    pub fn reshaped(mut self, sample_dims: [usize; 3]) -> Result<Self> {
        let len: usize = sample_dims.iter().product();
        if len != self.sample_len() {
            return Err(NeuralError::InvalidModel(format!(
                "cannot reshape {:?} to {sample_dims:?}",
                self.sample_dims()
            )));
        }
        self.dims = [self.dims[0], sample_dims[0], sample_dims[1], sample_dims[2]];
        Ok(self)
    }

    /// Gathers the listed samples (in order) into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            dims: [indices.len(), self.dims[1], self.dims[2], self.dims[3]],
            data,
        }
    }

    /// Stacks single-batch-compatible tensors along the batch axis.
    pub fn stack(parts: &[Tensor4]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(NeuralError::InvalidModel("cannot stack zero tensors".into()));
        };
        let sd = first.sample_dims();
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.sample_dims() != sd {
                return Err(NeuralError::InvalidModel(format!(
                    "stack: sample dims {:?} vs {sd:?}",
                    p.sample_dims()
                )));
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            dims: [batch, sd[0], sd[1], sd[2]],
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_row_major() {
        let t = Tensor4::from_vec([2, 2, 2, 3], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(1, 0, 1, 2), 17.0);
        assert_eq!(t.sample(1)[0], 12.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor4::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn select_and_stack_agree() {
        let t = Tensor4::from_vec([3, 1, 1, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = t.select(&[2, 0]);
        assert_eq!(s.data(), &[5., 6., 1., 2.]);
        let st = Tensor4::stack(&[t.select(&[2]), t.select(&[0])]).unwrap();
        assert_eq!(st, s);
    }
}
