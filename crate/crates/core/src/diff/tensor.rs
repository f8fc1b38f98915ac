use super::scalar::Scalar;
use super::DiffError;

/// Dense row-major n-d array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, DiffError> {
        if numel(shape) != data.len() {
            return Err(DiffError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel(shape)],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, DiffError> {
        if numel(shape) != self.data.len() {
            return Err(DiffError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64c(v.to_f64c()))
                .collect(),
        }
    }

    /// Generic axis permutation; `axes[i]` is the source axis of output axis `i`.
    pub fn permuted(&self, axes: &[usize]) -> Result<Self, DiffError> {
        let nd = self.shape.len();
        if axes.len() != nd {
            return Err(DiffError::Shape(format!(
                "permute {:?} of rank-{} tensor",
                axes, nd
            )));
        }
        let mut seen = vec![false; nd];
        for &a in axes {
            if a >= nd || seen[a] {
                return Err(DiffError::Shape(format!("invalid permutation {:?}", axes)));
            }
            seen[a] = true;
        }
        let mut src_strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            src_strides[i] = src_strides[i + 1] * self.shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let n = self.data.len();
        let mut out = Vec::with_capacity(n);
        if n > 0 {
            let last = nd - 1;
            let mut idx = vec![0usize; nd];
            let mut off = 0usize;
            let inner = out_shape[last];
            let inner_stride = strides[last];
            'outer: loop {
                let mut o = off;
                for _ in 0..inner {
                    out.push(self.data[o]);
                    o += inner_stride;
                }
                // advance the multi-index, skipping the innermost axis
                let mut ax = last;
                loop {
                    if ax == 0 {
                        break 'outer;
                    }
                    ax -= 1;
                    idx[ax] += 1;
                    off += strides[ax];
                    if idx[ax] < out_shape[ax] {
                        break;
                    }
                    off -= strides[ax] * idx[ax];
                    idx[ax] = 0;
                }
            }
        }
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_arithmetic() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let p = t.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(p.data()[c * 6 + a * 3 + b], t.data()[a * 12 + b * 4 + c]);
                }
            }
        }
    }

    #[test]
    fn permute_rejects_bad_axes() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(t.permuted(&[0, 0]).is_err());
        assert!(t.permuted(&[0]).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::zeros(&[6]).reshaped(&[4]).is_err());
    }
}
