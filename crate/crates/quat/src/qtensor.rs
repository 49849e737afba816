use crate::{QuatError, Quaternion, Result, Scalar, Tensor};

/// Batched quaternions stored component-major: `data[c * n + i]` holds
/// component `c` of element `i`, with `n` the product of `shape`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> QTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        QTensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); 4 * shape.iter().product::<usize>()],
        }
    }

    /// Every element set to `q`.
    pub fn filled(shape: &[usize], q: Quaternion<T>) -> Self {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(4 * n);
        for c in q.to_array() {
            data.extend(std::iter::repeat(c).take(n));
        }
        QTensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_components(shape: &[usize], comps: [Vec<T>; 4]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if let Some(bad) = comps.iter().find(|c| c.len() != n) {
            return Err(QuatError::BadLength {
                shape: shape.to_vec(),
                len: bad.len(),
            });
        }
        Ok(QTensor {
            shape: shape.to_vec(),
            data: comps.concat(),
        })
    }

    pub fn from_quaternions(shape: &[usize], qs: &[Quaternion<T>]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if qs.len() != n {
            return Err(QuatError::BadLength {
                shape: shape.to_vec(),
                len: qs.len(),
            });
        }
        let mut t = QTensor::zeros(shape);
        for (i, q) in qs.iter().enumerate() {
            t.set(i, *q);
        }
        Ok(t)
    }

    /// View a real tensor whose leading axis has length 4.
    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        match t.shape().first() {
            Some(4) => {
                let shape = t.shape()[1..].to_vec();
                Ok(QTensor {
                    shape,
                    data: t.into_data(),
                })
            }
            other => Err(QuatError::NotQuaternionLayout(other.copied().unwrap_or(0))),
        }
    }

    /// The real tensor `[4, ...shape]` sharing this buffer.
    pub fn into_tensor(self) -> Tensor<T> {
        let mut shape = vec![4];
        shape.extend_from_slice(&self.shape);
        Tensor::from_vec(&shape, self.data).expect("component-major buffer matches shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of quaternion elements.
    pub fn len(&self) -> usize {
        self.data.len() / 4
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn component(&self, c: usize) -> &[T] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize) -> Quaternion<T> {
        let n = self.len();
        Quaternion::new(
            self.data[i],
            self.data[n + i],
            self.data[2 * n + i],
            self.data[3 * n + i],
        )
    }

    pub fn set(&mut self, i: usize, q: Quaternion<T>) {
        let n = self.len();
        for (c, v) in q.to_array().into_iter().enumerate() {
            self.data[c * n + i] = v;
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(QuatError::BadLength {
                shape: shape.to_vec(),
                len: self.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(QuatError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Elementwise Hamilton product `self ⊗ other`.
    pub fn hamilton(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        let n = self.len();
        let mut out = QTensor::zeros(&self.shape);
        let (a, b) = (&self.data, &other.data);
        for i in 0..n {
            let (q0, q1, q2, q3) = (a[i], a[n + i], a[2 * n + i], a[3 * n + i]);
            let (p0, p1, p2, p3) = (b[i], b[n + i], b[2 * n + i], b[3 * n + i]);
            out.data[i] = q0 * p0 - q1 * p1 - q2 * p2 - q3 * p3;
            out.data[n + i] = q0 * p1 + q1 * p0 + q2 * p3 - q3 * p2;
            out.data[2 * n + i] = q0 * p2 - q1 * p3 + q2 * p0 + q3 * p1;
            out.data[3 * n + i] = q0 * p3 + q1 * p2 - q2 * p1 + q3 * p0;
        }
        Ok(out)
    }

    pub fn conjugate(&self) -> Self {
        let mut out = self.clone();
        let n = self.len();
        for v in &mut out.data[n..] {
            *v = -*v;
        }
        out
    }

    pub fn norms(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.get(i).norm()).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}
