use crate::error::{FriError, Result};
use crate::kernels::C64;
use crate::linalg::CMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(FriError::DimensionMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn tensor_to_cmatrix(t: &Tensor) -> Result<CMatrix> {
    if t.rank() != 3 || t.shape[2] != 2 {
        return Err(FriError::DimensionMismatch(format!("expected [r, c, 2], got {:?}", t.shape)));
    }
    let (r, c) = (t.shape[0], t.shape[1]);
    Ok(CMatrix::from_fn(r, c, |i, j| {
        let k = 2 * (i * c + j);
        C64::new(t.data[k], t.data[k + 1])
    }))
}

pub fn cmatrix_to_tensor(m: &CMatrix) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(2 * r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)].re);
            data.push(m[(i, j)].im);
        }
    }
    Tensor { shape: vec![r, c, 2], data }
}
