use super::AutodiffError;

/// Dense row-major array of finite `f64` values.
///
/// Rank 0 is a scalar, rank 1 is treated as a single row, rank 2 is a
/// matrix. Higher ranks can be stored but no operation accepts them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::InvalidArgument(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite("tensor construction"));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose values are already known to be finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AutodiffError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(AutodiffError::InvalidArgument("ragged rows".into()));
        }
        Self::matrix(r, c, rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Result<Self, AutodiffError> {
        Self::new(vec![], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for in-place parameter updates. Callers must keep the
    /// values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` view of a tensor of rank at most 2.
    pub fn dims2(&self) -> Result<(usize, usize), AutodiffError> {
        match self.shape.as_slice() {
            [] => Ok((1, 1)),
            [c] => Ok((1, *c)),
            [r, c] => Ok((*r, *c)),
            other => Err(AutodiffError::InvalidArgument(format!(
                "rank {} tensors are not supported",
                other.len()
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map_or(0, |d| d.0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map_or(0, |d| d.1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, AutodiffError> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(AutodiffError::NotScalar(self.shape.clone())),
        }
    }
}
