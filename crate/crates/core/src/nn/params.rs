use rand::Rng;

use crate::error::{ensure, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Named parameter tensors in a fixed registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
}

/// One gradient tensor per parameter, same order and shapes.
pub type Grads<T> = Vec<Matrix<T>>;

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> Params<T> {
    /// Registers a `rows x cols` tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let m = Matrix::from_fn(rows, cols, |_, _| T::of_f64(rng.gen_range(-bound..bound)));
        self.names.push(name.into());
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Matrix<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Matrix<T> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.tensors
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn num_bytes(&self) -> usize {
        self.num_elements() * T::BYTES
    }

    /// Replaces every tensor with the matching one from `values`.
    pub fn assign(&mut self, values: &[Matrix<T>]) -> Result<()> {
        ensure!(
            values.len() == self.tensors.len(),
            DimensionMismatch,
            "{} tensors for {}",
            values.len(),
            self.len()
        );
        for (dst, src) in self.tensors.iter_mut().zip(values) {
            ensure!(
                dst.shape() == src.shape(),
                DimensionMismatch,
                "{:?} vs {:?}",
                dst.shape(),
                src.shape()
            );
            dst.clone_from(src);
        }
        Ok(())
    }
}

/// Affine map `y = x W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        p: &mut Params<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = p.add(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        let bias = p.add(format!("{name}.bias"), 1, out_dim, in_dim, rng);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Params<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = x.matmul(p.get(self.weight))?;
        y.add_row_vector(p.get(self.bias).as_slice());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        x: &Matrix<T>,
        dy: &Matrix<T>,
        g: &mut Grads<T>,
    ) -> Result<Matrix<T>> {
        g[self.weight].add_assign(&x.t_matmul(dy)?)?;
        accumulate_bias(&mut g[self.bias], dy);
        dy.matmul_t(p.get(self.weight))
    }
}

pub(crate) fn accumulate_bias<T: Scalar>(g: &mut Matrix<T>, dy: &Matrix<T>) {
    for (acc, s) in g.as_mut_slice().iter_mut().zip(dy.sum_rows()) {
        *acc += s;
    }
}
