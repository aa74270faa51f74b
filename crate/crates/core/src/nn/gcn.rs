use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{accumulate_bias, Grads, Params};
use crate::aggregate::{aggregate_backward, aggregate_scratch, AggResult, AggrFn};
use crate::dyngraph::Topology;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Self::Relu => x.max(T::zero()),
            Self::Tanh => x.tanh(),
            Self::Sigmoid => sigmoid(x),
            Self::None => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn grad_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Self::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Tanh => T::one() - y * y,
            Self::Sigmoid => y * (T::one() - y),
            Self::None => T::one(),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown activation {s:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    None,
    /// Divides each target row by its in-degree.
    LeftDegree,
}

/// One-hop graph convolution `act(norm(agg(x)) W + b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GcnLayer {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub aggr: AggrFn,
    pub activation: Activation,
    pub normalization: Normalization,
}

fn inv_degrees<T: Scalar, G: Topology<T>>(graph: &G) -> Vec<T> {
    let mut deg = vec![0u32; graph.num_targets()];
    graph.for_each_edge(|_, v, _| deg[v] += 1);
    deg.into_iter()
        .map(|d| T::one() / T::of_f64(f64::from(d.max(1))))
        .collect()
}

fn scale_rows<T: Scalar>(m: &Matrix<T>, s: &[T]) -> Matrix<T> {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)] * s[r])
}

impl GcnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        p: &mut Params<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        aggr: AggrFn,
        activation: Activation,
        normalization: Normalization,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = p.add(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        let bias = p.add(format!("{name}.bias"), 1, out_dim, in_dim, rng);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
            aggr,
            activation,
            normalization,
        }
    }

    /// Applies the dense part to an aggregation computed elsewhere (for
    /// instance served by the cache).
    pub fn transform<T: Scalar, G: Topology<T>>(
        &self,
        p: &Params<T>,
        graph: &G,
        agg: &AggResult<T>,
    ) -> Result<Matrix<T>> {
        if agg.values().cols() != self.in_dim {
            return Err(Error::DimensionMismatch(format!(
                "aggregation width {} for a layer of input width {}",
                agg.values().cols(),
                self.in_dim
            )));
        }
        let mut z = match self.normalization {
            Normalization::None => agg.values().matmul(p.get(self.weight))?,
            Normalization::LeftDegree => {
                scale_rows(agg.values(), &inv_degrees(graph)).matmul(p.get(self.weight))?
            }
        };
        z.add_row_vector(p.get(self.bias).as_slice());
        let act = self.activation;
        Ok(z.map(|x| act.apply(x)))
    }

    /// Aggregates `feats` from scratch and transforms the result.
    pub fn forward<T: Scalar, G: Topology<T>>(
        &self,
        p: &Params<T>,
        graph: &G,
        feats: &Matrix<T>,
    ) -> Result<(Matrix<T>, AggResult<T>)> {
        let agg = aggregate_scratch(graph, feats, self.aggr)?;
        Ok((self.transform(p, graph, &agg)?, agg))
    }

    /// Accumulates parameter gradients; returns the gradient of the features
    /// that were aggregated.
    pub fn backward<T: Scalar, G: Topology<T>>(
        &self,
        p: &Params<T>,
        graph: &G,
        agg: &AggResult<T>,
        out: &Matrix<T>,
        d_out: &Matrix<T>,
        grads: &mut Grads<T>,
    ) -> Result<Matrix<T>> {
        let act = self.activation;
        let d_z = d_out.zip_map(out, |d, y| d * act.grad_from_output(y));
        accumulate_bias(&mut grads[self.bias], &d_z);
        let d_agg = match self.normalization {
            Normalization::None => {
                grads[self.weight].add_assign(&agg.values().t_matmul(&d_z)?)?;
                d_z.matmul_t(p.get(self.weight))?
            }
            Normalization::LeftDegree => {
                let inv = inv_degrees(graph);
                grads[self.weight].add_assign(&scale_rows(agg.values(), &inv).t_matmul(&d_z)?)?;
                scale_rows(&d_z.matmul_t(p.get(self.weight))?, &inv)
            }
        };
        aggregate_backward(graph, &d_agg, agg)
    }
}
