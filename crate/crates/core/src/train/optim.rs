use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Grads, Params};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Parameter update rule with its moment state.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub settings: OptimizerSettings,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    steps: u64,
    /// Steps refused because a gradient was not finite.
    pub skipped: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(settings: OptimizerSettings, params: &Params<T>) -> Self {
        let zeros = params.zero_grads();
        Self {
            settings,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Returns `false`, leaving parameters and moments
    /// untouched, when any gradient entry is not finite.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Grads<T>) -> Result<bool> {
        ensure!(
            grads.len() == params.len(),
            DimensionMismatch,
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        );
        for (i, g) in grads.iter().enumerate() {
            ensure!(
                g.shape() == params.get(i).shape(),
                DimensionMismatch,
                "gradient shape of {}",
                params.name(i)
            );
        }
        if !grads.iter().all(Matrix::all_finite) {
            self.skipped += 1;
            return Ok(false);
        }
        self.steps += 1;
        let s = self.settings;
        let lr = T::of_f64(s.lr);
        match s.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                    for (p, &g) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of_f64(s.beta1), T::of_f64(s.beta2));
                let eps = T::of_f64(s.eps);
                let one = T::one();
                let c1 = one - T::of_f64(s.beta1.powi(self.steps as i32));
                let c2 = one - T::of_f64(s.beta2.powi(self.steps as i32));
                for ((p, g), (m, v)) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(&mut self.v))
                {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
                    for ((p, &g), (m, v)) in it {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(true)
    }
}
