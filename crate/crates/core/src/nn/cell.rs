use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{accumulate_bias, Grads, Params};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    /// Gates per cell: input, forget, output and candidate for LSTM; reset,
    /// update and candidate for GRU.
    pub fn gates(self) -> usize {
        match self {
            Self::Lstm => 4,
            Self::Gru => 3,
        }
    }
}

/// Recurrent cell whose gates read two precomputed operands: `ax` (the input
/// side) and `ah` (the hidden side).
///
/// A GraphRNN cell passes neighborhood aggregations of the input and of the
/// previous hidden state; a plain RNN cell passes the tensors themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnnCell {
    pub kind: CellKind,
    pub in_dim: usize,
    pub hidden: usize,
    wx: Vec<usize>,
    wh: Vec<usize>,
    bx: Vec<usize>,
    /// Hidden-side bias, GRU only.
    bh: Vec<usize>,
}

/// Per-step activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct CellTape<T> {
    gates: Vec<Matrix<T>>,
    /// LSTM: `tanh(c)`; GRU: hidden-side candidate pre-activation `ah W_hn + b_hn`.
    aux: Matrix<T>,
}

pub struct CellOut<T> {
    pub h: Matrix<T>,
    pub c: Option<Matrix<T>>,
    pub tape: CellTape<T>,
}

/// Gradients flowing out of one cell step.
pub struct CellGrads<T> {
    pub d_ax: Matrix<T>,
    pub d_ah: Matrix<T>,
    /// Gradient reaching `h_prev` without passing through `ah`.
    pub d_h_prev_direct: Option<Matrix<T>>,
    pub d_c_prev: Option<Matrix<T>>,
}

impl RnnCell {
    pub fn new<T: Scalar>(
        p: &mut Params<T>,
        name: &str,
        kind: CellKind,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k = kind.gates();
        let mut cell = Self {
            kind,
            in_dim,
            hidden,
            wx: vec![],
            wh: vec![],
            bx: vec![],
            bh: vec![],
        };
        for g in 0..k {
            cell.wx
                .push(p.add(format!("{name}.gate{g}.wx"), in_dim, hidden, in_dim, rng));
            cell.wh
                .push(p.add(format!("{name}.gate{g}.wh"), hidden, hidden, hidden, rng));
            cell.bx
                .push(p.add(format!("{name}.gate{g}.bx"), 1, hidden, hidden, rng));
            if kind == CellKind::Gru {
                cell.bh
                    .push(p.add(format!("{name}.gate{g}.bh"), 1, hidden, hidden, rng));
            }
        }
        cell
    }

    fn pre<T: Scalar>(
        &self,
        p: &Params<T>,
        g: usize,
        ax: &Matrix<T>,
        ah: &Matrix<T>,
    ) -> Result<Matrix<T>> {
        let mut z = ax.matmul(p.get(self.wx[g]))?;
        z.add_assign(&ah.matmul(p.get(self.wh[g]))?)?;
        z.add_row_vector(p.get(self.bx[g]).as_slice());
        if let Some(&b) = self.bh.get(g) {
            z.add_row_vector(p.get(b).as_slice());
        }
        Ok(z)
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &Params<T>,
        ax: &Matrix<T>,
        ah: &Matrix<T>,
        h_prev: &Matrix<T>,
        c_prev: Option<&Matrix<T>>,
    ) -> Result<CellOut<T>> {
        match self.kind {
            CellKind::Lstm => {
                let c_prev = c_prev.ok_or_else(|| {
                    crate::error::Error::InvalidArgument("LSTM step without a cell state".into())
                })?;
                let i = self.pre(p, 0, ax, ah)?.map(sigmoid);
                let f = self.pre(p, 1, ax, ah)?.map(sigmoid);
                let o = self.pre(p, 2, ax, ah)?.map(sigmoid);
                let g = self.pre(p, 3, ax, ah)?.map(T::tanh);
                let mut c = f.hadamard(c_prev);
                c.add_assign(&i.hadamard(&g))?;
                let tc = c.map(T::tanh);
                let h = o.hadamard(&tc);
                Ok(CellOut {
                    h,
                    c: Some(c),
                    tape: CellTape {
                        gates: vec![i, f, o, g],
                        aux: tc,
                    },
                })
            }
            CellKind::Gru => {
                let r = self.pre(p, 0, ax, ah)?.map(sigmoid);
                let z = self.pre(p, 1, ax, ah)?.map(sigmoid);
                let mut hn = ah.matmul(p.get(self.wh[2]))?;
                hn.add_row_vector(p.get(self.bh[2]).as_slice());
                let mut n = ax.matmul(p.get(self.wx[2]))?;
                n.add_row_vector(p.get(self.bx[2]).as_slice());
                n.add_assign(&r.hadamard(&hn))?;
                let n = n.map(T::tanh);
                let one = T::one();
                let mut h = z.zip_map(&n, |z, n| (one - z) * n);
                h.add_assign(&z.hadamard(h_prev))?;
                Ok(CellOut {
                    h,
                    c: None,
                    tape: CellTape {
                        gates: vec![r, z, n],
                        aux: hn,
                    },
                })
            }
        }
    }

    fn gate_backward<T: Scalar>(
        &self,
        p: &Params<T>,
        gate: usize,
        ax: &Matrix<T>,
        ah: Option<&Matrix<T>>,
        d_pre: &Matrix<T>,
        grads: &mut Grads<T>,
        d_ax: &mut Matrix<T>,
        d_ah: &mut Matrix<T>,
    ) -> Result<()> {
        grads[self.wx[gate]].add_assign(&ax.t_matmul(d_pre)?)?;
        accumulate_bias(&mut grads[self.bx[gate]], d_pre);
        d_ax.add_assign(&d_pre.matmul_t(p.get(self.wx[gate]))?)?;
        if let Some(ah) = ah {
            grads[self.wh[gate]].add_assign(&ah.t_matmul(d_pre)?)?;
            if let Some(&b) = self.bh.get(gate) {
                accumulate_bias(&mut grads[b], d_pre);
            }
            d_ah.add_assign(&d_pre.matmul_t(p.get(self.wh[gate]))?)?;
        }
        Ok(())
    }

    /// Backpropagates `dh` (and `dc` for LSTM) through one step.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        p: &Params<T>,
        ax: &Matrix<T>,
        ah: &Matrix<T>,
        h_prev: &Matrix<T>,
        c_prev: Option<&Matrix<T>>,
        tape: &CellTape<T>,
        dh: &Matrix<T>,
        dc: Option<&Matrix<T>>,
        grads: &mut Grads<T>,
    ) -> Result<CellGrads<T>> {
        let one = T::one();
        let dsig = |s: T| s * (one - s);
        let dtanh = |t: T| one - t * t;
        let mut d_ax = Matrix::zeros(ax.rows(), ax.cols());
        let mut d_ah = Matrix::zeros(ah.rows(), ah.cols());
        match self.kind {
            CellKind::Lstm => {
                let c_prev = c_prev.expect("LSTM tape has a cell state");
                let [i, f, o, g] = [
                    &tape.gates[0],
                    &tape.gates[1],
                    &tape.gates[2],
                    &tape.gates[3],
                ];
                let tc = &tape.aux;
                let d_o = dh.hadamard(tc);
                let mut d_c = dh.hadamard(o).zip_map(tc, |x, t| x * dtanh(t));
                if let Some(dc) = dc {
                    d_c.add_assign(dc)?;
                }
                let d_i = d_c.hadamard(g).zip_map(i, |x, s| x * dsig(s));
                let d_f = d_c.hadamard(c_prev).zip_map(f, |x, s| x * dsig(s));
                let d_o = d_o.zip_map(o, |x, s| x * dsig(s));
                let d_g = d_c.hadamard(i).zip_map(g, |x, t| x * dtanh(t));
                for (gate, d_pre) in [d_i, d_f, d_o, d_g].iter().enumerate() {
                    self.gate_backward(p, gate, ax, Some(ah), d_pre, grads, &mut d_ax, &mut d_ah)?;
                }
                let d_c_prev = d_c.hadamard(f);
                Ok(CellGrads {
                    d_ax,
                    d_ah,
                    d_h_prev_direct: None,
                    d_c_prev: Some(d_c_prev),
                })
            }
            CellKind::Gru => {
                let [r, z, n] = [&tape.gates[0], &tape.gates[1], &tape.gates[2]];
                let hn = &tape.aux;
                let d_n = dh
                    .zip_map(z, |x, z| x * (one - z))
                    .zip_map(n, |x, n| x * dtanh(n));
                let h_minus_n = h_prev.zip_map(n, |h, n| h - n);
                let d_z = dh.hadamard(&h_minus_n).zip_map(z, |x, s| x * dsig(s));
                let d_r = d_n.hadamard(hn).zip_map(r, |x, s| x * dsig(s));
                let d_hn = d_n.hadamard(r);
                self.gate_backward(p, 0, ax, Some(ah), &d_r, grads, &mut d_ax, &mut d_ah)?;
                self.gate_backward(p, 1, ax, Some(ah), &d_z, grads, &mut d_ax, &mut d_ah)?;
                // the candidate gate splits: input side sees d_n, hidden side sees r * d_n
                self.gate_backward(p, 2, ax, None, &d_n, grads, &mut d_ax, &mut d_ah)?;
                grads[self.wh[2]].add_assign(&ah.t_matmul(&d_hn)?)?;
                accumulate_bias(&mut grads[self.bh[2]], &d_hn);
                d_ah.add_assign(&d_hn.matmul_t(p.get(self.wh[2]))?)?;
                Ok(CellGrads {
                    d_ax,
                    d_ah,
                    d_h_prev_direct: Some(dh.hadamard(z)),
                    d_c_prev: None,
                })
            }
        }
    }
}
