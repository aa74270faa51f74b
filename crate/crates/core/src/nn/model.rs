use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{CellKind, CellTape, RnnCell};
use super::exec::{AggSource, ExecEnv};
use super::gcn::{Activation, GcnLayer, Normalization};
use super::params::{Grads, Linear, Params};
use crate::aggregate::{aggregate_backward, AggResult, AggrFn, AggrKind};
use crate::cache::trace::integrated_step_keys;
use crate::cache::{AggKey, ExecContext, Part};
use crate::dyngraph::{Fanout, SequenceWindow, Snapshot};
use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Stacked: GCN layers per snapshot, then LSTM layers over the embeddings.
    GcrnM1,
    /// Stacked like `GcrnM1`, with raw features concatenated to the LSTM input.
    CdGcn,
    /// Integrated LSTM encoder-decoder whose gates are graph convolutions.
    GcrnM2,
    /// Integrated GRU encoder-decoder whose gates are graph convolutions.
    Tgcn,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Self::GcrnM1, Self::CdGcn, Self::GcrnM2, Self::Tgcn];

    pub fn is_integrated(self) -> bool {
        matches!(self, Self::GcrnM2 | Self::Tgcn)
    }

    pub fn cell_kind(self) -> CellKind {
        match self {
            Self::Tgcn => CellKind::Gru,
            _ => CellKind::Lstm,
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcrn_m1" => Ok(Self::GcrnM1),
            "cd_gcn" => Ok(Self::CdGcn),
            "gcrn_m2" => Ok(Self::GcrnM2),
            "tgcn" => Ok(Self::Tgcn),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture {s:?}"
            ))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GcrnM1 => "gcrn_m1",
            Self::CdGcn => "cd_gcn",
            Self::GcrnM2 => "gcrn_m2",
            Self::Tgcn => "tgcn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Encoder (and decoder) depth for integrated models; number of GNN-RNN
    /// pairs for stacked ones.
    pub layers: usize,
    pub hidden_dim: usize,
    pub seq_len: usize,
    pub horizon: usize,
    pub teacher_forcing: bool,
    pub aggr: AggrKind,
    /// Per-hop neighbor sampling of the mini-batch computational graphs.
    pub fanouts: Vec<Fanout>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::GcrnM2,
            layers: 2,
            hidden_dim: 16,
            seq_len: 8,
            horizon: 2,
            teacher_forcing: true,
            aggr: AggrKind::Mean,
            fanouts: vec![Fanout::Max(10), Fanout::Max(10)],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.layers >= 1,
            InvalidArgument,
            "layers must be at least 1"
        );
        ensure!(
            self.hidden_dim >= 1,
            InvalidArgument,
            "hidden_dim must be at least 1"
        );
        ensure!(
            self.seq_len >= 1,
            InvalidArgument,
            "seq_len must be at least 1"
        );
        AggrFn::new(self.aggr, crate::aggregate::EdgeWeighting::None)?;
        Ok(())
    }
}

/// One training sample: a window over the snapshots of one mini-batch.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a, T> {
    pub window: SequenceWindow,
    /// Every snapshot of the mini-batch, indexed by timestep.
    pub snapshots: &'a [Snapshot<T>],
}

impl<'a, T: Scalar> Sample<'a, T> {
    /// Ground-truth features of the predicted snapshots.
    pub fn targets(&self) -> Vec<&'a Matrix<T>> {
        self.window
            .targets()
            .map(|t| self.snapshots[t].features())
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Body {
    Integrated {
        encoder: Vec<RnnCell>,
        decoder: Vec<RnnCell>,
        head: Option<Linear>,
    },
    Stacked {
        gcn: Vec<GcnLayer>,
        rnn: Vec<RnnCell>,
        head: Option<Linear>,
    },
}

#[derive(Clone, Debug)]
pub struct DgnnModel<T> {
    pub cfg: ModelConfig,
    pub feature_dim: usize,
    pub params: Params<T>,
    body: Body,
}

#[derive(Debug)]
struct GraphLayerTape<T> {
    ax: Arc<AggResult<T>>,
    ah: Arc<AggResult<T>>,
    h_prev: Matrix<T>,
    c_prev: Option<Matrix<T>>,
    cell: CellTape<T>,
    h: Matrix<T>,
}

#[derive(Debug)]
struct IntegratedStep<T> {
    part: Part,
    idx: usize,
    graph_t: usize,
    feedback: bool,
    layers: Vec<GraphLayerTape<T>>,
}

#[derive(Debug)]
struct DenseLayerTape<T> {
    input: Matrix<T>,
    h_prev: Matrix<T>,
    c_prev: Option<Matrix<T>>,
    cell: CellTape<T>,
}

#[derive(Debug)]
struct StackedStep<T> {
    t: usize,
    gcn: Vec<(Arc<AggResult<T>>, Matrix<T>)>,
    rnn: Vec<DenseLayerTape<T>>,
}

#[derive(Debug)]
enum Tape<T> {
    Integrated(Vec<IntegratedStep<T>>),
    Stacked {
        steps: Vec<StackedStep<T>>,
        top: Matrix<T>,
    },
}

/// Output of a forward pass, holding what the backward pass needs.
#[derive(Debug)]
pub struct ForwardPass<T> {
    /// One `nodes x feature_dim` matrix per horizon step.
    pub predictions: Vec<Matrix<T>>,
    /// Hidden state of every layer after the last input snapshot.
    pub encoder_hidden: Vec<Matrix<T>>,
    tape: Tape<T>,
}

fn zero_state<T: Scalar>(
    layers: usize,
    n: usize,
    hidden: usize,
    kind: CellKind,
) -> (Vec<Matrix<T>>, Vec<Option<Matrix<T>>>) {
    let h = vec![Matrix::zeros(n, hidden); layers];
    let c = vec![(kind == CellKind::Lstm).then(|| Matrix::zeros(n, hidden)); layers];
    (h, c)
}

impl<T: Scalar> DgnnModel<T> {
    pub fn new(cfg: ModelConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            feature_dim >= 1,
            InvalidArgument,
            "feature_dim must be at least 1"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        let (hid, d, kind) = (cfg.hidden_dim, feature_dim, cfg.arch.cell_kind());
        let aggr = AggrFn::from(cfg.aggr);
        let body = if cfg.arch.is_integrated() {
            let mut stack = |part: &str, rng: &mut ChaCha8Rng| -> Vec<RnnCell> {
                (0..cfg.layers)
                    .map(|l| {
                        let in_dim = if l == 0 { d } else { hid };
                        RnnCell::new(&mut params, &format!("{part}.{l}"), kind, in_dim, hid, rng)
                    })
                    .collect()
            };
            let encoder = stack("encoder", &mut rng);
            let decoder = if cfg.horizon > 0 {
                stack("decoder", &mut rng)
            } else {
                Vec::new()
            };
            let head =
                (cfg.horizon > 0).then(|| Linear::new(&mut params, "head", hid, d, &mut rng));
            Body::Integrated {
                encoder,
                decoder,
                head,
            }
        } else {
            let gcn = (0..cfg.layers)
                .map(|l| {
                    let in_dim = if l == 0 { d } else { hid };
                    let name = format!("gcn.{l}");
                    GcnLayer::new(
                        &mut params,
                        &name,
                        in_dim,
                        hid,
                        aggr,
                        Activation::Tanh,
                        Normalization::None,
                        &mut rng,
                    )
                })
                .collect();
            let rnn_in = if cfg.arch == Arch::CdGcn {
                hid + d
            } else {
                hid
            };
            let rnn = (0..cfg.layers)
                .map(|l| {
                    let in_dim = if l == 0 { rnn_in } else { hid };
                    RnnCell::new(
                        &mut params,
                        &format!("rnn.{l}"),
                        kind,
                        in_dim,
                        hid,
                        &mut rng,
                    )
                })
                .collect();
            let head = (cfg.horizon > 0)
                .then(|| Linear::new(&mut params, "head", hid, cfg.horizon * d, &mut rng));
            Body::Stacked { gcn, rnn, head }
        };
        Ok(Self {
            cfg,
            feature_dim,
            params,
            body,
        })
    }

    fn aggr(&self) -> AggrFn {
        AggrFn::from(self.cfg.aggr)
    }

    fn check_sample(&self, sample: &Sample<'_, T>) -> Result<usize> {
        let w = sample.window;
        ensure!(
            w.len == self.cfg.seq_len && w.horizon == self.cfg.horizon,
            InvalidArgument,
            "window (L={}, H={}) for a model with L={}, H={}",
            w.len,
            w.horizon,
            self.cfg.seq_len,
            self.cfg.horizon
        );
        ensure!(
            w.end() <= sample.snapshots.len(),
            InvalidArgument,
            "window ends at {} but only {} snapshots are present",
            w.end(),
            sample.snapshots.len()
        );
        let first = &sample.snapshots[w.start];
        ensure!(
            first.feature_dim() == self.feature_dim,
            DimensionMismatch,
            "features of width {} for a model of width {}",
            first.feature_dim(),
            self.feature_dim
        );
        Ok(first.num_nodes())
    }

    fn base_ctx(&self, env: &ExecEnv<'_, T>, w: &SequenceWindow) -> ExecContext {
        ExecContext {
            layers: self.cfg.layers,
            gates: self.cfg.arch.cell_kind().gates(),
            gate: 1,
            seq_len: w.len,
            stride: w.stride,
            horizon: w.horizon,
            idx: 0,
            part: Part::Encoder,
            layer: 1,
            teacher_forcing: self.cfg.teacher_forcing,
            windows_ahead: env.windows_ahead,
        }
    }

    pub fn forward(
        &self,
        sample: &Sample<'_, T>,
        env: &mut ExecEnv<'_, T>,
    ) -> Result<ForwardPass<T>> {
        let n = self.check_sample(sample)?;
        match &self.body {
            Body::Integrated {
                encoder,
                decoder,
                head,
            } => self.forward_integrated(sample, env, n, encoder, decoder, head.as_ref()),
            Body::Stacked { gcn, rnn, head } => {
                self.forward_stacked(sample, env, n, gcn, rnn, head.as_ref())
            }
        }
    }

    fn forward_integrated(
        &self,
        sample: &Sample<'_, T>,
        env: &mut ExecEnv<'_, T>,
        n: usize,
        encoder: &[RnnCell],
        decoder: &[RnnCell],
        head: Option<&Linear>,
    ) -> Result<ForwardPass<T>> {
        let p = &self.params;
        let w = sample.window;
        let (l_len, tf, aggr) = (w.len, self.cfg.teacher_forcing, self.aggr());
        let base = self.base_ctx(env, &w);
        let (mut h, mut c) = zero_state::<T>(
            self.cfg.layers,
            n,
            self.cfg.hidden_dim,
            self.cfg.arch.cell_kind(),
        );
        let mut predictions: Vec<Matrix<T>> = Vec::with_capacity(w.horizon);
        let mut encoder_hidden = Vec::new();
        let mut steps = Vec::with_capacity(l_len + w.horizon);
        let order = (0..l_len)
            .map(|i| (Part::Encoder, i))
            .chain((0..w.horizon).map(|j| (Part::Decoder, j)));
        for (part, idx) in order {
            if part == Part::Decoder && idx == 0 {
                encoder_hidden = h.clone();
            }
            let graph_t = match part {
                Part::Encoder => w.start + idx,
                Part::Decoder => w.start + l_len + idx - 1,
            };
            let graph = &sample.snapshots[graph_t];
            let cells = if part == Part::Encoder {
                encoder
            } else {
                decoder
            };
            let feedback = part == Part::Decoder && idx > 0 && !tf;
            let mut layers: Vec<GraphLayerTape<T>> = Vec::with_capacity(self.cfg.layers);
            for l in 1..=self.cfg.layers {
                let keys = integrated_step_keys(env.batch, w.start, l_len, part, idx, l, tf);
                let ctx = ExecContext {
                    part,
                    idx,
                    layer: l,
                    ..base
                };
                let src = if l > 1 {
                    AggSource::Tensor {
                        graph,
                        feats: &layers[l - 2].h,
                    }
                } else if part == Part::Decoder && idx == 0 {
                    AggSource::Zeros {
                        graph,
                        dim: self.feature_dim,
                    }
                } else if feedback {
                    AggSource::Tensor {
                        graph,
                        feats: &predictions[idx - 1],
                    }
                } else {
                    AggSource::Input(graph_t)
                };
                let hidden = AggSource::Tensor {
                    graph,
                    feats: &h[l - 1],
                };
                let mut operands =
                    env.fetch_gated(&[(keys.input, src), (keys.hidden, hidden)], ctx, aggr)?;
                let ah = operands.pop().expect("hidden operand");
                let ax = operands.pop().expect("input operand");
                let out = cells[l - 1].forward(
                    p,
                    ax.values(),
                    ah.values(),
                    &h[l - 1],
                    c[l - 1].as_ref(),
                )?;
                let h_prev = std::mem::replace(&mut h[l - 1], out.h.clone());
                let c_prev = std::mem::replace(&mut c[l - 1], out.c);
                layers.push(GraphLayerTape {
                    ax,
                    ah,
                    h_prev,
                    c_prev,
                    cell: out.tape,
                    h: out.h,
                });
            }
            if part == Part::Decoder {
                let head = head.expect("a model with a horizon has a head");
                predictions.push(head.forward(p, &h[self.cfg.layers - 1])?);
            }
            steps.push(IntegratedStep {
                part,
                idx,
                graph_t,
                feedback,
                layers,
            });
        }
        if w.horizon == 0 {
            encoder_hidden = h;
        }
        Ok(ForwardPass {
            predictions,
            encoder_hidden,
            tape: Tape::Integrated(steps),
        })
    }

    fn forward_stacked(
        &self,
        sample: &Sample<'_, T>,
        env: &mut ExecEnv<'_, T>,
        n: usize,
        gcn: &[GcnLayer],
        rnn: &[RnnCell],
        head: Option<&Linear>,
    ) -> Result<ForwardPass<T>> {
        let p = &self.params;
        let w = sample.window;
        let aggr = self.aggr();
        // only the first-layer input aggregation is shared, so the cache sees
        // a one-layer, one-gate, encoder-only model
        let base = ExecContext {
            layers: 1,
            gates: 1,
            horizon: 0,
            teacher_forcing: false,
            ..self.base_ctx(env, &w)
        };
        let (mut h, mut c) = zero_state::<T>(
            self.cfg.layers,
            n,
            self.cfg.hidden_dim,
            self.cfg.arch.cell_kind(),
        );
        let mut steps = Vec::with_capacity(w.len);
        for idx in 0..w.len {
            let t = w.start + idx;
            let graph = &sample.snapshots[t];
            let ctx = ExecContext { idx, ..base };
            let agg = env.fetch(AggKey::input(env.batch, t), ctx, aggr, AggSource::Input(t))?;
            let mut x = gcn[0].transform(p, graph, &agg)?;
            let mut gcn_tape = vec![(agg, x.clone())];
            for layer in &gcn[1..] {
                env.stats.kernel_invocations += 1;
                let (out, agg) = layer.forward(p, graph, &x)?;
                gcn_tape.push((Arc::new(agg), out.clone()));
                x = out;
            }
            let mut input = if self.cfg.arch == Arch::CdGcn {
                Matrix::hcat(&[&x, graph.features()])?
            } else {
                x
            };
            let mut rnn_tape = Vec::with_capacity(rnn.len());
            for (l, cell) in rnn.iter().enumerate() {
                let out = cell.forward(p, &input, &h[l], &h[l], c[l].as_ref())?;
                let h_prev = std::mem::replace(&mut h[l], out.h.clone());
                let c_prev = std::mem::replace(&mut c[l], out.c);
                rnn_tape.push(DenseLayerTape {
                    input,
                    h_prev,
                    c_prev,
                    cell: out.tape,
                });
                input = out.h;
            }
            steps.push(StackedStep {
                t,
                gcn: gcn_tape,
                rnn: rnn_tape,
            });
        }
        let top = h[self.cfg.layers - 1].clone();
        let predictions = match head {
            Some(head) => head
                .forward(p, &top)?
                .split_cols(&vec![self.feature_dim; w.horizon])?,
            None => Vec::new(),
        };
        Ok(ForwardPass {
            predictions,
            encoder_hidden: h,
            tape: Tape::Stacked { steps, top },
        })
    }

    /// Gradients of a loss whose derivative with respect to each prediction
    /// is `d_predictions`.
    pub fn backward(
        &self,
        sample: &Sample<'_, T>,
        fwd: &ForwardPass<T>,
        d_predictions: &[Matrix<T>],
    ) -> Result<Grads<T>> {
        ensure!(
            d_predictions.len() == fwd.predictions.len(),
            DimensionMismatch,
            "{} prediction gradients for {} predictions",
            d_predictions.len(),
            fwd.predictions.len()
        );
        let n = self.check_sample(sample)?;
        let mut grads = self.params.zero_grads();
        match (&self.body, &fwd.tape) {
            (
                Body::Integrated {
                    encoder,
                    decoder,
                    head,
                },
                Tape::Integrated(steps),
            ) => self.backward_integrated(
                sample,
                steps,
                d_predictions,
                n,
                encoder,
                decoder,
                head.as_ref(),
                &mut grads,
            )?,
            (Body::Stacked { gcn, rnn, head }, Tape::Stacked { steps, top }) => self
                .backward_stacked(
                    sample,
                    steps,
                    top,
                    d_predictions,
                    n,
                    gcn,
                    rnn,
                    head.as_ref(),
                    &mut grads,
                )?,
            _ => {
                return Err(Error::InvalidArgument(
                    "forward pass of a different architecture".into(),
                ))
            }
        }
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_integrated(
        &self,
        sample: &Sample<'_, T>,
        steps: &[IntegratedStep<T>],
        d_predictions: &[Matrix<T>],
        n: usize,
        encoder: &[RnnCell],
        decoder: &[RnnCell],
        head: Option<&Linear>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let p = &self.params;
        let depth = self.cfg.layers;
        let (mut dh, mut dc) =
            zero_state::<T>(depth, n, self.cfg.hidden_dim, self.cfg.arch.cell_kind());
        let mut d_pred: Vec<Matrix<T>> = d_predictions.to_vec();
        for step in steps.iter().rev() {
            let graph = &sample.snapshots[step.graph_t];
            let cells = if step.part == Part::Encoder {
                encoder
            } else {
                decoder
            };
            if step.part == Part::Decoder {
                let head = head.expect("a model with a horizon has a head");
                let d_top =
                    head.backward(p, &step.layers[depth - 1].h, &d_pred[step.idx], grads)?;
                dh[depth - 1].add_assign(&d_top)?;
            }
            let mut from_above: Option<Matrix<T>> = None;
            for l in (0..depth).rev() {
                let lt = &step.layers[l];
                if let Some(g) = from_above.take() {
                    dh[l].add_assign(&g)?;
                }
                let cg = cells[l].backward(
                    p,
                    lt.ax.values(),
                    lt.ah.values(),
                    &lt.h_prev,
                    lt.c_prev.as_ref(),
                    &lt.cell,
                    &dh[l],
                    dc[l].as_ref(),
                    grads,
                )?;
                let mut d_h_prev = aggregate_backward(graph, &cg.d_ah, &lt.ah)?;
                if let Some(direct) = &cg.d_h_prev_direct {
                    d_h_prev.add_assign(direct)?;
                }
                dh[l] = d_h_prev;
                dc[l] = cg.d_c_prev;
                if l > 0 {
                    from_above = Some(aggregate_backward(graph, &cg.d_ax, &lt.ax)?);
                } else if step.feedback {
                    let d_prev_pred = aggregate_backward(graph, &cg.d_ax, &lt.ax)?;
                    d_pred[step.idx - 1].add_assign(&d_prev_pred)?;
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_stacked(
        &self,
        sample: &Sample<'_, T>,
        steps: &[StackedStep<T>],
        top: &Matrix<T>,
        d_predictions: &[Matrix<T>],
        n: usize,
        gcn: &[GcnLayer],
        rnn: &[RnnCell],
        head: Option<&Linear>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let p = &self.params;
        let depth = self.cfg.layers;
        let (mut dh, mut dc) =
            zero_state::<T>(depth, n, self.cfg.hidden_dim, self.cfg.arch.cell_kind());
        if let Some(head) = head {
            let parts: Vec<&Matrix<T>> = d_predictions.iter().collect();
            dh[depth - 1] = head.backward(p, top, &Matrix::hcat(&parts)?, grads)?;
        }
        for step in steps.iter().rev() {
            let graph = &sample.snapshots[step.t];
            let mut from_above: Option<Matrix<T>> = None;
            let mut d_input = None;
            for l in (0..depth).rev() {
                let lt = &step.rnn[l];
                if let Some(g) = from_above.take() {
                    dh[l].add_assign(&g)?;
                }
                let cg = rnn[l].backward(
                    p,
                    &lt.input,
                    &lt.h_prev,
                    &lt.h_prev,
                    lt.c_prev.as_ref(),
                    &lt.cell,
                    &dh[l],
                    dc[l].as_ref(),
                    grads,
                )?;
                let mut d_h_prev = cg.d_ah;
                if let Some(direct) = &cg.d_h_prev_direct {
                    d_h_prev.add_assign(direct)?;
                }
                dh[l] = d_h_prev;
                dc[l] = cg.d_c_prev;
                if l > 0 {
                    from_above = Some(cg.d_ax);
                } else {
                    d_input = Some(cg.d_ax);
                }
            }
            let d_input = d_input.expect("at least one recurrent layer");
            let mut d_x = if self.cfg.arch == Arch::CdGcn {
                d_input
                    .split_cols(&[self.cfg.hidden_dim, self.feature_dim])?
                    .swap_remove(0)
            } else {
                d_input
            };
            for (l, layer) in gcn.iter().enumerate().rev() {
                let (agg, out) = &step.gcn[l];
                let d_feats = layer.backward(p, graph, agg, out, &d_x, grads)?;
                if l == 0 {
                    break;
                }
                d_x = d_feats;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{KeyKind, Level, Policy};
    use crate::dyngraph::{sliding_windows, synthesize, ChangeRatio, SynthParams};
    use crate::nn::exec::{AggCache, ScratchInputs};
    use crate::nn::gradcheck::finite_difference_check;
    use rand::Rng;

    fn snapshots(n: usize, d: usize, t: usize, seed: u64) -> Vec<Snapshot<f64>> {
        let p = SynthParams {
            num_nodes: n,
            avg_degree: 3.0,
            feature_dim: d,
            num_snapshots: t,
            edge_change: ChangeRatio::Fixed(0.2),
            feature_change: ChangeRatio::Fixed(0.3),
            seed,
        };
        synthesize::<f64>(&p).unwrap().snapshots().to_vec()
    }

    fn cfg(arch: Arch, layers: usize, l: usize, h: usize, tf: bool) -> ModelConfig {
        ModelConfig {
            arch,
            layers,
            hidden_dim: 3,
            seq_len: l,
            horizon: h,
            teacher_forcing: tf,
            aggr: AggrKind::Mean,
            fanouts: vec![Fanout::Full],
        }
    }

    fn run(
        model: &DgnnModel<f64>,
        snaps: &[Snapshot<f64>],
        window: SequenceWindow,
        cache: Option<&mut AggCache<f64>>,
    ) -> (ForwardPass<f64>, crate::nn::ExecStats) {
        run_ahead(model, snaps, window, cache, 0)
    }

    fn run_ahead(
        model: &DgnnModel<f64>,
        snaps: &[Snapshot<f64>],
        window: SequenceWindow,
        cache: Option<&mut AggCache<f64>>,
        windows_ahead: usize,
    ) -> (ForwardPass<f64>, crate::nn::ExecStats) {
        let mut src = ScratchInputs::new(snaps, model.aggr());
        let mut env = ExecEnv::new(cache, &mut src, 0, windows_ahead);
        let fwd = model
            .forward(
                &Sample {
                    window,
                    snapshots: snaps,
                },
                &mut env,
            )
            .unwrap();
        (fwd, env.stats)
    }

    fn projection_loss(preds: &[Matrix<f64>], proj: &[Matrix<f64>]) -> f64 {
        preds
            .iter()
            .zip(proj)
            .map(|(p, r)| p.hadamard(r).as_slice().iter().sum::<f64>())
            .sum()
    }

    fn check_gradients(model_cfg: ModelConfig, n: usize) {
        let d = 2;
        let snaps = snapshots(n, d, model_cfg.seq_len + model_cfg.horizon, 17);
        let model = DgnnModel::<f64>::new(model_cfg.clone(), d, 3).unwrap();
        let window = sliding_windows(snaps.len(), model_cfg.seq_len, 1, model_cfg.horizon)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let proj: Vec<_> = (0..model_cfg.horizon)
            .map(|_| Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let (fwd, _) = run(&model, &snaps, window, None);
        let grads = model
            .backward(
                &Sample {
                    window,
                    snapshots: &snaps,
                },
                &fwd,
                &proj,
            )
            .unwrap();
        let report = finite_difference_check(&model.params, &grads, 1e-5, |params| {
            let mut m = model.clone();
            m.params = params.clone();
            projection_loss(&run(&m, &snaps, window, None).0.predictions, &proj)
        });
        assert!(
            report.max_rel_err < 1e-4,
            "{model_cfg:?}: {report:?} at {:?}",
            report.worst.map(|(i, _)| model.params.name(i))
        );
    }

    #[test]
    fn integrated_gradients_match_finite_differences() {
        check_gradients(cfg(Arch::Tgcn, 1, 3, 2, true), 6);
        check_gradients(cfg(Arch::GcrnM2, 2, 3, 2, true), 6);
        check_gradients(cfg(Arch::GcrnM2, 2, 2, 3, false), 6);
        check_gradients(cfg(Arch::Tgcn, 2, 4, 2, false), 8);
    }

    #[test]
    fn stacked_gradients_match_finite_differences() {
        check_gradients(cfg(Arch::GcrnM1, 2, 3, 2, false), 6);
        check_gradients(cfg(Arch::CdGcn, 2, 3, 1, false), 6);
    }

    #[test]
    fn cold_window_computes_two_aggregations_per_layer_and_step() {
        for arch in [Arch::GcrnM2, Arch::Tgcn] {
            let c = cfg(arch, 2, 4, 2, true);
            let snaps = snapshots(20, 2, 6, 1);
            let model = DgnnModel::<f64>::new(c, 2, 0).unwrap();
            let mut cache = AggCache::new(Policy::Reinc, u64::MAX).unwrap();
            let window = sliding_windows(6, 4, 1, 2)[0];
            let (_, stats) = run(&model, &snaps, window, Some(&mut cache));
            let k = arch.cell_kind().gates() as u64;
            assert_eq!(stats.kernel_invocations, 2 * 2 * 6);
            assert_eq!(cache.stats().hits, 2 * 2 * 6 * (k - 1));
        }
    }

    #[test]
    fn reuse_changes_no_values() {
        for arch in Arch::ALL {
            for tf in [true, false] {
                let c = cfg(arch, 2, 3, 2, tf);
                let snaps = snapshots(15, 2, 8, 2);
                let model = DgnnModel::<f64>::new(c, 2, 0).unwrap();
                let mut cache = AggCache::new(Policy::Reinc, u64::MAX).unwrap();
                let windows = sliding_windows(8, 3, 1, 2);
                for (w, window) in windows.iter().copied().enumerate() {
                    let (a, _) = run_ahead(
                        &model,
                        &snaps,
                        window,
                        Some(&mut cache),
                        windows.len() - 1 - w,
                    );
                    let (b, _) = run(&model, &snaps, window, None);
                    assert_eq!(a.predictions, b.predictions);
                    cache.bump_epoch();
                }
                assert!(cache.stats().hits > 0);
            }
        }
    }

    #[test]
    fn next_window_reuses_decoder_inputs() {
        let c = cfg(Arch::GcrnM2, 1, 3, 2, true);
        let snaps = snapshots(15, 2, 8, 2);
        let model = DgnnModel::<f64>::new(c, 2, 0).unwrap();
        let mut cache = AggCache::new(Policy::Reinc, u64::MAX).unwrap();
        cache.record_lookups();
        let windows = sliding_windows(8, 3, 1, 2);
        let mut src = ScratchInputs::new(&snaps, model.aggr());
        for (w, window) in windows.iter().take(2).enumerate() {
            let mut env = ExecEnv::new(Some(&mut cache), &mut src, 0, windows.len() - 1 - w);
            model
                .forward(
                    &Sample {
                        window: *window,
                        snapshots: &snaps,
                    },
                    &mut env,
                )
                .unwrap();
        }
        // window 0 read snapshot 3 as its teacher-forced decoder input; window 1
        // reads it as its last encoder input
        let log = cache.lookup_log();
        let hits = log
            .iter()
            .filter(|(k, _)| *k == AggKey::input(0, 3))
            .map(|(_, hit)| *hit)
            .collect::<Vec<_>>();
        assert_eq!(hits, vec![false, true, true, true, true, true, true, true]);
    }

    #[test]
    fn stacked_models_create_no_hidden_keys() {
        for arch in [Arch::GcrnM1, Arch::CdGcn] {
            let snaps = snapshots(15, 2, 6, 2);
            let model = DgnnModel::<f64>::new(cfg(arch, 2, 4, 2, false), 2, 0).unwrap();
            let mut cache = AggCache::new(Policy::Reinc, u64::MAX).unwrap();
            cache.record_lookups();
            run(
                &model,
                &snaps,
                sliding_windows(6, 4, 1, 2)[0],
                Some(&mut cache),
            );
            assert_eq!(cache.lookup_log().len(), 4);
            assert!(cache
                .lookup_log()
                .iter()
                .all(|(k, _)| k.kind == KeyKind::Input && k.level == Level::Global));
        }
        let snaps = snapshots(15, 2, 6, 2);
        let model = DgnnModel::<f64>::new(cfg(Arch::GcrnM2, 2, 4, 2, true), 2, 0).unwrap();
        let mut cache = AggCache::new(Policy::Reinc, u64::MAX).unwrap();
        cache.record_lookups();
        run(
            &model,
            &snaps,
            sliding_windows(6, 4, 1, 2)[0],
            Some(&mut cache),
        );
        let hidden: std::collections::HashSet<_> = cache
            .lookup_log()
            .iter()
            .filter(|(k, _)| k.kind == KeyKind::HiddenPrevT)
            .map(|(k, _)| *k)
            .collect();
        // D hidden keys per timestep
        assert_eq!(hidden.len(), 2 * 6);
    }

    #[test]
    fn degenerate_shapes() {
        let snaps = snapshots(10, 2, 4, 3);
        let h0 = DgnnModel::<f64>::new(cfg(Arch::GcrnM2, 2, 4, 0, true), 2, 0).unwrap();
        let (fwd, _) = run(&h0, &snaps, sliding_windows(4, 4, 1, 0)[0], None);
        assert!(fwd.predictions.is_empty());
        assert_eq!(fwd.encoder_hidden.len(), 2);
        let single = DgnnModel::<f64>::new(cfg(Arch::GcrnM1, 1, 1, 1, false), 2, 0).unwrap();
        let (fwd, stats) = run(&single, &snaps, sliding_windows(4, 1, 1, 1)[0], None);
        assert_eq!(fwd.predictions.len(), 1);
        assert_eq!(stats.kernel_invocations, 1);
        let wrong = sliding_windows(4, 2, 1, 1)[0];
        let mut src = ScratchInputs::new(&snaps, AggrKind::Mean.into());
        let mut env = ExecEnv::new(None, &mut src, 0, 0);
        assert!(single
            .forward(
                &Sample {
                    window: wrong,
                    snapshots: &snaps
                },
                &mut env
            )
            .is_err());
    }

    #[test]
    fn prewarmed_cache_skips_first_layer_kernels() {
        let snaps = snapshots(15, 2, 6, 2);
        let model = DgnnModel::<f64>::new(cfg(Arch::GcrnM1, 1, 4, 2, false), 2, 0).unwrap();
        let mut cache = AggCache::new(Policy::Lru, u64::MAX).unwrap();
        let window = sliding_windows(6, 4, 1, 2)[0];
        let (a, cold) = run(&model, &snaps, window, Some(&mut cache));
        let (b, warm) = run(&model, &snaps, window, Some(&mut cache));
        assert_eq!(cold.kernel_invocations, 4);
        assert_eq!(warm.kernel_invocations, 0);
        assert_eq!(a.predictions, b.predictions);
    }
}
