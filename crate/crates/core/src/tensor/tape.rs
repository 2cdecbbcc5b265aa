//! Append-only tape for reverse-mode differentiation, plus the central
//! finite-difference verifier used by the gradient acceptance checks.

use std::sync::Arc;

use super::ops::{self, sigmoid};
use super::{Precision, PrimitiveKind, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node {
    kind: PrimitiveKind,
    inputs: Vec<usize>,
}

/// Records primitive applications in topological order; nodes are appended
/// as they execute, so every node's inputs precede it by construction.
#[derive(Default)]
pub struct Tape {
    values: Vec<Arc<Tensor>>,
    nodes: Vec<Option<Node>>,
    params: Vec<usize>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Registers an input tensor that requires no gradient bookkeeping
    /// beyond reachability.
    pub fn leaf(&mut self, value: impl Into<Arc<Tensor>>) -> NodeId {
        self.values.push(value.into());
        self.nodes.push(None);
        NodeId(self.values.len() - 1)
    }

    /// Registers a trainable leaf; `backward` reports a gradient for every
    /// parameter, zero-filled when the loss never reaches it.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> NodeId {
        let id = self.leaf(value);
        self.params.push(id.0);
        id
    }

    /// Applies a primitive and records the node.
    pub fn apply(&mut self, kind: PrimitiveKind, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| &*self.values[id.0]).collect();
        let out = ops::apply_primitive(kind, &tensors)?;
        self.values.push(Arc::new(out));
        self.nodes.push(Some(Node {
            kind,
            inputs: inputs.iter().map(|id| id.0).collect(),
        }));
        Ok(NodeId(self.values.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Reverse pass from a scalar loss. Visits each node exactly once in
    /// reverse topological order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_val = self.value(loss);
        if loss_val.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::from_vec(
            loss_val.shape().to_vec(),
            vec![1.0],
            loss_val.precision(),
        )?);

        for i in (0..=loss.0).rev() {
            let node = match &self.nodes[i] {
                Some(n) => n,
                None => continue,
            };
            let upstream = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &upstream, &mut grads)?;
        }

        // Unreached parameters get zero gradients of matching shape.
        let mut by_param = Vec::with_capacity(self.params.len());
        for &p in &self.params {
            let v = &self.values[p];
            by_param.push(match grads[p].take() {
                Some(g) => g,
                None => Tensor::zeros(v.shape().to_vec(), v.precision()),
            });
        }
        Ok(Gradients { by_param })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut Vec<Option<Tensor>>,
    ) -> Result<()> {
        let val = |idx: usize| -> &Tensor { &self.values[idx] };
        match node.kind {
            PrimitiveKind::MatMul => {
                let (ai, bi) = (node.inputs[0], node.inputs[1]);
                let (a, b) = (val(ai), val(bi));
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let (ad, bd, gd) = (a.data(), b.data(), g.data());
                let parallel = m.max(k) >= 8 && m * k * n >= (1 << 18);
                // dA = G . B^T
                let mut da = vec![0.0f64; m * k];
                let da_row = |i: usize, row: &mut [f64]| {
                    let grow = &gd[i * n..(i + 1) * n];
                    for (kk, slot) in row.iter_mut().enumerate() {
                        let brow = &bd[kk * n..(kk + 1) * n];
                        *slot = grow.iter().zip(brow).map(|(&g, &b)| g * b).sum();
                    }
                };
                // dB = A^T . G, one output row per column of A
                let mut db = vec![0.0f64; k * n];
                let db_row = |kk: usize, row: &mut [f64]| {
                    for i in 0..m {
                        let av = ad[i * k + kk];
                        for (slot, &gv) in row.iter_mut().zip(&gd[i * n..(i + 1) * n]) {
                            *slot += av * gv;
                        }
                    }
                };
                if parallel {
                    use rayon::prelude::*;
                    da.par_chunks_mut(k).enumerate().for_each(|(i, row)| da_row(i, row));
                    db.par_chunks_mut(n).enumerate().for_each(|(kk, row)| db_row(kk, row));
                } else {
                    for (i, row) in da.chunks_mut(k).enumerate() {
                        da_row(i, row);
                    }
                    for (kk, row) in db.chunks_mut(n).enumerate() {
                        db_row(kk, row);
                    }
                }
                accumulate(&mut grads[ai], Tensor::from_vec(vec![m, k], da, a.precision())?);
                accumulate(&mut grads[bi], Tensor::from_vec(vec![k, n], db, b.precision())?);
            }
            PrimitiveKind::Add => {
                let (ai, bi) = (node.inputs[0], node.inputs[1]);
                let (a, b) = (val(ai), val(bi));
                accumulate(&mut grads[ai], g.clone());
                if b.shape() == a.shape() {
                    accumulate(&mut grads[bi], g.clone());
                } else {
                    accumulate(&mut grads[bi], reduce_to_last_axis(g, b.len(), b.precision()));
                }
            }
            PrimitiveKind::Mul => {
                let (ai, bi) = (node.inputs[0], node.inputs[1]);
                accumulate(&mut grads[ai], ops::mul(g, val(bi))?);
                accumulate(&mut grads[bi], ops::mul(g, val(ai))?);
            }
            PrimitiveKind::Silu => {
                let xi = node.inputs[0];
                let deriv = val(xi).map(|v| {
                    let s = sigmoid(v);
                    s * (1.0 + v * (1.0 - s))
                });
                accumulate(&mut grads[xi], ops::mul(g, &deriv)?);
            }
            PrimitiveKind::Film => {
                let (xi, si, hi) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let (x, s, h) = (val(xi), val(si), val(hi));
                let n = x.last_dim();
                let sd = s.data();
                let s_bcast = s.shape() != x.shape();
                // dx = g * (1 + scale)
                let dx_data: Vec<f64> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * (1.0 + if s_bcast { sd[i % n] } else { sd[i] }))
                    .collect();
                accumulate(
                    &mut grads[xi],
                    Tensor::from_vec(x.shape().to_vec(), dx_data, x.precision())?,
                );
                // dscale = g * x, reduced over leading axes when broadcast
                let gx = ops::mul(g, x)?;
                if s_bcast {
                    accumulate(&mut grads[si], reduce_to_last_axis(&gx, s.len(), s.precision()));
                } else {
                    accumulate(&mut grads[si], gx);
                }
                // dshift = g, reduced when broadcast
                if h.shape() == x.shape() {
                    accumulate(&mut grads[hi], g.clone());
                } else {
                    accumulate(&mut grads[hi], reduce_to_last_axis(g, h.len(), h.precision()));
                }
            }
            PrimitiveKind::ConcatLast => {
                let (ai, bi) = (node.inputs[0], node.inputs[1]);
                let (a, b) = (val(ai), val(bi));
                let (la, lb) = (a.last_dim(), b.last_dim());
                let lead: usize = a.shape()[..a.rank() - 1].iter().product();
                let gd = g.data();
                let mut da = Vec::with_capacity(lead * la);
                let mut db = Vec::with_capacity(lead * lb);
                for i in 0..lead {
                    let row = &gd[i * (la + lb)..(i + 1) * (la + lb)];
                    da.extend_from_slice(&row[..la]);
                    db.extend_from_slice(&row[la..]);
                }
                accumulate(&mut grads[ai], Tensor::from_vec(a.shape().to_vec(), da, a.precision())?);
                accumulate(&mut grads[bi], Tensor::from_vec(b.shape().to_vec(), db, b.precision())?);
            }
            PrimitiveKind::Mse => {
                let (ai, bi) = (node.inputs[0], node.inputs[1]);
                let (a, b) = (val(ai), val(bi));
                let gs = g.item()?;
                let scale = 2.0 * gs / a.len() as f64;
                let diff: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| scale * (x - y))
                    .collect();
                let da = Tensor::from_vec(a.shape().to_vec(), diff.clone(), a.precision())?;
                let db = Tensor::from_vec(
                    b.shape().to_vec(),
                    diff.into_iter().map(|v| -v).collect(),
                    b.precision(),
                )?;
                accumulate(&mut grads[ai], da);
                accumulate(&mut grads[bi], db);
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        None => *slot = Some(delta),
        Some(g) => {
            let precision = g.precision();
            for (dst, src) in g.data_mut().iter_mut().zip(delta.data()) {
                *dst = precision.store(*dst + src);
            }
        }
    }
}

/// Sums gradient contributions over all leading axes onto a rank-1 feature
/// vector (the adjoint of last-axis broadcast).
fn reduce_to_last_axis(g: &Tensor, n: usize, precision: Precision) -> Tensor {
    let mut out = vec![0.0f64; n];
    for (i, &v) in g.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::from_vec(vec![n], out, precision).expect("reduced shape is consistent")
}

/// Per-parameter gradients in `Tape::param` registration order.
pub struct Gradients {
    by_param: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, index: usize) -> &Tensor {
        &self.by_param[index]
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.by_param.iter()
    }
}

/// Compares tape gradients against central finite differences.
///
/// `build` must deterministically construct the loss from parameter leaves
/// registered in the order of `params`. Returns the worst coordinate
/// discrepancy normalized by the gradient magnitude:
/// `max_i |ad_i - fd_i| / max(1e-8, max_i|ad_i| + max_i|fd_i|)`.
///
/// The normalization is by the gradient's largest component, not each
/// coordinate's own size: a per-coordinate quotient would be dominated by
/// the finite-difference noise floor on near-zero gradient entries (where
/// the quotient is irreducibly ~1e-3 even for an exact gradient), which
/// measures the probe rather than the tape.
///
/// The difference quotient divides by the actually representable step
/// `store(x + eps) - store(x - eps)` so F32 parameter rounding does not bias
/// the estimate.
pub fn finite_diff_check<F>(build: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(1e-6..=1e-2).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite_diff_check epsilon must lie in [1e-6, 1e-2], got {epsilon}"
        )));
    }

    let eval = |params: &[Tensor]| -> Result<(f64, Option<Gradients>, bool)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        let value = tape.value(loss).item()?;
        Ok((value, Some(tape.backward(loss)?), true))
    };

    let (_, grads, _) = eval(params)?;
    let grads = grads.expect("gradient pass ran");

    let mut max_diff = 0.0f64;
    let mut max_ad = 0.0f64;
    let mut max_fd = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let precision = param.precision();
        for ci in 0..param.len() {
            let x = param.data()[ci];
            let xp = precision.store(x + epsilon);
            let xm = precision.store(x - epsilon);

            work[pi].update(|i, v| if i == ci { xp } else { v });
            let (fp, _, _) = eval_loss_only(&build, &work)?;
            work[pi].update(|i, v| if i == ci { xm } else { v });
            let (fm, _, _) = eval_loss_only(&build, &work)?;
            work[pi].update(|i, v| if i == ci { x } else { v });

            let fd = (fp - fm) / (xp - xm);
            let ad = grads.get(pi).data()[ci];
            if !fd.is_finite() || !ad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at parameter {pi} coordinate {ci}: ad={ad}, fd={fd}"
                )));
            }
            max_diff = max_diff.max((ad - fd).abs());
            max_ad = max_ad.max(ad.abs());
            max_fd = max_fd.max(fd.abs());
        }
    }
    Ok(max_diff / (max_ad + max_fd).max(1e-8))
}

fn eval_loss_only<F>(build: &F, params: &[Tensor]) -> Result<(f64, (), ())>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    Ok((tape.value(loss).item()?, (), ()))
}
