//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] records each operation eagerly during the forward pass; calling
//! [`Tape::backward`] walks the nodes in reverse, accumulating adjoints. The
//! engine is generic over the scalar type so the same graph runs in `f32` for
//! training and in `f64` for finite-difference verification.

use crate::encoder::{embed_tokens, TokenizedText, PAD};
use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{axpy, dot, matmul, matmul_nt, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<S: Scalar> {
    Leaf,
    /// Fused token embedding: gathers word rows and mean-pooled char rows.
    TokenEmbed {
        word_table: NodeId,
        char_table: NodeId,
        tok: TokenizedText,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    /// a · bᵀ
    MatMulNT {
        a: NodeId,
        b: NodeId,
    },
    DepthwiseConv3 {
        x: NodeId,
        kernel: NodeId,
    },
    AddRowBroadcast {
        x: NodeId,
        bias: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    ZeroMaskedRows {
        x: NodeId,
        mask: Vec<bool>,
    },
    Scale {
        x: NodeId,
        factor: S,
    },
    MaskedSoftmaxRows {
        scores: NodeId,
        key_mask: Vec<bool>,
    },
    Flatten {
        x: NodeId,
    },
    VecMat {
        v: NodeId,
        w: NodeId,
    },
    AddVec {
        a: NodeId,
        b: NodeId,
    },
    MeanMaskedRows {
        x: NodeId,
        mask: Vec<bool>,
    },
    L2Normalize {
        x: NodeId,
    },
    Dot {
        a: NodeId,
        b: NodeId,
    },
    NegLogSigmoid {
        x: NodeId,
    },
    Sum {
        xs: Vec<NodeId>,
    },
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Adjoints produced by [`Tape::backward`]; indexed by [`NodeId`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a node; `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn token_embed(
        &mut self,
        word_table: NodeId,
        char_table: NodeId,
        tok: &TokenizedText,
    ) -> Result<NodeId> {
        let value = embed_tokens(tok, self.value(word_table), self.value(char_table))?;
        Ok(self.push(
            Op::TokenEmbed {
                word_table,
                char_table,
                tok: tok.clone(),
            },
            value,
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul_nt(self.value(a), self.value(b));
        self.push(Op::MatMulNT { a, b }, value)
    }

    pub fn depthwise_conv3(&mut self, x: NodeId, kernel: NodeId) -> NodeId {
        let value = nn::depthwise_conv3(self.value(x), self.value(kernel));
        self.push(Op::DepthwiseConv3 { x, kernel }, value)
    }

    pub fn add_row_broadcast(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let value = nn::add_row_broadcast(self.value(x), self.value(bias));
        self.push(Op::AddRowBroadcast { x, bias }, value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = nn::relu(self.value(x));
        self.push(Op::Relu { x }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = nn::add(self.value(a), self.value(b));
        self.push(Op::Add { a, b }, value)
    }

    pub fn zero_masked_rows(&mut self, x: NodeId, mask: &[bool]) -> NodeId {
        let value = nn::zero_masked_rows(self.value(x), mask);
        self.push(
            Op::ZeroMaskedRows {
                x,
                mask: mask.to_vec(),
            },
            value,
        )
    }

    pub fn scale(&mut self, x: NodeId, factor: S) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = *v * factor;
        }
        self.push(Op::Scale { x, factor }, value)
    }

    pub fn masked_softmax_rows(&mut self, scores: NodeId, key_mask: &[bool]) -> NodeId {
        let value = nn::masked_softmax_rows(self.value(scores), key_mask);
        self.push(
            Op::MaskedSoftmaxRows {
                scores,
                key_mask: key_mask.to_vec(),
            },
            value,
        )
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let len = self.value(x).len();
        let value = self.value(x).reshaped(&[len]);
        self.push(Op::Flatten { x }, value)
    }

    pub fn vec_mat(&mut self, v: NodeId, w: NodeId) -> NodeId {
        let value = nn::vec_mat(self.value(v), self.value(w));
        self.push(Op::VecMat { v, w }, value)
    }

    pub fn add_vec(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = nn::add(self.value(a), self.value(b));
        self.push(Op::AddVec { a, b }, value)
    }

    pub fn mean_masked_rows(&mut self, x: NodeId, mask: &[bool]) -> NodeId {
        let value = nn::mean_masked_rows(self.value(x), mask);
        self.push(
            Op::MeanMaskedRows {
                x,
                mask: mask.to_vec(),
            },
            value,
        )
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let norm = nn::l2_norm(self.value(x)).to_f64();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numerical(format!(
                "cannot normalize vector with norm {norm}"
            )));
        }
        let value = nn::l2_normalize(self.value(x));
        Ok(self.push(Op::L2Normalize { x }, value))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = Tensor::scalar(dot(self.value(a).data(), self.value(b).data()));
        self.push(Op::Dot { a, b }, value)
    }

    pub fn neg_log_sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = S::from_f64(nn::neg_log_sigmoid(v.to_f64()));
        }
        self.push(Op::NegLogSigmoid { x }, value)
    }

    pub fn sum(&mut self, xs: Vec<NodeId>) -> NodeId {
        assert!(!xs.is_empty(), "sum of zero nodes");
        let mut value = self.value(xs[0]).clone();
        for id in &xs[1..] {
            let rhs = self.value(*id).clone();
            for (o, v) in value.data_mut().iter_mut().zip(rhs.data()) {
                *o += *v;
            }
        }
        self.push(Op::Sum { xs }, value)
    }

    /// Backpropagate from a scalar node, returning adjoints for every node
    /// the scalar depends on.
    pub fn backward(&self, root: NodeId) -> Gradients<S> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(S::ONE));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(grads: &mut [Option<Tensor<S>>], id: NodeId, delta: &Tensor<S>) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (o, v) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *o += *v;
                }
            }
            slot => *slot = Some(delta.clone()),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::TokenEmbed {
                word_table,
                char_table,
                tok,
            } => {
                let d_w = self.value(*word_table).cols();
                let mut gw = Tensor::zeros(self.value(*word_table).shape());
                let mut gc = Tensor::zeros(self.value(*char_table).shape());
                for t in 0..tok.t_max() {
                    if !tok.mask[t] {
                        continue;
                    }
                    let grow = g.row(t);
                    let wid = tok.word_ids[t] as usize;
                    axpy(S::ONE, &grow[..d_w], gw.row_mut(wid));
                    let real_chars: Vec<usize> = tok.char_ids[t]
                        .iter()
                        .filter(|c| **c != PAD)
                        .map(|c| *c as usize)
                        .collect();
                    if !real_chars.is_empty() {
                        let inv = S::from_f64(1.0 / real_chars.len() as f64);
                        for cid in real_chars {
                            axpy(inv, &grow[d_w..], gc.row_mut(cid));
                        }
                    }
                }
                Self::accumulate(grads, *word_table, &gw);
                Self::accumulate(grads, *char_table, &gc);
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = matmul_nt(g, bv);
                let mut gb = Tensor::zeros(bv.shape());
                for i in 0..av.rows() {
                    let arow = av.row(i);
                    let grow = g.row(i);
                    for (l, &al) in arow.iter().enumerate() {
                        axpy(al, grow, gb.row_mut(l));
                    }
                }
                Self::accumulate(grads, *a, &ga);
                Self::accumulate(grads, *b, &gb);
            }
            Op::MatMulNT { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = matmul(g, bv);
                let mut gb = Tensor::zeros(bv.shape());
                for i in 0..av.rows() {
                    let grow = g.row(i);
                    let arow = av.row(i);
                    for (j, &gij) in grow.iter().enumerate() {
                        axpy(gij, arow, gb.row_mut(j));
                    }
                }
                Self::accumulate(grads, *a, &ga);
                Self::accumulate(grads, *b, &gb);
            }
            Op::DepthwiseConv3 { x, kernel } => {
                let xv = self.value(*x);
                let kv = self.value(*kernel);
                let (t_len, d) = (xv.rows(), xv.cols());
                let mut gx = Tensor::zeros(xv.shape());
                let mut gk = Tensor::zeros(kv.shape());
                for t in 0..t_len {
                    let grow = g.row(t);
                    // y[t] pulls from x[t-1] (k0), x[t] (k1), x[t+1] (k2)
                    if t > 0 {
                        for c in 0..d {
                            gx.row_mut(t - 1)[c] += kv.row(0)[c] * grow[c];
                            gk.row_mut(0)[c] += xv.row(t - 1)[c] * grow[c];
                        }
                    }
                    for c in 0..d {
                        gx.row_mut(t)[c] += kv.row(1)[c] * grow[c];
                        gk.row_mut(1)[c] += xv.row(t)[c] * grow[c];
                    }
                    if t + 1 < t_len {
                        for c in 0..d {
                            gx.row_mut(t + 1)[c] += kv.row(2)[c] * grow[c];
                            gk.row_mut(2)[c] += xv.row(t + 1)[c] * grow[c];
                        }
                    }
                }
                Self::accumulate(grads, *x, &gx);
                Self::accumulate(grads, *kernel, &gk);
            }
            Op::AddRowBroadcast { x, bias } => {
                let mut gb = Tensor::zeros(self.value(*bias).shape());
                for t in 0..g.rows() {
                    axpy(S::ONE, g.row(t), gb.data_mut());
                }
                Self::accumulate(grads, *x, g);
                Self::accumulate(grads, *bias, &gb);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                for (gv, v) in gx.data_mut().iter_mut().zip(xv.data()) {
                    if *v <= S::ZERO {
                        *gv = S::ZERO;
                    }
                }
                Self::accumulate(grads, *x, &gx);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::ZeroMaskedRows { x, mask } => {
                let gx = nn::zero_masked_rows(g, mask);
                Self::accumulate(grads, *x, &gx);
            }
            Op::Scale { x, factor } => {
                let mut gx = g.clone();
                for v in gx.data_mut() {
                    *v = *v * *factor;
                }
                Self::accumulate(grads, *x, &gx);
            }
            Op::MaskedSoftmaxRows { scores, key_mask } => {
                let w = &self.nodes[idx].value;
                let mut gs = Tensor::zeros(w.shape());
                for t in 0..w.rows() {
                    let wrow = w.row(t);
                    let grow = g.row(t);
                    let inner = dot(wrow, grow);
                    let gsrow = gs.row_mut(t);
                    for (j, real) in key_mask.iter().enumerate() {
                        if *real {
                            gsrow[j] = wrow[j] * (grow[j] - inner);
                        }
                    }
                }
                Self::accumulate(grads, *scores, &gs);
            }
            Op::Flatten { x } => {
                let gx = g.reshaped(self.value(*x).shape());
                Self::accumulate(grads, *x, &gx);
            }
            Op::VecMat { v, w } => {
                let vv = self.value(*v);
                let wv = self.value(*w);
                let mut gvec = Tensor::zeros(vv.shape());
                let mut gw = Tensor::zeros(wv.shape());
                for (i, gi) in gvec.data_mut().iter_mut().enumerate() {
                    *gi = dot(wv.row(i), g.data());
                }
                for (i, &vi) in vv.data().iter().enumerate() {
                    axpy(vi, g.data(), gw.row_mut(i));
                }
                Self::accumulate(grads, *v, &gvec);
                Self::accumulate(grads, *w, &gw);
            }
            Op::AddVec { a, b } => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::MeanMaskedRows { x, mask } => {
                let n_real = mask.iter().filter(|m| **m).count();
                let inv = S::from_f64(1.0 / n_real as f64);
                let mut gx = Tensor::zeros(self.value(*x).shape());
                for (t, real) in mask.iter().enumerate() {
                    if *real {
                        axpy(inv, g.data(), gx.row_mut(t));
                    }
                }
                Self::accumulate(grads, *x, &gx);
            }
            Op::L2Normalize { x } => {
                let xv = self.value(*x);
                let y = &self.nodes[idx].value;
                let norm = nn::l2_norm(xv);
                let proj = dot(y.data(), g.data());
                let mut gx = g.clone();
                for (gv, yv) in gx.data_mut().iter_mut().zip(y.data()) {
                    *gv = (*gv - *yv * proj) / norm;
                }
                Self::accumulate(grads, *x, &gx);
            }
            Op::Dot { a, b } => {
                let s = g.item();
                let mut ga = self.value(*b).clone();
                for v in ga.data_mut() {
                    *v = *v * s;
                }
                let mut gb = self.value(*a).clone();
                for v in gb.data_mut() {
                    *v = *v * s;
                }
                Self::accumulate(grads, *a, &ga);
                Self::accumulate(grads, *b, &gb);
            }
            Op::NegLogSigmoid { x } => {
                // d/dx -ln(sigmoid(x)) = sigmoid(x) - 1
                let xv = self.value(*x);
                let mut gx = g.clone();
                for (gv, v) in gx.data_mut().iter_mut().zip(xv.data()) {
                    let s = nn::sigmoid(v.to_f64());
                    *gv = *gv * S::from_f64(s - 1.0);
                }
                Self::accumulate(grads, *x, &gx);
            }
            Op::Sum { xs } => {
                for id in xs {
                    Self::accumulate(grads, *id, g);
                }
            }
        }
    }
}
