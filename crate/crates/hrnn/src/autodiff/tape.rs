//! Reverse-mode tape. Ops append nodes during the forward pass; `backward`
//! replays them in reverse id order, so gradient accumulation order is fixed
//! and repeated runs are bit-identical.
//!
//! Tensors whose inputs are all constants are folded: nothing is recorded and
//! the result is itself a constant. A forward-only evaluation therefore runs
//! through the same code path with an empty tape.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::real::Real;

use super::tensor::{NodeId, Tensor};

enum Op<F: Real> {
    Leaf,
    Add {
        a: Option<NodeId>,
        b: Option<NodeId>,
    },
    Sub {
        a: Option<NodeId>,
        b: Option<NodeId>,
    },
    Mul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Rc<Vec<F>>,
        bv: Rc<Vec<F>>,
    },
    MatMul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        av: Rc<Vec<F>>,
        bv: Rc<Vec<F>>,
        m: usize,
        k: usize,
        n: usize,
    },
    /// Concatenation along the row axis; parts carry (node, element count).
    Concat {
        parts: Vec<(Option<NodeId>, usize)>,
    },
    /// Row slice of a 1-D or 2-D input; offset/len are in elements.
    Slice {
        a: Option<NodeId>,
        offset: usize,
        len: usize,
    },
    Sigmoid {
        a: Option<NodeId>,
        out: Rc<Vec<F>>,
    },
    Tanh {
        a: Option<NodeId>,
        out: Rc<Vec<F>>,
    },
    Relu {
        a: Option<NodeId>,
        out: Rc<Vec<F>>,
    },
    /// Broadcast bias (rows) over the columns of a (rows, cols) input.
    BiasAdd {
        a: Option<NodeId>,
        bias: Option<NodeId>,
        rows: usize,
        cols: usize,
    },
    Sum {
        a: Option<NodeId>,
    },
    Scale {
        a: Option<NodeId>,
        c: F,
    },
    /// Mean over batch columns of -log softmax(logits)[target].
    SoftmaxCe {
        logits: Option<NodeId>,
        probs: Rc<Vec<F>>,
        targets: Rc<Vec<usize>>,
        classes: usize,
    },
    Mse {
        pred: Option<NodeId>,
        target: Option<NodeId>,
        pv: Rc<Vec<F>>,
        tv: Rc<Vec<F>>,
    },
    /// Identity forward, discards the upstream gradient.
    Barrier,
    /// Verification hook: a barrier downgraded to plain identity, used to
    /// check that barriered graphs reproduce unrestricted gradients.
    BarrierPass {
        a: Option<NodeId>,
    },
}

struct Node<F: Real> {
    op: Op<F>,
    len: usize,
}

/// Gradient map produced by `Tape::backward`, indexed by node id.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for a tensor, if any flowed to it. Constants return `None`.
    pub fn get(&self, t: &Tensor<F>) -> Option<&[F]> {
        t.node().and_then(|id| self.by_node(id))
    }

    pub fn by_node(&self, id: NodeId) -> Option<&[F]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Gradient for a tensor, zeros if none flowed.
    pub fn get_or_zeros(&self, t: &Tensor<F>) -> Vec<F> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![F::zero(); t.len()])
    }
}

/// Append-only op recorder plus the reverse sweep.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    check_finite: bool,
    barrier_passthrough: bool,
    backward_done: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
            barrier_passthrough: false,
            backward_done: false,
        }
    }

    /// NaN/Inf detection at op boundaries. On by default.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Downgrade every subsequent `barrier` to a plain identity edge.
    /// Verification hook only; normal runs never set this.
    pub fn set_barrier_passthrough(&mut self, on: bool) {
        self.barrier_passthrough = on;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Register a tensor whose gradient we want (parameter or probe input).
    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<F>) -> Result<Tensor<F>> {
        self.ensure_finite("leaf", &values)?;
        let id = self.push(Op::Leaf, values.len());
        Ok(Tensor::with_node(shape, Rc::new(values), id))
    }

    /// Re-register an existing tensor's values as a leaf on this tape.
    pub fn leaf_from(&mut self, t: &Tensor<F>) -> Result<Tensor<F>> {
        self.leaf(t.shape().to_vec(), t.to_vec())
    }

    fn push(&mut self, op: Op<F>, len: usize) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, len });
        id
    }

    fn ensure_finite(&self, op: &'static str, values: &[F]) -> Result<()> {
        if self.check_finite && !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op,
                node: format!("{}", self.nodes.len()),
            });
        }
        Ok(())
    }

    /// Record `op` if any input is on the tape, otherwise fold to a constant.
    fn emit(
        &mut self,
        name: &'static str,
        recorded: bool,
        shape: Vec<usize>,
        values: Vec<F>,
        op: impl FnOnce(&Rc<Vec<F>>) -> Op<F>,
    ) -> Result<Tensor<F>> {
        self.ensure_finite(name, &values)?;
        let values = Rc::new(values);
        if recorded {
            let node = op(&values);
            let id = self.push(node, values.len());
            Ok(Tensor::with_node(shape, values, id))
        } else {
            Ok(Tensor::detached(shape, values))
        }
    }

    // ── primitive ops ────────────────────────────────────────────────

    pub fn add(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("add", a, b)?;
        let out = map2(a.values(), b.values(), |x, y| x + y);
        self.emit("add", on_tape(&[a, b]), a.shape().to_vec(), out, |_| Op::Add {
            a: a.node(),
            b: b.node(),
        })
    }

    pub fn sub(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("sub", a, b)?;
        let out = map2(a.values(), b.values(), |x, y| x - y);
        self.emit("sub", on_tape(&[a, b]), a.shape().to_vec(), out, |_| Op::Sub {
            a: a.node(),
            b: b.node(),
        })
    }

    pub fn mul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("elementwise-mul", a, b)?;
        let out = map2(a.values(), b.values(), |x, y| x * y);
        self.emit(
            "elementwise-mul",
            on_tape(&[a, b]),
            a.shape().to_vec(),
            out,
            |_| Op::Mul {
                a: a.node(),
                b: b.node(),
                av: a.share_values(),
                bv: b.share_values(),
            },
        )
    }

    /// (m,k) @ (k,n) -> (m,n); a 1-D right operand (k) yields a 1-D (m).
    pub fn matmul(&mut self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape().len() != 2 {
            return Err(shape_err("matmul", a, b));
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (n, out_shape) = match b.shape().len() {
            1 if b.shape()[0] == k => (1usize, vec![m]),
            2 if b.shape()[0] == k => (b.shape()[1], vec![m, b.shape()[1]]),
            _ => return Err(shape_err("matmul", a, b)),
        };
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, F::one(), a.values(), b.values(), F::zero(), &mut out);
        self.emit("matmul", on_tape(&[a, b]), out_shape, out, |_| Op::MatMul {
            a: a.node(),
            b: b.node(),
            av: a.share_values(),
            bv: b.share_values(),
            m,
            k,
            n,
        })
    }

    /// Concatenate along the row axis: all 1-D, or all 2-D with equal cols.
    pub fn concat(&mut self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        if parts.is_empty() {
            return Err(Error::Config("concat of zero tensors".into()));
        }
        let ndim = parts[0].shape().len();
        let cols = parts[0].cols();
        let mut rows = 0usize;
        for p in parts {
            if p.shape().len() != ndim || (ndim == 2 && p.cols() != cols) {
                return Err(shape_err("concat", parts[0], p));
            }
            rows += p.rows();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for p in parts {
            out.extend_from_slice(p.values());
        }
        let shape = if ndim == 1 { vec![rows] } else { vec![rows, cols] };
        let any = parts.iter().any(|p| p.node().is_some());
        let meta: Vec<(Option<NodeId>, usize)> =
            parts.iter().map(|p| (p.node(), p.len())).collect();
        self.emit("concat", any, shape, out, |_| Op::Concat { parts: meta })
    }

    /// Rows [r0, r1) of a 1-D or 2-D tensor.
    pub fn slice_rows(&mut self, a: &Tensor<F>, r0: usize, r1: usize) -> Result<Tensor<F>> {
        let rows = a.rows();
        let cols = a.cols();
        if r0 >= r1 || r1 > rows || a.shape().len() > 2 {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: a.shape().to_vec(),
                rhs: vec![r0, r1],
            });
        }
        let offset = r0 * cols;
        let len = (r1 - r0) * cols;
        let out = a.values()[offset..offset + len].to_vec();
        let shape = if a.shape().len() == 1 {
            vec![r1 - r0]
        } else {
            vec![r1 - r0, cols]
        };
        self.emit("slice", a.node().is_some(), shape, out, |_| Op::Slice {
            a: a.node(),
            offset,
            len,
        })
    }

    pub fn sigmoid(&mut self, a: &Tensor<F>) -> Result<Tensor<F>> {
        let out: Vec<F> = a
            .values()
            .iter()
            .map(|&x| {
                // Stable on both tails.
                if x >= F::zero() {
                    F::one() / (F::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (F::one() + e)
                }
            })
            .collect();
        self.emit("sigmoid", a.node().is_some(), a.shape().to_vec(), out, |v| Op::Sigmoid {
            a: a.node(),
            out: Rc::clone(v),
        })
    }

    pub fn tanh(&mut self, a: &Tensor<F>) -> Result<Tensor<F>> {
        let out: Vec<F> = a.values().iter().map(|&x| x.tanh()).collect();
        self.emit("tanh", a.node().is_some(), a.shape().to_vec(), out, |v| Op::Tanh {
            a: a.node(),
            out: Rc::clone(v),
        })
    }

    pub fn relu(&mut self, a: &Tensor<F>) -> Result<Tensor<F>> {
        let out: Vec<F> = a
            .values()
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        self.emit("relu", a.node().is_some(), a.shape().to_vec(), out, |v| Op::Relu {
            a: a.node(),
            out: Rc::clone(v),
        })
    }

    /// Add a (rows) bias to every column of a (rows, cols) matrix; on a 1-D
    /// input this is a plain add.
    pub fn bias_add(&mut self, a: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        if bias.shape().len() != 1 || bias.shape()[0] != a.rows() || a.shape().len() > 2 {
            return Err(shape_err("broadcast-add-bias", a, bias));
        }
        let rows = a.rows();
        let cols = a.cols();
        let av = a.values();
        let bv = bias.values();
        let mut out = Vec::with_capacity(av.len());
        for r in 0..rows {
            let b = bv[r];
            for c in 0..cols {
                out.push(av[r * cols + c] + b);
            }
        }
        self.emit(
            "broadcast-add-bias",
            on_tape(&[a, bias]),
            a.shape().to_vec(),
            out,
            |_| Op::BiasAdd {
                a: a.node(),
                bias: bias.node(),
                rows,
                cols,
            },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: &Tensor<F>) -> Result<Tensor<F>> {
        let s = a.values().iter().copied().sum();
        self.emit("sum", a.node().is_some(), vec![], vec![s], |_| Op::Sum { a: a.node() })
    }

    /// Multiply by a compile-time constant scalar.
    pub fn scale(&mut self, a: &Tensor<F>, c: F) -> Result<Tensor<F>> {
        let out: Vec<F> = a.values().iter().map(|&x| x * c).collect();
        self.emit("scale", a.node().is_some(), a.shape().to_vec(), out, |_| Op::Scale {
            a: a.node(),
            c,
        })
    }

    /// Numerically stabilized cross-entropy in nats, averaged over batch
    /// columns. Accepts (C) with one target or (C,B) with B targets.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: &Tensor<F>,
        targets: &[usize],
    ) -> Result<Tensor<F>> {
        let (classes, batch) = match logits.shape().len() {
            1 => (logits.shape()[0], 1usize),
            2 => (logits.shape()[0], logits.shape()[1]),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "softmax-cross-entropy",
                    lhs: logits.shape().to_vec(),
                    rhs: vec![],
                })
            }
        };
        if targets.len() != batch {
            return Err(Error::ShapeMismatch {
                op: "softmax-cross-entropy",
                lhs: logits.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        for &t in targets {
            if t >= classes {
                return Err(Error::TargetOutOfRange {
                    target: t,
                    classes,
                });
            }
        }
        let lv = logits.values();
        let mut probs = vec![F::zero(); classes * batch];
        let mut total = F::zero();
        for b in 0..batch {
            let mut maxv = F::neg_infinity();
            for c in 0..classes {
                maxv = maxv.max(lv[c * batch + b]);
            }
            let mut denom = F::zero();
            for c in 0..classes {
                let e = (lv[c * batch + b] - maxv).exp();
                probs[c * batch + b] = e;
                denom += e;
            }
            for c in 0..classes {
                probs[c * batch + b] /= denom;
            }
            let t = targets[b];
            // -log p_t = log(sum exp) - (l_t - max)
            total += denom.ln() - (lv[t * batch + b] - maxv);
        }
        let loss = total / F::from_f64(batch as f64);
        let targets = Rc::new(targets.to_vec());
        self.emit(
            "softmax-cross-entropy",
            logits.node().is_some(),
            vec![],
            vec![loss],
            |_| Op::SoftmaxCe {
                logits: logits.node(),
                probs: Rc::new(probs),
                targets,
                classes,
            },
        )
    }

    /// Mean of squared differences, as a scalar.
    pub fn mse(&mut self, pred: &Tensor<F>, target: &Tensor<F>) -> Result<Tensor<F>> {
        same_shape("mse", pred, target)?;
        let n = F::from_f64(pred.len() as f64);
        let s: F = pred
            .values()
            .iter()
            .zip(target.values())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        self.emit("mse", on_tape(&[pred, target]), vec![], vec![s / n], |_| Op::Mse {
            pred: pred.node(),
            target: target.node(),
            pv: pred.share_values(),
            tv: target.share_values(),
        })
    }

    /// Identity in forward; the upstream gradient is discarded in backward,
    /// so exactly zero flows into `a` through this edge.
    pub fn barrier(&mut self, a: &Tensor<F>) -> Result<Tensor<F>> {
        if a.node().is_none() {
            // Constants are already detached.
            return Ok(a.clone());
        }
        let passthrough = self.barrier_passthrough;
        let id = self.push(
            if passthrough {
                Op::BarrierPass { a: a.node() }
            } else {
                Op::Barrier
            },
            a.len(),
        );
        Ok(Tensor::with_node(a.shape().to_vec(), a.share_values(), id))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Errors if called twice.
    pub fn backward(&mut self, loss: &Tensor<F>) -> Result<Gradients<F>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if loss.len() != 1 {
            return Err(Error::LossNotScalar(loss.shape().to_vec()));
        }
        let loss_id = loss.node().ok_or(Error::LossDetached)?;
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss_id] = Some(vec![F::one()]);

        for id in (0..=loss_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, id: NodeId, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Barrier => {}
            Op::BarrierPass { a } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| axpy(d, g, F::one()));
                }
            }
            Op::Add { a, b } => {
                for side in [a, b] {
                    if let Some(i) = side {
                        acc(grads, *i, self.nodes[*i].len, |d| axpy(d, g, F::one()));
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| axpy(d, g, F::one()));
                }
                if let Some(b) = b {
                    acc(grads, *b, self.nodes[*b].len, |d| axpy(d, g, -F::one()));
                }
            }
            Op::Mul { a, b, av, bv } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * bv[i];
                        }
                    });
                }
                if let Some(b) = b {
                    acc(grads, *b, self.nodes[*b].len, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * av[i];
                        }
                    });
                }
            }
            Op::MatMul { a, b, av, bv, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if let Some(a) = a {
                    // dA += G (m,n) @ B^T (n,k)
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        F::gemm_strided(
                            m,
                            n,
                            k,
                            F::one(),
                            g,
                            n as isize,
                            1,
                            bv,
                            1,
                            n as isize,
                            F::one(),
                            d,
                        );
                    });
                }
                if let Some(b) = b {
                    // dB += A^T (k,m) @ G (m,n)
                    acc(grads, *b, self.nodes[*b].len, |d| {
                        F::gemm_strided(
                            k,
                            m,
                            n,
                            F::one(),
                            av,
                            1,
                            k as isize,
                            g,
                            n as isize,
                            1,
                            F::one(),
                            d,
                        );
                    });
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0usize;
                for (node_id, len) in parts {
                    if let Some(i) = node_id {
                        let seg = &g[offset..offset + len];
                        acc(grads, *i, self.nodes[*i].len, |d| axpy(d, seg, F::one()));
                    }
                    offset += len;
                }
            }
            Op::Slice { a, offset, len } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        axpy(&mut d[*offset..*offset + *len], g, F::one());
                    });
                }
            }
            Op::Sigmoid { a, out } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * out[i] * (F::one() - out[i]);
                        }
                    });
                }
            }
            Op::Tanh { a, out } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * (F::one() - out[i] * out[i]);
                        }
                    });
                }
            }
            Op::Relu { a, out } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        for i in 0..d.len() {
                            if out[i] > F::zero() {
                                d[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::BiasAdd { a, bias, rows, cols } => {
                if let Some(a) = a {
                    acc(grads, *a, self.nodes[*a].len, |d| axpy(d, g, F::one()));
                }
                if let Some(bias) = bias {
                    acc(grads, *bias, self.nodes[*bias].len, |d| {
                        for r in 0..*rows {
                            let mut s = F::zero();
                            for c in 0..*cols {
                                s += g[r * cols + c];
                            }
                            d[r] += s;
                        }
                    });
                }
            }
            Op::Sum { a } => {
                if let Some(a) = a {
                    let gv = g[0];
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        for x in d.iter_mut() {
                            *x += gv;
                        }
                    });
                }
            }
            Op::Scale { a, c } => {
                if let Some(a) = a {
                    let c = *c;
                    acc(grads, *a, self.nodes[*a].len, |d| axpy(d, g, c));
                }
            }
            Op::SoftmaxCe { logits, probs, targets, classes } => {
                if let Some(a) = logits {
                    let batch = targets.len();
                    let scale = g[0] / F::from_f64(batch as f64);
                    acc(grads, *a, self.nodes[*a].len, |d| {
                        for c in 0..*classes {
                            for b in 0..batch {
                                let idx = c * batch + b;
                                let onehot = if targets[b] == c { F::one() } else { F::zero() };
                                d[idx] += scale * (probs[idx] - onehot);
                            }
                        }
                    });
                }
            }
            Op::Mse { pred, target, pv, tv } => {
                let n = F::from_f64(pv.len() as f64);
                let two = F::from_f64(2.0);
                let scale = g[0] * two / n;
                if let Some(p) = pred {
                    acc(grads, *p, self.nodes[*p].len, |d| {
                        for i in 0..d.len() {
                            d[i] += scale * (pv[i] - tv[i]);
                        }
                    });
                }
                if let Some(t) = target {
                    acc(grads, *t, self.nodes[*t].len, |d| {
                        for i in 0..d.len() {
                            d[i] -= scale * (pv[i] - tv[i]);
                        }
                    });
                }
            }
        }
    }
}

fn on_tape<F: Real>(ts: &[&Tensor<F>]) -> bool {
    ts.iter().any(|t| t.node().is_some())
}

fn same_shape<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn shape_err<F: Real>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn map2<F: Real>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// d += alpha * g
fn axpy<F: Real>(d: &mut [F], g: &[F], alpha: F) {
    for i in 0..d.len() {
        d[i] += alpha * g[i];
    }
}

/// Run `f` on the (lazily allocated) gradient buffer of node `id`.
fn acc<F: Real>(grads: &mut [Option<Vec<F>>], id: NodeId, len: usize, f: impl FnOnce(&mut [F])) {
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(vec![F::zero(); len]);
    }
    f(slot.as_mut().unwrap());
}
