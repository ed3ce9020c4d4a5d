use super::kernels::{self, fsum, gemm};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Permute {
        a: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    RowLerp {
        a: Var,
        b: Var,
        wa: Vec<f64>,
        wb: Vec<f64>,
    },
    KlMean {
        log_probs: Var,
        target: Tensor,
        active: Vec<bool>,
        count: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    tracked: bool,
}

/// Dynamic tape: nodes are appended in evaluation order, so every node's
/// inputs precede it and a single reverse sweep is a valid backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub(crate) fn check_simplex(target: &Tensor) -> Result<()> {
    target
        .rows()
        .enumerate()
        .try_for_each(|(r, row)| check_simplex_row(r, row))
}

fn check_simplex_row(r: usize, row: &[f64]) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(-1e-12..=1.0 + 1e-6).contains(&p)) {
        return Err(Error::invalid(
            "target distribution",
            format!("row {r} is off the simplex (sum {sum})"),
        ));
    }
    Ok(())
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if let Some(pos) = t.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            op,
            detail: format!("non-finite input {} at flat index {pos}", t.data()[pos]),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v` as a tensor (zeros when nothing flowed into it).
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    /// 2-D product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, false)
    }

    /// 2-D product with the right operand transposed: `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, false)
    }

    /// Batched product over the leading dimension: `a[g×m×k] · b[g×k×n]`
    /// (or `b[g×n×k]ᵀ` when `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        self.matmul_impl(a, b, trans_b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool, batched: bool) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let rank = if batched { 3 } else { 2 };
        if sa.len() != rank || sb.len() != rank || (batched && sa[0] != sb[0]) {
            return Err(Error::shape("matmul", sa, sb));
        }
        let off = rank - 2;
        let batch = if batched { sa[0] } else { 1 };
        let (m, k) = (sa[off], sa[off + 1]);
        let (kb, n) = if trans_b {
            (sb[off + 1], sb[off])
        } else {
            (sb[off], sb[off + 1])
        };
        if k != kb {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for g in 0..batch {
            gemm(
                false,
                trans_b,
                m,
                k,
                n,
                &da[g * m * k..(g + 1) * m * k],
                &db[g * k * n..(g + 1) * k * n],
                0.0,
                &mut out[g * m * n..(g + 1) * m * n],
            );
        }
        let shape = if batched {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            tracked,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.numel() != tx.width() {
            return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
        }
        let w = tx.width();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % w])
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(value, Op::AddBias { x, bias }, tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * s).collect(),
        )
        .expect("same shape");
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, s), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x.max(0.0)).collect(),
        )
        .expect("same shape");
        let tracked = self.tracked(a);
        self.push(value, Op::Relu(a), tracked)
    }

    /// Softmax along the last axis. `mask[i] == true` forces probability 0
    /// at flat position `i`.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        check_finite("softmax", ta)?;
        if let Some(m) = mask {
            if m.len() != ta.numel() {
                return Err(Error::shape("softmax mask", ta.shape(), &[m.len()]));
            }
        }
        let w = ta.width();
        let mut data = ta.data().to_vec();
        for (r, row) in data.chunks_mut(w).enumerate() {
            kernels::softmax_row(row, mask.map(|m| &m[r * w..(r + 1) * w]));
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Softmax(a), tracked))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        check_finite("log_softmax", ta)?;
        let w = ta.width();
        let mut data = ta.data().to_vec();
        data.chunks_mut(w).for_each(kernels::log_softmax_row);
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::LogSoftmax(a), tracked))
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let w = tx.width();
        if self.value(gamma).numel() != w || self.value(beta).numel() != w {
            return Err(Error::shape(
                "layer_norm",
                tx.shape(),
                self.value(gamma).shape(),
            ));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = tx.numel() / w;
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for (r, row) in tx.data().chunks(w).enumerate() {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..w {
                let h = (row[i] - mean) * rs;
                xhat[r * w + i] = h;
                out[r * w + i] = h * g[i] + b[i];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            tracked,
        ))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::shape("gather_rows", tt.shape(), &[ids.len()]));
        }
        let (rows, w) = (tt.shape()[0], tt.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(
                "token id",
                format!("{bad} >= table size {rows}"),
            ));
        }
        let mut data = Vec::with_capacity(ids.len() * w);
        for &i in ids {
            data.extend_from_slice(tt.row(i));
        }
        let value = Tensor::new(vec![ids.len(), w], data)?;
        let tracked = self.tracked(table);
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            tracked,
        ))
    }

    /// General element gather: `out[i] = a[index[i]]`, reshaped to `shape`.
    pub fn permute(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if index.len() != shape.iter().product::<usize>() || index.iter().any(|&i| i >= ta.numel())
        {
            return Err(Error::shape("permute", ta.shape(), shape));
        }
        let data = index.iter().map(|&i| ta.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Permute { a, index }, tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// Row-wise mixing `out_r = a_r · wa[r] + b_r · wb[r]` over the last axis.
    pub fn row_lerp(&mut self, a: Var, b: Var, wa: &[f64], wb: &[f64]) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("row_lerp", ta.shape(), tb.shape()));
        }
        let w = ta.width();
        let rows = ta.numel() / w.max(1);
        if wa.len() != rows || wb.len() != rows {
            return Err(Error::shape(
                "row_lerp weights",
                &[rows],
                &[wa.len(), wb.len()],
            ));
        }
        let data = kernels::lerp_rows(ta.data(), tb.data(), wa, wb, w);
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            value,
            Op::RowLerp {
                a,
                b,
                wa: wa.to_vec(),
                wb: wb.to_vec(),
            },
            tracked,
        ))
    }

    /// Mean over active rows of `KL(target_r ‖ exp(log_probs_r))`.
    ///
    /// The target is data: no gradient flows into it.
    pub fn kl_mean(&mut self, log_probs: Var, target: Tensor, active: &[bool]) -> Result<Var> {
        self.kl_mean_rows(log_probs, target, active).map(|(v, _)| v)
    }

    /// [`Graph::kl_mean`] that also returns the per-row divergences of the
    /// active rows, in row order.
    pub fn kl_mean_rows(
        &mut self,
        log_probs: Var,
        target: Tensor,
        active: &[bool],
    ) -> Result<(Var, Vec<f64>)> {
        let tl = self.value(log_probs);
        if tl.shape() != target.shape() {
            return Err(Error::shape("kl_mean", target.shape(), tl.shape()));
        }
        let rows = tl.numel() / tl.width();
        if active.len() != rows {
            return Err(Error::shape("kl_mean mask", &[rows], &[active.len()]));
        }
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return Err(Error::invalid("loss mask", "no active positions"));
        }
        let mut rows_kl = Vec::with_capacity(count);
        for (r, (t, lp)) in target.rows().zip(tl.rows()).enumerate() {
            if active[r] {
                check_simplex_row(r, t)?;
                rows_kl.push(kernels::kl_row(t, lp));
            }
        }
        let value = Tensor::scalar(fsum(rows_kl.iter().copied()) / count as f64);
        let tracked = self.tracked(log_probs);
        let v = self.push(
            value,
            Op::KlMean {
                log_probs,
                target,
                active: active.to_vec(),
                count,
            },
            tracked,
        );
        Ok((v, rows_kl))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(fsum(self.value(a).data().iter().copied()));
        let tracked = self.tracked(a);
        self.push(value, Op::Sum(a), tracked)
    }

    /// Reverse sweep from a one-element root. Gradients accumulate, so call
    /// once per graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(
                "backward root",
                self.value(root).shape(),
                &[1],
            ));
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].tracked {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backward_op(idx, &op, &grad);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &Graph)) {
        if !self.nodes[v.0].tracked {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let mut g = self.nodes[v.0].grad.take().unwrap_or_else(|| vec![0.0; n]);
        f(&mut g, self);
        self.nodes[v.0].grad = Some(g);
    }

    fn backward_op(&mut self, idx: usize, op: &Op, dy: &[f64]) {
        let out = Var(idx);
        match *op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                self.accumulate(a, |ga, gr| {
                    let bv = gr.value(b).data();
                    for g in 0..batch {
                        let dyg = &dy[g * m * n..(g + 1) * m * n];
                        let bg = &bv[g * k * n..(g + 1) * k * n];
                        // dA = dY · op(B)ᵀ
                        gemm(
                            false,
                            !trans_b,
                            m,
                            n,
                            k,
                            dyg,
                            bg,
                            1.0,
                            &mut ga[g * m * k..(g + 1) * m * k],
                        );
                    }
                });
                self.accumulate(b, |gb, gr| {
                    let av = gr.value(a).data();
                    for g in 0..batch {
                        let dyg = &dy[g * m * n..(g + 1) * m * n];
                        let ag = &av[g * m * k..(g + 1) * m * k];
                        let gbg = &mut gb[g * k * n..(g + 1) * k * n];
                        if trans_b {
                            // dB[n×k] = dYᵀ · A
                            gemm(true, false, n, m, k, dyg, ag, 1.0, gbg);
                        } else {
                            // dB[k×n] = Aᵀ · dY
                            gemm(true, false, k, m, n, ag, dyg, 1.0, gbg);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(v, |g, _| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(x, |g, _| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
                self.accumulate(bias, |g, _| {
                    let w = g.len();
                    for row in dy.chunks(w) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                self.accumulate(a, |g, gr| {
                    let bv = gr.value(b).data();
                    for i in 0..g.len() {
                        g[i] += dy[i] * bv[i];
                    }
                });
                self.accumulate(b, |g, gr| {
                    let av = gr.value(a).data();
                    for i in 0..g.len() {
                        g[i] += dy[i] * av[i];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(a, |g, _| {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += d * s)
                });
            }
            Op::Relu(a) => {
                self.accumulate(a, |g, gr| {
                    let x = gr.value(a).data();
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += dy[i];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                self.accumulate(a, |g, gr| {
                    let y = gr.value(out);
                    let w = y.width();
                    for ((gr, yr), dr) in g.chunks_mut(w).zip(y.rows()).zip(dy.chunks(w)) {
                        let s: f64 = yr.iter().zip(dr).map(|(y, d)| y * d).sum();
                        for i in 0..w {
                            gr[i] += yr[i] * (dr[i] - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                self.accumulate(a, |g, gr| {
                    let y = gr.value(out);
                    let w = y.width();
                    for ((gr, yr), dr) in g.chunks_mut(w).zip(y.rows()).zip(dy.chunks(w)) {
                        let s: f64 = dr.iter().sum();
                        for i in 0..w {
                            gr[i] += dr[i] - yr[i].exp() * s;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                ref xhat,
                ref rstd,
            } => {
                let w = self.value(gamma).numel();
                self.accumulate(gamma, |g, _| {
                    for (dr, hr) in dy.chunks(w).zip(xhat.chunks(w)) {
                        for i in 0..w {
                            g[i] += dr[i] * hr[i];
                        }
                    }
                });
                self.accumulate(beta, |g, _| {
                    for dr in dy.chunks(w) {
                        g.iter_mut().zip(dr).for_each(|(g, d)| *g += d);
                    }
                });
                self.accumulate(x, |g, gr| {
                    let gv = gr.value(gamma).data();
                    let mut dh = vec![0.0; w];
                    for (r, (dr, hr)) in dy.chunks(w).zip(xhat.chunks(w)).enumerate() {
                        for i in 0..w {
                            dh[i] = dr[i] * gv[i];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / w as f64;
                        let mean_dhh =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                        for i in 0..w {
                            g[r * w + i] += rstd[r] * (dh[i] - mean_dh - hr[i] * mean_dhh);
                        }
                    }
                });
            }
            Op::GatherRows { table, ref ids } => {
                self.accumulate(table, |g, gr| {
                    let w = gr.value(table).width();
                    for (row, &id) in dy.chunks(w).zip(ids) {
                        g[id * w..(id + 1) * w]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::Permute { a, ref index } => {
                self.accumulate(a, |g, _| {
                    for (&src, d) in index.iter().zip(dy) {
                        g[src] += d;
                    }
                });
            }
            Op::Reshape(a) => {
                self.accumulate(a, |g, _| g.iter_mut().zip(dy).for_each(|(g, d)| *g += d));
            }
            Op::RowLerp {
                a,
                b,
                ref wa,
                ref wb,
            } => {
                for (v, wts) in [(a, wa), (b, wb)] {
                    self.accumulate(v, |g, gr| {
                        let w = gr.value(v).width();
                        for (r, (gr, dr)) in g.chunks_mut(w).zip(dy.chunks(w)).enumerate() {
                            gr.iter_mut().zip(dr).for_each(|(g, d)| *g += d * wts[r]);
                        }
                    });
                }
            }
            Op::KlMean {
                log_probs,
                ref target,
                ref active,
                count,
            } => {
                let scale = dy[0] / count as f64;
                self.accumulate(log_probs, |g, _| {
                    let w = target.width();
                    for (r, (gr, tr)) in g.chunks_mut(w).zip(target.rows()).enumerate() {
                        if active[r] {
                            gr.iter_mut().zip(tr).for_each(|(g, t)| *g -= t * scale);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(a, |g, _| g.iter_mut().for_each(|g| *g += dy[0]));
            }
        }
    }
}
