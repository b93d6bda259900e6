use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValId(u32);

impl ValId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

// Values are stored as (rows, cols) matrices; 1-D data lives as a single row.
struct Node {
    rows: usize,
    cols: usize,
    val: Vec<f64>,
}

/// One recorded operation. Saved context is whatever backward needs and
/// nothing more; large intermediates (softmax probs) are recomputed instead.
enum TapeOp {
    Matmul { a: ValId, b: ValId, out: ValId },
    /// out = a @ b^T, with b stored [n, k]. Lets the output projection reuse
    /// the embedding table without materializing a transpose.
    MatmulTB { a: ValId, b: ValId, out: ValId },
    Transpose { a: ValId, out: ValId },
    Add { a: ValId, b: ValId, out: ValId },
    /// Broadcast a single row over every row of a.
    AddRow { a: ValId, row: ValId, out: ValId },
    /// Add a single row to one designated row of a.
    AddRowAt { a: ValId, row: ValId, index: usize, out: ValId },
    /// Replace one designated row of a with the given row.
    ReplaceRowAt { a: ValId, row: ValId, index: usize, out: ValId },
    Scale { a: ValId, c: f64, out: ValId },
    Relu { a: ValId, out: ValId },
    SoftmaxRows { a: ValId, out: ValId },
    LayerNorm {
        a: ValId,
        gain: ValId,
        bias: ValId,
        // (mean, inv_std) per row, saved at forward time
        stats: Vec<(f64, f64)>,
        out: ValId,
    },
    Embedding { table: ValId, ids: Vec<u32>, out: ValId },
    ConcatCols { parts: Vec<ValId>, out: ValId },
    SliceCols { a: ValId, start: usize, out: ValId },
    SliceRows { a: ValId, start: usize, out: ValId },
    MaskedFill { a: ValId, mask: Vec<bool>, out: ValId },
    /// Sum over rows of label-smoothed cross-entropy; scalar output.
    CeSmooth { logits: ValId, targets: Vec<u32>, eps: f64, out: ValId },
    Sum { a: ValId, out: ValId },
    Mean { a: ValId, out: ValId },
    Dropout { a: ValId, keep: Vec<bool>, scale: f64, out: ValId },
}

/// Wengert-list reverse-mode tape. Forward methods append a value node and
/// (while `recording`) an op; `backward` replays ops in reverse, accumulating
/// gradients, and returns them keyed by registered parameter name.
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<TapeOp>,
    params: Vec<(String, ValId, Vec<usize>)>,
    pub recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            params: Vec::new(),
            recording: true,
        }
    }

    /// A tape that computes values but records nothing; backward is an error.
    pub fn eval_only() -> Self {
        let mut t = Tape::new();
        t.recording = false;
        t
    }

    fn push_node(&mut self, rows: usize, cols: usize, val: Vec<f64>) -> ValId {
        debug_assert_eq!(rows * cols, val.len());
        self.nodes.push(Node { rows, cols, val });
        ValId((self.nodes.len() - 1) as u32)
    }

    fn push_op(&mut self, op: TapeOp) {
        if self.recording {
            self.ops.push(op);
        }
    }

    pub fn dims(&self, id: ValId) -> (usize, usize) {
        let n = &self.nodes[id.idx()];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: ValId) -> &[f64] {
        &self.nodes[id.idx()].val
    }

    pub fn scalar_value(&self, id: ValId) -> f64 {
        self.nodes[id.idx()].val[0]
    }

    pub fn to_tensor(&self, id: ValId) -> Tensor {
        let n = &self.nodes[id.idx()];
        let shape = if n.rows == 1 && n.cols > 0 {
            vec![n.rows, n.cols]
        } else {
            vec![n.rows, n.cols]
        };
        Tensor::new(shape, n.val.clone()).expect("tape values stay finite")
    }

    /// Constant or input value; not differentiated against by name.
    pub fn leaf(&mut self, rows: usize, cols: usize, val: Vec<f64>) -> Result<ValId> {
        if rows == 0 || cols == 0 || rows * cols != val.len() {
            return Err(Error::shape(
                "leaf",
                format!("{rows}x{cols}"),
                format!("{} elements", val.len()),
            ));
        }
        Ok(self.push_node(rows, cols, val))
    }

    /// Register a trainable leaf under a unique name. Gradients for it are
    /// returned by `backward`. The tensor must have requires_grad set.
    pub fn register_param(&mut self, name: &str, t: &Tensor) -> Result<ValId> {
        if !t.requires_grad {
            return Err(Error::Contract(format!(
                "parameter {name} registered without requires_grad"
            )));
        }
        if self.params.iter().any(|(n, _, _)| n == name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = self.push_node(t.rows(), t.cols(), t.data().to_vec());
        self.params.push((name.to_string(), id, t.shape().to_vec()));
        Ok(id)
    }

    // ---- forward ops ----

    pub fn matmul(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let (m, ka) = self.dims(a);
        let (kb, n) = self.dims(b);
        if ka != kb {
            return Err(Error::shape("matmul", format!("inner {ka}"), format!("{kb}")));
        }
        let mut out = vec![0.0; m * n];
        gemm::rm(
            m, ka, n,
            self.value(a), ka as isize, 1,
            self.value(b), n as isize, 1,
            0.0, &mut out,
        );
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::Matmul { a, b, out });
        Ok(out)
    }

    /// a [m,k] @ b[n,k]^T -> [m,n]
    pub fn matmul_tb(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let (m, ka) = self.dims(a);
        let (n, kb) = self.dims(b);
        if ka != kb {
            return Err(Error::shape("matmul-tb", format!("inner {ka}"), format!("{kb}")));
        }
        let mut out = vec![0.0; m * n];
        gemm::rm(
            m, ka, n,
            self.value(a), ka as isize, 1,
            self.value(b), 1, ka as isize,
            0.0, &mut out,
        );
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::MatmulTB { a, b, out });
        Ok(out)
    }

    pub fn transpose(&mut self, a: ValId) -> Result<ValId> {
        let (m, n) = self.dims(a);
        let va = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va[i * n + j];
            }
        }
        let out = self.push_node(n, m, out);
        self.push_op(TapeOp::Transpose { a, out });
        Ok(out)
    }

    pub fn add(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(Error::shape("add", format!("{da:?}"), format!("{db:?}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let out = self.push_node(da.0, da.1, out);
        self.push_op(TapeOp::Add { a, b, out });
        Ok(out)
    }

    pub fn add_row(&mut self, a: ValId, row: ValId) -> Result<ValId> {
        let (m, n) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != n {
            return Err(Error::shape("add-row", format!("1x{n}"), format!("{rr}x{rc}")));
        }
        let vr = self.value(row).to_vec();
        let va = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(va[i * n + j] + vr[j]);
            }
        }
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::AddRow { a, row, out });
        Ok(out)
    }

    pub fn add_row_at(&mut self, a: ValId, row: ValId, index: usize) -> Result<ValId> {
        let (m, n) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != n {
            return Err(Error::shape("add-row-at", format!("1x{n}"), format!("{rr}x{rc}")));
        }
        if index >= m {
            return Err(Error::Contract(format!("add-row-at row {index} out of {m}")));
        }
        let vr = self.value(row).to_vec();
        let mut out = self.value(a).to_vec();
        for j in 0..n {
            out[index * n + j] += vr[j];
        }
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::AddRowAt { a, row, index, out });
        Ok(out)
    }

    pub fn replace_row_at(&mut self, a: ValId, row: ValId, index: usize) -> Result<ValId> {
        let (m, n) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != n {
            return Err(Error::shape("replace-row-at", format!("1x{n}"), format!("{rr}x{rc}")));
        }
        if index >= m {
            return Err(Error::Contract(format!("replace-row-at row {index} out of {m}")));
        }
        let vr = self.value(row).to_vec();
        let mut out = self.value(a).to_vec();
        out[index * n..(index + 1) * n].copy_from_slice(&vr);
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::ReplaceRowAt { a, row, index, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: ValId, c: f64) -> Result<ValId> {
        if !c.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::Scale { a, c, out });
        Ok(out)
    }

    pub fn relu(&mut self, a: ValId) -> Result<ValId> {
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::Relu { a, out });
        Ok(out)
    }

    /// Softmax over the last axis (each row sums to 1).
    pub fn softmax_rows(&mut self, a: ValId) -> Result<ValId> {
        let (m, n) = self.dims(a);
        let va = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &va[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                out[i * n + j] /= z;
            }
        }
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::SoftmaxRows { a, out });
        Ok(out)
    }

    /// Normalize each row to zero mean / unit variance (population), then
    /// apply elementwise gain and bias rows.
    pub fn layer_norm(&mut self, a: ValId, gain: ValId, bias: ValId, eps: f64) -> Result<ValId> {
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer-norm eps must be > 0, got {eps}")));
        }
        let (m, n) = self.dims(a);
        for (which, id) in [("gain", gain), ("bias", bias)] {
            let (r, c) = self.dims(id);
            if r != 1 || c != n {
                return Err(Error::shape("layer-norm", format!("{which} 1x{n}"), format!("{r}x{c}")));
            }
        }
        let va = self.value(a);
        let vg = self.value(gain).to_vec();
        let vb = self.value(bias).to_vec();
        let mut out = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        for i in 0..m {
            let row = &va[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            stats.push((mean, inv));
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv * vg[j] + vb[j];
            }
        }
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::LayerNorm { a, gain, bias, stats, out });
        Ok(out)
    }

    /// Gather rows of `table` by id; backward scatter-adds.
    pub fn embedding(&mut self, table: ValId, ids: &[u32]) -> Result<ValId> {
        if ids.is_empty() {
            return Err(Error::Contract("embedding lookup with no ids".into()));
        }
        let (v, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| (i as usize) >= v) {
            return Err(Error::Vocab(format!("token id {bad} outside vocabulary of {v}")));
        }
        let vt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&vt[id as usize * d..(id as usize + 1) * d]);
        }
        let out = self.push_node(ids.len(), d, out);
        self.push_op(TapeOp::Embedding { table, ids: ids.to_vec(), out });
        Ok(out)
    }

    pub fn concat_cols(&mut self, parts: &[ValId]) -> Result<ValId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let (m, _) = self.dims(parts[0]);
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(Error::shape("concat-cols", format!("{m} rows"), format!("{r}")));
            }
            widths.push(c);
            total += c;
        }
        let mut out = vec![0.0; m * total];
        let mut off = 0usize;
        for (pi, &p) in parts.iter().enumerate() {
            let c = widths[pi];
            let vp = self.value(p);
            for i in 0..m {
                out[i * total + off..i * total + off + c].copy_from_slice(&vp[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let out = self.push_node(m, total, out);
        self.push_op(TapeOp::ConcatCols { parts: parts.to_vec(), out });
        Ok(out)
    }

    pub fn slice_cols(&mut self, a: ValId, start: usize, end: usize) -> Result<ValId> {
        let (m, n) = self.dims(a);
        if start >= end || end > n {
            return Err(Error::Contract(format!("slice-cols [{start},{end}) of {n} columns")));
        }
        let w = end - start;
        let va = self.value(a);
        let mut out = vec![0.0; m * w];
        for i in 0..m {
            out[i * w..(i + 1) * w].copy_from_slice(&va[i * n + start..i * n + end]);
        }
        let out = self.push_node(m, w, out);
        self.push_op(TapeOp::SliceCols { a, start, out });
        Ok(out)
    }

    pub fn slice_rows(&mut self, a: ValId, start: usize, end: usize) -> Result<ValId> {
        let (m, n) = self.dims(a);
        if start >= end || end > m {
            return Err(Error::Contract(format!("slice-rows [{start},{end}) of {m} rows")));
        }
        let h = end - start;
        let out = self.value(a)[start * n..end * n].to_vec();
        let out = self.push_node(h, n, out);
        self.push_op(TapeOp::SliceRows { a, start, out });
        Ok(out)
    }

    /// Where mask is true the output takes `fill`; gradient there is zero.
    pub fn masked_fill(&mut self, a: ValId, mask: &[bool], fill: f64) -> Result<ValId> {
        let (m, n) = self.dims(a);
        if mask.len() != m * n {
            return Err(Error::shape("masked-fill", format!("{} mask bits", m * n), format!("{}", mask.len())));
        }
        if !fill.is_finite() {
            return Err(Error::NonFinite { op: "masked-fill" });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(mask)
            .map(|(&x, &kill)| if kill { fill } else { x })
            .collect();
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::MaskedFill { a, mask: mask.to_vec(), out });
        Ok(out)
    }

    /// Sum over rows of label-smoothed cross entropy against integer targets.
    /// Row loss = logsumexp(row) − (1−eps)·row[t] − (eps/V)·Σ_v row[v].
    pub fn ce_label_smoothed(&mut self, logits: ValId, targets: &[u32], eps: f64) -> Result<ValId> {
        let (m, v) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::shape("ce-smooth", format!("{m} targets"), format!("{}", targets.len())));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Contract(format!("label smoothing {eps} outside [0,1)")));
        }
        if let Some(&bad) = targets.iter().find(|&&t| (t as usize) >= v) {
            return Err(Error::Vocab(format!("target id {bad} outside vocabulary of {v}")));
        }
        let vl = self.value(logits);
        let mut total = 0.0;
        for i in 0..m {
            let row = &vl[i * v..(i + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            let mean_logit = row.iter().sum::<f64>() / v as f64;
            let t = targets[i] as usize;
            total += lse - (1.0 - eps) * row[t] - eps * mean_logit;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite { op: "ce-smooth" });
        }
        let out = self.push_node(1, 1, vec![total]);
        self.push_op(TapeOp::CeSmooth { logits, targets: targets.to_vec(), eps, out });
        Ok(out)
    }

    pub fn sum(&mut self, a: ValId) -> Result<ValId> {
        let s = self.value(a).iter().sum();
        let out = self.push_node(1, 1, vec![s]);
        self.push_op(TapeOp::Sum { a, out });
        Ok(out)
    }

    pub fn mean(&mut self, a: ValId) -> Result<ValId> {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let out = self.push_node(1, 1, vec![m]);
        self.push_op(TapeOp::Mean { a, out });
        Ok(out)
    }

    /// Inverted dropout with a counter-based mask: the same (seed, salt) pair
    /// always produces the same mask, so forward passes are reproducible.
    /// rate == 0 is an exact no-op.
    pub fn dropout(&mut self, a: ValId, rate: f64, seed: u64, salt: u64) -> Result<ValId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let (m, n) = self.dims(a);
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<bool> = (0..m * n)
            .map(|i| unit_f64(mix(seed, salt, i as u64)) >= rate)
            .collect();
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x * scale } else { 0.0 })
            .collect();
        let out = self.push_node(m, n, out);
        self.push_op(TapeOp::Dropout { a, keep, scale, out });
        Ok(out)
    }

    // ---- backward ----

    /// Replay the tape in reverse from a scalar loss. Consumes the tape and
    /// returns gradients for every registered parameter, keyed by name.
    pub fn backward(self, loss: ValId) -> Result<BTreeMap<String, Tensor>> {
        if !self.recording {
            return Err(Error::Contract("backward on a non-recording tape".into()));
        }
        let ln = &self.nodes[loss.idx()];
        if ln.rows * ln.cols != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got {}x{}",
                ln.rows, ln.cols
            )));
        }
        let mut grads: Vec<Vec<f64>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        grads[loss.idx()] = vec![1.0];

        for op in self.ops.iter().rev() {
            self.replay(op, &mut grads);
        }

        let mut map = BTreeMap::new();
        for (name, id, shape) in &self.params {
            let node = &self.nodes[id.idx()];
            let g = if grads[id.idx()].is_empty() {
                vec![0.0; node.val.len()]
            } else {
                std::mem::take(&mut grads[id.idx()])
            };
            let t = Tensor::new(shape.clone(), g)
                .map_err(|_| Error::NonFinite { op: "backward" })?;
            map.insert(name.clone(), t);
        }
        Ok(map)
    }

    fn node(&self, id: ValId) -> &Node {
        &self.nodes[id.idx()]
    }

    fn replay(&self, op: &TapeOp, grads: &mut Vec<Vec<f64>>) {
        use TapeOp::*;
        // Take the upstream gradient; untouched outputs contribute nothing.
        macro_rules! upstream {
            ($out:expr) => {{
                if grads[$out.idx()].is_empty() {
                    return;
                }
                std::mem::take(&mut grads[$out.idx()])
            }};
        }
        // Take-with-alloc for an input gradient buffer.
        macro_rules! buf {
            ($id:expr) => {{
                let mut g = std::mem::take(&mut grads[$id.idx()]);
                if g.is_empty() {
                    g = vec![0.0; self.node($id).val.len()];
                }
                g
            }};
        }

        match op {
            Matmul { a, b, out } => {
                let go = upstream!(out);
                let (m, k) = (self.node(*a).rows, self.node(*a).cols);
                let n = self.node(*b).cols;
                let mut ga = buf!(*a);
                // dA += dC @ B^T
                gemm::rm(m, n, k, &go, n as isize, 1, &self.node(*b).val, 1, n as isize, 1.0, &mut ga);
                grads[a.idx()] = ga;
                let mut gb = buf!(*b);
                // dB += A^T @ dC
                gemm::rm(k, m, n, &self.node(*a).val, 1, k as isize, &go, n as isize, 1, 1.0, &mut gb);
                grads[b.idx()] = gb;
                grads[out.idx()] = go;
            }
            MatmulTB { a, b, out } => {
                let go = upstream!(out);
                let (m, k) = (self.node(*a).rows, self.node(*a).cols);
                let n = self.node(*b).rows;
                let mut ga = buf!(*a);
                // dA += dC @ B
                gemm::rm(m, n, k, &go, n as isize, 1, &self.node(*b).val, k as isize, 1, 1.0, &mut ga);
                grads[a.idx()] = ga;
                let mut gb = buf!(*b);
                // dB += dC^T @ A
                gemm::rm(n, m, k, &go, 1, n as isize, &self.node(*a).val, k as isize, 1, 1.0, &mut gb);
                grads[b.idx()] = gb;
                grads[out.idx()] = go;
            }
            Transpose { a, out } => {
                let go = upstream!(out);
                let (m, n) = (self.node(*a).rows, self.node(*a).cols);
                let mut ga = buf!(*a);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += go[j * m + i];
                    }
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            Add { a, b, out } => {
                let go = upstream!(out);
                let mut ga = buf!(*a);
                for (g, &u) in ga.iter_mut().zip(&go) {
                    *g += u;
                }
                grads[a.idx()] = ga;
                let mut gb = buf!(*b);
                for (g, &u) in gb.iter_mut().zip(&go) {
                    *g += u;
                }
                grads[b.idx()] = gb;
                grads[out.idx()] = go;
            }
            AddRow { a, row, out } => {
                let go = upstream!(out);
                let (m, n) = (self.node(*a).rows, self.node(*a).cols);
                let mut ga = buf!(*a);
                for (g, &u) in ga.iter_mut().zip(&go) {
                    *g += u;
                }
                grads[a.idx()] = ga;
                let mut gr = buf!(*row);
                for i in 0..m {
                    for j in 0..n {
                        gr[j] += go[i * n + j];
                    }
                }
                grads[row.idx()] = gr;
                grads[out.idx()] = go;
            }
            AddRowAt { a, row, index, out } => {
                let go = upstream!(out);
                let n = self.node(*a).cols;
                let mut ga = buf!(*a);
                for (g, &u) in ga.iter_mut().zip(&go) {
                    *g += u;
                }
                grads[a.idx()] = ga;
                let mut gr = buf!(*row);
                for j in 0..n {
                    gr[j] += go[index * n + j];
                }
                grads[row.idx()] = gr;
                grads[out.idx()] = go;
            }
            ReplaceRowAt { a, row, index, out } => {
                let go = upstream!(out);
                let n = self.node(*a).cols;
                let mut ga = buf!(*a);
                for (i, (g, &u)) in ga.iter_mut().zip(&go).enumerate() {
                    if i / n != *index {
                        *g += u;
                    }
                }
                grads[a.idx()] = ga;
                let mut gr = buf!(*row);
                for j in 0..n {
                    gr[j] += go[index * n + j];
                }
                grads[row.idx()] = gr;
                grads[out.idx()] = go;
            }
            Scale { a, c, out } => {
                let go = upstream!(out);
                let mut ga = buf!(*a);
                for (g, &u) in ga.iter_mut().zip(&go) {
                    *g += c * u;
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            Relu { a, out } => {
                let go = upstream!(out);
                let va = &self.node(*a).val;
                let mut ga = buf!(*a);
                for i in 0..ga.len() {
                    if va[i] > 0.0 {
                        ga[i] += go[i];
                    }
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            SoftmaxRows { a, out } => {
                let go = upstream!(out);
                let (m, n) = (self.node(*a).rows, self.node(*a).cols);
                let y = &self.node(*out).val;
                let mut ga = buf!(*a);
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &go[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..n {
                        ga[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            LayerNorm { a, gain, bias, stats, out } => {
                let go = upstream!(out);
                let (m, n) = (self.node(*a).rows, self.node(*a).cols);
                let va = &self.node(*a).val;
                let vg = &self.node(*gain).val;
                let nf = n as f64;
                let mut ga = buf!(*a);
                let mut ggain = buf!(*gain);
                let mut gbias = buf!(*bias);
                for i in 0..m {
                    let (mean, inv) = stats[i];
                    let xr = &va[i * n..(i + 1) * n];
                    let gr = &go[i * n..(i + 1) * n];
                    let mut mean_u = 0.0;
                    let mut mean_ux = 0.0;
                    for j in 0..n {
                        let xh = (xr[j] - mean) * inv;
                        let u = vg[j] * gr[j];
                        ggain[j] += gr[j] * xh;
                        gbias[j] += gr[j];
                        mean_u += u;
                        mean_ux += u * xh;
                    }
                    mean_u /= nf;
                    mean_ux /= nf;
                    for j in 0..n {
                        let xh = (xr[j] - mean) * inv;
                        let u = vg[j] * gr[j];
                        ga[i * n + j] += inv * (u - mean_u - xh * mean_ux);
                    }
                }
                grads[a.idx()] = ga;
                grads[gain.idx()] = ggain;
                grads[bias.idx()] = gbias;
                grads[out.idx()] = go;
            }
            Embedding { table, ids, out } => {
                let go = upstream!(out);
                let d = self.node(*table).cols;
                let mut gt = buf!(*table);
                for (pos, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                    let src = &go[pos * d..(pos + 1) * d];
                    for (g, &u) in dst.iter_mut().zip(src) {
                        *g += u;
                    }
                }
                grads[table.idx()] = gt;
                grads[out.idx()] = go;
            }
            ConcatCols { parts, out } => {
                let go = upstream!(out);
                let m = self.node(*out).rows;
                let total = self.node(*out).cols;
                let mut off = 0usize;
                for &p in parts {
                    let c = self.node(p).cols;
                    let mut gp = buf!(p);
                    for i in 0..m {
                        for j in 0..c {
                            gp[i * c + j] += go[i * total + off + j];
                        }
                    }
                    grads[p.idx()] = gp;
                    off += c;
                }
                grads[out.idx()] = go;
            }
            SliceCols { a, start, out } => {
                let go = upstream!(out);
                let (m, n) = (self.node(*a).rows, self.node(*a).cols);
                let w = self.node(*out).cols;
                let mut ga = buf!(*a);
                for i in 0..m {
                    for j in 0..w {
                        ga[i * n + start + j] += go[i * w + j];
                    }
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            SliceRows { a, start, out } => {
                let go = upstream!(out);
                let n = self.node(*a).cols;
                let mut ga = buf!(*a);
                for (g, &u) in ga[start * n..].iter_mut().zip(&go) {
                    *g += u;
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            MaskedFill { a, mask, out } => {
                let go = upstream!(out);
                let mut ga = buf!(*a);
                for i in 0..ga.len() {
                    if !mask[i] {
                        ga[i] += go[i];
                    }
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            CeSmooth { logits, targets, eps, out } => {
                let go = upstream!(out);
                let u = go[0];
                let (m, v) = (self.node(*logits).rows, self.node(*logits).cols);
                let vl = &self.node(*logits).val;
                let mut gl = buf!(*logits);
                for i in 0..m {
                    let row = &vl[i * v..(i + 1) * v];
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for &x in row {
                        z += (x - mx).exp();
                    }
                    let t = targets[i] as usize;
                    for j in 0..v {
                        let p = (row[j] - mx).exp() / z;
                        let q = eps / v as f64 + if j == t { 1.0 - eps } else { 0.0 };
                        gl[i * v + j] += u * (p - q);
                    }
                }
                grads[logits.idx()] = gl;
                grads[out.idx()] = go;
            }
            Sum { a, out } => {
                let go = upstream!(out);
                let u = go[0];
                let mut ga = buf!(*a);
                for g in ga.iter_mut() {
                    *g += u;
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            Mean { a, out } => {
                let go = upstream!(out);
                let u = go[0] / self.node(*a).val.len() as f64;
                let mut ga = buf!(*a);
                for g in ga.iter_mut() {
                    *g += u;
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
            Dropout { a, keep, scale, out } => {
                let go = upstream!(out);
                let mut ga = buf!(*a);
                for i in 0..ga.len() {
                    if keep[i] {
                        ga[i] += go[i] * scale;
                    }
                }
                grads[a.idx()] = ga;
                grads[out.idx()] = go;
            }
        }
    }
}

// ---- generic forward dispatcher ----

/// Op selector for the generic entry point below.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Matmul,
    Add,
    Scale,
    EmbeddingLookup,
    SoftmaxLastAxis,
    LayerNorm,
    Relu,
    Concat,
    Slice,
    Transpose,
    MaskedFill,
    CrossEntropyLabelSmoothing,
    Mean,
}

/// Attributes for ops that need more than their tensor inputs.
#[derive(Clone, Debug, Default)]
pub struct OpAttrs {
    pub scale: Option<f64>,
    pub ids: Option<Vec<u32>>,
    pub eps: Option<f64>,
    pub smoothing: Option<f64>,
    pub targets: Option<Vec<u32>>,
    pub mask: Option<Vec<bool>>,
    pub fill: Option<f64>,
    pub range: Option<(usize, usize)>,
}

impl Tape {
    /// Generic forward entry point. Unlike the typed methods, this validates
    /// that every input value is finite before dispatching; the typed methods
    /// rely on finite-in/finite-out induction from validated leaves.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[ValId], attrs: &OpAttrs) -> Result<ValId> {
        for &id in inputs {
            if !self.value(id).iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { op: "forward-op" });
            }
        }
        let need = |n: usize| -> Result<()> {
            if inputs.len() != n {
                Err(Error::Contract(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            } else {
                Ok(())
            }
        };
        match kind {
            OpKind::Matmul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Scale => {
                need(1)?;
                let c = attrs.scale.ok_or_else(|| Error::Contract("scale attr missing".into()))?;
                self.scale(inputs[0], c)
            }
            OpKind::EmbeddingLookup => {
                need(1)?;
                let ids = attrs.ids.as_ref().ok_or_else(|| Error::Contract("ids attr missing".into()))?;
                self.embedding(inputs[0], ids)
            }
            OpKind::SoftmaxLastAxis => {
                need(1)?;
                self.softmax_rows(inputs[0])
            }
            OpKind::LayerNorm => {
                need(3)?;
                let eps = attrs.eps.ok_or_else(|| Error::Contract("eps attr missing".into()))?;
                self.layer_norm(inputs[0], inputs[1], inputs[2], eps)
            }
            OpKind::Relu => {
                need(1)?;
                self.relu(inputs[0])
            }
            OpKind::Concat => self.concat_cols(inputs),
            OpKind::Slice => {
                need(1)?;
                let (s, e) = attrs.range.ok_or_else(|| Error::Contract("range attr missing".into()))?;
                self.slice_cols(inputs[0], s, e)
            }
            OpKind::Transpose => {
                need(1)?;
                self.transpose(inputs[0])
            }
            OpKind::MaskedFill => {
                need(1)?;
                let mask = attrs.mask.as_ref().ok_or_else(|| Error::Contract("mask attr missing".into()))?;
                let fill = attrs.fill.ok_or_else(|| Error::Contract("fill attr missing".into()))?;
                self.masked_fill(inputs[0], mask, fill)
            }
            OpKind::CrossEntropyLabelSmoothing => {
                need(1)?;
                let targets = attrs
                    .targets
                    .as_ref()
                    .ok_or_else(|| Error::Contract("targets attr missing".into()))?;
                let eps = attrs.smoothing.unwrap_or(0.0);
                self.ce_label_smoothed(inputs[0], targets, eps)
            }
            OpKind::Mean => {
                need(1)?;
                self.mean(inputs[0])
            }
        }
    }
}

// ---- counter-based rng for dropout ----

fn mix(seed: u64, salt: u64, index: u64) -> u64 {
    splitmix64(
        seed.wrapping_mul(0x9E3779B97F4A7C15)
            ^ salt.wrapping_mul(0xD1B54A32D192ED03)
            ^ index.wrapping_mul(0x8CB92BA72F3D8DD7),
    )
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

// ---- gemm kernel ----

mod gemm {
    /// Row-major C[m,n] (+)= A@B with explicit element strides for A and B,
    /// so transposed views never materialize. beta 0 overwrites, 1 accumulates.
    #[allow(clippy::too_many_arguments)]
    pub fn rm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
    ) {
        debug_assert!(c.len() >= m * n);
        debug_assert!(a.len() >= ((m - 1) as isize * rsa + (k - 1) as isize * csa) as usize + 1);
        debug_assert!(b.len() >= ((k - 1) as isize * rsb + (n - 1) as isize * csb) as usize + 1);
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
