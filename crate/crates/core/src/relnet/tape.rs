//! A small reverse-mode tape over `f64` vectors.
//!
//! Only the kernels the relation models need are implemented: affine maps
//! with parameter matrices, elementwise gates, concatenation, slicing and
//! softmax-attention pooling. Every value is a dense vector; scalars are
//! vectors of length one.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix. Vectors are `cols == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors of one model.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(Tensor::zeros(rows, cols));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Zero tensors of matching shapes.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows, t.cols))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Linear {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    /// `sum_k softmax(scores)_k * items[k]`
    AttnPool {
        scores: Vec<Var>,
        items: Vec<Var>,
        weights: Vec<f64>,
    },
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
    /// Whether gradients can flow from parameters into the node.
    live: Vec<bool>,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            values: Vec::with_capacity(256),
            ops: Vec::with_capacity(256),
            live: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op, live: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.live.push(live);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wt = self.params.get(w);
        let xv = &self.values[x.0];
        assert_eq!(wt.cols, xv.len(), "linear: {} x {} applied to {}", wt.rows, wt.cols, xv.len());
        let nonzero: Vec<usize> = (0..xv.len()).filter(|&c| xv[c] != 0.0).collect();
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; wt.rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wt.data[r * wt.cols..(r + 1) * wt.cols];
            let mut acc = 0.0;
            for &c in &nonzero {
                acc += row[c] * xv[c];
            }
            *o += acc;
        }
        self.push(out, Op::Linear { w, b, x }, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out: Vec<f64> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x + y)
            .collect();
        let live = self.live[a.0] || self.live[b.0];
        self.push(out, Op::Add(a, b), live)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out: Vec<f64> = self.values[a.0]
            .iter()
            .zip(&self.values[b.0])
            .map(|(x, y)| x * y)
            .collect();
        let live = self.live[a.0] || self.live[b.0];
        self.push(out, Op::Mul(a, b), live)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].iter().map(|&v| sigmoid(v)).collect();
        let live = self.live[a.0];
        self.push(out, Op::Sigmoid(a), live)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].iter().map(|v| v.tanh()).collect();
        let live = self.live[a.0];
        self.push(out, Op::Tanh(a), live)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.values[a.0].iter().map(|v| 1.0 - v).collect();
        let live = self.live[a.0];
        self.push(out, Op::OneMinus(a), live)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&self.values[p.0]);
        }
        let live = parts.iter().any(|p| self.live[p.0]);
        self.push(out, Op::Concat(parts.to_vec()), live)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.values[x.0][start..start + len].to_vec();
        let live = self.live[x.0];
        self.push(out, Op::Slice { x, start }, live)
    }

    /// Softmax-weighted sum of `items` with one scalar score per item.
    pub fn attn_pool(&mut self, scores: &[Var], items: &[Var]) -> Var {
        assert_eq!(scores.len(), items.len());
        assert!(!items.is_empty(), "attention pool over no items");
        let raw: Vec<f64> = scores.iter().map(|s| self.values[s.0][0]).collect();
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = raw.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let weights: Vec<f64> = exp.iter().map(|e| e / sum).collect();
        let dim = self.values[items[0].0].len();
        let mut out = vec![0.0; dim];
        for (w, it) in weights.iter().zip(items) {
            for (o, v) in out.iter_mut().zip(&self.values[it.0]) {
                *o += w * v;
            }
        }
        let live = scores.iter().chain(items).any(|v| self.live[v.0]);
        self.push(
            out,
            Op::AttnPool {
                scores: scores.to_vec(),
                items: items.to_vec(),
                weights,
            },
            live,
        )
    }

    /// Attention weights of a pooling node, for inspection in tests.
    pub fn pool_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.ops[v.0] {
            Op::AttnPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Accumulate parameter gradients given upstream gradients of some nodes.
    pub fn backward(&self, seeds: &[(Var, Vec<f64>)], grads: &mut [Tensor]) {
        let mut g: Vec<Option<Vec<f64>>> = (0..self.values.len()).map(|_| None).collect();
        let mut first = usize::MAX;
        for (v, seed) in seeds {
            accumulate(&mut g[v.0], seed);
            first = first.min(v.0);
        }
        let last = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        let _ = first;
        for node in (0..=last).rev() {
            let Some(gn) = g[node].take() else { continue };
            if !self.live[node] {
                continue;
            }
            match &self.ops[node] {
                Op::Input => {}
                Op::Linear { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.values[x.0];
                    let nonzero: Vec<usize> = (0..xv.len()).filter(|&c| xv[c] != 0.0).collect();
                    {
                        let gw = &mut grads[w.0].data;
                        for (r, &gr) in gn.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * wt.cols..(r + 1) * wt.cols];
                            for &c in &nonzero {
                                row[c] += gr * xv[c];
                            }
                        }
                    }
                    if let Some(b) = b {
                        for (gb, gr) in grads[b.0].data.iter_mut().zip(&gn) {
                            *gb += gr;
                        }
                    }
                    if self.live[x.0] {
                        let mut gx = vec![0.0; wt.cols];
                        for (r, &gr) in gn.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wt.data[r * wt.cols..(r + 1) * wt.cols];
                            for (o, wv) in gx.iter_mut().zip(row) {
                                *o += gr * wv;
                            }
                        }
                        accumulate(&mut g[x.0], &gx);
                    }
                }
                Op::Add(a, b) => {
                    if self.live[a.0] {
                        accumulate(&mut g[a.0], &gn);
                    }
                    if self.live[b.0] {
                        accumulate(&mut g[b.0], &gn);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    if self.live[a.0] {
                        let ga: Vec<f64> = gn.iter().zip(bv).map(|(x, y)| x * y).collect();
                        accumulate(&mut g[a.0], &ga);
                    }
                    if self.live[b.0] {
                        let gb: Vec<f64> = gn.iter().zip(av).map(|(x, y)| x * y).collect();
                        accumulate(&mut g[b.0], &gb);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[node];
                    let ga: Vec<f64> = gn.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                    accumulate(&mut g[a.0], &ga);
                }
                Op::Tanh(a) => {
                    let y = &self.values[node];
                    let ga: Vec<f64> = gn.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    accumulate(&mut g[a.0], &ga);
                }
                Op::OneMinus(a) => {
                    let ga: Vec<f64> = gn.iter().map(|v| -v).collect();
                    accumulate(&mut g[a.0], &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.values[p.0].len();
                        if self.live[p.0] {
                            accumulate(&mut g[p.0], &gn[off..off + n]);
                        }
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let slot = g[x.0].get_or_insert_with(|| vec![0.0; self.values[x.0].len()]);
                    for (o, v) in slot[*start..*start + gn.len()].iter_mut().zip(&gn) {
                        *o += v;
                    }
                }
                Op::AttnPool {
                    scores,
                    items,
                    weights,
                } => {
                    // d out / d item_k = w_k; d out / d w_k = item_k
                    let dw: Vec<f64> = items
                        .iter()
                        .map(|it| self.values[it.0].iter().zip(&gn).map(|(a, b)| a * b).sum())
                        .collect();
                    let mean: f64 = weights.iter().zip(&dw).map(|(w, d)| w * d).sum();
                    for (k, it) in items.iter().enumerate() {
                        if self.live[it.0] {
                            let gi: Vec<f64> = gn.iter().map(|v| v * weights[k]).collect();
                            accumulate(&mut g[it.0], &gi);
                        }
                        let s = scores[k];
                        if self.live[s.0] {
                            accumulate(&mut g[s.0], &[weights[k] * (dw[k] - mean)]);
                        }
                    }
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}
