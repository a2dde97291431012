use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one batch-norm call in train mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Conv { x: Var, w: Var, k: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    Relu { x: Var },
    MaxPool { x: Var, argmax: Vec<u32> },
    Add { xs: Vec<Var> },
    Concat { xs: Vec<Var> },
    Slice { x: Var, keep: usize },
    GlobalAvgPool { x: Var },
    Dense { x: Var, w: Var, b: Var },
    SoftmaxXent { logits: Var, probs: Vec<f64>, labels: Vec<usize> },
    Scale { x: Var, factor: f64 },
    Dot { x: Var, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every tape value it depends on.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_padding_index(pos: usize, off: usize, pad: usize, size: usize) -> Option<usize> {
    let p = pos + off;
    if p < pad || p - pad >= size {
        None
    } else {
        Some(p - pad)
    }
}

/// Patch matrix of one image: rows (c, dy, dx), columns (y, x).
fn im2col(img: &[f64], c: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * hw;
                for y in 0..h {
                    let out = &mut col[row + y * w..row + (y + 1) * w];
                    match same_padding_index(y, dy, pad, h) {
                        None => out.fill(0.0),
                        Some(sy) => {
                            let src = &img[ci * hw + sy * w..ci * hw + (sy + 1) * w];
                            for (x, o) in out.iter_mut().enumerate() {
                                *o = match same_padding_index(x, dx, pad, w) {
                                    Some(sx) => src[sx],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, img: &mut [f64]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * hw;
                for y in 0..h {
                    if let Some(sy) = same_padding_index(y, dy, pad, h) {
                        for x in 0..w {
                            if let Some(sx) = same_padding_index(x, dx, pad, w) {
                                img[ci * hw + sy * w + sx] += col[row + y * w + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Stride-1, same-padded convolution without bias. `w` is (out, in, k, k), k odd.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (co, ci, k, k2) = self.value(w).dims4()?;
        if ci != c || k != k2 || k % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {:?} with kernel {:?}",
                self.value(x).shape(),
                self.value(w).shape()
            )));
        }
        let hw = h * wd;
        let mut out = vec![0.0; n * co * hw];
        {
            let xd = self.value(x).data();
            let wdata = self.value(w).data();
            let mut col = vec![0.0; if k == 1 { 0 } else { c * k * k * hw }];
            for b in 0..n {
                let img = &xd[b * c * hw..(b + 1) * c * hw];
                let patches: &[f64] = if k == 1 {
                    img
                } else {
                    im2col(img, c, h, wd, k, &mut col);
                    &col
                };
                gemm(co, c * k * k, hw, wdata, false, patches, false, 0.0, &mut out[b * co * hw..(b + 1) * co * hw]);
            }
        }
        Ok(self.push(Tensor { shape: vec![n, co, h, wd], data: out }, Op::Conv { x, w, k }))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Shape(format!("batchnorm over {c} channels with {} scales", self.value(gamma).len())));
        }
        if n == 0 {
            return Err(Error::Shape("batchnorm on an empty batch".into()));
        }
        Ok((n, c, h * w))
    }

    /// Batch-norm with batch statistics (biased variance). Returns the
    /// statistics so callers can update running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, hw) = self.check_bn(x, gamma, beta)?;
        let count = (n * hw) as f64;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let s = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                mean[ch] += s.iter().sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        for b in 0..n {
            for ch in 0..c {
                let s = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        for v in &mut var {
            *v /= count;
        }
        let stats = BatchStats { mean, var };
        let out = self.normalize(x, gamma, beta, &stats.mean, &stats.var, eps, true);
        Ok((out, stats))
    }

    /// Batch-norm with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (_, c, _) = self.check_bn(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::Shape(format!("running statistics for {} channels, input has {c}", mean.len())));
        }
        Ok(self.normalize(x, gamma, beta, mean, var, eps, false))
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64, batch: bool) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4().expect("checked");
        let hw = h * w;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let z = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = g[ch] * z + bt[ch];
                }
            }
        }
        self.push(
            Tensor { shape: vec![n, c, h, w], data: out },
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu { x })
    }

    /// 3x3 max-pooling, stride 1, same padding. Ties go to the first maximal
    /// position in row-major window order.
    pub fn maxpool3x3(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let xd = self.value(x).data();
        let hw = h * w;
        let mut out = vec![0.0; xd.len()];
        let mut argmax = vec![0u32; xd.len()];
        for plane in 0..n * c {
            let base = plane * hw;
            for y in 0..h {
                for xx in 0..w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..3 {
                        let Some(sy) = same_padding_index(y, dy, 1, h) else { continue };
                        for dx in 0..3 {
                            let Some(sx) = same_padding_index(xx, dx, 1, w) else { continue };
                            let i = base + sy * w + sx;
                            if xd[i] > best {
                                best = xd[i];
                                best_i = i;
                            }
                        }
                    }
                    out[base + y * w + xx] = best;
                    argmax[base + y * w + xx] = best_i as u32;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![n, c, h, w], data: out }, Op::MaxPool { x, argmax }))
    }

    pub fn add(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Shape("add of nothing".into()))?;
        let mut acc = self.value(*first).clone();
        for v in &xs[1..] {
            if self.value(*v).shape() != acc.shape() {
                return Err(Error::Shape(format!("add {:?} + {:?}", acc.shape(), self.value(*v).shape())));
            }
            acc.add_assign(self.value(*v));
        }
        Ok(self.push(acc, Op::Add { xs: xs.to_vec() }))
    }

    /// Concatenates rank-4 tensors along channels.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut total = 0;
        for v in xs {
            let (n2, c2, h2, w2) = self.value(*v).dims4()?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(Error::Shape("concat spatial mismatch".into()));
            }
            total += c2;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for v in xs {
                let t = self.value(*v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        Ok(self.push(Tensor { shape: vec![n, total, h, w], data: out }, Op::Concat { xs: xs.to_vec() }))
    }

    /// Keeps the first `keep` channels.
    pub fn slice_channels(&mut self, x: Var, keep: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if keep > c || keep == 0 {
            return Err(Error::Shape(format!("cannot keep {keep} of {c} channels")));
        }
        if keep == c {
            return Ok(x);
        }
        let hw = h * w;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * keep * hw);
        for b in 0..n {
            out.extend_from_slice(&xd[b * c * hw..(b * c + keep) * hw]);
        }
        Ok(self.push(Tensor { shape: vec![n, keep, h, w], data: out }, Op::Slice { x, keep }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let xd = self.value(x).data();
        let out = (0..n * c).map(|p| xd[p * hw..(p + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        Ok(self.push(Tensor { shape: vec![n, c], data: out }, Op::GlobalAvgPool { x }))
    }

    /// `x (n, c) . w (c, k) + b (k)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.value(b).len() != ws[1] {
            return Err(Error::Shape(format!("dense {xs:?} x {ws:?}")));
        }
        let (n, c, k) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; n * k];
        for row in out.chunks_mut(k) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(n, c, k, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        Ok(self.push(Tensor { shape: vec![n, k], data: out }, Op::Dense { x, w, b }))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.value(logits).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::Shape(format!("logits {s:?} for {} labels", labels.len())));
        }
        let (n, k) = (s[0], s[1]);
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::Shape(format!("label out of range for {k} classes")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &ld[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - max).exp() / sum;
            }
            loss += -(row[labels[i]] - max - sum.ln());
        }
        let value = Tensor::scalar(loss / n as f64);
        Ok(self.push(value, Op::SoftmaxXent { logits, probs, labels: labels.to_vec() }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|a| a * factor);
        self.push(v, Op::Scale { x, factor })
    }

    /// `sum_i weights[i] * x[i]` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if self.value(x).len() != weights.len() {
            return Err(Error::Shape("weighted_sum length mismatch".into()));
        }
        let v: f64 = self.value(x).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(v), Op::Dot { x, weights: weights.to_vec() }))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        }
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, k } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c, h, wd) = xv.dims4().expect("rank 4");
                let co = wv.shape()[0];
                let k = *k;
                let hw = h * wd;
                let ck = c * k * k;
                let mut dw = vec![0.0; wv.len()];
                let mut dx = vec![0.0; xv.len()];
                let mut col = vec![0.0; if k == 1 { 0 } else { ck * hw }];
                let mut dcol = vec![0.0; ck * hw];
                for b in 0..n {
                    let img = &xv.data()[b * c * hw..(b + 1) * c * hw];
                    let dy = &g.data()[b * co * hw..(b + 1) * co * hw];
                    let patches: &[f64] = if k == 1 {
                        img
                    } else {
                        im2col(img, c, h, wd, k, &mut col);
                        &col
                    };
                    gemm(co, hw, ck, dy, false, patches, true, 1.0, &mut dw);
                    let dimg = &mut dx[b * c * hw..(b + 1) * c * hw];
                    if k == 1 {
                        gemm(ck, co, hw, wv.data(), true, dy, false, 1.0, dimg);
                    } else {
                        gemm(ck, co, hw, wv.data(), true, dy, false, 0.0, &mut dcol);
                        col2im(&dcol, c, h, wd, k, dimg);
                    }
                }
                accumulate(grads, *w, Tensor { shape: wv.shape().to_vec(), data: dw });
                accumulate(grads, *x, Tensor { shape: xv.shape().to_vec(), data: dx });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let (n, c, h, w) = g.dims4().expect("rank 4");
                let hw = h * w;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            dbeta[ch] += g.data()[i];
                            dgamma[ch] += g.data()[i] * xhat[i];
                        }
                    }
                }
                let mut dx = vec![0.0; g.len()];
                let count = (n * hw) as f64;
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        let scale = gam[ch] * inv_std[ch];
                        for i in base..base + hw {
                            dx[i] = if *batch {
                                scale * (g.data()[i] - dbeta[ch] / count - xhat[i] * dgamma[ch] / count)
                            } else {
                                scale * g.data()[i]
                            };
                        }
                    }
                }
                accumulate(grads, *gamma, Tensor { shape: vec![c], data: dgamma });
                accumulate(grads, *beta, Tensor { shape: vec![c], data: dbeta });
                accumulate(grads, *x, Tensor { shape: g.shape().to_vec(), data: dx });
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let data = xv.data().iter().zip(g.data()).map(|(&a, &d)| if a > 0.0 { d } else { 0.0 }).collect();
                accumulate(grads, *x, Tensor { shape: xv.shape().to_vec(), data });
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; g.len()];
                for (i, &src) in argmax.iter().enumerate() {
                    dx[src as usize] += g.data()[i];
                }
                accumulate(grads, *x, Tensor { shape: g.shape().to_vec(), data: dx });
            }
            Op::Add { xs } => {
                for v in xs {
                    accumulate(grads, *v, g.clone());
                }
            }
            Op::Concat { xs } => {
                let (n, total, h, w) = g.dims4().expect("rank 4");
                let hw = h * w;
                let mut offset = 0;
                for v in xs {
                    let c = self.value(*v).shape()[1];
                    let mut part = Vec::with_capacity(n * c * hw);
                    for b in 0..n {
                        let start = (b * total + offset) * hw;
                        part.extend_from_slice(&g.data()[start..start + c * hw]);
                    }
                    accumulate(grads, *v, Tensor { shape: vec![n, c, h, w], data: part });
                    offset += c;
                }
            }
            Op::Slice { x, keep } => {
                let (n, c, h, w) = self.value(*x).dims4().expect("rank 4");
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for b in 0..n {
                    dx[b * c * hw..(b * c + keep) * hw].copy_from_slice(&g.data()[b * keep * hw..(b + 1) * keep * hw]);
                }
                accumulate(grads, *x, Tensor { shape: vec![n, c, h, w], data: dx });
            }
            Op::GlobalAvgPool { x } => {
                let (n, c, h, w) = self.value(*x).dims4().expect("rank 4");
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for p in 0..n * c {
                    let d = g.data()[p] / hw as f64;
                    dx[p * hw..(p + 1) * hw].fill(d);
                }
                accumulate(grads, *x, Tensor { shape: vec![n, c, h, w], data: dx });
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c) = (xv.shape()[0], xv.shape()[1]);
                let k = wv.shape()[1];
                let mut dx = vec![0.0; n * c];
                gemm(n, k, c, g.data(), false, wv.data(), true, 0.0, &mut dx);
                let mut dw = vec![0.0; c * k];
                gemm(c, n, k, xv.data(), true, g.data(), false, 0.0, &mut dw);
                let mut db = vec![0.0; k];
                for row in g.data().chunks(k) {
                    for (a, r) in db.iter_mut().zip(row) {
                        *a += r;
                    }
                }
                accumulate(grads, *x, Tensor { shape: vec![n, c], data: dx });
                accumulate(grads, *w, Tensor { shape: vec![c, k], data: dw });
                accumulate(grads, *b, Tensor { shape: vec![k], data: db });
            }
            Op::SoftmaxXent { logits, probs, labels } => {
                let n = labels.len();
                let k = probs.len() / n;
                let up = g.item() / n as f64;
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= 1.0;
                }
                for v in &mut d {
                    *v *= up;
                }
                accumulate(grads, *logits, Tensor { shape: vec![n, k], data: d });
            }
            Op::Scale { x, factor } => {
                accumulate(grads, *x, g.map(|v| v * factor));
            }
            Op::Dot { x, weights } => {
                let up = g.item();
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, Tensor { shape, data: weights.iter().map(|w| w * up).collect() });
            }
        }
    }
}
