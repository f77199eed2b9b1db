use super::kernels::{axpy, axpy4, dot, dot4, fill_padded, fold_padded, sum};
use super::{Graph, Op, PadSpec, Var};
use crate::error::{contract, ensure, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Element> Graph<T> {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = if ta.shape() == tb.shape() || tb.is_scalar() {
            ta.shape().to_vec()
        } else if ta.is_scalar() {
            tb.shape().to_vec()
        } else {
            return Err(contract!(
                "elementwise shapes {:?} and {:?} do not match",
                ta.shape(),
                tb.shape()
            ));
        };
        let n: usize = out_shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let at = |i: usize| if da.len() == 1 { da[0] } else { da[i] };
        let bt = |i: usize| if db.len() == 1 { db[0] } else { db[i] };
        let data: Vec<T> = (0..n)
            .map(|i| match kind {
                Binary::Add => at(i) + bt(i),
                Binary::Sub => at(i) - bt(i),
                Binary::Mul => at(i) * bt(i),
            })
            .collect();
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        Ok(self.push(Tensor::from_parts(out_shape, data), op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(value, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(T::zero()), Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.abs(), Op::Abs(a))
    }

    /// Elementwise square root; inputs must be non-negative.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        ensure!(
            self.value(a).data().iter().all(|&v| v >= T::zero()),
            "sqrt of a negative value"
        );
        Ok(self.unary(a, |v| v.sqrt(), Op::Sqrt(a)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = sum(self.value(a).data());
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = sum(t.data()) / T::of_usize(t.len());
        self.push(Tensor::scalar(m), Op::MeanAll(a), &[a])
    }

    /// Global average pooling over the last axis: (N, C, T) -> (N, C).
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        ensure!(t.rank() == 3, "gap expects (N, C, T), got {:?}", t.shape());
        let (n, c, len) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let inv = T::one() / T::of_usize(len);
        let data = t.data().chunks_exact(len).map(|row| sum(row) * inv).collect();
        Ok(self.push(Tensor::from_parts(vec![n, c], data), Op::Gap(x), &[x]))
    }

    /// Concatenates (N, D_i) tensors along the feature axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), "concat of an empty list");
        let n = self.shape(xs[0])[0];
        for &x in xs {
            let s = self.shape(x);
            ensure!(s.len() == 2 && s[0] == n, "concat expects (N, D) parts, got {s:?}");
        }
        let width: usize = xs.iter().map(|&x| self.shape(x)[1]).sum();
        let mut data = Vec::with_capacity(n * width);
        for row in 0..n {
            for &x in xs {
                let d = self.shape(x)[1];
                data.extend_from_slice(&self.value(x).data()[row * d..(row + 1) * d]);
            }
        }
        let value = Tensor::from_parts(vec![n, width], data);
        Ok(self.push(value, Op::Concat(xs.to_vec()), xs))
    }

    /// Stacks (N_i, D) tensors along the batch axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        ensure!(!xs.is_empty(), "concat of an empty list");
        let d = self.shape(xs[0]).get(1).copied().unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let s = self.shape(x);
            ensure!(s.len() == 2 && s[1] == d, "concat_rows expects (N, {d}), got {s:?}");
            rows += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let value = Tensor::from_parts(vec![rows, d], data);
        Ok(self.push(value, Op::ConcatRows(xs.to_vec()), xs))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        ensure!(t.rank() == 2, "select_rows expects (N, D), got {:?}", t.shape());
        ensure!(!rows.is_empty(), "select_rows with no rows");
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            ensure!(r < n, "row {r} out of range for {n} rows");
            data.extend_from_slice(&t.data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::from_parts(vec![rows.len(), d], data);
        Ok(self.push(value, Op::SelectRows(x, rows.to_vec()), &[x]))
    }

    /// Row means over each index group: (S, D) -> (G, D).
    pub fn group_means(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(x);
        ensure!(t.rank() == 2, "group_means expects (S, D), got {:?}", t.shape());
        ensure!(!groups.is_empty(), "group_means with no groups");
        let (n, d) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![T::zero(); groups.len() * d];
        for (gi, group) in groups.iter().enumerate() {
            ensure!(!group.is_empty(), "group {gi} is empty");
            let out = &mut data[gi * d..(gi + 1) * d];
            for &r in group {
                ensure!(r < n, "row {r} out of range for {n} rows");
                axpy(T::one(), &t.data()[r * d..(r + 1) * d], out);
            }
            let inv = T::one() / T::of_usize(group.len());
            out.iter_mut().for_each(|v| *v = *v * inv);
        }
        let value = Tensor::from_parts(vec![groups.len(), d], data);
        Ok(self.push(value, Op::GroupMeans(x, groups.to_vec()), &[x]))
    }

    /// Squared Euclidean distances between rows: (Q, D) x (P, D) -> (Q, P).
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure!(
            ta.rank() == 2 && tb.rank() == 2 && ta.shape()[1] == tb.shape()[1],
            "sq_dist shapes {:?} and {:?} incompatible",
            ta.shape(),
            tb.shape()
        );
        let (q, p, d) = (ta.shape()[0], tb.shape()[0], ta.shape()[1]);
        let mut data = Vec::with_capacity(q * p);
        for qa in ta.data().chunks_exact(d) {
            for pb in tb.data().chunks_exact(d) {
                let s = qa
                    .iter()
                    .zip(pb)
                    .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
                data.push(s);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![q, p], data), Op::SqDist(a, b), &[a, b]))
    }

    fn strided(&mut self, x: Var, offset: usize) -> Result<Var> {
        let t = self.value(x);
        ensure!(t.rank() == 3, "split expects (N, C, L), got {:?}", t.shape());
        let len = t.shape()[2];
        ensure!(len.is_multiple_of(2), "split needs an even length, got {len}");
        let half = len / 2;
        let mut data = Vec::with_capacity(t.len() / 2);
        for row in t.data().chunks_exact(len) {
            data.extend(row.iter().skip(offset).step_by(2));
        }
        let shape = vec![t.shape()[0], t.shape()[1], half];
        Ok(self.push(Tensor::from_parts(shape, data), Op::Strided { x, offset }, &[x]))
    }

    /// Splits the last axis into (even-indexed, odd-indexed) samples.
    pub fn split(&mut self, x: Var) -> Result<(Var, Var)> {
        let even = self.strided(x, 0)?;
        let odd = self.strided(x, 1)?;
        Ok((even, odd))
    }

    /// Per-channel correlation: x (N, C, L), w (C, K), b (C).
    pub fn conv1d_depthwise(&mut self, x: Var, w: Var, b: Var, pad: PadSpec) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        ensure!(tx.rank() == 3, "depthwise input must be (N, C, L), got {:?}", tx.shape());
        let (n, c, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        ensure!(
            tw.shape().len() == 2 && tw.shape()[0] == c,
            "depthwise weight {:?} does not match {c} channels",
            tw.shape()
        );
        ensure!(tb.shape() == [c], "depthwise bias {:?} does not match {c}", tb.shape());
        let k = tw.shape()[1];
        ensure!(k % 2 == 1, "depthwise kernel size {k} must be odd");
        let p = pad.amount();
        ensure!(len + 2 * p >= k, "length {len} with pad {p} is shorter than kernel {k}");
        if pad.is_reflect() && p > 0 {
            ensure!(len >= 2, "reflect padding needs at least 2 samples, got {len}");
        }
        let out_len = len + 2 * p - k + 1;
        let mut out = vec![T::zero(); n * c * out_len];
        let mut padded = vec![T::zero(); len + 2 * p];
        for (i, orow) in out.chunks_exact_mut(out_len).enumerate() {
            let ch = i % c;
            fill_padded(&tx.data()[i * len..(i + 1) * len], p, pad.is_reflect(), &mut padded);
            orow.fill(tb.data()[ch]);
            for (kk, &wk) in tw.data()[ch * k..(ch + 1) * k].iter().enumerate() {
                axpy(wk, &padded[kk..kk + out_len], orow);
            }
        }
        let value = Tensor::from_parts(vec![n, c, out_len], out);
        Ok(self.push(value, Op::Depthwise { x, w, b, pad }, &[x, w, b]))
    }

    /// Channel mixing at every position: x (N, Ci, L), w (Co, Ci), b (Co).
    pub fn conv1d_pointwise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        ensure!(tx.rank() == 3, "pointwise input must be (N, C, L), got {:?}", tx.shape());
        let (n, ci, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        ensure!(
            tw.rank() == 2 && tw.shape()[1] == ci,
            "pointwise weight {:?} does not take {ci} channels",
            tw.shape()
        );
        let co = tw.shape()[0];
        ensure!(tb.shape() == [co], "pointwise bias {:?} does not match {co}", tb.shape());
        let mut out = vec![T::zero(); n * co * len];
        let wd = tw.data();
        let blocked = co - co % 4;
        for (xs, os) in tx.data().chunks_exact(ci * len).zip(out.chunks_exact_mut(co * len)) {
            for (o, orow) in os.chunks_exact_mut(len).enumerate() {
                orow.fill(tb.data()[o]);
            }
            let (head, tail) = os.split_at_mut(blocked * len);
            for (ob, block) in head.chunks_exact_mut(4 * len).enumerate() {
                let o = 4 * ob;
                for i in 0..ci {
                    let w4 = [wd[o * ci + i], wd[(o + 1) * ci + i], wd[(o + 2) * ci + i], wd[(o + 3) * ci + i]];
                    axpy4(w4, &xs[i * len..(i + 1) * len], block);
                }
            }
            for (r, orow) in tail.chunks_exact_mut(len).enumerate() {
                let o = blocked + r;
                for (i, &wv) in wd[o * ci..(o + 1) * ci].iter().enumerate() {
                    axpy(wv, &xs[i * len..(i + 1) * len], orow);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, co, len], out);
        Ok(self.push(value, Op::Pointwise { x, w, b }, &[x, w, b]))
    }

    /// Full-height 2-D correlation collapsing the I/Q rows:
    /// x (N, 1, 2, L), w (Co, 2, K), b (Co) -> (N, Co, 1, L_out).
    pub fn conv2d_stem(&mut self, x: Var, w: Var, b: Var, width_pad: usize) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let s = tx.shape();
        ensure!(s.len() == 4 && s[1] == 1, "stem input must be (N, 1, 2, L), got {s:?}");
        ensure!(s[2] == 2, "stem input height must be 2 (I and Q), got {}", s[2]);
        let (n, len) = (s[0], s[3]);
        ensure!(
            tw.rank() == 3 && tw.shape()[1] == 2,
            "stem weight must be (C, 2, K), got {:?}",
            tw.shape()
        );
        let (co, k) = (tw.shape()[0], tw.shape()[2]);
        ensure!(tb.shape() == [co], "stem bias {:?} does not match {co}", tb.shape());
        ensure!(len + 2 * width_pad >= k, "length {len} too short for kernel {k}");
        let out_len = len + 2 * width_pad - k + 1;
        let plen = len + 2 * width_pad;
        let mut out = vec![T::zero(); n * co * out_len];
        let mut padded = vec![T::zero(); 2 * plen];
        for (xs, os) in tx.data().chunks_exact(2 * len).zip(out.chunks_exact_mut(co * out_len)) {
            for h in 0..2 {
                fill_padded(
                    &xs[h * len..(h + 1) * len],
                    width_pad,
                    false,
                    &mut padded[h * plen..(h + 1) * plen],
                );
            }
            for (o, orow) in os.chunks_exact_mut(out_len).enumerate() {
                orow.fill(tb.data()[o]);
                for h in 0..2 {
                    let wrow = &tw.data()[(o * 2 + h) * k..(o * 2 + h + 1) * k];
                    let prow = &padded[h * plen..(h + 1) * plen];
                    for (kk, &wk) in wrow.iter().enumerate() {
                        axpy(wk, &prow[kk..kk + out_len], orow);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, co, 1, out_len], out);
        let op = Op::Stem { x, w, b, pad: width_pad };
        Ok(self.push(value, op, &[x, w, b]))
    }

    /// x (N, D), w (K, D), b (K) -> (N, K).
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        ensure!(
            tx.rank() == 2 && tw.rank() == 2 && tw.shape()[1] == tx.shape()[1],
            "fully_connected shapes {:?} x {:?} incompatible",
            tx.shape(),
            tw.shape()
        );
        let (n, d, k) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        ensure!(tb.shape() == [k], "fc bias {:?} does not match {k}", tb.shape());
        let mut out = Vec::with_capacity(n * k);
        for xr in tx.data().chunks_exact(d) {
            for (wr, &bv) in tw.data().chunks_exact(d).zip(tb.data()) {
                out.push(bv + dot(wr, xr));
            }
        }
        let value = Tensor::from_parts(vec![n, k], out);
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        ensure!(t.rank() == 2, "softmax_rows expects (N, K), got {:?}", t.shape());
        let probs = softmax(t);
        Ok(self.push(probs, Op::SoftmaxRows(x), &[x]))
    }

    /// Mean over the batch of -log probs[label].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        check_labels(t, labels)?;
        let k = t.shape()[1];
        let total: T = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -t.data()[i * k + l].ln())
            .sum();
        let value = Tensor::scalar(total / T::of_usize(labels.len()));
        let op = Op::CrossEntropy { probs, labels: labels.to_vec() };
        Ok(self.push(value, op, &[probs]))
    }

    /// `cross_entropy(softmax_rows(logits))` evaluated through log-sum-exp.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        check_labels(t, labels)?;
        let k = t.shape()[1];
        let mut total = T::zero();
        for (row, &l) in t.data().chunks_exact(k).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total = total + (lse - row[l]);
        }
        let probs = softmax(t);
        let value = Tensor::scalar(total / T::of_usize(labels.len()));
        let op = Op::CrossEntropyLogits { logits, labels: labels.to_vec(), probs };
        Ok(self.push(value, op, &[logits]))
    }

    /// Gradient contributions of node `idx` to its parents, given d(loss)/d(node).
    pub(super) fn local_grads(&self, idx: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                vec![
                    (*a, reduce_to(g, self.value(*a), T::one())),
                    (*b, reduce_to(g, self.value(*b), sign)),
                ]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let at = |i: usize| if ta.len() == 1 { ta.data()[0] } else { ta.data()[i] };
                let bt = |i: usize| if tb.len() == 1 { tb.data()[0] } else { tb.data()[i] };
                let ga: Vec<T> = gd.iter().enumerate().map(|(i, &gv)| gv * bt(i)).collect();
                let gb: Vec<T> = gd.iter().enumerate().map(|(i, &gv)| gv * at(i)).collect();
                let ga = Tensor::from_parts(g.shape().to_vec(), ga);
                let gb = Tensor::from_parts(g.shape().to_vec(), gb);
                vec![(*a, reduce_to(&ga, ta, T::one())), (*b, reduce_to(&gb, tb, T::one()))]
            }
            Op::Scale(a, f) => vec![(*a, map_grad(g, |gv| gv * *f))],
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                vec![(*a, Tensor::from_parts(shape, gd.to_vec()))]
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*a, Tensor::from_parts(g.shape().to_vec(), d))]
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*a, Tensor::from_parts(g.shape().to_vec(), d))]
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                let two = T::of(2.0);
                let d = gd
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::zero() { gv / (two * yv) } else { T::zero() })
                    .collect();
                vec![(*a, Tensor::from_parts(g.shape().to_vec(), d))]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(self.shape(*a), gd[0]))],
            Op::MeanAll(a) => {
                let n = T::of_usize(self.value(*a).len());
                vec![(*a, Tensor::full(self.shape(*a), gd[0] / n))]
            }
            Op::Gap(x) => {
                let shape = self.shape(*x).to_vec();
                let len = shape[2];
                let inv = T::one() / T::of_usize(len);
                let mut d = Vec::with_capacity(shape.iter().product());
                for &gv in gd {
                    d.extend(std::iter::repeat_n(gv * inv, len));
                }
                vec![(*x, Tensor::from_parts(shape, d))]
            }
            Op::Concat(xs) => {
                let width = g.shape()[1];
                let mut col = 0;
                let mut out = Vec::with_capacity(xs.len());
                for &x in xs {
                    let shape = self.shape(x).to_vec();
                    let d = shape[1];
                    let mut data = Vec::with_capacity(shape[0] * d);
                    for row in gd.chunks_exact(width) {
                        data.extend_from_slice(&row[col..col + d]);
                    }
                    col += d;
                    out.push((x, Tensor::from_parts(shape, data)));
                }
                out
            }
            Op::ConcatRows(xs) => {
                let mut start = 0;
                xs.iter()
                    .map(|&x| {
                        let n = self.value(x).len();
                        let t = Tensor::from_parts(self.shape(x).to_vec(), gd[start..start + n].to_vec());
                        start += n;
                        (x, t)
                    })
                    .collect()
            }
            Op::SelectRows(x, rows) => {
                let shape = self.shape(*x).to_vec();
                let d = shape[1];
                let mut dx = Tensor::zeros(&shape);
                for (gr, &r) in gd.chunks_exact(d).zip(rows) {
                    axpy(T::one(), gr, &mut dx.data_mut()[r * d..(r + 1) * d]);
                }
                vec![(*x, dx)]
            }
            Op::GroupMeans(x, groups) => {
                let shape = self.shape(*x).to_vec();
                let d = shape[1];
                let mut dx = Tensor::zeros(&shape);
                for (gr, group) in gd.chunks_exact(d).zip(groups) {
                    let inv = T::one() / T::of_usize(group.len());
                    for &r in group {
                        axpy(inv, gr, &mut dx.data_mut()[r * d..(r + 1) * d]);
                    }
                }
                vec![(*x, dx)]
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let d = ta.shape()[1];
                let p = tb.shape()[0];
                let mut da = Tensor::zeros(ta.shape());
                let mut db = Tensor::zeros(tb.shape());
                let two = T::of(2.0);
                for (qi, qa) in ta.data().chunks_exact(d).enumerate() {
                    for (pi, pb) in tb.data().chunks_exact(d).enumerate() {
                        let gv = gd[qi * p + pi] * two;
                        let dar = &mut da.data_mut()[qi * d..(qi + 1) * d];
                        for j in 0..d {
                            dar[j] = dar[j] + gv * (qa[j] - pb[j]);
                        }
                        let dbr = &mut db.data_mut()[pi * d..(pi + 1) * d];
                        for j in 0..d {
                            dbr[j] = dbr[j] - gv * (qa[j] - pb[j]);
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Strided { x, offset } => {
                let shape = self.shape(*x).to_vec();
                let half = shape[2] / 2;
                let mut dx = Tensor::zeros(&shape);
                for (drow, grow) in dx.data_mut().chunks_exact_mut(2 * half).zip(gd.chunks_exact(half)) {
                    for (k, &gv) in grow.iter().enumerate() {
                        drow[2 * k + offset] = gv;
                    }
                }
                vec![(*x, dx)]
            }
            Op::Depthwise { x, w, b, pad } => self.depthwise_grads(*x, *w, *b, *pad, g),
            Op::Pointwise { x, w, b } => self.pointwise_grads(*x, *w, *b, g),
            Op::Stem { x, w, b, pad } => self.stem_grads(*x, *w, *b, *pad, g),
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (d, k) = (tx.shape()[1], tw.shape()[0]);
                let mut dx = Tensor::zeros(tx.shape());
                let mut dw = Tensor::zeros(tw.shape());
                let mut db = Tensor::zeros(&[k]);
                for (nrow, grow) in gd.chunks_exact(k).enumerate() {
                    let xr = &tx.data()[nrow * d..(nrow + 1) * d];
                    for (kk, &gv) in grow.iter().enumerate() {
                        axpy(gv, &tw.data()[kk * d..(kk + 1) * d], &mut dx.data_mut()[nrow * d..(nrow + 1) * d]);
                        axpy(gv, xr, &mut dw.data_mut()[kk * d..(kk + 1) * d]);
                        db.data_mut()[kk] = db.data()[kk] + gv;
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let k = node.value.shape()[1];
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks_exact(k).zip(gd.chunks_exact(k)) {
                    let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - s)));
                }
                vec![(*x, Tensor::from_parts(node.value.shape().to_vec(), d))]
            }
            Op::CrossEntropy { probs, labels } => {
                let t = self.value(*probs);
                let k = t.shape()[1];
                let scale = gd[0] / T::of_usize(labels.len());
                let mut d = Tensor::zeros(t.shape());
                for (i, &l) in labels.iter().enumerate() {
                    d.data_mut()[i * k + l] = -scale / t.data()[i * k + l];
                }
                vec![(*probs, d)]
            }
            Op::CrossEntropyLogits { logits, labels, probs } => {
                let k = probs.shape()[1];
                let scale = gd[0] / T::of_usize(labels.len());
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d.data_mut()[i * k + l] = d.data()[i * k + l] - T::one();
                }
                d.data_mut().iter_mut().for_each(|v| *v = *v * scale);
                vec![(*logits, d)]
            }
        }
    }

    fn depthwise_grads(&self, x: Var, w: Var, b: Var, pad: PadSpec, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (c, len) = (tx.shape()[1], tx.shape()[2]);
        let k = tw.shape()[1];
        let p = pad.amount();
        let out_len = g.shape()[2];
        let need_x = self.needs(x);
        let mut dx = Tensor::zeros(if need_x { tx.shape() } else { &[1] });
        let mut dw = Tensor::zeros(tw.shape());
        let mut db = Tensor::zeros(&[c]);
        let mut padded = vec![T::zero(); len + 2 * p];
        let mut gpad = vec![T::zero(); len + 2 * p];
        for (i, grow) in g.data().chunks_exact(out_len).enumerate() {
            let ch = i % c;
            let xrow = &tx.data()[i * len..(i + 1) * len];
            fill_padded(xrow, p, pad.is_reflect(), &mut padded);
            db.data_mut()[ch] = db.data()[ch] + sum(grow);
            let wrow = &tw.data()[ch * k..(ch + 1) * k];
            for kk in 0..k {
                let dwv = &mut dw.data_mut()[ch * k + kk];
                *dwv = *dwv + dot(grow, &padded[kk..kk + out_len]);
            }
            if need_x {
                gpad.fill(T::zero());
                for (kk, &wk) in wrow.iter().enumerate() {
                    axpy(wk, grow, &mut gpad[kk..kk + out_len]);
                }
                fold_padded(&gpad, p, pad.is_reflect(), &mut dx.data_mut()[i * len..(i + 1) * len]);
            }
        }
        let mut out = vec![(w, dw), (b, db)];
        if need_x {
            out.push((x, dx));
        }
        out
    }

    fn pointwise_grads(&self, x: Var, w: Var, b: Var, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (ci, len) = (tx.shape()[1], tx.shape()[2]);
        let co = tw.shape()[0];
        let need_x = self.needs(x);
        let mut dx = Tensor::zeros(if need_x { tx.shape() } else { &[1] });
        let mut dw = Tensor::zeros(tw.shape());
        let mut db = Tensor::zeros(&[co]);
        for (s, (xs, gs)) in tx
            .data()
            .chunks_exact(ci * len)
            .zip(g.data().chunks_exact(co * len))
            .enumerate()
        {
            let iblocked = ci - ci % 4;
            for (o, grow) in gs.chunks_exact(len).enumerate() {
                db.data_mut()[o] = db.data()[o] + sum(grow);
                let dwrow = &mut dw.data_mut()[o * ci..(o + 1) * ci];
                for i in (0..iblocked).step_by(4) {
                    let d = dot4(grow, &xs[i * len..(i + 4) * len]);
                    for r in 0..4 {
                        dwrow[i + r] = dwrow[i + r] + d[r];
                    }
                }
                for i in iblocked..ci {
                    dwrow[i] = dwrow[i] + dot(grow, &xs[i * len..(i + 1) * len]);
                }
            }
            if need_x {
                // dx[i] accumulates w[o][i]·g[o] over o in increasing order.
                let wd = tw.data();
                let dxs = &mut dx.data_mut()[s * ci * len..(s + 1) * ci * len];
                let (head, tail) = dxs.split_at_mut(iblocked * len);
                for (ib, block) in head.chunks_exact_mut(4 * len).enumerate() {
                    let i = 4 * ib;
                    for (o, grow) in gs.chunks_exact(len).enumerate() {
                        let w4 = [wd[o * ci + i], wd[o * ci + i + 1], wd[o * ci + i + 2], wd[o * ci + i + 3]];
                        axpy4(w4, grow, block);
                    }
                }
                for (r, drow) in tail.chunks_exact_mut(len).enumerate() {
                    let i = iblocked + r;
                    for (o, grow) in gs.chunks_exact(len).enumerate() {
                        axpy(wd[o * ci + i], grow, drow);
                    }
                }
            }
        }
        let mut out = vec![(w, dw), (b, db)];
        if need_x {
            out.push((x, dx));
        }
        out
    }

    fn stem_grads(&self, x: Var, w: Var, b: Var, pad: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let (tx, tw) = (self.value(x), self.value(w));
        let len = tx.shape()[3];
        let (co, k) = (tw.shape()[0], tw.shape()[2]);
        let out_len = g.shape()[3];
        let plen = len + 2 * pad;
        let need_x = self.needs(x);
        let mut dx = Tensor::zeros(if need_x { tx.shape() } else { &[1] });
        let mut dw = Tensor::zeros(tw.shape());
        let mut db = Tensor::zeros(&[co]);
        let mut padded = vec![T::zero(); 2 * plen];
        let mut gpad = vec![T::zero(); 2 * plen];
        for (s, (xs, gs)) in tx
            .data()
            .chunks_exact(2 * len)
            .zip(g.data().chunks_exact(co * out_len))
            .enumerate()
        {
            for h in 0..2 {
                fill_padded(&xs[h * len..(h + 1) * len], pad, false, &mut padded[h * plen..(h + 1) * plen]);
            }
            gpad.fill(T::zero());
            for (o, grow) in gs.chunks_exact(out_len).enumerate() {
                db.data_mut()[o] = db.data()[o] + sum(grow);
                for h in 0..2 {
                    let base = (o * 2 + h) * k;
                    let prow = &padded[h * plen..(h + 1) * plen];
                    for kk in 0..k {
                        let dwv = &mut dw.data_mut()[base + kk];
                        *dwv = *dwv + dot(grow, &prow[kk..kk + out_len]);
                    }
                    if need_x {
                        let gprow = &mut gpad[h * plen..(h + 1) * plen];
                        for kk in 0..k {
                            axpy(tw.data()[base + kk], grow, &mut gprow[kk..kk + out_len]);
                        }
                    }
                }
            }
            if need_x {
                for h in 0..2 {
                    let off = s * 2 * len + h * len;
                    fold_padded(&gpad[h * plen..(h + 1) * plen], pad, false, &mut dx.data_mut()[off..off + len]);
                }
            }
        }
        let mut out = vec![(w, dw), (b, db)];
        if need_x {
            out.push((x, dx));
        }
        out
    }
}

fn check_labels<T: Element>(t: &Tensor<T>, labels: &[usize]) -> Result<()> {
    ensure!(t.rank() == 2, "expected (N, K) scores, got {:?}", t.shape());
    ensure!(
        labels.len() == t.shape()[0],
        "{} labels for {} rows",
        labels.len(),
        t.shape()[0]
    );
    let k = t.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(contract!("label {bad} out of range for {k} classes"));
    }
    Ok(())
}

pub(crate) fn softmax<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let k = t.shape()[1];
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let s: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / s);
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

fn map_grad<T: Element>(g: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_parts(g.shape().to_vec(), g.data().iter().map(|&v| f(v)).collect())
}

/// Sums a broadcast gradient back down to a scalar-shaped operand.
fn reduce_to<T: Element>(g: &Tensor<T>, operand: &Tensor<T>, sign: T) -> Tensor<T> {
    if operand.len() == g.len() {
        map_grad(g, |v| v * sign)
    } else {
        Tensor::from_parts(operand.shape().to_vec(), vec![sum(g.data()) * sign])
    }
}
