use super::config::{ModelConfig, RegForm};
use super::params::ModelParams;
use crate::autodiff::{Graph, PadSpec, Var};
use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

/// A predict or update map applied inside one lifting step.
pub trait LiftingOperator<T: Element> {
    fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var>;
}

/// Reflect pad, depthwise conv, ReLU, pointwise conv.
#[derive(Clone, Copy, Debug)]
pub struct LearnedOperator {
    pub dw_weight: Var,
    pub dw_bias: Var,
    pub pw_weight: Var,
    pub pw_bias: Var,
}

impl<T: Element> LiftingOperator<T> for LearnedOperator {
    fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let k = g.shape(self.dw_weight)[1];
        let h = g.conv1d_depthwise(x, self.dw_weight, self.dw_bias, PadSpec::Reflect(k / 2))?;
        let h = g.relu(h);
        g.conv1d_pointwise(h, self.pw_weight, self.pw_bias)
    }
}

/// `x ↦ s·x`; `Scaled(1)` and `Scaled(0.5)` give the Haar predict and update.
#[derive(Clone, Copy, Debug)]
pub struct Scaled(pub f64);

impl<T: Element> LiftingOperator<T> for Scaled {
    fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(g.scale(x, T::of(self.0)))
    }
}

/// One lifting step on (N, C, L): `H = odd − P(even)`, `L = even + U(H)`.
pub fn lifting_level<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    predict: &dyn LiftingOperator<T>,
    update: &dyn LiftingOperator<T>,
) -> Result<(Var, Var)> {
    let (even, odd) = g.split(x)?;
    let p = predict.apply(g, even)?;
    let high = g.sub(odd, p)?;
    let u = update.apply(g, high)?;
    let low = g.add(even, u)?;
    Ok((high, low))
}

/// Fixed Haar lifting on (N, C, L): returns (detail, approximation).
pub fn haar_lifting<T: Element>(r: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    ensure!(r.rank() == 3, "haar_lifting expects (N, C, L), got {:?}", r.shape());
    let len = r.shape()[2];
    ensure!(len.is_multiple_of(2), "haar_lifting needs an even length, got {len}");
    let half = T::of(0.5);
    let mut d = Vec::with_capacity(r.len() / 2);
    let mut c = Vec::with_capacity(r.len() / 2);
    for pair in r.data().chunks_exact(2) {
        let dv = pair[1] - pair[0];
        d.push(dv);
        c.push(pair[0] + half * dv);
    }
    let shape = [r.shape()[0], r.shape()[1], len / 2];
    Ok((Tensor::new(&shape, d)?, Tensor::new(&shape, c)?))
}

/// Inverse of the even/odd split on (N, C, L/2) halves.
pub fn interleave<T: Element>(even: &Tensor<T>, odd: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(
        even.rank() == 3 && even.shape() == odd.shape(),
        "interleave needs matching (N, C, L) halves, got {:?} and {:?}",
        even.shape(),
        odd.shape()
    );
    let mut data = Vec::with_capacity(even.len() * 2);
    for (e, o) in even.data().iter().zip(odd.data()) {
        data.push(*e);
        data.push(*o);
    }
    let s = even.shape();
    Tensor::new(&[s[0], s[1], s[2] * 2], data)
}

/// Graph handles of every intermediate the loss and callers need.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Stem output F₀, (N, C, L).
    pub stem: Var,
    /// H⁽¹⁾…H⁽ᴹ⁾.
    pub highs: Vec<Var>,
    /// L⁽¹⁾…L⁽ᴹ⁾.
    pub lows: Vec<Var>,
    /// Fused feature X, (N, C·(M+1)).
    pub features: Var,
    /// (N, K); absent for an encoder.
    pub logits: Option<Var>,
    /// Unscaled detail regularizer of each level.
    pub reg_high: Vec<Var>,
    /// Unscaled approximation regularizer terms.
    pub reg_low: Vec<Var>,
}

/// Graph handles of the parameters, in canonical order.
#[derive(Clone, Debug)]
pub struct BoundParams(pub Vec<Var>);

impl BoundParams {
    pub fn trainable<T: Element>(g: &mut Graph<T>, p: &ModelParams<T>) -> Self {
        Self(p.tensors().iter().map(|t| g.param(t.clone())).collect())
    }

    pub fn frozen<T: Element>(g: &mut Graph<T>, p: &ModelParams<T>) -> Self {
        Self(p.tensors().iter().map(|t| g.constant(t.clone())).collect())
    }

    fn level(&self, j: usize) -> (LearnedOperator, LearnedOperator) {
        let b = 8 + 8 * (j - 1);
        let v = &self.0;
        (
            LearnedOperator { dw_weight: v[b], dw_bias: v[b + 1], pw_weight: v[b + 2], pw_bias: v[b + 3] },
            LearnedOperator { dw_weight: v[b + 4], dw_bias: v[b + 5], pw_weight: v[b + 6], pw_bias: v[b + 7] },
        )
    }
}

/// Stem, M lifting levels, GAP fusion and the optional head on x (N, 1, 2, L).
pub fn forward<T: Element>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    p: &BoundParams,
    x: Var,
) -> Result<ForwardTrace> {
    let s = g.shape(x).to_vec();
    ensure!(
        s.len() == 4 && s[3] == cfg.input_len,
        "input {s:?} does not match frame length {}",
        cfg.input_len
    );
    let n = s[0];
    let v = &p.0;
    let c = cfg.channels;
    let len = cfg.input_len;

    let f = g.conv2d_stem(x, v[0], v[1], cfg.stem_kernel / 2)?;
    let f = g.reshape(f, &[n, c, len])?;
    let f = g.conv1d_pointwise(f, v[2], v[3])?;
    let f = g.relu(f);
    let f = g.conv1d_depthwise(f, v[4], v[5], PadSpec::Zero(cfg.stem_dw_kernel / 2))?;
    let f = g.conv1d_pointwise(f, v[6], v[7])?;
    let stem = g.relu(f);

    let mut highs = Vec::with_capacity(cfg.levels);
    let mut lows = Vec::with_capacity(cfg.levels);
    let mut cur = stem;
    for j in 1..=cfg.levels {
        let (pred, upd) = p.level(j);
        let (h, l) = lifting_level(g, cur, &pred, &upd)?;
        highs.push(h);
        lows.push(l);
        cur = l;
    }

    let mut parts = vec![g.gap(cur)?];
    for &h in &highs {
        parts.push(g.gap(h)?);
    }
    let features = g.concat_channels(&parts)?;
    let logits = if cfg.num_classes > 0 {
        let hb = 8 + 8 * cfg.levels;
        Some(g.fully_connected(features, v[hb], v[hb + 1])?)
    } else {
        None
    };

    let (reg_high, reg_low) = regularizer_terms(g, cfg.reg_form, stem, &highs, &lows)?;
    Ok(ForwardTrace { stem, highs, lows, features, logits, reg_high, reg_low })
}

/// Unscaled wavelet regularizers.
///
/// Mean: `mean|H_k|` per level and `|mean(L_k) − mean(F_{k−1})|`
/// with `F₀` the stem output and `F_k = L_k`.
/// Norm: per-frame `Σ|H_k|`, and per-frame `‖L_{k+1} − even(L_k)‖₂` for
/// consecutive levels, each averaged over the batch.
pub fn regularizer_terms<T: Element>(
    g: &mut Graph<T>,
    form: RegForm,
    stem: Var,
    highs: &[Var],
    lows: &[Var],
) -> Result<(Vec<Var>, Vec<Var>)> {
    let mut rh = Vec::with_capacity(highs.len());
    let mut rl = Vec::with_capacity(lows.len());
    match form {
        RegForm::Mean => {
            let mut prev = stem;
            for (&h, &l) in highs.iter().zip(lows) {
                let a = g.abs(h);
                rh.push(g.mean_all(a));
                let ml = g.mean_all(l);
                let mp = g.mean_all(prev);
                let d = g.sub(ml, mp)?;
                rl.push(g.abs(d));
                prev = l;
            }
        }
        RegForm::Norm => {
            for &h in highs {
                let n = T::of_usize(g.shape(h)[0]);
                let a = g.abs(h);
                let s = g.sum_all(a);
                rh.push(g.scale(s, T::one() / n));
            }
            for pair in lows.windows(2) {
                let n = g.shape(pair[0])[0];
                let (even, _) = g.split(pair[0])?;
                let d = g.sub(pair[1], even)?;
                let sq = g.mul(d, d)?;
                let width = g.shape(sq)[1] * g.shape(sq)[2];
                let per_frame = g.reshape(sq, &[n, 1, width])?;
                let means = g.gap(per_frame)?;
                let sums = g.scale(means, T::of_usize(width));
                let eps = g.constant(Tensor::scalar(T::of(1e-12)));
                let sums = g.add(sums, eps)?;
                let norms = g.sqrt(sums)?;
                rl.push(g.mean_all(norms));
            }
        }
    }
    Ok((rh, rl))
}

/// Cross-entropy on the logits plus `λ1·Σ reg_high + λ2·Σ reg_low`.
pub fn composite_loss<T: Element>(
    g: &mut Graph<T>,
    trace: &ForwardTrace,
    labels: &[usize],
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let logits = trace
        .logits
        .ok_or_else(|| crate::error::contract!("composite_loss needs a classifier head"))?;
    let ce = g.cross_entropy_logits(logits, labels)?;
    add_regularizers(g, ce, trace, lambda1, lambda2)
}

/// `base + λ1·Σ reg_high + λ2·Σ reg_low`; zero weights add nothing.
pub fn add_regularizers<T: Element>(
    g: &mut Graph<T>,
    base: Var,
    trace: &ForwardTrace,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    let mut total = base;
    for (terms, lambda) in [(&trace.reg_high, lambda1), (&trace.reg_low, lambda2)] {
        if lambda == 0.0 {
            continue;
        }
        for &r in terms {
            let s = g.scale(r, T::of(lambda));
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1);
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// A configuration together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Element> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    fn run<R>(&self, x: &Tensor<T>, read: impl FnOnce(&Graph<T>, &ForwardTrace) -> R) -> Result<R> {
        let mut g = Graph::new();
        let p = BoundParams::frozen(&mut g, &self.params);
        let xv = g.constant(x.clone());
        let trace = forward(&mut g, &self.config, &p, xv)?;
        Ok(read(&g, &trace))
    }

    /// Inference logits (N, K) for x (N, 1, 2, L).
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ensure!(self.config.num_classes > 0, "model has no classifier head");
        self.run(x, |g, t| g.value(t.logits.expect("head present")).clone())
    }

    /// Fused features (N, C·(M+1)).
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, |g, t| g.value(t.features).clone())
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::signal::stream_rng;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, 9);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn interleave(even: &[f64], odd: &[f64]) -> Vec<f64> {
        even.iter().zip(odd).flat_map(|(&a, &b)| [a, b]).collect()
    }

    #[test]
    fn split_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 1, 4], vec![10.0, 11.0, 12.0, 13.0]).unwrap());
        let (e, o) = g.split(x).unwrap();
        assert_eq!(g.value(e).data(), &[10.0, 12.0]);
        assert_eq!(g.value(o).data(), &[11.0, 13.0]);

        let c = g.constant(Tensor::full(&[1, 2, 6], 3.5));
        let (e, o) = g.split(c).unwrap();
        assert!(g.value(e).data().iter().chain(g.value(o).data()).all(|&v| v == 3.5));

        let bad = g.constant(Tensor::zeros(&[1, 1, 5]));
        assert!(g.split(bad).is_err());
    }

    proptest! {
        #[test]
        fn split_interleave_round_trip(vals in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let mut v = vals;
            if v.len() % 2 == 1 { v.pop(); }
            prop_assume!(!v.is_empty());
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::new(&[1, 1, v.len()], v.clone()).unwrap());
            let (e, o) = g.split(x).unwrap();
            prop_assert_eq!(interleave(g.value(e).data(), g.value(o).data()), v);
        }

        #[test]
        fn argmax_shift_and_scale_invariant(row in prop::collection::vec(-100i32..100, 1..8), c in -50i32..50, e in -4i32..4) {
            // integer rows, integer shifts and power-of-two scales are exact
            let row: Vec<f64> = row.into_iter().map(f64::from).collect();
            let k = row.len();
            let t = Tensor::new(&[1, k], row.clone()).unwrap();
            let shifted = Tensor::new(&[1, k], row.iter().map(|v| v + c as f64).collect()).unwrap();
            let scaled = Tensor::new(&[1, k], row.iter().map(|v| v * 2f64.powi(e)).collect()).unwrap();
            let a = argmax_rows(&t);
            prop_assert_eq!(&a, &argmax_rows(&scaled));
            prop_assert_eq!(&a, &argmax_rows(&shifted));
        }
    }

    #[test]
    fn argmax_examples() {
        let t = Tensor::new(&[2, 3], vec![0.1, 2.0, -1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }

    fn learned(g: &mut Graph<f64>, c: usize, k: usize, seed: u64) -> LearnedOperator {
        LearnedOperator {
            dw_weight: g.param(random(&[c, k], seed)),
            dw_bias: g.param(random(&[c], seed + 1)),
            pw_weight: g.param(random(&[c, c], seed + 2)),
            pw_bias: g.param(random(&[c], seed + 3)),
        }
    }

    #[test]
    fn operator_shapes_and_zero_weights() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(random(&[2, 64, 64], 1));
        let op = learned(&mut g, 64, 5, 2);
        let y = op.apply(&mut g, x).unwrap();
        assert_eq!(g.shape(y), &[2, 64, 64]);

        let zero = LearnedOperator {
            dw_weight: g.constant(Tensor::zeros(&[64, 5])),
            dw_bias: g.constant(Tensor::zeros(&[64])),
            pw_weight: g.constant(Tensor::zeros(&[64, 64])),
            pw_bias: g.constant(Tensor::zeros(&[64])),
        };
        let y = zero.apply(&mut g, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x = g.constant(random(&[1, 64, 128], 3));
        let (h, l) = lifting_level(&mut g, x, &zero, &zero).unwrap();
        assert_eq!(g.shape(h), &[1, 64, 64]);
        let xv = g.value(x).data().to_vec();
        let odd: Vec<f64> = xv.iter().skip(1).step_by(2).copied().collect();
        let even: Vec<f64> = xv.iter().step_by(2).copied().collect();
        assert_eq!(g.value(h).data(), odd.as_slice());
        assert_eq!(g.value(l).data(), even.as_slice());

        let short = g.constant(random(&[1, 64, 1], 4));
        assert!(op.apply(&mut g, short).is_err());
    }

    #[test]
    fn single_channel_operator_by_hand() {
        // x = [1, -2, 3, 0.5], reflect pad 2: [3, -2, 1, -2, 3, 0.5, 3, -2]
        let x = [1.0, -2.0, 3.0, 0.5];
        let padded = [3.0, -2.0, 1.0, -2.0, 3.0, 0.5, 3.0, -2.0];
        let w = [0.2, -0.1, 0.5, 0.3, -0.4];
        let (b, pw, pb) = (0.05, -1.5, 0.25);
        let expect: Vec<f64> = (0..4)
            .map(|i| {
                let s: f64 = (0..5).map(|k| w[k] * padded[i + k]).sum::<f64>() + b;
                pw * s.max(0.0) + pb
            })
            .collect();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new(&[1, 1, 4], x.to_vec()).unwrap());
        let op = LearnedOperator {
            dw_weight: g.constant(Tensor::new(&[1, 5], w.to_vec()).unwrap()),
            dw_bias: g.constant(Tensor::new(&[1], vec![b]).unwrap()),
            pw_weight: g.constant(Tensor::new(&[1, 1], vec![pw]).unwrap()),
            pw_bias: g.constant(Tensor::new(&[1], vec![pb]).unwrap()),
        };
        let y = op.apply(&mut g, xv).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_examples() {
        let (d, c) = haar_lifting(&Tensor::new(&[1, 1, 2], vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!((d.data(), c.data()), (&[2.0][..], &[2.0][..]));
        let (d, c) = haar_lifting(&Tensor::new(&[1, 1, 4], vec![5.0, 5.0, 7.0, 7.0]).unwrap()).unwrap();
        assert_eq!((d.data(), c.data()), (&[0.0, 0.0][..], &[5.0, 7.0][..]));
        assert!(haar_lifting(&Tensor::<f64>::zeros(&[1, 1, 3])).is_err());
        let r = random(&[2, 3, 32], 7);
        let (_, c) = haar_lifting(&r).unwrap();
        assert!((c.sum() / c.len() as f64 - r.sum() / r.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn split_then_interleave_is_identity() {
        let mut g = Graph::<f64>::new();
        let r = random(&[2, 3, 10], 5);
        let x = g.constant(r.clone());
        let (e, o) = g.split(x).unwrap();
        let back = super::interleave(g.value(e), g.value(o)).unwrap();
        assert_eq!(back, r);
        assert!(super::interleave(&Tensor::<f64>::zeros(&[1, 1, 2]), &Tensor::zeros(&[1, 1, 3])).is_err());
    }

    #[test]
    fn frozen_haar_operators_match_reference() {
        let mut g = Graph::<f64>::new();
        let r = random(&[4, 3, 16], 11);
        let x = g.constant(r.clone());
        let (h, l) = lifting_level(&mut g, x, &Scaled(1.0), &Scaled(0.5)).unwrap();
        let (d, c) = haar_lifting(&r).unwrap();
        assert!(g.value(h).max_abs_diff(&d) < 1e-12);
        assert!(g.value(l).max_abs_diff(&c) < 1e-12);
    }

    fn small_model(levels: usize, len: usize, classes: usize, seed: u64) -> Model<f64> {
        let mut cfg = ModelConfig::new(len, levels, classes);
        cfg.channels = 8;
        Model::init(cfg, seed).unwrap()
    }

    #[test]
    fn forward_shapes() {
        let model: Model<f32> = Model::init(ModelConfig::new(128, 1, 4), 1).unwrap();
        let mut g = Graph::new();
        let p = BoundParams::frozen(&mut g, &model.params);
        let x = g.constant(random(&[2, 1, 2, 128], 1).cast());
        let t = forward(&mut g, &model.config, &p, x).unwrap();
        assert_eq!(g.shape(t.logits.unwrap()), &[2, 4]);
        assert_eq!(g.shape(t.highs[0]), &[2, 64, 64]);
        assert_eq!(g.shape(t.lows[0]), &[2, 64, 64]);
        assert_eq!(g.shape(t.features), &[2, 128]);
        assert_eq!(g.shape(t.stem), &[2, 64, 128]);

        let mut cfg = ModelConfig::new(1024, 3, 4);
        cfg.channels = 64;
        let model: Model<f32> = Model::init(cfg, 1).unwrap();
        let e = model.embed(&random(&[1, 1, 2, 1024], 2).cast()).unwrap();
        assert_eq!(e.shape(), &[1, 256]);

        let wrong = random(&[1, 1, 2, 64], 2).cast();
        assert!(model.embed(&wrong).is_err());
    }

    #[test]
    fn feature_is_gap_concat_in_declared_order() {
        let model = small_model(2, 32, 3, 5);
        let mut g = Graph::new();
        let p = BoundParams::frozen(&mut g, &model.params);
        let x = g.constant(random(&[2, 1, 2, 32], 4));
        let t = forward(&mut g, &model.config, &p, x).unwrap();
        let c = model.config.channels;
        let feat = g.value(t.features).data().to_vec();
        let order = [t.lows[1], t.highs[0], t.highs[1]];
        for n in 0..2 {
            for (part, &v) in order.iter().enumerate() {
                let len = g.shape(v)[2];
                for ch in 0..c {
                    let row = &g.value(v).data()[(n * c + ch) * len..(n * c + ch + 1) * len];
                    let mean = row.iter().sum::<f64>() / len as f64;
                    assert!((feat[n * 3 * c + part * c + ch] - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_frames_give_identical_rows() {
        let model = small_model(1, 32, 3, 5);
        let one = random(&[1, 1, 2, 32], 8);
        let two = Tensor::new(&[2, 1, 2, 32], [one.data(), one.data()].concat()).unwrap();
        let l = model.logits(&two).unwrap();
        assert_eq!(l.data()[..3], l.data()[3..]);
    }

    #[test]
    fn zero_lambdas_give_plain_cross_entropy() {
        let model = small_model(1, 32, 3, 5);
        let mut g = Graph::new();
        let p = BoundParams::trainable(&mut g, &model.params);
        let x = g.constant(random(&[3, 1, 2, 32], 4));
        let t = forward(&mut g, &model.config, &p, x).unwrap();
        let loss = composite_loss(&mut g, &t, &[0, 1, 2], 0.0, 0.0).unwrap();
        let ce = g.cross_entropy_logits(t.logits.unwrap(), &[0, 1, 2]).unwrap();
        assert_eq!(g.value(loss).item(), g.value(ce).item());
    }

    #[test]
    fn regularizer_properties() {
        let mut g = Graph::<f64>::new();
        let stem = g.constant(random(&[2, 3, 16], 1));
        let zero_h = g.constant(Tensor::zeros(&[2, 3, 8]));
        let low = g.constant(random(&[2, 3, 8], 2));
        let (rh, _) = regularizer_terms(&mut g, RegForm::Mean, stem, &[zero_h], &[low]).unwrap();
        assert_eq!(g.value(rh[0]).item(), 0.0);

        let h = random(&[2, 3, 8], 3);
        let alpha = 3.7;
        let scaled = Tensor::new(h.shape(), h.data().iter().map(|v| v * alpha).collect()).unwrap();
        for form in [RegForm::Mean, RegForm::Norm] {
            let hv = g.constant(h.clone());
            let sv = g.constant(scaled.clone());
            let (a, _) = regularizer_terms(&mut g, form, stem, &[hv], &[low]).unwrap();
            let (b, _) = regularizer_terms(&mut g, form, stem, &[sv], &[low]).unwrap();
            let (a, b) = (g.value(a[0]).item(), g.value(b[0]).item());
            assert!((b - alpha * a).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        for form in [RegForm::Mean, RegForm::Norm] {
            let mut model = small_model(2, 32, 3, 6);
            model.config.reg_form = form;
            let mut g = Graph::new();
            let p = BoundParams::trainable(&mut g, &model.params);
            let x = g.constant(random(&[4, 1, 2, 32], 4));
            let t = forward(&mut g, &model.config, &p, x).unwrap();
            let loss = composite_loss(&mut g, &t, &[0, 1, 2, 1], 0.01, 0.01).unwrap();
            g.backward(loss).unwrap();
            for (name, &v) in model.params.names().iter().zip(&p.0) {
                let grad = g.grad(v).unwrap();
                assert!(grad.data().iter().any(|&x| x != 0.0), "{form:?}: {name} has zero gradient");
            }
        }
    }
}

#[cfg(test)]
mod reference_tests {
    use crate::reference::{self, RefConfig};
    use super::*;
    use crate::signal::stream_rng;
    use rand::Rng;

    fn ref_config(cfg: &ModelConfig) -> RefConfig {
        RefConfig {
            len: cfg.input_len,
            levels: cfg.levels,
            channels: cfg.channels,
            stem_k: cfg.stem_kernel,
            stem_dw_k: cfg.stem_dw_kernel,
            pu_k: cfg.pu_kernel,
            classes: cfg.num_classes,
        }
    }

    fn frames(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| (0..2 * len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn toy_composite_loss_matches_scalar_reference() {
        let mut cfg = ModelConfig::new(16, 1, 3);
        cfg.channels = 1;
        cfg.normalize_input = false;
        let model: Model<f64> = Model::init(cfg.clone(), 21).unwrap();
        let p: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| t.data().to_vec()).collect();
        let xs = frames(1, 16, 3);
        let (l1, l2) = (0.3, 0.7);
        let expect = reference::composite_loss(&ref_config(&cfg), &p, &xs, &[2], l1, l2);

        let mut g = Graph::new();
        let bp = BoundParams::trainable(&mut g, &model.params);
        let x = g.constant(Tensor::new(&[1, 1, 2, 16], xs[0].clone()).unwrap());
        let t = forward(&mut g, &cfg, &bp, x).unwrap();
        let loss = composite_loss(&mut g, &t, &[2], l1, l2).unwrap();
        assert!((g.value(loss).item() - expect).abs() < 1e-12, "{} vs {expect}", g.value(loss).item());
    }

    #[test]
    fn batched_forward_matches_scalar_reference() {
        let mut cfg = ModelConfig::new(32, 2, 4);
        cfg.channels = 6;
        let model: Model<f64> = Model::init(cfg.clone(), 5).unwrap();
        let p: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| t.data().to_vec()).collect();
        let xs = frames(3, 32, 8);
        let x = Tensor::new(&[3, 1, 2, 32], xs.concat()).unwrap();
        let logits = model.logits(&x).unwrap();
        let rc = ref_config(&cfg);
        for (n, frame) in xs.iter().enumerate() {
            let mut macs = 0;
            let r = reference::forward(&rc, &p, frame, &mut macs);
            for (a, b) in logits.data()[n * 4..(n + 1) * 4].iter().zip(&r.logits) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        let xs = frames(2, 32, 9);
        let two = Tensor::new(&[2, 1, 2, 32], xs.concat()).unwrap();
        let l = model.logits(&two).unwrap();
        let ls = (model.logits(&Tensor::new(&[1, 1, 2, 32], xs[1].clone()).unwrap())).unwrap();
        assert!(l.data()[4..].iter().zip(ls.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
