//! Naive scalar implementation of the network, written independently of the
//! graph engine. Counts every multiply-accumulate it performs.

#![allow(dead_code, clippy::needless_range_loop)]

pub struct RefConfig {
    pub len: usize,
    pub levels: usize,
    pub channels: usize,
    pub stem_k: usize,
    pub stem_dw_k: usize,
    pub pu_k: usize,
    pub classes: usize,
}

pub struct RefTrace {
    pub stem: Vec<Vec<f64>>,
    pub highs: Vec<Vec<Vec<f64>>>,
    pub lows: Vec<Vec<Vec<f64>>>,
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Channel-major map: `m[c][t]`.
type Map = Vec<Vec<f64>>;

fn pointwise(x: &Map, w: &[f64], b: &[f64], macs: &mut u64) -> Map {
    let co = b.len();
    let ci = x.len();
    let len = x[0].len();
    let mut out = vec![vec![0.0; len]; co];
    for o in 0..co {
        for t in 0..len {
            let mut s = b[o];
            for i in 0..ci {
                s += w[o * ci + i] * x[i][t];
                *macs += 1;
            }
            out[o][t] = s;
        }
    }
    out
}

fn sample(row: &[f64], i: isize, reflect: bool) -> f64 {
    let n = row.len() as isize;
    if i >= 0 && i < n {
        return row[i as usize];
    }
    if !reflect {
        return 0.0;
    }
    // mirror without repeating the edge, repeatedly
    let mut j = i;
    while j < 0 || j >= n {
        if j < 0 {
            j = -j;
        }
        if j >= n {
            j = 2 * (n - 1) - j;
        }
    }
    row[j as usize]
}

fn depthwise(x: &Map, w: &[f64], b: &[f64], k: usize, reflect: bool, macs: &mut u64) -> Map {
    let p = (k / 2) as isize;
    x.iter()
        .enumerate()
        .map(|(c, row)| {
            (0..row.len())
                .map(|t| {
                    let mut s = b[c];
                    for kk in 0..k {
                        s += w[c * k + kk] * sample(row, t as isize + kk as isize - p, reflect);
                        *macs += 1;
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn relu(x: &Map) -> Map {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

fn mean(x: &Map) -> f64 {
    let n: usize = x.iter().map(Vec::len).sum();
    x.iter().flatten().sum::<f64>() / n as f64
}

/// Forward for one frame `x = [I..., Q...]`.
pub fn forward(cfg: &RefConfig, p: &[Vec<f64>], x: &[f64], macs: &mut u64) -> RefTrace {
    let (c, len, k) = (cfg.channels, cfg.len, cfg.stem_k);
    let pad = (k / 2) as isize;
    let mut f = vec![vec![0.0; len]; c];
    for o in 0..c {
        for t in 0..len {
            let mut s = p[1][o];
            for h in 0..2 {
                let row = &x[h * len..(h + 1) * len];
                for kk in 0..k {
                    s += p[0][(o * 2 + h) * k + kk] * sample(row, t as isize + kk as isize - pad, false);
                    *macs += 1;
                }
            }
            f[o][t] = s;
        }
    }
    let f = relu(&pointwise(&f, &p[2], &p[3], macs));
    let f = depthwise(&f, &p[4], &p[5], cfg.stem_dw_k, false, macs);
    let stem = relu(&pointwise(&f, &p[6], &p[7], macs));

    let mut highs = Vec::new();
    let mut lows = Vec::new();
    let mut cur = stem.clone();
    for j in 0..cfg.levels {
        let b = 8 + 8 * j;
        let even: Map = cur.iter().map(|r| r.iter().step_by(2).copied().collect()).collect();
        let odd: Map = cur.iter().map(|r| r.iter().skip(1).step_by(2).copied().collect()).collect();
        let pe = depthwise(&even, &p[b], &p[b + 1], cfg.pu_k, true, macs);
        let pe = pointwise(&relu(&pe), &p[b + 2], &p[b + 3], macs);
        let h: Map = odd.iter().zip(&pe).map(|(o, q)| o.iter().zip(q).map(|(a, b)| a - b).collect()).collect();
        let uh = depthwise(&h, &p[b + 4], &p[b + 5], cfg.pu_k, true, macs);
        let uh = pointwise(&relu(&uh), &p[b + 6], &p[b + 7], macs);
        let l: Map = even.iter().zip(&uh).map(|(e, u)| e.iter().zip(u).map(|(a, b)| a + b).collect()).collect();
        highs.push(h);
        lows.push(l.clone());
        cur = l;
    }

    let gap = |m: &Map| m.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect::<Vec<_>>();
    let mut features = gap(&cur);
    for h in &highs {
        features.extend(gap(h));
    }
    let mut logits = Vec::new();
    if cfg.classes > 0 {
        let hb = 8 + 8 * cfg.levels;
        let d = features.len();
        for o in 0..cfg.classes {
            let mut s = p[hb + 1][o];
            for i in 0..d {
                s += p[hb][o * d + i] * features[i];
                *macs += 1;
            }
            logits.push(s);
        }
    }
    RefTrace { stem, highs, lows, features, logits }
}

/// Batch-mean composite loss: cross-entropy plus mean-based regularizers,
/// with means taken over all frames and elements.
pub fn composite_loss(cfg: &RefConfig, p: &[Vec<f64>], frames: &[Vec<f64>], labels: &[usize], l1: f64, l2: f64) -> f64 {
    let mut macs = 0;
    let traces: Vec<RefTrace> = frames.iter().map(|x| forward(cfg, p, x, &mut macs)).collect();
    let n = frames.len() as f64;
    let mut ce = 0.0;
    for (t, &y) in traces.iter().zip(labels) {
        let m = t.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + t.logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        ce += lse - t.logits[y];
    }
    let mut loss = ce / n;
    let batch_mean = |get: &dyn Fn(&RefTrace) -> f64| traces.iter().map(get).sum::<f64>() / n;
    for j in 0..cfg.levels {
        let abs_h = batch_mean(&|t: &RefTrace| {
            let h = &t.highs[j];
            h.iter().flatten().map(|v| v.abs()).sum::<f64>() / h.iter().map(Vec::len).sum::<usize>() as f64
        });
        let ml = batch_mean(&|t: &RefTrace| mean(&t.lows[j]));
        let mf = batch_mean(&|t: &RefTrace| if j == 0 { mean(&t.stem) } else { mean(&t.lows[j - 1]) });
        loss += l1 * abs_h + l2 * (ml - mf).abs();
    }
    loss
}
