//! Finite-difference check of every model parameter's gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::model::{composite_loss, forward, BoundParams, Model, ModelConfig};
use crate::signal::stream_rng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub frames: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Flip the sign of every analytic gradient (a negative control).
    pub sabotage: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            frames: 3,
            seed: 0,
            lambda1: 0.01,
            lambda2: 0.01,
            sabotage: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.params {
            s.push_str(&format!("{:<28} {:>6} {:.3e}\n", p.name, p.elements, p.max_rel_error));
        }
        s.push_str(&format!(
            "max relative error {:.3e} (tolerance {:.1e}): {}\n",
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        ));
        s
    }
}

/// Four channels, 16 samples, one level, three classes.
pub fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(16, 1, 3);
    cfg.channels = 4;
    cfg
}

fn loss_and_grads(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize], opts: &GradcheckOptions) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut g = Graph::new();
    let p = BoundParams::trainable(&mut g, &model.params);
    let xv = g.constant(x.clone());
    let t = forward(&mut g, &model.config, &p, xv)?;
    let loss = composite_loss(&mut g, &t, labels, opts.lambda1, opts.lambda2)?;
    g.backward(loss)?;
    let grads = p.0.iter().map(|&v| g.grad(v).expect("param").clone()).collect();
    Ok((g.value(loss).item(), grads))
}

fn loss_only(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize], opts: &GradcheckOptions) -> Result<f64> {
    let mut g = Graph::new();
    let p = BoundParams::frozen(&mut g, &model.params);
    let xv = g.constant(x.clone());
    let t = forward(&mut g, &model.config, &p, xv)?;
    let loss = composite_loss(&mut g, &t, labels, opts.lambda1, opts.lambda2)?;
    Ok(g.value(loss).item())
}

/// Central differences against reverse-mode gradients in 64-bit.
pub fn gradcheck(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut model: Model<f64> = Model::init(cfg.clone(), opts.seed)?;
    let mut rng = stream_rng(opts.seed, 0x9c_0000);
    let len = cfg.input_len;
    let n = opts.frames.max(1);
    let x = Tensor::new(&[n, 1, 2, len], (0..n * 2 * len).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.num_classes.max(1)).collect();
    // random biases so no ReLU sits exactly at its kink
    for (name, t) in model.params.names().to_vec().iter().zip(model.params.tensors_mut()) {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    let (_, mut grads) = loss_and_grads(&model, &x, &labels, opts)?;
    if opts.sabotage {
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v = -*v);
        }
    }
    let h = opts.step;
    let mut params = Vec::new();
    for (pi, grad) in grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for e in 0..model.params.tensors()[pi].len() {
            let orig = model.params.tensors()[pi].data()[e];
            model.params.tensors_mut()[pi].data_mut()[e] = orig + h;
            let up = loss_only(&model, &x, &labels, opts)?;
            model.params.tensors_mut()[pi].data_mut()[e] = orig - h;
            let down = loss_only(&model, &x, &labels, opts)?;
            model.params.tensors_mut()[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad.data()[e];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        params.push(ParamCheck {
            name: model.params.names()[pi].clone(),
            elements: model.params.tensors()[pi].len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { params, max_rel_error, tolerance: opts.tolerance, passed: max_rel_error < opts.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_build_passes_and_lists_every_tensor() {
        let cfg = tiny_config();
        let r = gradcheck(&cfg, &GradcheckOptions::default()).unwrap();
        assert!(r.passed, "{}", r.to_text());
        let names: Vec<String> = cfg.param_shapes().into_iter().map(|(n, _)| n).collect();
        assert_eq!(r.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>(), names);
    }

    #[test]
    fn sabotaged_gradients_fail() {
        let opts = GradcheckOptions { sabotage: true, ..GradcheckOptions::default() };
        let r = gradcheck(&tiny_config(), &opts).unwrap();
        assert!(!r.passed);
        assert!(r.to_text().contains("FAIL"));
    }

    #[test]
    fn norm_form_passes() {
        let mut cfg = tiny_config();
        cfg.levels = 2;
        cfg.reg_form = crate::model::RegForm::Norm;
        let r = gradcheck(&cfg, &GradcheckOptions { lambda1: 0.1, lambda2: 0.1, ..GradcheckOptions::default() }).unwrap();
        assert!(r.passed, "{}", r.to_text());
    }
}
