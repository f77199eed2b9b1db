use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ModulationScheme;

/// Form of the wavelet regularizers added to the classification loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegForm {
    /// `λ1·mean|H_k| + λ2·|mean(L_k) − mean(F_{k−1})|` summed over levels.
    #[default]
    Mean,
    /// `λ1·Σ|H_k|` plus `λ2·‖L_k − L_{k+1}‖₂` between consecutive levels,
    /// both per frame.
    Norm,
}

/// Architecture hyperparameters. Parameter shapes depend on nothing else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub levels: usize,
    pub channels: usize,
    pub stem_kernel: usize,
    pub stem_dw_kernel: usize,
    pub pu_kernel: usize,
    /// Classifier outputs; zero builds an encoder without a head.
    pub num_classes: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub reg_form: RegForm,
    /// Scale each frame to unit power before the stem.
    pub normalize_input: bool,
    /// Scheme of each class index for a classifier, or the meta-training
    /// classes for an encoder.
    #[serde(default)]
    pub classes: Vec<ModulationScheme>,
}

impl ModelConfig {
    pub fn new(input_len: usize, levels: usize, num_classes: usize) -> Self {
        Self {
            input_len,
            levels,
            channels: 64,
            stem_kernel: 7,
            stem_dw_kernel: 5,
            pu_kernel: 5,
            num_classes,
            lambda1: 0.01,
            lambda2: 0.01,
            reg_form: RegForm::Mean,
            normalize_input: true,
            classes: Vec::new(),
        }
    }

    /// One level for short (128-sample) frames, three for long ones.
    pub fn default_levels(input_len: usize) -> usize {
        if input_len <= 256 {
            1
        } else {
            3
        }
    }

    /// Width of the fused feature vector.
    pub fn feature_len(&self) -> usize {
        self.channels * (self.levels + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 {
            return fail("channels must be at least 1".into());
        }
        if self.input_len == 0 {
            return fail("input length must be positive".into());
        }
        if self.levels >= usize::BITS as usize || !self.input_len.is_multiple_of(1 << self.levels) {
            return fail(format!(
                "input length {} is not divisible by 2^{}",
                self.input_len, self.levels
            ));
        }
        if self.levels > 0 && self.input_len >> self.levels < 2 {
            return fail(format!(
                "{} levels leave fewer than 2 samples of {}",
                self.levels, self.input_len
            ));
        }
        for (name, k) in [
            ("stem kernel", self.stem_kernel),
            ("stem depthwise kernel", self.stem_dw_kernel),
            ("predict/update kernel", self.pu_kernel),
        ] {
            if k % 2 == 0 {
                return fail(format!("{name} {k} must be odd"));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.num_classes > 0 && !self.classes.is_empty() && self.classes.len() != self.num_classes {
            return fail(format!(
                "{} class names for {} outputs",
                self.classes.len(),
                self.num_classes
            ));
        }
        Ok(())
    }

    /// Canonical parameter names and shapes, in serialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let mut out = Vec::new();
        let mut layer = |name: &str, w: Vec<usize>, bias: usize| {
            out.push((format!("{name}.weight"), w));
            out.push((format!("{name}.bias"), vec![bias]));
        };
        layer("stem.dw2d", vec![c, 2, self.stem_kernel], c);
        layer("stem.pw1", vec![c, c], c);
        layer("stem.dw1d", vec![c, self.stem_dw_kernel], c);
        layer("stem.pw2", vec![c, c], c);
        for j in 1..=self.levels {
            layer(&format!("level{j}.predict.dw"), vec![c, self.pu_kernel], c);
            layer(&format!("level{j}.predict.pw"), vec![c, c], c);
            layer(&format!("level{j}.update.dw"), vec![c, self.pu_kernel], c);
            layer(&format!("level{j}.update.pw"), vec![c, c], c);
        }
        if self.num_classes > 0 {
            layer("head.fc", vec![self.num_classes, self.feature_len()], self.num_classes);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::new(128, 1, 11).validate().is_ok());
        assert!(ModelConfig::new(1024, 3, 11).validate().is_ok());
        assert!(ModelConfig::new(128, 0, 11).validate().is_ok());
        assert!(ModelConfig::new(100, 3, 11).validate().is_err());
        assert!(ModelConfig::new(4, 2, 2).validate().is_err());
        let mut c = ModelConfig::new(128, 1, 4);
        c.channels = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(128, 1, 4);
        c.pu_kernel = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(128, 1, 4);
        c.lambda1 = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn feature_length_tracks_levels() {
        for m in 0..=4 {
            assert_eq!(ModelConfig::new(1024, m, 2).feature_len(), 64 * (m + 1));
        }
    }

    #[test]
    fn head_shapes() {
        let c = ModelConfig::new(128, 1, 11);
        let shapes = c.param_shapes();
        let (name, w) = &shapes[shapes.len() - 2];
        assert_eq!(name, "head.fc.weight");
        assert_eq!(w, &vec![11, 128]);
        assert_eq!(shapes.len(), 8 + 8 + 2);
        assert!(ModelConfig::new(128, 1, 0).param_shapes().iter().all(|(n, _)| !n.starts_with("head")));
    }
}
