use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;

/// Per-frame cost of one layer. FLOPs count 2 per MAC plus 1 per
/// activation or pooled element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub maccs: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub rows: Vec<LayerCost>,
    pub params: u64,
    pub maccs: u64,
    pub flops: u64,
}

pub const FLOPS_CONVENTION: &str = "FLOPs = 2 x MACC + 1 per ReLU output + 1 per pooled element; per frame";

/// Analytic counts for one frame.
pub fn count_complexity(cfg: &ModelConfig) -> ComplexityReport {
    let c = cfg.channels as u64;
    let len = cfg.input_len as u64;
    let mut rows = Vec::new();
    let mut row = |name: String, params: u64, maccs: u64, extra: u64| {
        rows.push(LayerCost { name, params, maccs, flops: 2 * maccs + extra });
    };
    let ks = cfg.stem_kernel as u64;
    row("stem.dw2d".into(), c * 2 * ks + c, c * 2 * ks * len, 0);
    row("stem.pw1".into(), c * c + c, c * c * len, c * len);
    let kd = cfg.stem_dw_kernel as u64;
    row("stem.dw1d".into(), c * kd + c, c * kd * len, 0);
    row("stem.pw2".into(), c * c + c, c * c * len, c * len);
    let k = cfg.pu_kernel as u64;
    let mut pooled = 0;
    for j in 1..=cfg.levels {
        let t = len >> j;
        for op in ["predict", "update"] {
            row(format!("level{j}.{op}.dw"), c * k + c, c * k * t, c * t);
            row(format!("level{j}.{op}.pw"), c * c + c, c * c * t, 0);
        }
        pooled += c * t;
    }
    pooled += c * (len >> cfg.levels);
    row("gap".into(), 0, 0, pooled);
    if cfg.num_classes > 0 {
        let d = cfg.feature_len() as u64;
        let kc = cfg.num_classes as u64;
        row("head.fc".into(), d * kc + kc, d * kc, 0);
    }
    let params = rows.iter().map(|r| r.params).sum();
    let maccs = rows.iter().map(|r| r.maccs).sum();
    let flops = rows.iter().map(|r| r.flops).sum();
    ComplexityReport { rows, params, maccs, flops }
}

impl ComplexityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,maccs,flops\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.params, r.maccs, r.flops);
        }
        let _ = writeln!(s, "total,{},{},{}", self.params, self.maccs, self.flops);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("# {FLOPS_CONVENTION}\n");
        let _ = writeln!(s, "{:<20} {:>12} {:>14} {:>14}", "layer", "params", "MACC", "FLOPs");
        for r in &self.rows {
            let _ = writeln!(s, "{:<20} {:>12} {:>14} {:>14}", r.name, r.params, r.maccs, r.flops);
        }
        let _ = writeln!(s, "{:<20} {:>12} {:>14} {:>14}", "total", self.params, self.maccs, self.flops);
        let _ = writeln!(
            s,
            "# {:.3}K params, {:.3}M MACC, {:.3}M FLOPs",
            self.params as f64 / 1e3,
            self.maccs as f64 / 1e6,
            self.flops as f64 / 1e6
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelParams};
    use crate::reference;

    #[test]
    fn layer_examples() {
        let cfg = ModelConfig::new(128, 1, 11);
        let r = count_complexity(&cfg);
        let pw1 = r.rows.iter().find(|r| r.name == "stem.pw1").unwrap();
        assert_eq!(pw1.maccs, 524_288);
        let fc = r.rows.iter().find(|r| r.name == "head.fc").unwrap();
        assert_eq!((fc.maccs, fc.params), (1408, 1419));
        assert_eq!(r.params, r.rows.iter().map(|r| r.params).sum::<u64>());
    }

    #[test]
    fn params_match_enumeration() {
        for (len, m, k) in [(128, 1, 11), (1024, 3, 24), (64, 0, 4), (256, 2, 0)] {
            let cfg = ModelConfig::new(len, m, k);
            let p: ModelParams<f32> = ModelParams::init(&cfg, 0).unwrap();
            assert_eq!(count_complexity(&cfg).params as usize, p.scalar_count());
        }
    }

    #[test]
    fn maccs_match_instrumented_forward() {
        for (len, m, k, c) in [(128, 1, 11, 64), (64, 2, 3, 5), (32, 0, 2, 3), (256, 3, 4, 4)] {
            let mut cfg = ModelConfig::new(len, m, k);
            cfg.channels = c;
            let model: Model<f64> = Model::init(cfg.clone(), 1).unwrap();
            let p: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| t.data().to_vec()).collect();
            let rc = reference::RefConfig {
                len,
                levels: m,
                channels: c,
                stem_k: cfg.stem_kernel,
                stem_dw_k: cfg.stem_dw_kernel,
                pu_k: cfg.pu_kernel,
                classes: k,
            };
            let x: Vec<f64> = (0..2 * len).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut macs = 0;
            reference::forward(&rc, &p, &x, &mut macs);
            assert_eq!(count_complexity(&cfg).maccs, macs, "{len}/{m}/{k}/{c}");
        }
    }
}
