use crate::tensor::{Element, Tensor};

/// Adam with bias correction: `θ ← θ − α·m̂/(√v̂ + ε)`.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(shapes: &[&[usize]], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_tensors(params: &[Tensor<T>], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
        Self::new(&shapes, lr, beta1, beta2, eps)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[&Tensor<T>]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((pv, &gv), mv), vv) in it {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Element>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}
