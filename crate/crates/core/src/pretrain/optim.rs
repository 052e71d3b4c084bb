use crate::encoder::Parameters;

/// Bias-corrected Adam with a constant learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Parameters,
    v: Parameters,
    t: i32,
}

impl Adam {
    pub fn new(params: &Parameters, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let g = grads.tensors();
        let p = params.tensors_mut();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        assert_eq!(
            g.len(),
            p.len(),
            "gradient structure differs from parameters"
        );
        for (((mut p, mut m), mut v), (_, g)) in p.into_iter().zip(m).zip(v).zip(g) {
            ndarray::Zip::from(&mut p)
                .and(&mut m)
                .and(&mut v)
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
