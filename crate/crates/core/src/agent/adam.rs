use super::mlp::{Mlp, MlpGrads};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
    pub(crate) t: u64,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_mlp(net: &Mlp) -> Self {
        let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        Adam::new(&sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter tensor count changed");
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            assert_eq!(p.len(), g.len(), "gradient size mismatch");
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPSILON);
            }
        }
    }

    pub fn step_mlp(&mut self, net: &mut Mlp, grads: &MlpGrads, lr: f64) {
        let g = grads.slices();
        let mut p = net.param_slices_mut();
        self.step(&mut p, &g, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_on_square_descends() {
        let mut x = [1.0];
        let mut opt = Adam::new(&[1]);
        let g = [2.0 * x[0]];
        opt.step(&mut [&mut x[..]], &[&g[..]], 0.1);
        assert!(x[0] * x[0] < 1.0);
        // the first bias-corrected step has magnitude lr
        assert!((x[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn converges_to_quadratic_minimum() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2, minimum at (3, -1)
        let mut p = [0.0, 0.0];
        let mut opt = Adam::new(&[2]);
        for step in 0..5000 {
            let g = [2.0 * (p[0] - 3.0), 20.0 * (p[1] + 1.0)];
            let lr = if step < 3000 { 0.05 } else { 0.005 };
            opt.step(&mut [&mut p[..]], &[&g[..]], lr);
        }
        assert!((p[0] - 3.0).abs() < 1e-6 && (p[1] + 1.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = [0.5f64, -0.25];
            let mut opt = Adam::new(&[2]);
            for _ in 0..10 {
                let g = [p[0].sin(), p[1] * 3.0];
                opt.step(&mut [&mut p[..]], &[&g[..]], 0.01);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
