use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Output nonlinearity of the last layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Sigmoid,
    Identity,
}

/// Fully connected network with ReLU hidden layers. `weights[i]` has shape
/// `(fan_in, fan_out)` so a batch is one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub head: Head,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl MlpCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Last-layer init range; keeps initial outputs near the head's midpoint.
const FINAL_INIT: f64 = 3e-3;

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Hidden layers drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the last
    /// layer from `U(-3e-3, 3e-3)`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], head: Head, rng: &mut R) -> Self {
        assert!(
            widths.len() >= 2 && widths.iter().all(|&w| w > 0),
            "bad widths {widths:?}"
        );
        let n = widths.len() - 1;
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for (i, pair) in widths.windows(2).enumerate() {
            let bound = if i + 1 == n {
                FINAL_INIT
            } else {
                1.0 / (pair[0] as f64).sqrt()
            };
            weights.push(Array2::from_shape_simple_fn((pair[0], pair[1]), || {
                rng.random_range(-bound..=bound)
            }));
            biases.push(Array1::from_shape_simple_fn(pair[1], || {
                rng.random_range(-bound..=bound)
            }));
        }
        Mlp { weights, biases, head }
    }

    pub fn zeros(widths: &[usize], head: Head) -> Self {
        Mlp {
            weights: widths.windows(2).map(|p| Array2::zeros((p[0], p[1]))).collect(),
            biases: widths.windows(2).map(|p| Array1::zeros(p[1])).collect(),
            head,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.weights.iter().map(|m| m.nrows()).collect();
        w.push(self.output_dim());
        w
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |m| m.ncols())
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network takes {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn apply_head(&self, z: &mut Array2<f64>) {
        if self.head == Head::Sigmoid {
            z.mapv_inplace(sigmoid);
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.weights.len() - 1;
        let mut h = x.dot(&self.weights[0]) + &self.biases[0];
        for i in 1..=last {
            h.mapv_inplace(|v| v.max(0.0));
            h = h.dot(&self.weights[i]) + &self.biases[i];
        }
        self.apply_head(&mut h);
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut h = x.to_owned();
        for i in 0..self.weights.len() {
            let z = h.dot(&self.weights[i]) + &self.biases[i];
            inputs.push(h);
            h = z;
            if i + 1 < self.weights.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        self.apply_head(&mut h);
        Ok(MlpCache { inputs, output: h })
    }

    /// Gradients of `sum(upstream * output)` with respect to the parameters
    /// and to the input batch.
    pub fn backward(&self, cache: &MlpCache, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if upstream.dim() != cache.output.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.output.dim()
            )));
        }
        let mut g = match self.head {
            Head::Sigmoid => &upstream * &cache.output.mapv(|y| y * (1.0 - y)),
            Head::Identity => upstream.to_owned(),
        };
        let n = self.weights.len();
        let mut dw = vec![Array2::zeros((0, 0)); n];
        let mut db = vec![Array1::zeros(0); n];
        for i in (0..n).rev() {
            dw[i] = standard(cache.inputs[i].t().dot(&g));
            db[i] = g.sum_axis(Axis(0));
            let mut dx = g.dot(&self.weights[i].t());
            if i > 0 {
                // the cached input of layer i is the ReLU output of layer i-1
                ndarray::Zip::from(&mut dx).and(&cache.inputs[i]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            g = dx;
        }
        Ok((
            MlpGrads {
                weights: dw,
                biases: db,
            },
            g,
        ))
    }

    /// `self <- tau * src + (1 - tau) * self`.
    pub fn polyak_from(&mut self, src: &Mlp, tau: f64) {
        for (t, s) in self.weights.iter_mut().zip(&src.weights) {
            t.zip_mut_with(s, |t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
        for (t, s) in self.biases.iter_mut().zip(&src.biases) {
            t.zip_mut_with(s, |t, &s| *t = tau * s + (1.0 - tau) * *t);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Mutable parameter slices in a fixed order: weights then bias, per layer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

impl MlpGrads {
    /// Slices in the order of [`Mlp::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}
