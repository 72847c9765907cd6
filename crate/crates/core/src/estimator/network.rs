//! Small dense network with tanh hidden layers and per-output logistic loss.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `z` against target `y`, overflow free.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (i, o) = (w[0], w[1]);
                let a = (6.0 / (i + o) as f64).sqrt();
                let mut layer = Dense::zeros(i, o);
                layer.w.mapv_inplace(|_| rng.random_range(-a..a));
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    /// Output logits, one row per input row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        a
    }

    /// Mean BCE over every output of every row.
    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
        let z = self.forward(x);
        let n = z.len() as f64;
        z.iter().zip(y.iter()).map(|(&z, &y)| bce_with_logit(z, y)).sum::<f64>() / n
    }

    /// Mean BCE and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Vec<Dense>) {
        let last = self.layers.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.w);
            z += &layer.b;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        let logits = acts.last().unwrap();
        let n = logits.len() as f64;
        let loss = logits
            .iter()
            .zip(y.iter())
            .map(|(&z, &y)| bce_with_logit(z, y))
            .sum::<f64>()
            / n;

        let mut delta = logits.clone();
        ndarray::Zip::from(&mut delta)
            .and(&y)
            .for_each(|d, &t| *d = (sigmoid(*d) - t) / n);
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = acts[k].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].w.t());
                ndarray::Zip::from(&mut back)
                    .and(&acts[k])
                    .for_each(|g, &a| *g *= 1.0 - a * a);
                delta = back;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn sgd_step(&mut self, grads: &[Dense], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.w.scaled_add(-lr, &g.w);
            layer.b.scaled_add(-lr, &g.b);
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters as `w_0, b_0, w_1, b_1, ...`, weights row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn from_flat(sizes: &[usize], params: &[f64]) -> Option<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return None;
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (i, o) = (w[0], w[1]);
            let wn = i * o;
            let weights = params.get(offset..offset + wn)?.to_vec();
            offset += wn;
            let bias = params.get(offset..offset + o)?.to_vec();
            offset += o;
            layers.push(Dense {
                w: Array2::from_shape_vec((i, o), weights).ok()?,
                b: Array1::from_vec(bias),
            });
        }
        (offset == params.len()).then_some(Self { layers })
    }

    pub fn flatten_grads(grads: &[Dense]) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads {
            out.extend(g.w.iter());
            out.extend(g.b.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_matches_naive_formula() {
        for &z in &[-3.0, -2.0, 0.0, 0.7, 4.0] {
            for &y in &[0.0, 1.0, 0.3] {
                let p = sigmoid(z);
                let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                if naive.is_finite() {
                    assert!((bce_with_logit(z, y) - naive).abs() < 1e-9 * naive.max(1.0));
                }
            }
        }
        // far tails: -ln(sigmoid(-z)) ~ z + e^-z
        assert!((bce_with_logit(30.0, 0.0) - (30.0 + (-30.0f64).exp())).abs() < 1e-12);
        assert!((bce_with_logit(-30.0, 1.0) - 30.0).abs() < 1e-12);
        assert!(bce_with_logit(1000.0, 0.0).is_finite());
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 5, 3], &mut rng);
        let flat = net.flatten();
        assert_eq!(flat.len(), 4 * 5 + 5 + 5 * 3 + 3);
        assert_eq!(Mlp::from_flat(&net.sizes(), &flat).unwrap(), net);
        assert!(Mlp::from_flat(&net.sizes(), &flat[1..]).is_none());
    }

    #[test]
    fn gradient_step_reduces_loss_on_toy_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[3, 4, 4, 2], &mut rng);
        let x = ndarray::arr2(&[[0.5, -1.0, 0.2], [-0.3, 0.8, 1.0]]);
        let y = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let (before, grads) = net.loss_and_grad(x.view(), y.view());
        net.sgd_step(&grads, 0.05);
        let after = net.loss(x.view(), y.view());
        assert!(after < before, "{after} >= {before}");
        // first-order prediction of the decrease
        let g2: f64 = Mlp::flatten_grads(&grads).iter().map(|g| g * g).sum();
        assert!(((before - after) - 0.05 * g2).abs() < 0.05 * 0.05 * g2 * 10.0);
    }
}
