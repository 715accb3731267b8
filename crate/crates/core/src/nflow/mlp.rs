use crate::synth::SynthRng;

/// Fully connected layer, `y = W x + b` with `W` stored row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn uniform(n_in: usize, n_out: usize, bound: f64, rng: &mut SynthRng) -> Self {
        let mut layer = Self::zeros(n_in, n_out);
        for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            *v = bound * (2.0 * rng.uniform() - 1.0);
        }
        layer
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn forward(&self, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(rows * self.n_out, 0.0);
        for r in 0..rows {
            let xi = &x[r * self.n_in..(r + 1) * self.n_in];
            let yo = &mut out[r * self.n_out..(r + 1) * self.n_out];
            for (o, y) in yo.iter_mut().enumerate() {
                let wr = &self.w[o * self.n_in..(o + 1) * self.n_in];
                *y = self.b[o] + wr.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

/// Two-hidden-layer ReLU perceptron.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
    /// Frozen networks are neither updated nor gradient-checked.
    pub frozen: bool,
}

/// Layer inputs kept for the backward pass: `acts[0]` is the network input,
/// `acts[l]` the post-ReLU output of hidden layer `l`.
#[derive(Debug, Clone, Default)]
pub(crate) struct MlpTape {
    pub acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Hidden layers use fan-in scaled uniform init; the output layer starts at zero.
    pub fn new(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut SynthRng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = n_in;
        for &h in hidden {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            layers.push(Dense::uniform(fan_in, h, bound, rng));
            fan_in = h;
        }
        layers.push(Dense::zeros(fan_in, n_out));
        Self { layers, frozen: false }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn output_layer_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().expect("at least one layer")
    }

    /// Parameters in layer order, weights before biases.
    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
    }

    /// Batch forward; records activations into `tape` when given.
    pub fn forward(&self, x: &[f64], rows: usize, tape: Option<&mut MlpTape>, signs: Option<&mut Vec<bool>>) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        let mut acts = Vec::new();
        let mut signs = signs;
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, rows, &mut next);
            if l < last {
                for v in next.iter_mut() {
                    if let Some(s) = signs.as_deref_mut() {
                        s.push(*v > 0.0);
                    }
                    *v = v.max(0.0);
                }
            }
            let prev = std::mem::replace(&mut cur, std::mem::take(&mut next));
            if tape.is_some() {
                acts.push(prev);
            }
        }
        if let Some(t) = tape {
            t.acts = acts;
        }
        cur
    }

    /// Accumulates parameter gradients into `grad` (same layout as
    /// [`Mlp::param_slices`]) unless frozen, and returns the input gradient.
    pub fn backward(&self, tape: &MlpTape, d_out: &[f64], rows: usize, grad: &mut [f64]) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.n_params();
        }
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &tape.acts[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            if !self.frozen {
                let (gw, gb) = grad[offsets[l]..offsets[l] + layer.n_params()].split_at_mut(n_in * n_out);
                for r in 0..rows {
                    let dr = &delta[r * n_out..(r + 1) * n_out];
                    let xr = &input[r * n_in..(r + 1) * n_in];
                    for (o, &g) in dr.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        for (gw, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                            *gw += g * x;
                        }
                    }
                }
            }
            let mut d_in = vec![0.0; rows * n_in];
            for r in 0..rows {
                let dr = &delta[r * n_out..(r + 1) * n_out];
                let di = &mut d_in[r * n_in..(r + 1) * n_in];
                for (o, &g) in dr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (d, w) in di.iter_mut().zip(&layer.w[o * n_in..(o + 1) * n_in]) {
                        *d += g * w;
                    }
                }
            }
            if l > 0 {
                // ReLU derivative, read off the stored post-activation.
                for (d, a) in d_in.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = d_in;
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_layer_starts_at_zero() {
        let mut rng = SynthRng::new(1);
        let m = Mlp::new(3, &[8, 8], 2, &mut rng);
        let y = m.forward(&[1.0, -2.0, 0.5, 0.1, 0.2, 0.3], 2, None, None);
        assert_eq!(y, vec![0.0; 4]);
        assert_eq!(m.n_params(), 3 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SynthRng::new(2);
        let mut m = Mlp::new(2, &[5, 4], 3, &mut rng);
        for v in m.output_layer_mut().w.iter_mut() {
            *v = rng.normal();
        }
        let x = [0.3, -0.7, 1.1, 0.4];
        // Loss = Σ outputs · c.
        let c = [0.5, -1.0, 2.0, 0.1, 0.3, -0.2];
        let loss = |m: &Mlp, x: &[f64]| -> f64 { m.forward(x, 2, None, None).iter().zip(&c).map(|(a, b)| a * b).sum() };
        let mut tape = MlpTape::default();
        m.forward(&x, 2, Some(&mut tape), None);
        let mut grad = vec![0.0; m.n_params()];
        let dx = m.backward(&tape, &c, 2, &mut grad);
        let h = 1e-6;
        for i in 0..4 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&m, &xp) - loss(&m, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6, "{fd} vs {}", dx[i]);
        }
        let mut idx = 0;
        for li in 0..m.layers.len() {
            for which in 0..2 {
                let len = if which == 0 { m.layers[li].w.len() } else { m.layers[li].b.len() };
                for p in 0..len {
                    let mut mp = m.clone();
                    let mut mm = m.clone();
                    if which == 0 {
                        mp.layers[li].w[p] += h;
                        mm.layers[li].w[p] -= h;
                    } else {
                        mp.layers[li].b[p] += h;
                        mm.layers[li].b[p] -= h;
                    }
                    let fd = (loss(&mp, &x) - loss(&mm, &x)) / (2.0 * h);
                    assert!((fd - grad[idx]).abs() < 1e-6);
                    idx += 1;
                }
            }
        }
    }
}
