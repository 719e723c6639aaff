//! Dense tanh networks with hand-written backprop.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs × inputs`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Multi-layer perceptron: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations kept from a forward pass: `acts[0]` is the input,
/// `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has the input at least")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grad {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Grad {
    pub fn norm(&self) -> f64 {
        self.w
            .iter()
            .chain(self.b.iter())
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            for x in v.iter_mut() {
                *x *= k;
            }
        }
    }

    /// Rescale so the global norm is at most `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. With `zero_output` the last layer
    /// starts at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], zero_output: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (i, o) = (sizes[l], sizes[l + 1]);
                let w = if zero_output && l == n - 1 {
                    vec![0.0; i * o]
                } else {
                    let a = (6.0 / (i + o) as f64).sqrt();
                    (0..i * o).map(|_| rng.random_range(-a..a)).collect()
                };
                Layer {
                    inputs: i,
                    outputs: o,
                    w,
                    b: vec![0.0; o],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            a = affine(layer, &a);
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        a
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, acts.last().expect("pushed"));
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        Trace { acts }
    }

    pub fn zero_grad(&self) -> Grad {
        Grad {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// Accumulate `d(out · grad_out)/dθ` into `grad`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad: &mut Grad) {
        let mut delta = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.acts[l];
            let (gw, gb) = (&mut grad.w[l], &mut grad.b[l]);
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            // through the tanh that produced this layer's input
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// `θ += step · grad`.
    pub fn apply(&mut self, grad: &Grad, step: f64) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (p, g) in layer.w.iter_mut().zip(&grad.w[l]) {
                *p += step * g;
            }
            for (p, g) in layer.b.iter_mut().zip(&grad.b[l]) {
                *p += step * g;
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|x| x.is_finite()))
    }
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), layer.inputs);
    (0..layer.outputs)
        .map(|o| {
            let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
            layer.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[3, 5, 4, 2], false, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let g_out = [0.6, -1.3];
        let f = |n: &Mlp| n.forward(&x).iter().zip(&g_out).map(|(a, b)| a * b).sum::<f64>();
        let mut g = net.zero_grad();
        net.backward(&net.forward_trace(&x), &g_out, &mut g);
        let analytic = g.flat();
        let base = net.params();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += 1e-6;
            net.set_params(&p);
            let up = f(&net);
            p[i] -= 2e-6;
            net.set_params(&p);
            let down = f(&net);
            let numeric = (up - down) / 2e-6;
            assert!((numeric - analytic[i]).abs() < 1e-7, "{i}: {numeric} vs {}", analytic[i]);
        }
    }

    #[test]
    fn zero_output_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[4, 8, 3], true, &mut rng);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0]), vec![0.0; 3]);
        assert_eq!(net.sizes(), vec![4, 8, 3]);
        assert_eq!(net.num_params(), 4 * 8 + 8 + 8 * 3 + 3);
    }
}
