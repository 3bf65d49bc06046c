use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Dense layer. Weights are stored input-major: the weight from input `i`
/// to output `o` is `weights[i * outputs + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Outgoing weights of input `i`.
    fn column(&self, i: usize) -> &[f64] {
        &self.weights[i * self.outputs..(i + 1) * self.outputs]
    }

    fn weight(&self, i: usize, o: usize) -> f64 {
        self.weights[i * self.outputs + o]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>, rectify: bool) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(out, self.column(i), xi);
            }
        }
        if rectify {
            out.iter_mut().for_each(|z| *z = z.max(0.0));
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feed-forward Q-network: input, two rectified hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: [Dense; 3],
}

/// Gradient of the loss with respect to every parameter of a [`QNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: [Dense; 3],
}

impl Gradients {
    /// Flattened in the same order as [`QNetwork::params`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[Dense; 3]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

impl QNetwork {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(input, hidden),
                Dense::zeros(hidden, hidden),
                Dense::zeros(hidden, output),
            ],
        }
    }

    /// He-uniform hidden weights, small uniform output weights, zero biases.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let bound = if i < 2 {
                (6.0 / layer.inputs.max(1) as f64).sqrt()
            } else {
                (1.0 / layer.inputs.max(1) as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].outputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn layers(&self) -> &[Dense; 3] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *p = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: state.len(),
            });
        }
        Ok(())
    }

    /// Q-values for every action.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.check_input(state)?;
        let mut h1 = Vec::with_capacity(self.hidden_dim());
        let mut h2 = Vec::with_capacity(self.hidden_dim());
        let mut q = Vec::with_capacity(self.output_dim());
        self.layers[0].apply(state, &mut h1, true);
        self.layers[1].apply(&h1, &mut h2, true);
        self.layers[2].apply(&h2, &mut q, false);
        Ok(q)
    }

    /// Mean squared TD loss over the batch and its gradient. Only the output
    /// of the taken action contributes.
    pub fn loss_and_gradient(
        &self,
        states: &[&[f64]],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        let n = states.len();
        if actions.len() != n || targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: actions.len().min(targets.len()),
            });
        }
        let [l1, l2, l3] = &self.layers;
        let mut grad = Gradients {
            layers: [
                Dense::zeros(l1.inputs, l1.outputs),
                Dense::zeros(l2.inputs, l2.outputs),
                Dense::zeros(l3.inputs, l3.outputs),
            ],
        };
        if n == 0 {
            return Ok((0.0, grad));
        }
        let hidden = self.hidden_dim();
        let (mut h1, mut h2) = (Vec::with_capacity(hidden), Vec::with_capacity(hidden));
        let (mut d1, mut d2) = (vec![0.0; hidden], vec![0.0; hidden]);
        let mut loss = 0.0;
        let scale = 1.0 / n as f64;

        for ((&x, &a), &target) in states.iter().zip(actions).zip(targets) {
            self.check_input(x)?;
            if a >= self.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.output_dim(),
                    actual: a + 1,
                });
            }
            l1.apply(x, &mut h1, true);
            l2.apply(&h1, &mut h2, true);
            let q = l3.bias[a] + h2.iter().enumerate().map(|(i, &h)| h * l3.weight(i, a)).sum::<f64>();
            let err = q - target;
            loss += err * err * scale;

            let dq = 2.0 * err * scale;
            let g3 = &mut grad.layers[2];
            g3.bias[a] += dq;
            for (i, (&h, d)) in h2.iter().zip(d2.iter_mut()).enumerate() {
                g3.weights[i * l3.outputs + a] += dq * h;
                *d = if h > 0.0 { dq * l3.weight(i, a) } else { 0.0 };
            }

            let g2 = &mut grad.layers[1];
            axpy(&mut g2.bias, &d2, 1.0);
            for (i, (&h, d)) in h1.iter().zip(d1.iter_mut()).enumerate() {
                if h > 0.0 {
                    axpy(&mut g2.weights[i * hidden..(i + 1) * hidden], &d2, h);
                    *d = dot(l2.column(i), &d2);
                } else {
                    *d = 0.0;
                }
            }

            let g1 = &mut grad.layers[0];
            axpy(&mut g1.bias, &d1, 1.0);
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    axpy(&mut g1.weights[i * hidden..(i + 1) * hidden], &d1, xi);
                }
            }
        }
        Ok((loss, grad))
    }

    /// Plain gradient-descent update.
    pub fn apply_gradients(&mut self, grad: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
    }

    const MAGIC: &'static [u8; 4] = b"MGQN";
    const VERSION: u32 = 1;

    /// Binary dump: magic, version, layer sizes, then every parameter as
    /// little-endian `f64` in [`params`](Self::params) order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        for dim in [self.input_dim(), self.hidden_dim(), self.output_dim()] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for p in self.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("not a Q-network dump".into()));
        }
        let version = read_u32(r)?;
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported network version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u64(r)? as usize;
        }
        if dims.iter().any(|&d| d == 0 || d > 1 << 16) {
            return Err(Error::Checkpoint(format!("implausible layer sizes {dims:?}")));
        }
        let mut net = Self::zeros(dims[0], dims[1], dims[2]);
        let params = (0..net.num_params())
            .map(|_| read_f64(r))
            .collect::<Result<Vec<_>>>()?;
        net.set_params(&params)?;
        Ok(net)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
