//! The two tiny fully-connected decoders: geometry (opacity, scale, rotation)
//! and view-dependent color. Hidden layers use the rectifier; outputs are raw
//! and get activated downstream during aggregation.

use rand::Rng;

use crate::error::{Error, Result};

/// A dense network described by its layer widths, e.g. `[32, 64, 64, 8]`.
/// Weights are stored row-major per layer (`out x in`).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub weight_grads: Vec<Vec<f64>>,
    pub bias_grads: Vec<Vec<f64>>,
}

/// Activations cached by a forward pass; consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    /// Post-rectifier activations of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("mlp needs at least input and output dims"));
        }
        let mut weights: Vec<Vec<f64>> = Vec::new();
        let mut biases: Vec<Vec<f64>> = Vec::new();
        for l in 0..dims.len() - 1 {
            let bound = (1.0 / dims[l] as f64).sqrt();
            weights.push(
                (0..dims[l] * dims[l + 1])
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; dims[l + 1]]);
        }
        let weight_grads = weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let bias_grads = biases.iter().map(|b| vec![0.0; b.len()]).collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            weight_grads,
            bias_grads,
        })
    }

    pub fn zeroed(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("mlp needs at least input and output dims"));
        }
        let weights: Vec<Vec<f64>> = (0..dims.len() - 1)
            .map(|l| vec![0.0; dims[l] * dims[l + 1]])
            .collect();
        let biases: Vec<Vec<f64>> = (0..dims.len() - 1)
            .map(|l| vec![0.0; dims[l + 1]])
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            weight_grads: weights.clone(),
            bias_grads: biases.clone(),
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn zero_grad(&mut self) {
        for g in self
            .weight_grads
            .iter_mut()
            .chain(self.bias_grads.iter_mut())
        {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Forward pass returning the raw output and the cache needed by
    /// [`Mlp::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "mlp input length {} != expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.dims.len() - 1;
        let mut hidden = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut x = input.to_vec();
        for l in 0..n_layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                y[o] = acc;
            }
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                hidden.push(y.clone());
            }
            x = y;
        }
        Ok((
            x,
            MlpCache {
                input: input.to_vec(),
                hidden,
            },
        ))
    }

    /// Forward without building a cache (inference path).
    pub fn forward_only(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Accumulates parameter gradients for the cached forward pass and
    /// returns the gradient w.r.t. the input vector.
    pub fn backward(&mut self, cache: &MlpCache, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid("mlp upstream gradient length mismatch"));
        }
        let n_layers = self.dims.len() - 1;
        if cache.hidden.len() != n_layers - 1 || cache.input.len() != self.input_dim() {
            return Err(Error::Contract(
                "mlp backward called with a cache from a different net".into(),
            ));
        }
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = if l == 0 {
                &cache.input
            } else {
                &cache.hidden[l - 1]
            };
            let w = &self.weights[l];
            let wg = &mut self.weight_grads[l];
            let bg = &mut self.bias_grads[l];
            let mut d_x = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                bg[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut wg[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * x[i];
                    d_x[i] += d * row[i];
                }
            }
            if l > 0 {
                // Rectifier: pass gradient only where the activation survived.
                for (dx, h) in d_x.iter_mut().zip(&cache.hidden[l - 1]) {
                    if *h <= 0.0 {
                        *dx = 0.0;
                    }
                }
            }
            delta = d_x;
        }
        Ok(delta)
    }
}

/// Raw (pre-activation) geometry decoded for one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawGeometry {
    pub opacity: f64,
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
}

impl RawGeometry {
    /// Wire layout of the geometry head: opacity, scale, rotation.
    pub const DIM: usize = 8;

    pub fn from_output(out: &[f64]) -> Result<Self> {
        if out.len() != Self::DIM {
            return Err(Error::invalid(format!(
                "geometry decoder output length {} != {}",
                out.len(),
                Self::DIM
            )));
        }
        Ok(Self {
            opacity: out[0],
            scale: [out[1], out[2], out[3]],
            rotation: [out[4], out[5], out[6], out[7]],
        })
    }

    pub fn to_output(&self) -> [f64; 8] {
        [
            self.opacity,
            self.scale[0],
            self.scale[1],
            self.scale[2],
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        ]
    }
}

/// Raw view-dependent color, pre-sigmoid.
pub type RawColor = [f64; 3];

pub fn decode_geometry(features: &[f64], net: &Mlp) -> Result<(RawGeometry, MlpCache)> {
    if net.output_dim() != RawGeometry::DIM {
        return Err(Error::invalid("geometry decoder must output 8 values"));
    }
    let (out, cache) = net.forward(features)?;
    Ok((RawGeometry::from_output(&out)?, cache))
}

/// Decodes view-dependent color from the concatenation of the radiance
/// feature and the direction encoding.
pub fn decode_color(f_rad: &[f64], f_dir: &[f64], net: &Mlp) -> Result<(RawColor, MlpCache)> {
    if net.output_dim() != 3 {
        return Err(Error::invalid("color decoder must output 3 values"));
    }
    if f_rad.len() + f_dir.len() != net.input_dim() {
        return Err(Error::invalid(format!(
            "color decoder input {} + {} != {}",
            f_rad.len(),
            f_dir.len(),
            net.input_dim()
        )));
    }
    let mut input = Vec::with_capacity(net.input_dim());
    input.extend_from_slice(f_rad);
    input.extend_from_slice(f_dir);
    let (out, cache) = net.forward(&input)?;
    Ok(([out[0], out[1], out[2]], cache))
}
