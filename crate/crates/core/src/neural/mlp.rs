use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Fully connected layer, `z = a W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Layer normalization over the feature axis with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

/// Feed-forward Q-network: every hidden layer is affine, then layer norm,
/// then ReLU; the output head is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    dims: Vec<usize>,
    dense: Vec<Dense>,
    norms: Vec<LayerNorm>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dense: Vec<Dense>,
    pub norms: Vec<LayerNorm>,
}

struct HiddenCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
}

pub struct ForwardCache {
    hidden: Vec<HiddenCache>,
    last_input: Array2<f64>,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases; norm layers start as identity.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Mlp::zeros(dims)?;
        for layer in &mut net.dense {
            let bound = 1.0 / (layer.weights.nrows() as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-bound..=bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        Ok(net)
    }

    /// All weights and biases zero, norm layers identity.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer dims {dims:?}")));
        }
        let dense = dims
            .windows(2)
            .map(|w| Dense {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        let norms = dims[1..dims.len() - 1]
            .iter()
            .map(|&d| LayerNorm {
                scale: Array1::ones(d),
                shift: Array1::zeros(d),
            })
            .collect();
        Ok(Mlp {
            dims: dims.to_vec(),
            dense,
            norms,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn dense(&self) -> &[Dense] {
        &self.dense
    }

    pub fn dense_mut(&mut self) -> &mut [Dense] {
        &mut self.dense
    }

    pub fn norms_mut(&mut self) -> &mut [LayerNorm] {
        &mut self.norms
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Q-values for a single state.
    pub fn forward_one(&self, s: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, s.len()), s).expect("row vector");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n_hidden = self.norms.len();
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut a = x.to_owned();
        for (layer, norm) in self.dense[..n_hidden].iter().zip(&self.norms) {
            let z = a.dot(&layer.weights) + &layer.bias;
            let (xhat, inv_std) = normalize_rows(&z);
            let y = &xhat * &norm.scale + &norm.shift;
            let out = y.mapv(|v| v.max(0.0));
            hidden.push(HiddenCache {
                input: a,
                xhat,
                inv_std,
                pre_relu: y,
            });
            a = out;
        }
        let head = &self.dense[n_hidden];
        let q = a.dot(&head.weights) + &head.bias;
        Ok((
            q,
            ForwardCache {
                hidden,
                last_input: a,
            },
        ))
    }

    /// Backpropagates `d_out = dL/dQ` through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Gradients {
        let n_hidden = self.norms.len();
        let mut dense_grads = Vec::with_capacity(self.dense.len());
        let mut norm_grads = Vec::with_capacity(n_hidden);

        let head = &self.dense[n_hidden];
        dense_grads.push(Dense {
            weights: cache.last_input.t().dot(d_out),
            bias: d_out.sum_axis(Axis(0)),
        });
        let mut d_a = d_out.dot(&head.weights.t());

        for l in (0..n_hidden).rev() {
            let c = &cache.hidden[l];
            let norm = &self.norms[l];
            let mut d_y = d_a;
            ndarray::Zip::from(&mut d_y)
                .and(&c.pre_relu)
                .for_each(|g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
            norm_grads.push(LayerNorm {
                scale: (&d_y * &c.xhat).sum_axis(Axis(0)),
                shift: d_y.sum_axis(Axis(0)),
            });
            let d_xhat = &d_y * &norm.scale;
            let width = d_xhat.ncols() as f64;
            let mean_d = d_xhat.sum_axis(Axis(1)) / width;
            let mean_dx = (&d_xhat * &c.xhat).sum_axis(Axis(1)) / width;
            let mut d_z = d_xhat;
            for (((mut row, xh), &md), (&mdx, &inv)) in d_z
                .rows_mut()
                .into_iter()
                .zip(c.xhat.rows())
                .zip(&mean_d)
                .zip(mean_dx.iter().zip(&c.inv_std))
            {
                row.zip_mut_with(&xh, |g, &x| *g = inv * (*g - md - x * mdx));
            }
            dense_grads.push(Dense {
                weights: c.input.t().dot(&d_z),
                bias: d_z.sum_axis(Axis(0)),
            });
            d_a = d_z.dot(&self.dense[l].weights.t());
        }
        dense_grads.reverse();
        norm_grads.reverse();
        Gradients {
            dense: dense_grads,
            norms: norm_grads,
        }
    }

    /// Parameter tensors in a fixed order: each dense layer's weights and
    /// bias, then each norm layer's scale and shift.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * (self.dense.len() + self.norms.len()));
        for d in &mut self.dense {
            out.push(d.weights.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        for n in &mut self.norms {
            out.push(n.scale.as_slice_mut().expect("standard layout"));
            out.push(n.shift.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.dense.iter().map(|d| d.weights.len() + d.bias.len()).sum::<usize>()
            + self.norms.iter().map(|n| 2 * n.scale.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.dense
            .iter()
            .all(|d| d.weights.iter().chain(&d.bias).all(|v| v.is_finite()))
            && self
                .norms
                .iter()
                .all(|n| n.scale.iter().chain(&n.shift).all(|v| v.is_finite()))
    }

    /// Hard target update: copy every parameter of `main` into `self`.
    pub fn copy_from(&mut self, main: &Mlp) -> Result<()> {
        if self.dims != main.dims {
            return Err(Error::ArchitectureMismatch(self.dims.clone(), main.dims.clone()));
        }
        self.clone_from(main);
        Ok(())
    }
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for d in &self.dense {
            out.push(d.weights.as_slice().expect("standard layout"));
            out.push(d.bias.as_slice().expect("standard layout"));
        }
        for n in &self.norms {
            out.push(n.scale.as_slice().expect("standard layout"));
            out.push(n.shift.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for d in &mut self.dense {
            d.weights *= factor;
            d.bias *= factor;
        }
        for n in &mut self.norms {
            n.scale *= factor;
            n.shift *= factor;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

fn normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let width = z.ncols() as f64;
    let mut xhat = z.clone();
    let mut inv_std = Array1::zeros(z.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| (v - mean) * s);
    }
    (xhat, inv_std)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Serialize, Deserialize)]
struct DenseRecord {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NormRecord {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

/// Checkpoint form: layer dims plus row-major (`in x out`) weight arrays.
#[derive(Serialize, Deserialize)]
struct MlpRecord {
    layer_dims: Vec<usize>,
    layers: Vec<DenseRecord>,
    norms: Vec<NormRecord>,
}

impl From<Mlp> for MlpRecord {
    fn from(net: Mlp) -> Self {
        MlpRecord {
            layer_dims: net.dims,
            layers: net
                .dense
                .into_iter()
                .map(|d| DenseRecord {
                    weights: d.weights.into_raw_vec_and_offset().0,
                    bias: d.bias.to_vec(),
                })
                .collect(),
            norms: net
                .norms
                .into_iter()
                .map(|n| NormRecord {
                    scale: n.scale.to_vec(),
                    shift: n.shift.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = String;

    fn try_from(rec: MlpRecord) -> std::result::Result<Self, String> {
        let mut net = Mlp::zeros(&rec.layer_dims).map_err(|e| e.to_string())?;
        if rec.layers.len() != net.dense.len() || rec.norms.len() != net.norms.len() {
            return Err("layer count does not match layer_dims".into());
        }
        for (d, r) in net.dense.iter_mut().zip(rec.layers) {
            let shape = d.weights.dim();
            d.weights = Array2::from_shape_vec(shape, r.weights).map_err(|e| e.to_string())?;
            if r.bias.len() != d.bias.len() {
                return Err("bias length mismatch".into());
            }
            d.bias = Array1::from(r.bias);
        }
        for (n, r) in net.norms.iter_mut().zip(rec.norms) {
            if r.scale.len() != n.scale.len() || r.shift.len() != n.shift.len() {
                return Err("norm length mismatch".into());
            }
            n.scale = Array1::from(r.scale);
            n.shift = Array1::from(r.shift);
        }
        Ok(net)
    }
}
