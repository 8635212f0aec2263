use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ep::EpPrediction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }
}

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight is {}x{} but bias has {} entries",
                weight.nrows(),
                weight.ncols(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// A stack of affine layers with one activation applied between them (not
/// after the last layer).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl MlpWeights {
    pub fn new(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("an MLP needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} outputs {} channels but layer {} expects {}",
                    i,
                    w[0].out_dim(),
                    i + 1,
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Uniform `+-1/sqrt(fan_in)` weights and zero biases.
    pub fn seeded(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!("bad MLP layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound));
                Linear::new(weight, Array1::zeros(w[1]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, activation)
    }

    /// All-zero weights and biases of the given sizes.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(Array2::zeros((w[0], w[1])), Array1::zeros(w[1])))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, Activation::Identity)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }
}

/// Applies the MLP to every row of `input`.
pub fn mlp_forward(w: &MlpWeights, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if input.ncols() != w.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "MLP expects {} input channels, got {}",
            w.in_dim(),
            input.ncols()
        )));
    }
    let last = w.layers.len() - 1;
    let mut h = input.to_owned();
    for (i, layer) in w.layers.iter().enumerate() {
        h = h.dot(&layer.weight) + layer.bias.view().insert_axis(Axis(0));
        if i < last {
            h.mapv_inplace(|v| w.activation.apply(v));
        }
    }
    Ok(h)
}

/// Endpoint head: maps the `M x C` point features of one lane to start and
/// end offsets. Output channels are `(sx, sy, sz, ex, ey, ez)`.
pub fn ep_head_forward(w: &MlpWeights, point_feats: ArrayView2<'_, f64>) -> Result<EpPrediction> {
    if w.out_dim() != 6 {
        return Err(Error::ShapeMismatch(format!(
            "endpoint head must output 6 channels, has {}",
            w.out_dim()
        )));
    }
    let out = mlp_forward(w, point_feats)?;
    let s_hat = out.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    let e_hat = out.rows().into_iter().map(|r| [r[3], r[4], r[5]]).collect();
    EpPrediction::new(s_hat, e_hat)
}
