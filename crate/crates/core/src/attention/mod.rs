//! Point-lane attention: three multi-head self-attentions arranged along
//! the structure of a lane set.
//!
//! Features are laid out as `N x (M + 1) x C`: `N` lanes, `M` preset points
//! per lane followed by one `[CLS]` slot, `C` channels.
//!
//! * point-point (PPA): within each lane, over its `M + 1` tokens
//! * lane-lane (LLA): across the `N` `[CLS]` tokens
//! * point-y (PYA): across the `N` lanes at each of the `M` point indices
//!
//! Forward pass only.

pub mod flops;
pub mod mlp;

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use flops::{flop_estimate, AttentionKind, FlopEstimate};
pub use mlp::{ep_head_forward, mlp_forward, Activation, Linear, MlpWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array3<f64>,
}

impl FeatureTensor {
    /// Wraps an `N x (M + 1) x C` array whose last slot per lane is `[CLS]`.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (n, t, c) = data.dim();
        if n == 0 || t < 2 || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature tensor must be N x (M+1) x C with N, M, C > 0, got {n} x {t} x {c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::ShapeMismatch("feature tensor has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    /// Appends the shared `[CLS]` vector after the `M` points of every lane.
    pub fn with_cls(points: ArrayView3<'_, f64>, cls: ArrayView1<'_, f64>) -> Result<Self> {
        let (n, _, c) = points.dim();
        if cls.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "[CLS] has {} channels, features have {c}",
                cls.len()
            )));
        }
        let cls_rows = cls.broadcast((n, 1, c)).expect("broadcast checked above");
        Self::new(concatenate(Axis(1), &[points, cls_rows]).map_err(|e| Error::ShapeMismatch(e.to_string()))?)
    }

    pub fn n_lanes(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_points(&self) -> usize {
        self.data.dim().1 - 1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// `N x C` `[CLS]` rows.
    pub fn cls(&self) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(1), self.n_points())
    }

    /// `N x M x C` point rows.
    pub fn points(&self) -> ArrayView3<'_, f64> {
        self.data.slice(s![.., ..self.n_points(), ..])
    }
}

/// One multi-head self-attention block: `softmax(Q K^T / sqrt(d)) V W_o`,
/// optionally plus the input (residual).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub output: Array2<f64>,
    pub heads: usize,
    pub residual: bool,
    /// Seed the weights were drawn from, if any.
    pub seed: Option<u64>,
}

impl AttentionWeights {
    pub fn new(
        query: Array2<f64>,
        key: Array2<f64>,
        value: Array2<f64>,
        output: Array2<f64>,
        heads: usize,
        residual: bool,
    ) -> Result<Self> {
        let c = query.nrows();
        for (name, m) in [("query", &query), ("key", &key), ("value", &value), ("output", &output)] {
            if m.dim() != (c, c) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} projection is {:?}, expected {c}x{c}",
                    m.dim()
                )));
            }
        }
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::ShapeMismatch(format!("{c} channels do not split into {heads} heads")));
        }
        Ok(Self {
            query,
            key,
            value,
            output,
            heads,
            residual,
            seed: None,
        })
    }

    /// Uniform `+-1/sqrt(C)` projections, residual enabled.
    pub fn seeded(channels: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (channels.max(1) as f64).sqrt();
        let mut draw = || Array2::from_shape_simple_fn((channels, channels), || rng.random_range(-bound..bound));
        let (q, k, v, o) = (draw(), draw(), draw(), draw());
        let mut w = Self::new(q, k, v, o, heads, true)?;
        w.seed = Some(seed);
        Ok(w)
    }

    pub fn channels(&self) -> usize {
        self.query.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "attention expects {} channels, got {}",
                self.channels(),
                x.ncols()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::ShapeMismatch("attention over zero tokens".into()));
        }
        Ok(())
    }

    /// Per-head `T x T` attention probabilities.
    pub fn attention_maps(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(&x)?;
        let q = x.dot(&self.query);
        let k = x.dot(&self.key);
        Ok((0..self.heads).map(|h| self.head_probs(&q, &k, h)).collect())
    }

    fn head_probs(&self, q: &Array2<f64>, k: &Array2<f64>, h: usize) -> Array2<f64> {
        let d = self.head_dim();
        let cols = s![.., h * d..(h + 1) * d];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) / (d as f64).sqrt();
        for mut row in scores.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("rows of an owned standard-layout array are contiguous"));
        }
        scores
    }

    /// Self-attention over the rows of `x` (`T x C`).
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let d = self.head_dim();
        let q = x.dot(&self.query);
        let k = x.dot(&self.key);
        let v = x.dot(&self.value);
        let mut heads = Array2::zeros(x.raw_dim());
        for h in 0..self.heads {
            let probs = self.head_probs(&q, &k, h);
            let cols = s![.., h * d..(h + 1) * d];
            heads.slice_mut(cols).assign(&probs.dot(&v.slice(cols)));
        }
        let mut out = heads.dot(&self.output);
        if self.residual {
            out += &x;
        }
        Ok(out)
    }
}

/// Max-subtracted softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `P + MLP(P)`, applied token-wise.
pub fn add_position_embedding(feat: &FeatureTensor, w: &MlpWeights) -> Result<FeatureTensor> {
    let (n, t, c) = feat.data.dim();
    if w.in_dim() != c || w.out_dim() != c {
        return Err(Error::ShapeMismatch(format!(
            "position MLP maps {} -> {} channels, features have {c}",
            w.in_dim(),
            w.out_dim()
        )));
    }
    let flat = feat
        .data
        .to_shape((n * t, c))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let embedded = &flat + &mlp_forward(w, flat.view())?;
    let data = embedded
        .into_shape_with_order((n, t, c))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    FeatureTensor::new(data)
}

/// Self-attention within each lane over its `M + 1` tokens.
pub fn ppa_forward(feat: &FeatureTensor, w: &AttentionWeights) -> Result<FeatureTensor> {
    let mut out = Array3::zeros(feat.data.raw_dim());
    for (i, lane) in feat.data.outer_iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&w.forward(lane)?);
    }
    FeatureTensor::new(out)
}

/// Self-attention across the `N` lane tokens.
pub fn lla_forward(cls_feats: ArrayView2<'_, f64>, w: &AttentionWeights) -> Result<Array2<f64>> {
    w.forward(cls_feats)
}

/// Self-attention across lanes within each point index: `M` groups of `N`.
pub fn pya_forward(point_feats: ArrayView3<'_, f64>, w: &AttentionWeights) -> Result<Array3<f64>> {
    let (n, m, c) = point_feats.dim();
    if n == 0 || m == 0 {
        return Err(Error::ShapeMismatch(format!("point features are {n} x {m} x {c}")));
    }
    let mut out = Array3::zeros((n, m, c));
    for j in 0..m {
        let group = point_feats.index_axis(Axis(1), j);
        out.index_axis_mut(Axis(1), j).assign(&w.forward(group)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlAttentionWeights {
    pub position: MlpWeights,
    pub ppa: AttentionWeights,
    pub lla: AttentionWeights,
    pub pya: AttentionWeights,
    /// Shared `[CLS]` token.
    pub cls: Array1<f64>,
}

impl PlAttentionWeights {
    /// Draws every component from streams derived from one seed.
    pub fn seeded(channels: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cls = Array1::from_shape_simple_fn(channels, || rng.random_range(-1.0..1.0));
        Ok(Self {
            position: MlpWeights::seeded(&[channels, channels, channels], Activation::Relu, seed.wrapping_add(1))?,
            ppa: AttentionWeights::seeded(channels, heads, seed.wrapping_add(2))?,
            lla: AttentionWeights::seeded(channels, heads, seed.wrapping_add(3))?,
            pya: AttentionWeights::seeded(channels, heads, seed.wrapping_add(4))?,
            cls,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlAttentionOutput {
    /// Lane-level features, `N x C`.
    pub h_s: Array2<f64>,
    /// Point-level features, `N x M x C`.
    pub h_dagger: Array3<f64>,
}

pub fn pl_attention_forward(feat: &FeatureTensor, w: &PlAttentionWeights) -> Result<PlAttentionOutput> {
    let embedded = add_position_embedding(feat, &w.position)?;
    let mixed = ppa_forward(&embedded, &w.ppa)?;
    let h_s = lla_forward(mixed.cls(), &w.lla)?;
    let h_dagger = pya_forward(mixed.points(), &w.pya)?;
    Ok(PlAttentionOutput { h_s, h_dagger })
}

/// Plain self-attention over all `N (M + 1)` tokens, the dense baseline.
pub fn msa_forward(feat: &FeatureTensor, w: &AttentionWeights) -> Result<Array2<f64>> {
    let (n, t, c) = feat.data.dim();
    let flat = feat
        .data
        .to_shape((n * t, c))
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    w.forward(flat.view())
}
