//! Bidirectional cross-attention between visual and thermal feature maps.
//!
//! Each modality projects its own queries, keys and values. The queries are
//! then exchanged: visual queries attend over thermal keys/values and thermal
//! queries attend over visual keys/values. Feature maps are `(B, d, h, w)`
//! tensors; spatial positions are flattened row-major (`index = row * w + col`).

use candle_core::{DType, Device, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RawImage;
use crate::nn::{Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub qkv_bias: bool,
    /// Adds a fixed 2-D sinusoidal encoding to the features before projection.
    pub positional_encoding: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            qkv_bias: false,
            positional_encoding: false,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self, layer: &str) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Construction {
                layer: layer.to_string(),
                msg: format!(
                    "d_model {} must be a positive multiple of n_heads {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        Ok(())
    }
}

/// Projections owned by one modality.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Maps attended values (`d_model`) back to the feature depth.
    pub output: Linear,
    pub n_heads: usize,
    pub positional_encoding: bool,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        config: &AttentionConfig,
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate(name)?;
        let dm = config.d_model;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), d_in, dm, config.qkv_bias, std, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d_in, dm, config.qkv_bias, std, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d_in, dm, config.qkv_bias, std, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dm, d_in, true, std, rng)?,
            n_heads: config.n_heads,
            positional_encoding: config.positional_encoding,
        })
    }

    pub fn d_in(&self) -> usize {
        self.query.in_dim()
    }

    pub fn d_model(&self) -> usize {
        self.query.out_dim()
    }
}

/// Flattened projections, each `(B, N, d_model)`.
#[derive(Debug, Clone)]
pub struct Qkv {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

/// `(B, d, h, w)` → `(B, h*w, d)`, row-major over the grid.
pub fn flatten_grid(features: &Tensor) -> Result<Tensor> {
    let (b, d, h, w) = features.dims4()?;
    Ok(features.reshape((b, d, h * w))?.transpose(1, 2)?.contiguous()?)
}

/// `(B, h*w, d)` → `(B, d, h, w)`.
pub fn unflatten_grid(tokens: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
    let (b, n, d) = tokens.dims3()?;
    if n != grid.0 * grid.1 {
        return Err(Error::Shape(format!(
            "{n} positions cannot fill a {}x{} grid",
            grid.0, grid.1
        )));
    }
    Ok(tokens.transpose(1, 2)?.contiguous()?.reshape((b, d, grid.0, grid.1))?)
}

pub fn project_qkv(features: &Tensor, params: &AttentionParams) -> Result<Qkv> {
    let (_, d, h, w) = features.dims4()?;
    if d != params.d_in() {
        return Err(Error::Shape(format!(
            "feature depth {d} does not match projection input dimension {}",
            params.d_in()
        )));
    }
    let features = if params.positional_encoding {
        let pe = positional_encoding(d, h, w, features.dtype(), features.device())?;
        features.broadcast_add(&pe)?
    } else {
        features.clone()
    };
    let tokens = flatten_grid(&features)?;
    Ok(Qkv {
        q: params.query.forward(&tokens)?,
        k: params.key.forward(&tokens)?,
        v: params.value.forward(&tokens)?,
    })
}

/// Output of [`scaled_attention`].
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Heads concatenated back to `(B, N, d_model)`, before output projection.
    pub attended: Tensor,
    /// Row-stochastic `(B, N, M)` map averaged over heads.
    pub map: Tensor,
}

/// Multi-head `softmax(Q Kᵀ / sqrt(d_k)) V` over the last axis.
pub fn scaled_attention(q: &Tensor, k: &Tensor, v: &Tensor, n_heads: usize) -> Result<AttentionOutput> {
    let (b, n, dm) = q.dims3()?;
    let (bk, m, dk_model) = k.dims3()?;
    if dk_model != dm || v.dims3()? != (bk, m, dm) || bk != b {
        return Err(Error::Shape(format!(
            "attention operands disagree: Q {:?}, K {:?}, V {:?}",
            q.dims(),
            k.dims(),
            v.dims()
        )));
    }
    if n_heads == 0 || dm % n_heads != 0 {
        return Err(Error::Shape(format!(
            "d_model {dm} is not divisible into {n_heads} heads"
        )));
    }
    let dk = dm / n_heads;
    let heads = |t: &Tensor, len: usize| -> Result<Tensor> {
        Ok(t.reshape((b, len, n_heads, dk))?.transpose(1, 2)?.contiguous()?)
    };
    let (qh, kh, vh) = (heads(q, n)?, heads(k, m)?, heads(v, m)?);
    let logits = (qh.matmul(&kh.transpose(2, 3)?.contiguous()?)? / (dk as f64).sqrt())?;
    let weights = candle_nn::ops::softmax(&logits, D::Minus1)?;
    let check = weights.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !check.is_finite() {
        return Err(Error::Numeric("non-finite attention logits".into()));
    }
    let attended = weights
        .matmul(&vh)?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, n, dm))?;
    let map = weights.mean(1)?;
    Ok(AttentionOutput { attended, map })
}

/// Result of [`exchange_queries`].
#[derive(Debug, Clone)]
pub struct Exchange {
    /// Visual content gathered by thermal queries, laid out on the thermal grid.
    pub attended_rgb: Tensor,
    /// Thermal content gathered by visual queries, laid out on the visual grid.
    pub attended_ir: Tensor,
    /// Visual queries over thermal keys: `(B, N_rgb, N_ir)`.
    pub map_rgb_to_ir: Tensor,
    /// Thermal queries over visual keys: `(B, N_ir, N_rgb)`.
    pub map_ir_to_rgb: Tensor,
}

/// Cross-attention with exchanged queries. The two grids may differ in size.
///
/// The output projection applied to each attended tensor belongs to the
/// modality that supplied the keys and values.
pub fn exchange_queries(
    feat_rgb: &Tensor,
    feat_ir: &Tensor,
    params_rgb: &AttentionParams,
    params_ir: &AttentionParams,
) -> Result<Exchange> {
    let (_, _, h_rgb, w_rgb) = feat_rgb.dims4()?;
    let (_, _, h_ir, w_ir) = feat_ir.dims4()?;
    let rgb = project_qkv(feat_rgb, params_rgb)?;
    let ir = project_qkv(feat_ir, params_ir)?;
    let to_ir = scaled_attention(&rgb.q, &ir.k, &ir.v, params_ir.n_heads)?;
    let to_rgb = scaled_attention(&ir.q, &rgb.k, &rgb.v, params_rgb.n_heads)?;
    let attended_ir = unflatten_grid(&params_ir.output.forward(&to_ir.attended)?, (h_rgb, w_rgb))?;
    let attended_rgb = unflatten_grid(&params_rgb.output.forward(&to_rgb.attended)?, (h_ir, w_ir))?;
    Ok(Exchange {
        attended_rgb,
        attended_ir,
        map_rgb_to_ir: to_ir.map,
        map_ir_to_rgb: to_rgb.map,
    })
}

/// Fixed sinusoidal encoding `(1, d, h, w)`: the first half of the channels
/// encode the row, the second half the column.
pub fn positional_encoding(d: usize, h: usize, w: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = d.div_ceil(2);
    let mut data = vec![0.0f64; d * h * w];
    for ch in 0..d {
        let (axis_ch, use_row) = if ch < half { (ch, true) } else { (ch - half, false) };
        let freq = 1.0 / 10000f64.powf((axis_ch / 2 * 2) as f64 / half.max(1) as f64);
        for r in 0..h {
            for c in 0..w {
                let pos = if use_row { r } else { c } as f64;
                let angle = pos * freq;
                data[(ch * h + r) * w + c] = if axis_ch % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
    }
    Ok(Tensor::from_vec(data, (1, d, h, w), device)?.to_dtype(dtype)?)
}

/// Host copy of one `N × M` attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    /// Extracts batch item `index` from a `(B, N, M)` map tensor.
    pub fn from_tensor(map: &Tensor, index: usize) -> Result<Self> {
        let (_, rows, cols) = map.dims3()?;
        let weights = map
            .get(index)?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Ok(Self { rows, cols, weights })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }

    /// Largest deviation of any row sum from one, or `None` if an entry is
    /// negative or non-finite.
    pub fn row_stochastic_error(&self) -> Option<f64> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return None;
        }
        Some(
            (0..self.rows)
                .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Which map rows a heatmap summarises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFocus {
    /// One query position `(row, col)` on the query grid.
    Query { row: usize, col: usize, query_width: usize },
    /// Mean over all query rows.
    Mean,
}

/// Renders attention received by each key position as a one-channel image on
/// the key grid, min-max normalised to `[0, 1]`. A constant map renders as 0.5.
pub fn attention_heatmap(map: &AttentionMap, key_grid: (usize, usize), focus: HeatmapFocus) -> Result<RawImage> {
    let (kh, kw) = key_grid;
    if kh * kw != map.cols {
        return Err(Error::Shape(format!(
            "key grid {kh}x{kw} does not match {} map columns",
            map.cols
        )));
    }
    let values: Vec<f64> = match focus {
        HeatmapFocus::Query { row, col, query_width } => {
            let idx = row * query_width + col;
            if col >= query_width || idx >= map.rows {
                return Err(Error::Validation(format!(
                    "query ({row}, {col}) lies outside the query grid"
                )));
            }
            map.row(idx).to_vec()
        }
        HeatmapFocus::Mean => (0..map.cols)
            .map(|j| (0..map.rows).map(|i| map.weights[i * map.cols + j]).sum::<f64>() / map.rows as f64)
            .collect(),
    };
    let (lo, hi) = values
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let data = values
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span) as f32 } else { 0.5 })
        .collect();
    RawImage::new(kh, kw, 1, data)
}
