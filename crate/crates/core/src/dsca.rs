//! Decoupled self/cross attention block over two token modalities.
//!
//! A block first runs self-attention inside each modality, then lets each
//! modality cross-attend to the other's self-attention output (both
//! directions read the same stage-one state), and finishes with a
//! per-branch feed-forward layer. Every sub-layer is pre-normalized with a
//! gain-only layer norm and wrapped in a residual connection. Queries and
//! keys carry 3-axis rotary position encodings.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const ROPE_BASE: f64 = 10_000.0;
pub const NORM_EPS: f64 = 1e-6;

/// Position axes: (temporal, row, column).
pub type Position = [i64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Video,
    Ray,
}

/// Tokens of one modality (rows of an `n × d_model` matrix) with their grid
/// positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    tokens: DMatrix<f64>,
    positions: Vec<Position>,
    modality: Modality,
}

impl TokenSeq {
    pub fn new(tokens: Vec<Vec<f64>>, positions: Vec<Position>, modality: Modality) -> Result<Self> {
        let d = tokens.first().map_or(0, Vec::len);
        if tokens.iter().any(|t| t.len() != d) {
            return Err(Error::ShapeMismatch("tokens have differing feature lengths".into()));
        }
        let n = tokens.len();
        let matrix = DMatrix::from_row_iterator(n, d, tokens.into_iter().flatten());
        Self::from_matrix(matrix, positions, modality)
    }

    pub fn from_matrix(tokens: DMatrix<f64>, positions: Vec<Position>, modality: Modality) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::ShapeMismatch("empty token sequence".into()));
        }
        if positions.len() != tokens.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions for {} tokens",
                positions.len(),
                tokens.nrows()
            )));
        }
        let unique: HashSet<_> = positions.iter().collect();
        if unique.len() != positions.len() {
            return Err(Error::ShapeMismatch("duplicate token positions".into()));
        }
        Ok(TokenSeq {
            tokens,
            positions,
            modality,
        })
    }

    pub fn tokens(&self) -> &DMatrix<f64> {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> Vec<f64> {
        self.tokens.row(i).iter().copied().collect()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.nrows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    fn with_tokens(&self, tokens: DMatrix<f64>) -> Self {
        TokenSeq {
            tokens,
            positions: self.positions.clone(),
            modality: self.modality,
        }
    }
}

/// Projections act on row vectors: `q = x · query`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: DMatrix<f64>,
    pub key: DMatrix<f64>,
    pub value: DMatrix<f64>,
    pub output: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub ffn_in: DMatrix<f64>,
    pub ffn_out: DMatrix<f64>,
    pub norm_self: DVector<f64>,
    pub norm_cross_query: DVector<f64>,
    pub norm_cross_kv: DVector<f64>,
    pub norm_ffn: DVector<f64>,
    pub modality_offset: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DscaBlockParams {
    pub video: BranchParams,
    pub ray: BranchParams,
    pub head_count: usize,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

fn attention_params(rng: &mut ChaCha8Rng, d: usize) -> AttentionParams {
    AttentionParams {
        query: uniform_matrix(rng, d, d),
        key: uniform_matrix(rng, d, d),
        value: uniform_matrix(rng, d, d),
        output: uniform_matrix(rng, d, d),
    }
}

impl BranchParams {
    fn seeded(rng: &mut ChaCha8Rng, d_model: usize, d_ff: usize) -> Self {
        let gain = |rng: &mut ChaCha8Rng| DVector::from_fn(d_model, |_, _| rng.random_range(0.8..1.2));
        BranchParams {
            self_attn: attention_params(rng, d_model),
            cross_attn: attention_params(rng, d_model),
            ffn_in: uniform_matrix(rng, d_model, d_ff),
            ffn_out: uniform_matrix(rng, d_ff, d_model),
            norm_self: gain(rng),
            norm_cross_query: gain(rng),
            norm_cross_kv: gain(rng),
            norm_ffn: gain(rng),
            modality_offset: DVector::from_fn(d_model, |_, _| rng.random_range(-0.1..0.1)),
        }
    }

    fn check(&self, d_model: usize) -> Result<()> {
        let square = |m: &DMatrix<f64>| m.shape() == (d_model, d_model);
        let attn_ok = |a: &AttentionParams| square(&a.query) && square(&a.key) && square(&a.value) && square(&a.output);
        let d_ff = self.ffn_in.ncols();
        let ok = attn_ok(&self.self_attn)
            && attn_ok(&self.cross_attn)
            && self.ffn_in.nrows() == d_model
            && self.ffn_out.shape() == (d_ff, d_model)
            && [&self.norm_self, &self.norm_cross_query, &self.norm_cross_kv, &self.norm_ffn, &self.modality_offset]
                .iter()
                .all(|v| v.len() == d_model);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("branch parameters inconsistent with d_model = {d_model}")))
        }
    }
}

impl DscaBlockParams {
    /// Seeded fan-in-scaled uniform initialization.
    pub fn seeded(d_model: usize, head_count: usize, d_ff: usize, seed: u64) -> Result<Self> {
        check_heads(d_model, head_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let video = BranchParams::seeded(&mut rng, d_model, d_ff);
        let ray = BranchParams::seeded(&mut rng, d_model, d_ff);
        Ok(DscaBlockParams { video, ray, head_count })
    }

    pub fn d_model(&self) -> usize {
        self.video.norm_self.len()
    }

    pub fn branch(&self, modality: Modality) -> &BranchParams {
        match modality {
            Modality::Video => &self.video,
            Modality::Ray => &self.ray,
        }
    }

    pub fn branch_mut(&mut self, modality: Modality) -> &mut BranchParams {
        match modality {
            Modality::Video => &mut self.video,
            Modality::Ray => &mut self.ray,
        }
    }

    /// Same block with the two branches exchanged.
    pub fn swapped(&self) -> Self {
        DscaBlockParams {
            video: self.ray.clone(),
            ray: self.video.clone(),
            head_count: self.head_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        check_heads(d, self.head_count)?;
        self.video.check(d)?;
        self.ray.check(d)
    }
}

fn check_heads(d_model: usize, head_count: usize) -> Result<()> {
    if head_count == 0 || d_model % head_count != 0 {
        return Err(Error::ShapeMismatch(format!("d_model {d_model} not divisible into {head_count} heads")));
    }
    rope_pairs(d_model / head_count).map(|_| ())
}

/// Pairs assigned to the (temporal, row, column) axes for a head of size
/// `head_dim`: row and column get `⌊head_dim/6⌋` pairs each, the temporal
/// axis takes the rest.
pub fn rope_pairs(head_dim: usize) -> Result<[usize; 3]> {
    if head_dim % 2 != 0 || head_dim < 6 {
        return Err(Error::ShapeMismatch(format!(
            "rotary head dimension must be even and at least 6, got {head_dim}"
        )));
    }
    let spatial = head_dim / 6;
    Ok([head_dim / 2 - 2 * spatial, spatial, spatial])
}

fn rope_in_place(v: &mut [f64], position: &Position, pairs: &[usize; 3]) {
    let mut offset = 0;
    for (axis, &count) in pairs.iter().enumerate() {
        let pos = position[axis] as f64;
        for k in 0..count {
            let theta = ROPE_BASE.powf(-(k as f64) / count as f64);
            let (sin, cos) = (pos * theta).sin_cos();
            let i = 2 * (offset + k);
            let (a, b) = (v[i], v[i + 1]);
            v[i] = a * cos - b * sin;
            v[i + 1] = a * sin + b * cos;
        }
        offset += count;
    }
}

/// Rotary position encoding of one head vector.
///
/// Consecutive feature pairs are split among the three position axes (see
/// [`rope_pairs`]); pair `k` of an axis with `m` pairs rotates by
/// `position · base^(−k/m)`.
pub fn rope_rotate(vec: &[f64], position: &Position) -> Result<Vec<f64>> {
    let pairs = rope_pairs(vec.len())?;
    let mut out = vec.to_vec();
    rope_in_place(&mut out, position, &pairs);
    Ok(out)
}

fn layer_norm(x: &DMatrix<f64>, gain: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[c];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_rows(scores: &mut DMatrix<f64>) {
    for mut row in scores.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Output before the residual, plus one attention map per head.
struct Attended {
    update: DMatrix<f64>,
    maps: Vec<DMatrix<f64>>,
}

fn attend(
    queries: &TokenSeq,
    keys_values: &TokenSeq,
    params: &AttentionParams,
    query_gain: &DVector<f64>,
    kv_gain: &DVector<f64>,
    head_count: usize,
) -> Result<Attended> {
    let d = params.query.nrows();
    if queries.d_model() != d || keys_values.d_model() != d {
        return Err(Error::ShapeMismatch(format!(
            "token width {} / {} does not match d_model {d}",
            queries.d_model(),
            keys_values.d_model()
        )));
    }
    check_heads(d, head_count)?;
    let head_dim = d / head_count;
    let pairs = rope_pairs(head_dim)?;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let hq = layer_norm(&queries.tokens, query_gain);
    let hkv = layer_norm(&keys_values.tokens, kv_gain);
    let q = &hq * &params.query;
    let k = &hkv * &params.key;
    let v = &hkv * &params.value;

    let mut mixed = DMatrix::zeros(queries.len(), d);
    let mut maps = Vec::with_capacity(head_count);
    for h in 0..head_count {
        let cols = h * head_dim;
        let mut qh = q.columns(cols, head_dim).into_owned();
        let mut kh = k.columns(cols, head_dim).into_owned();
        for (i, pos) in queries.positions.iter().enumerate() {
            let mut row: Vec<f64> = qh.row(i).iter().copied().collect();
            rope_in_place(&mut row, pos, &pairs);
            qh.row_mut(i).copy_from_slice(&row);
        }
        for (j, pos) in keys_values.positions.iter().enumerate() {
            let mut row: Vec<f64> = kh.row(j).iter().copied().collect();
            rope_in_place(&mut row, pos, &pairs);
            kh.row_mut(j).copy_from_slice(&row);
        }
        let mut scores = (&qh * kh.transpose()) * scale;
        softmax_rows(&mut scores);
        let out = &scores * v.columns(cols, head_dim);
        mixed.columns_mut(cols, head_dim).copy_from(&out);
        maps.push(scores);
    }
    Ok(Attended {
        update: mixed * &params.output,
        maps,
    })
}

/// Multi-head self-attention within one modality, with residual.
pub fn self_attention(seq: &TokenSeq, params: &DscaBlockParams) -> Result<TokenSeq> {
    self_attention_with_maps(seq, params).map(|(out, _)| out)
}

/// [`self_attention`] also returning each head's attention map.
pub fn self_attention_with_maps(seq: &TokenSeq, params: &DscaBlockParams) -> Result<(TokenSeq, Vec<DMatrix<f64>>)> {
    let branch = params.branch(seq.modality);
    let a = attend(seq, seq, &branch.self_attn, &branch.norm_self, &branch.norm_self, params.head_count)?;
    Ok((seq.with_tokens(&seq.tokens + a.update), a.maps))
}

/// Queries from `queries_from`, keys and values from `keys_values_from`,
/// using the query modality's cross-attention parameters. The residual is
/// taken from `queries_from`.
pub fn cross_attention(
    queries_from: &TokenSeq,
    keys_values_from: &TokenSeq,
    params: &DscaBlockParams,
) -> Result<TokenSeq> {
    cross_attention_with_maps(queries_from, keys_values_from, params).map(|(out, _)| out)
}

pub fn cross_attention_with_maps(
    queries_from: &TokenSeq,
    keys_values_from: &TokenSeq,
    params: &DscaBlockParams,
) -> Result<(TokenSeq, Vec<DMatrix<f64>>)> {
    let branch = params.branch(queries_from.modality);
    let a = attend(
        queries_from,
        keys_values_from,
        &branch.cross_attn,
        &branch.norm_cross_query,
        &branch.norm_cross_kv,
        params.head_count,
    )?;
    Ok((queries_from.with_tokens(&queries_from.tokens + a.update), a.maps))
}

/// Branch feed-forward `x + GELU(norm(x)·W_in)·W_out`.
pub fn feed_forward(seq: &TokenSeq, params: &DscaBlockParams) -> Result<TokenSeq> {
    let branch = params.branch(seq.modality);
    if seq.d_model() != branch.ffn_in.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "token width {} does not match d_model {}",
            seq.d_model(),
            branch.ffn_in.nrows()
        )));
    }
    let mut hidden = layer_norm(&seq.tokens, &branch.norm_ffn) * &branch.ffn_in;
    hidden.apply(|v| *v = gelu(*v));
    Ok(seq.with_tokens(&seq.tokens + hidden * &branch.ffn_out))
}

/// Adds the modality embedding of `seq`'s branch to every token.
pub fn add_modality_offset(seq: &TokenSeq, params: &DscaBlockParams) -> Result<TokenSeq> {
    let offset = &params.branch(seq.modality).modality_offset;
    if offset.len() != seq.d_model() {
        return Err(Error::ShapeMismatch("modality offset width differs from tokens".into()));
    }
    let mut tokens = seq.tokens.clone();
    for mut row in tokens.row_iter_mut() {
        row += offset.transpose();
    }
    Ok(seq.with_tokens(tokens))
}

/// One block: modality offsets, self-attention per modality, symmetric
/// cross-attention on the stage-one outputs, then per-branch feed-forward.
pub fn dsca_block(video: &TokenSeq, ray: &TokenSeq, params: &DscaBlockParams) -> Result<(TokenSeq, TokenSeq)> {
    if video.modality != Modality::Video || ray.modality != Modality::Ray {
        return Err(Error::ShapeMismatch("expected (video, ray) token sequences".into()));
    }
    params.validate()?;
    let video = self_attention(&add_modality_offset(video, params)?, params)?;
    let ray = self_attention(&add_modality_offset(ray, params)?, params)?;
    let video_x = cross_attention(&video, &ray, params)?;
    let ray_x = cross_attention(&ray, &video, params)?;
    Ok((feed_forward(&video_x, params)?, feed_forward(&ray_x, params)?))
}
