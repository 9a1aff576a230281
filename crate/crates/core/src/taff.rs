//! Transformer encoder as feature fusion (TAFF).
//!
//! Features from several pyramid levels are projected to a common width `d`,
//! one row per location and anchor, and passed through a single pre-norm
//! encoder layer without positional encoding. [`scatter`] lays the fused rows
//! back out per level.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks;
use crate::error::{Error, Result};
use crate::params::{BlockParams, ParamSpec, ParamVars};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// `[h, w, c]`.
    pub map: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevel {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPyramid {
    levels: Vec<RawLevel>,
    anchors: usize,
}

/// Feature maps of decreasing resolution with `anchors` anchors per location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPyramid", into = "RawPyramid")]
pub struct FeaturePyramid {
    levels: Vec<PyramidLevel>,
    anchors: usize,
}

impl TryFrom<RawPyramid> for FeaturePyramid {
    type Error = Error;

    fn try_from(raw: RawPyramid) -> Result<Self> {
        let maps = raw
            .levels
            .into_iter()
            .map(|l| Tensor::new(vec![l.h, l.w, l.c], l.data))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps, raw.anchors)
    }
}

impl From<FeaturePyramid> for RawPyramid {
    fn from(p: FeaturePyramid) -> Self {
        RawPyramid {
            levels: p
                .levels
                .into_iter()
                .map(|l| RawLevel {
                    h: l.h,
                    w: l.w,
                    c: l.c,
                    data: l.map.into_data(),
                })
                .collect(),
            anchors: p.anchors,
        }
    }
}

impl FeaturePyramid {
    /// Every map must be `[h, w, c]` with positive extents.
    pub fn new(maps: Vec<Tensor>, anchors: usize) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::config("a feature pyramid needs at least one level"));
        }
        if anchors == 0 {
            return Err(Error::config("anchors per location must be positive"));
        }
        let levels = maps
            .into_iter()
            .enumerate()
            .map(|(i, map)| match *map.shape() {
                [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(PyramidLevel { h, w, c, map }),
                ref s => Err(Error::dim(format!(
                    "level {i} must be [h, w, c] with positive extents, got {s:?}"
                ))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { levels, anchors })
    }

    /// Standard-normal features for the given `(h, w, c)` levels.
    pub fn random<R: Rng + ?Sized>(shapes: &[LevelShape], anchors: usize, rng: &mut R) -> Result<Self> {
        let maps = shapes
            .iter()
            .map(|s| Tensor::standard_normal(&[s.h, s.w, s.c], rng))
            .collect();
        Self::new(maps, anchors)
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn channels(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.c).collect()
    }

    /// Sequence length after gathering: `A * sum(H_i * W_i)`.
    pub fn rows(&self) -> usize {
        self.anchors * self.levels.iter().map(|l| l.h * l.w).sum::<usize>()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pyramid serializes")
    }
}

/// `HxWxC`, as written on the command line (`4x4x8,2x2x16`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl FromStr for LevelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(format!("level `{s}` is not HxWxC")))?;
        match parts[..] {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Self { h, w, c }),
            _ => Err(Error::config(format!("level `{s}` is not HxWxC with positive extents"))),
        }
    }
}

/// Parse a comma separated list of levels.
pub fn parse_levels(spec: &str) -> Result<Vec<LevelShape>> {
    let levels = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if levels.is_empty() {
        return Err(Error::config("no pyramid levels given"));
    }
    Ok(levels)
}

/// Source coordinates of one sequence row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchorSlot {
    pub level: usize,
    pub y: usize,
    pub x: usize,
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedSequence {
    /// `[n, d]`.
    pub seq: Tensor,
    /// `index[r]` is where row `r` came from.
    pub index: Vec<AnchorSlot>,
    /// `(h, w)` of every level.
    pub level_shapes: Vec<(usize, usize)>,
    pub anchors: usize,
}

impl FusedSequence {
    pub fn d(&self) -> usize {
        self.seq.last_dim()
    }

    pub fn rows(&self) -> usize {
        self.index.len()
    }
}

/// Row order of a gathered sequence: level-major, then row-major over the
/// level, anchor fastest.
pub fn sequence_index(level_shapes: &[(usize, usize)], anchors: usize) -> Vec<AnchorSlot> {
    let mut index = Vec::new();
    for (level, &(h, w)) in level_shapes.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for anchor in 0..anchors {
                    index.push(AnchorSlot { level, y, x, anchor });
                }
            }
        }
    }
    index
}

/// Sizes of a fusion stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaffDims {
    pub d: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub anchors: usize,
}

impl TaffDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.ffn_hidden == 0 || self.anchors == 0 {
            return Err(Error::config("d, ffn_hidden and anchors must be positive"));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::config(format!(
                "{} heads do not divide model width {}",
                self.heads, self.d
            )));
        }
        Ok(())
    }
}

fn projection_names(level: usize) -> (String, String) {
    (format!("proj.{level}.weight"), format!("proj.{level}.bias"))
}

/// Per-level projections, then the encoder layer.
pub fn taff_param_specs(dims: &TaffDims, level_channels: &[usize]) -> Vec<ParamSpec> {
    let TaffDims { d, ffn_hidden: f, anchors, .. } = *dims;
    let mut specs = Vec::new();
    for (i, &c) in level_channels.iter().enumerate() {
        let (w, b) = projection_names(i);
        specs.push(ParamSpec::uniform(w, &[c, d], c));
        specs.push(ParamSpec::uniform(b, &[anchors, d], c));
    }
    specs.push(ParamSpec::ones("norm1.gamma", &[d]));
    specs.push(ParamSpec::zeros("norm1.beta", &[d]));
    for t in ["q", "k", "v", "o"] {
        specs.push(ParamSpec::uniform(format!("attn.w{t}"), &[d, d], d));
        specs.push(ParamSpec::uniform(format!("attn.b{t}"), &[d], d));
    }
    specs.push(ParamSpec::ones("norm2.gamma", &[d]));
    specs.push(ParamSpec::zeros("norm2.beta", &[d]));
    specs.push(ParamSpec::uniform("mlp.w1", &[d, f], d));
    specs.push(ParamSpec::uniform("mlp.b1", &[f], d));
    specs.push(ParamSpec::uniform("mlp.w2", &[f, d], f));
    specs.push(ParamSpec::uniform("mlp.b2", &[d], f));
    specs
}

/// Draw the projection and encoder parameters of a fusion stack.
pub fn assemble_taff(dims: &TaffDims, level_channels: &[usize], seed: u64) -> Result<BlockParams> {
    dims.validate()?;
    BlockParams::init(&taff_param_specs(dims, level_channels), seed)
}

/// Closed-form size of a fusion stack:
/// `sum_i (C_i d + A d) + 4 (d^2 + d) + (d f + f) + (f d + d) + 4 d`.
///
/// Each anchor carries its own `d`-wide projection bias, so with `A = 1` the
/// projection term is `C_i d + d`. `heads` does not change the count.
pub fn taff_param_count(dims: &TaffDims, level_channels: &[usize]) -> usize {
    let TaffDims { d, ffn_hidden: f, anchors, .. } = *dims;
    let projections: usize = level_channels.iter().map(|&c| c * d + anchors * d).sum();
    projections + 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d)
}

/// Project every level to width `d` on a tape. `maps[i]` is `[h_i, w_i, c_i]`.
pub fn gather_on(tape: &Tape, maps: &[&Var], anchors: usize, p: &ParamVars, d: usize) -> Result<Var> {
    let mut rows = Vec::with_capacity(maps.len());
    for (i, map) in maps.iter().enumerate() {
        let (h, w, c) = match *map.shape() {
            [h, w, c] => (h, w, c),
            ref s => return Err(Error::dim(format!("level {i} must be [h, w, c], got {s:?}"))),
        };
        let (wn, bn) = projection_names(i);
        let weight = p.get_shaped(&wn, &[c, d])?;
        let bias = p.get_shaped(&bn, &[anchors, d])?;
        let features = tape.matmul(&tape.reshape(map, &[h * w, c])?, weight)?;
        let per_anchor = tape.repeat_rows(&features, anchors)?;
        rows.push(tape.add(&per_anchor, &tape.tile_rows(bias, h * w)?)?);
    }
    let refs: Vec<&Var> = rows.iter().collect();
    tape.concat_rows(&refs)
}

/// One `d`-vector per location and anchor. Needs `proj.{i}.weight` `[C_i, d]`
/// and `proj.{i}.bias` `[A, d]` for every level `i`.
pub fn gather(pyramid: &FeaturePyramid, params: &BlockParams, d: usize) -> Result<FusedSequence> {
    let tape = Tape::inference();
    let p = params.constants(&tape);
    let maps: Vec<Var> = pyramid.levels.iter().map(|l| tape.constant(l.map.clone())).collect();
    let refs: Vec<&Var> = maps.iter().collect();
    let seq = gather_on(&tape, &refs, pyramid.anchors, &p, d)?.value().clone();
    let level_shapes: Vec<_> = pyramid.levels.iter().map(|l| (l.h, l.w)).collect();
    Ok(FusedSequence {
        seq,
        index: sequence_index(&level_shapes, pyramid.anchors),
        level_shapes,
        anchors: pyramid.anchors,
    })
}

fn encoder_ffn_width(params: &BlockParams, d: usize) -> Result<usize> {
    match params.get("mlp.w1").map(Tensor::shape) {
        Some(&[rows, f]) if rows == d => Ok(f),
        Some(s) => Err(Error::config(format!("mlp.w1 has shape {s:?}, expected [{d}, _]"))),
        None => Err(Error::config("missing parameter `mlp.w1`")),
    }
}

/// Run the fusion encoder layer over the rows. The index is carried over.
pub fn fuse(fs: &FusedSequence, params: &BlockParams, heads: usize) -> Result<FusedSequence> {
    let d = fs.d();
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("{heads} heads do not divide model width {d}")));
    }
    let ffn = encoder_ffn_width(params, d)?;
    let seq = blocks::transformer_encoder_layer(&fs.seq, params, heads, ffn)?;
    Ok(FusedSequence { seq, ..fs.clone() })
}

/// Lay the rows back out as one `[h, w, A * d]` map per level, anchor `a`
/// occupying channels `a*d .. (a+1)*d`.
pub fn scatter(fs: &FusedSequence) -> Result<Vec<Tensor>> {
    let d = fs.d();
    let a = fs.anchors;
    if fs.seq.shape() != [fs.index.len(), d] {
        return Err(Error::Integrity(format!(
            "{} index entries for a sequence of shape {:?}",
            fs.index.len(),
            fs.seq.shape()
        )));
    }
    let expected: usize = a * fs.level_shapes.iter().map(|(h, w)| h * w).sum::<usize>();
    if fs.index.len() != expected {
        return Err(Error::Integrity(format!(
            "index has {} entries, the level shapes need {expected}",
            fs.index.len()
        )));
    }
    let mut out: Vec<Tensor> = fs
        .level_shapes
        .iter()
        .map(|&(h, w)| Tensor::zeros(&[h, w, a * d]))
        .collect();
    let mut seen: Vec<Vec<bool>> = fs.level_shapes.iter().map(|(h, w)| vec![false; h * w * a]).collect();
    for (row, slot) in fs.index.iter().enumerate() {
        let Some(&(h, w)) = fs.level_shapes.get(slot.level) else {
            return Err(Error::Integrity(format!("row {row} points at missing level {}", slot.level)));
        };
        if slot.y >= h || slot.x >= w || slot.anchor >= a {
            return Err(Error::Integrity(format!("row {row} points outside its level: {slot:?}")));
        }
        let cell = (slot.y * w + slot.x) * a + slot.anchor;
        if std::mem::replace(&mut seen[slot.level][cell], true) {
            return Err(Error::Integrity(format!("slot {slot:?} is claimed twice")));
        }
        let src = &fs.seq.data()[row * d..(row + 1) * d];
        out[slot.level].data_mut()[cell * d..(cell + 1) * d].copy_from_slice(src);
    }
    Ok(out)
}

/// One backbone convolution of the detector surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

/// A small anchor-based detector used to put the fusion stack's size in
/// relation: a plain convolutional backbone plus separable class and box
/// heads on every pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSurrogate {
    pub backbone: Vec<ConvLayer>,
    /// Channels of the levels the heads (and TAFF) read from.
    pub level_channels: Vec<usize>,
    pub anchors: usize,
    pub classes: usize,
    pub d: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadReport {
    pub base_params: usize,
    pub taff_params: usize,
    /// `100 * taff / base`.
    pub overhead_percent: f64,
}

impl DetectorSurrogate {
    pub const FIXTURE: &'static str = include_str!("../fixtures/detector_surrogate.json");

    pub fn fixture() -> Self {
        serde_json::from_str(Self::FIXTURE).expect("bundled detector fixture parses")
    }

    pub fn taff_dims(&self) -> TaffDims {
        TaffDims {
            d: self.d,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            anchors: self.anchors,
        }
    }

    /// Backbone convolutions (weights and biases) plus, per level, a 3x3
    /// depthwise convolution followed by a pointwise projection for each of
    /// the class and box heads.
    pub fn base_params(&self) -> usize {
        let backbone: usize = self
            .backbone
            .iter()
            .map(|l| l.c_in * l.c_out * l.k * l.k + l.c_out)
            .sum();
        let separable = |c: usize, out: usize| (9 * c + c) + (c * out + out);
        let heads: usize = self
            .level_channels
            .iter()
            .map(|&c| separable(c, self.anchors * self.classes) + separable(c, self.anchors * 4))
            .sum();
        backbone + heads
    }

    pub fn overhead(&self) -> OverheadReport {
        let base = self.base_params();
        let taff = taff_param_count(&self.taff_dims(), &self.level_channels);
        OverheadReport {
            base_params: base,
            taff_params: taff,
            overhead_percent: 100.0 * taff as f64 / base as f64,
        }
    }
}
