//! Point-cloud classifiers built on the autodiff graph.
//!
//! The attention model groups points around sampled anchors, embeds each
//! group with a shared MLP and max aggregation, passes the anchor features
//! through cascaded residual self-attention layers, projects the
//! concatenated layer outputs, max-pools over anchors and classifies with a
//! small MLP head. The point-MLP baseline skips grouping and attention.
//!
//! Every forward pass reports the pre-softmax attention scores of each layer
//! and the per-point feature map that precedes the global pool, which is what
//! the self-entropy losses consume.

mod checkpoint;
mod params;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};
use crate::geometry::{self, GeometryError, PointCloud};
use crate::sampling::{self, density_profile, SampleSpec, SamplerVariant, SamplingError};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use params::{Architecture, ModelDims, ModelParams, EMBED_INPUT, POINT_INPUT};

use params::{EMBED_B1, EMBED_B2, EMBED_W1, EMBED_W2};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Values produced by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    /// Pre-softmax score map of each attention layer, `M x M`. Empty for the
    /// point-MLP baseline.
    pub attention_maps: Vec<Tensor>,
    /// The `M x D` map that feeds the global max-pool.
    pub point_features: Tensor,
    /// Anchor indices into the input cloud; every point for the baseline.
    pub anchors: Vec<usize>,
}

impl ForwardTrace {
    pub fn prediction(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct TraceNodes {
    pub logits: NodeId,
    pub attention_maps: Vec<NodeId>,
    pub point_features: NodeId,
    pub anchors: Vec<usize>,
}

/// Attention projections of one layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
}

/// Places every parameter on `g`, as trainable leaves or as constants.
pub fn bind_params(g: &mut Graph, params: &ModelParams, trainable: bool) -> Vec<NodeId> {
    params
        .tensors()
        .iter()
        .map(|t| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect()
}

/// Chooses anchors with `spec`, capping the count at the number of points
/// the sampler can actually return.
pub fn select_anchors<R: Rng + ?Sized>(
    cloud: &PointCloud,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<Vec<usize>, ModelError> {
    let mut m = spec.m.min(cloud.len());
    if let Some(variant) = spec.variant.density() {
        if cloud.len() <= spec.k {
            // too few points for a density estimate
            return Ok(sampling::fps_sample(cloud, m, 0)?);
        }
        let profile = density_profile(cloud, spec.k, variant)?;
        m = m.min(profile.positive_count());
        return Ok(sampling::weighted_sample_without_replacement(&profile.weights, m, rng)?);
    }
    let spec = SampleSpec {
        m,
        fps_start: if spec.variant == SamplerVariant::Fps {
            spec.fps_start.min(cloud.len() - 1)
        } else {
            spec.fps_start
        },
        ..*spec
    };
    Ok(sampling::sample(cloud, &spec, rng)?)
}

/// Self-inclusive groups: each anchor followed by its `group_k - 1` nearest
/// other points. Returns `anchors.len() * group_k` rows of
/// `[p_j - p_anchor, p_anchor]`.
pub fn group_features(cloud: &PointCloud, anchors: &[usize], group_k: usize) -> Result<Tensor, ModelError> {
    if group_k == 0 || group_k > cloud.len() {
        return Err(ModelError::InvalidArgument(format!(
            "group size must satisfy 1 <= group_k <= N (group_k = {group_k}, N = {})",
            cloud.len()
        )));
    }
    let pts = cloud.points();
    let mut data = Vec::with_capacity(anchors.len() * group_k * EMBED_INPUT);
    for &a in anchors {
        let anchor = *pts.get(a).ok_or_else(|| {
            ModelError::InvalidArgument(format!("anchor {a} out of range for {} points", pts.len()))
        })?;
        let others = geometry::nearest_to(pts, &anchor, group_k - 1, Some(a));
        for j in std::iter::once(a).chain(others.into_iter().map(|(_, j)| j)) {
            let p = pts[j];
            data.extend_from_slice(&[
                p[0] - anchor[0],
                p[1] - anchor[1],
                p[2] - anchor[2],
                anchor[0],
                anchor[1],
                anchor[2],
            ]);
        }
    }
    Ok(Tensor::matrix(anchors.len() * group_k, EMBED_INPUT, data)?)
}

fn mlp2(g: &mut Graph, x: NodeId, w1: NodeId, b1: NodeId, w2: NodeId, b2: NodeId, relu_out: bool) -> Result<NodeId, AutodiffError> {
    let h = g.linear(x, w1, b1)?;
    let h = g.relu(h)?;
    let y = g.linear(h, w2, b2)?;
    if relu_out {
        g.relu(y)
    } else {
        Ok(y)
    }
}

/// Records the neighbor embedding `F_s` (one row per anchor).
pub fn record_neighbor_embed(
    g: &mut Graph,
    p: &[NodeId],
    cloud: &PointCloud,
    anchors: &[usize],
    group_k: usize,
) -> Result<NodeId, ModelError> {
    let group_k = group_k.min(cloud.len());
    let x = g.constant(group_features(cloud, anchors, group_k)?);
    let h = mlp2(g, x, p[EMBED_W1], p[EMBED_B1], p[EMBED_W2], p[EMBED_B2], true)?;
    Ok(g.max_over_groups(h, group_k)?)
}

/// Records one residual self-attention layer. Returns `(F_out, S)` where `S`
/// is the pre-softmax score map.
pub fn record_self_attention(
    g: &mut Graph,
    f_in: NodeId,
    layer: AttentionNodes,
) -> Result<(NodeId, NodeId), AutodiffError> {
    let d_a = g.value(layer.w_q).cols();
    let q = g.matmul(f_in, layer.w_q)?;
    let k = g.matmul(f_in, layer.w_k)?;
    let v = g.matmul(f_in, layer.w_v)?;
    let kt = g.transpose(k)?;
    let qk = g.matmul(q, kt)?;
    let s = g.scale(qk, 1.0 / (d_a as f64).sqrt())?;
    let attn = g.softmax_rows(s, 1.0)?;
    let a = g.matmul(attn, v)?;
    let out = g.add(a, f_in)?;
    if g.value(out).shape() != g.value(f_in).shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "self_attention",
            left: g.value(out).shape().to_vec(),
            right: g.value(f_in).shape().to_vec(),
        });
    }
    Ok((out, s))
}

/// Records the full forward pass for fixed anchors. For the point-MLP
/// baseline `anchors` and `group_k` are ignored and every point is used.
pub fn record_forward(
    g: &mut Graph,
    params: &ModelParams,
    p: &[NodeId],
    cloud: &PointCloud,
    anchors: &[usize],
    group_k: usize,
) -> Result<TraceNodes, ModelError> {
    let dims = params.dims();
    let layout = params.layout();
    let (hw1, hb1, hw2, hb2) = layout.head();
    let (features, maps, anchors) = match dims.arch {
        Architecture::Attention => {
            let mut f = record_neighbor_embed(g, p, cloud, anchors, group_k)?;
            let mut outs = Vec::with_capacity(dims.layers);
            let mut maps = Vec::with_capacity(dims.layers);
            for l in 0..dims.layers {
                let (q, k, v) = layout.attention(l);
                let nodes = AttentionNodes {
                    w_q: p[q],
                    w_k: p[k],
                    w_v: p[v],
                };
                let (out, s) = record_self_attention(g, f, nodes)?;
                outs.push(out);
                maps.push(s);
                f = out;
            }
            let cat = g.concat(&outs, 1)?;
            let f_o = g.matmul(cat, p[layout.concat_proj()])?;
            (f_o, maps, anchors.to_vec())
        }
        Architecture::PointMlp => {
            let coords: Vec<f64> = cloud.points().iter().flatten().copied().collect();
            let x = g.constant(Tensor::matrix(cloud.len(), POINT_INPUT, coords)?);
            let f = mlp2(g, x, p[EMBED_W1], p[EMBED_B1], p[EMBED_W2], p[EMBED_B2], false)?;
            (f, Vec::new(), (0..cloud.len()).collect())
        }
    };
    let pooled = g.max_over_axis(features, 0)?;
    let logits = mlp2(g, pooled, p[hw1], p[hb1], p[hw2], p[hb2], false)?;
    Ok(TraceNodes {
        logits,
        attention_maps: maps,
        point_features: features,
        anchors,
    })
}

fn collect(g: &Graph, nodes: TraceNodes) -> ForwardTrace {
    ForwardTrace {
        logits: g.value(nodes.logits).data().to_vec(),
        attention_maps: nodes.attention_maps.iter().map(|&s| g.value(s).clone()).collect(),
        point_features: g.value(nodes.point_features).clone(),
        anchors: nodes.anchors,
    }
}

/// `F_s` for anchors drawn with `spec`.
pub fn neighbor_embed<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &ModelParams,
    spec: &SampleSpec,
    group_k: usize,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>), ModelError> {
    require_arch(params, Architecture::Attention)?;
    let anchors = select_anchors(cloud, spec, rng)?;
    let mut g = Graph::new();
    let p = bind_params(&mut g, params, false);
    let f = record_neighbor_embed(&mut g, &p, cloud, &anchors, group_k)?;
    Ok((g.value(f).clone(), anchors))
}

/// Projections of a single attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl AttentionLayer {
    /// The 0-based layer `l` of `params`.
    pub fn from_params(params: &ModelParams, l: usize) -> Result<Self, ModelError> {
        if params.dims().arch != Architecture::Attention || l >= params.dims().layers {
            return Err(ModelError::InvalidArgument(format!("no attention layer {l}")));
        }
        let (q, k, v) = params.layout().attention(l);
        let t = params.tensors();
        Ok(Self {
            w_q: t[q].clone(),
            w_k: t[k].clone(),
            w_v: t[v].clone(),
        })
    }
}

/// Returns `(F_out, S)` for one residual self-attention layer.
pub fn self_attention_layer(f_in: &Tensor, layer: &AttentionLayer) -> Result<(Tensor, Tensor), ModelError> {
    let mut g = Graph::new();
    let f = g.constant(f_in.clone());
    let nodes = AttentionNodes {
        w_q: g.constant(layer.w_q.clone()),
        w_k: g.constant(layer.w_k.clone()),
        w_v: g.constant(layer.w_v.clone()),
    };
    let (out, s) = record_self_attention(&mut g, f, nodes)?;
    Ok((g.value(out).clone(), g.value(s).clone()))
}

/// Forward pass with anchors drawn from `spec`.
pub fn forward<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &ModelParams,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<ForwardTrace, ModelError> {
    match params.dims().arch {
        Architecture::Attention => {
            let anchors = select_anchors(cloud, spec, rng)?;
            forward_with_anchors(cloud, params, &anchors, params.dims().group_k)
        }
        Architecture::PointMlp => baseline_forward(cloud, params),
    }
}

/// Forward pass with caller-chosen anchors and group size.
pub fn forward_with_anchors(
    cloud: &PointCloud,
    params: &ModelParams,
    anchors: &[usize],
    group_k: usize,
) -> Result<ForwardTrace, ModelError> {
    require_arch(params, Architecture::Attention)?;
    let mut g = Graph::new();
    let p = bind_params(&mut g, params, false);
    let nodes = record_forward(&mut g, params, &p, cloud, anchors, group_k)?;
    Ok(collect(&g, nodes))
}

pub fn baseline_forward(cloud: &PointCloud, params: &ModelParams) -> Result<ForwardTrace, ModelError> {
    require_arch(params, Architecture::PointMlp)?;
    let mut g = Graph::new();
    let p = bind_params(&mut g, params, false);
    let nodes = record_forward(&mut g, params, &p, cloud, &[], 0)?;
    Ok(collect(&g, nodes))
}

fn require_arch(params: &ModelParams, arch: Architecture) -> Result<(), ModelError> {
    if params.dims().arch == arch {
        Ok(())
    } else {
        Err(ModelError::InvalidArgument(format!(
            "operation needs a {} model, got {}",
            arch.name(),
            params.dims().arch.name()
        )))
    }
}
