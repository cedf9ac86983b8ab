use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Tensor;

/// Coordinates per input row of the neighbor embedding: offset plus anchor.
pub const EMBED_INPUT: usize = 6;
/// Coordinates per input row of the point-MLP baseline.
pub const POINT_INPUT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Neighbor embedding, cascaded self-attention, concat projection, pool, head.
    Attention,
    /// Shared per-point MLP, pool, head.
    PointMlp,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Attention => "attention",
            Architecture::PointMlp => "point-mlp",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Architecture::Attention => 0,
            Architecture::PointMlp => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Architecture::Attention),
            1 => Some(Architecture::PointMlp),
            _ => None,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "attention" | "pct" => Ok(Architecture::Attention),
            "point-mlp" | "pointnet" => Ok(Architecture::PointMlp),
            other => Err(ModelError::InvalidArgument(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Layer sizes. The value width of every attention layer equals `width`, so
/// the layers cascade without reshaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub arch: Architecture,
    /// Nominal points per input cloud. Clouds of other sizes are accepted.
    pub n_in: usize,
    /// Anchor count.
    pub anchors: usize,
    /// Feature width `D` of the embedding and of every attention layer.
    pub width: usize,
    /// Query/key width.
    pub attn_dim: usize,
    /// Points per anchor group, the anchor included.
    pub group_k: usize,
    pub embed_hidden: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn attention(classes: usize) -> Self {
        Self {
            arch: Architecture::Attention,
            n_in: 256,
            anchors: 64,
            width: 64,
            attn_dim: 16,
            group_k: 8,
            embed_hidden: 32,
            head_hidden: 32,
            classes,
            layers: 4,
        }
    }

    pub fn point_mlp(classes: usize) -> Self {
        Self {
            arch: Architecture::PointMlp,
            layers: 0,
            ..Self::attention(classes)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_in", self.n_in),
            ("width", self.width),
            ("embed_hidden", self.embed_hidden),
            ("head_hidden", self.head_hidden),
        ];
        let attention = [
            ("anchors", self.anchors),
            ("attn_dim", self.attn_dim),
            ("group_k", self.group_k),
            ("layers", self.layers),
        ];
        let needed = positive
            .iter()
            .chain(attention.iter().filter(|_| self.arch == Architecture::Attention));
        if let Some((name, _)) = needed.into_iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidArgument(format!("{name} must be positive")));
        }
        if self.classes < 2 {
            return Err(ModelError::InvalidArgument(format!(
                "at least two classes are required, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// Shapes of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<[usize; 2]> {
        let (d, h) = (self.width, self.embed_hidden);
        let mut shapes = Vec::new();
        let input = match self.arch {
            Architecture::Attention => EMBED_INPUT,
            Architecture::PointMlp => POINT_INPUT,
        };
        shapes.extend([[input, h], [1, h], [h, d], [1, d]]);
        if self.arch == Architecture::Attention {
            for _ in 0..self.layers {
                shapes.extend([[d, self.attn_dim], [d, self.attn_dim], [d, d]]);
            }
            shapes.push([self.layers * d, d]);
        }
        shapes.extend([
            [d, self.head_hidden],
            [1, self.head_hidden],
            [self.head_hidden, self.classes],
            [1, self.classes],
        ]);
        shapes
    }
}

/// Index of each named parameter inside [`ModelParams::tensors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    layers: usize,
    attention: bool,
}

pub(crate) const EMBED_W1: usize = 0;
pub(crate) const EMBED_B1: usize = 1;
pub(crate) const EMBED_W2: usize = 2;
pub(crate) const EMBED_B2: usize = 3;

impl Layout {
    pub(crate) fn new(dims: &ModelDims) -> Self {
        Self {
            layers: dims.layers,
            attention: dims.arch == Architecture::Attention,
        }
    }

    /// `(W_Q, W_K, W_V)` of the 0-based layer `l`.
    pub(crate) fn attention(&self, l: usize) -> (usize, usize, usize) {
        let base = 4 + 3 * l;
        (base, base + 1, base + 2)
    }

    pub(crate) fn concat_proj(&self) -> usize {
        4 + 3 * self.layers
    }

    /// `(W1, b1, W2, b2)` of the classification head.
    pub(crate) fn head(&self) -> (usize, usize, usize, usize) {
        let base = if self.attention { self.concat_proj() + 1 } else { 4 };
        (base, base + 1, base + 2, base + 3)
    }
}

/// Every trainable tensor of one model, in a fixed declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Gaussian initialization scaled by `sqrt(2 / fan_in)`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self, ModelError> {
        dims.validate()?;
        let tensors = dims
            .param_shapes()
            .into_iter()
            .map(|[r, c]| {
                let data = if r == 1 {
                    vec![0.0; c]
                } else {
                    let std = (2.0 / r as f64).sqrt();
                    (0..r * c)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                };
                Tensor::matrix(r, c, data)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { dims, tensors })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self, ModelError> {
        dims.validate()?;
        let tensors = dims
            .param_shapes()
            .into_iter()
            .map(|[r, c]| Tensor::zeros(vec![r, c]))
            .collect();
        Ok(Self { dims, tensors })
    }

    /// Rejects tensor lists whose shapes disagree with `dims`.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        dims.validate()?;
        let shapes = dims.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(ModelError::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (i, (s, t)) in shapes.iter().zip(&tensors).enumerate() {
            if t.shape() != s {
                return Err(ModelError::InvalidArgument(format!(
                    "parameter {i} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.dims)
    }
}
