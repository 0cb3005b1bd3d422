//! Content-based read over the source annotations.
//!
//! Scores are `e_j = v_aᵀ tanh(W_a q + U_a h_j)` for a query `q`, weights
//! are their softmax, and the context is the weighted sum of annotations.
//! The query is a feedback state that already saw the previous target word.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::encoder::{gru_step, GruNodes, SourceMemory};
use crate::error::{Error, Result};

/// How the feedback state `H(s_{t-1}, e_{y_{t-1}})` is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    /// `tanh(A s + B e)`.
    #[default]
    Tanh,
    /// A GRU transition from `s` driven by `e`.
    Gru,
}

impl std::str::FromStr for FeedbackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(FeedbackKind::Tanh),
            "gru" => Ok(FeedbackKind::Gru),
            other => Err(Error::Setting(format!("unknown feedback kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    /// `[align, query_dim]`.
    pub w: NodeId,
    /// `[align, 2d]`.
    pub u: NodeId,
    /// `[align]`.
    pub v: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub enum FeedbackNodes {
    Tanh { state: NodeId, embed: NodeId },
    Gru(GruNodes),
}

/// Alignment weights over source positions and the resulting context.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub context: NodeId,
    pub weights: NodeId,
}

/// `s̃ = H(s_prev, e_prev)`.
pub fn feedback_state(g: &mut Graph, fb: &FeedbackNodes, s_prev: NodeId, e_prev: NodeId) -> Result<NodeId> {
    match fb {
        FeedbackNodes::Tanh { state, embed } => {
            let (a, b) = (g.value(*state), g.value(*embed));
            if a.cols() != g.value(s_prev).len() || b.cols() != g.value(e_prev).len() || a.rows() != b.rows() {
                return Err(Error::Dimension(format!(
                    "feedback weights {:?}/{:?} vs state {:?} and embedding {:?}",
                    a.shape(),
                    b.shape(),
                    g.value(s_prev).shape(),
                    g.value(e_prev).shape()
                )));
            }
            let from_state = g.matmul(*state, s_prev)?;
            let from_embed = g.matmul(*embed, e_prev)?;
            let pre = g.add(from_state, from_embed)?;
            Ok(g.tanh(pre)?)
        }
        FeedbackNodes::Gru(p) => gru_step(g, p, s_prev, e_prev),
    }
}

/// `U_a h_j` for every source cell, shape `[T_x, align]`. Independent of the
/// query, so it is computed once per sentence.
pub fn source_keys(g: &mut Graph, att: &AttentionNodes, source: &SourceMemory) -> Result<NodeId> {
    let u = g.value(att.u);
    if u.cols() != source.dim {
        return Err(Error::Dimension(format!(
            "U_a has shape {:?} but annotations have width {}",
            u.shape(),
            source.dim
        )));
    }
    Ok(g.matmul_nt(source.cells, att.u)?)
}

pub fn attend(g: &mut Graph, att: &AttentionNodes, query: NodeId, source: &SourceMemory) -> Result<Attention> {
    let keys = source_keys(g, att, source)?;
    attend_with_keys(g, att, query, source, keys)
}

/// [`attend`] with precomputed [`source_keys`].
pub fn attend_with_keys(
    g: &mut Graph,
    att: &AttentionNodes,
    query: NodeId,
    source: &SourceMemory,
    keys: NodeId,
) -> Result<Attention> {
    if source.len == 0 {
        return Err(Error::Data("attention over an empty source".into()));
    }
    let w = g.value(att.w);
    if w.cols() != g.value(query).len() {
        return Err(Error::Dimension(format!(
            "W_a has shape {:?} but the query has {:?}",
            w.shape(),
            g.value(query).shape()
        )));
    }
    let projected = g.matmul(att.w, query)?;
    let pre = g.add_row(keys, projected)?;
    let act = g.tanh(pre)?;
    let scores = g.matmul(act, att.v)?;
    let weights = g.softmax(scores)?;
    let context = g.vecmat(weights, source.cells)?;
    Ok(Attention { context, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn source(g: &mut Graph, rows: Vec<Vec<f64>>) -> SourceMemory {
        let len = rows.len();
        let dim = rows[0].len();
        let data = rows.into_iter().flatten().collect();
        SourceMemory {
            cells: g.constant(Tensor::matrix(len, dim, data).unwrap()),
            len,
            dim,
        }
    }

    fn params(g: &mut Graph, align: usize, qdim: usize, sdim: usize) -> AttentionNodes {
        let gen = |n: usize, k: f64| (0..n).map(|i| ((i as f64 + k) * 0.37).sin()).collect();
        AttentionNodes {
            w: g.param("w", Tensor::matrix(align, qdim, gen(align * qdim, 1.0)).unwrap()),
            u: g.param("u", Tensor::matrix(align, sdim, gen(align * sdim, 2.0)).unwrap()),
            v: g.param("v", Tensor::vector(gen(align, 3.0))),
        }
    }

    #[test]
    fn identical_cells_give_uniform_weights() {
        let mut g = Graph::new();
        let src = source(&mut g, vec![vec![0.1, -0.2, 0.3, 0.4]; 5]);
        let att = params(&mut g, 3, 2, 4);
        let q = g.constant(Tensor::vector(vec![0.5, -0.5]));
        let a = attend(&mut g, &att, q, &src).unwrap();
        for w in g.value(a.weights).data() {
            assert!((w - 0.2).abs() < 1e-15);
        }
        for (c, h) in g.value(a.context).data().iter().zip(&[0.1, -0.2, 0.3, 0.4]) {
            assert!((c - h).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_tanh_feedback_is_zero() {
        let mut g = Graph::new();
        let fb = FeedbackNodes::Tanh {
            state: g.param("a", Tensor::zeros(&[3, 3])),
            embed: g.param("b", Tensor::zeros(&[3, 2])),
        };
        let s = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let e = g.constant(Tensor::vector(vec![-1.0, 4.0]));
        let out = feedback_state(&mut g, &fb, s, e).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_feedback_with_zero_embedding_is_tanh_of_state() {
        let mut g = Graph::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let fb = FeedbackNodes::Tanh {
            state: g.param("a", eye),
            embed: g.param("b", Tensor::filled(&[3, 2], 0.7)),
        };
        let s = g.constant(Tensor::vector(vec![0.5, -1.5, 2.0]));
        let e = g.constant(Tensor::zeros(&[2]));
        let out = feedback_state(&mut g, &fb, s, e).unwrap();
        let expect: Vec<f64> = [0.5f64, -1.5, 2.0].iter().map(|x| x.tanh()).collect();
        assert_eq!(g.value(out).data(), expect.as_slice());
    }

    #[test]
    fn query_width_mismatch_is_rejected() {
        let mut g = Graph::new();
        let src = source(&mut g, vec![vec![0.0; 4]; 2]);
        let att = params(&mut g, 3, 2, 4);
        let q = g.constant(Tensor::vector(vec![0.5, -0.5, 0.1]));
        assert!(matches!(attend(&mut g, &att, q, &src), Err(Error::Dimension(_))));
    }
}
