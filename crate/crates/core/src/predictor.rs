//! Output layer: one tanh hidden layer over `[s_t; c_t; e_{y_{t-1}}]`,
//! followed by a dot product with each target word's output embedding.

use std::rc::Rc;

use crate::autodiff::{self, Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct PredictorNodes {
    /// `[hidden, m + 2d + embed]`.
    pub hidden: NodeId,
    /// `[hidden]`.
    pub hidden_bias: NodeId,
    /// `[|V|, hidden]`, one row per target word.
    pub output: NodeId,
}

/// `logit_y = tanh(W [s; c; e] + b)ᵀ ω_y` for every target word `y`.
///
/// `dropout` is an inverted-dropout mask applied to the hidden layer.
pub fn score_logits(
    g: &mut Graph,
    p: &PredictorNodes,
    s: NodeId,
    c: NodeId,
    e_prev: NodeId,
    dropout: Option<Rc<[f64]>>,
) -> Result<NodeId> {
    let input = g.concat(&[s, c, e_prev])?;
    let w = g.value(p.hidden);
    if w.cols() != g.value(input).len() {
        return Err(Error::Dimension(format!(
            "readout expects {} inputs, got {}",
            w.cols(),
            g.value(input).len()
        )));
    }
    if g.value(p.output).cols() != w.rows() {
        return Err(Error::Dimension(format!(
            "output embeddings have width {}, readout has {}",
            g.value(p.output).cols(),
            w.rows()
        )));
    }
    let pre = g.matmul(p.hidden, input)?;
    let pre = g.add(pre, p.hidden_bias)?;
    let mut hidden = g.tanh(pre)?;
    if let Some(mask) = dropout {
        hidden = g.mask(hidden, mask)?;
    }
    Ok(g.matmul(p.output, hidden)?)
}

/// Softmax over target-word scores.
pub fn predict_distribution(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Eval("empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eval("non-finite logits".into()));
    }
    Ok(autodiff::softmax(logits))
}
