//! Bidirectional GRU encoder producing the source annotation matrix.
//!
//! The GRU follows the Cho et al. convention where the update gate
//! interpolates toward the candidate:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ h̃
//! ```
//!
//! The three input matrices are stored stacked as one `[3d, in]` tensor
//! (rows `z | r | h`), the recurrent matrices separately so each can be
//! initialized orthogonal.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::UNK;
use crate::error::{Error, Result};
use crate::model::Ctx;
use crate::trainer::InitScheme;

/// Parameter names and sizes of one GRU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// A GRU's parameters bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct GruNodes {
    /// `[3h, in]`, rows ordered z, r, candidate.
    pub w: NodeId,
    /// `[3h]`.
    pub b: NodeId,
    pub u_z: NodeId,
    pub u_r: NodeId,
    pub u_h: NodeId,
    pub hidden: usize,
    pub input: usize,
}

impl GruParams {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        GruParams {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn specs(&self) -> Vec<(String, Vec<usize>, InitScheme)> {
        let (h, i) = (self.hidden_dim, self.input_dim);
        vec![
            (self.name("w"), vec![3 * h, i], InitScheme::Gaussian),
            (self.name("b"), vec![3 * h], InitScheme::Zero),
            (self.name("u_z"), vec![h, h], InitScheme::Orthogonal),
            (self.name("u_r"), vec![h, h], InitScheme::Orthogonal),
            (self.name("u_h"), vec![h, h], InitScheme::Orthogonal),
        ]
    }

    pub fn bind(&self, ctx: &mut Ctx<'_>) -> Result<GruNodes> {
        let nodes = GruNodes {
            w: ctx.param(&self.name("w"))?,
            b: ctx.param(&self.name("b"))?,
            u_z: ctx.param(&self.name("u_z"))?,
            u_r: ctx.param(&self.name("u_r"))?,
            u_h: ctx.param(&self.name("u_h"))?,
            hidden: self.hidden_dim,
            input: self.input_dim,
        };
        nodes.check(&ctx.graph)?;
        Ok(nodes)
    }
}

impl GruNodes {
    /// Validates the bound tensor shapes against each other.
    pub fn check(&self, g: &Graph) -> Result<()> {
        let h = self.hidden;
        let expect = |id: NodeId, shape: &[usize], what: &str| -> Result<()> {
            if g.value(id).shape() != shape {
                return Err(Error::Dimension(format!(
                    "GRU {what} has shape {:?}, expected {shape:?}",
                    g.value(id).shape()
                )));
            }
            Ok(())
        };
        expect(self.w, &[3 * h, self.input], "input weights")?;
        expect(self.b, &[3 * h], "bias")?;
        expect(self.u_z, &[h, h], "update recurrence")?;
        expect(self.u_r, &[h, h], "reset recurrence")?;
        expect(self.u_h, &[h, h], "candidate recurrence")?;
        Ok(())
    }

    /// `W x + b` for a single input vector, shape `[3h]`.
    pub fn project(&self, g: &mut Graph, input: NodeId) -> Result<NodeId> {
        if g.value(input).shape() != [self.input] {
            return Err(Error::Dimension(format!(
                "GRU input has shape {:?}, expected [{}]",
                g.value(input).shape(),
                self.input
            )));
        }
        let wx = g.matmul(self.w, input)?;
        Ok(g.add(wx, self.b)?)
    }

    /// `X Wᵀ + b` for a `[T, in]` matrix of inputs, shape `[T, 3h]`.
    pub fn project_rows(&self, g: &mut Graph, inputs: NodeId) -> Result<NodeId> {
        let xw = g.matmul_nt(inputs, self.w)?;
        Ok(g.add_row(xw, self.b)?)
    }
}

/// One GRU transition.
pub fn gru_step(g: &mut Graph, p: &GruNodes, prev: NodeId, input: NodeId) -> Result<NodeId> {
    let projected = p.project(g, input)?;
    gru_step_projected(g, p, prev, projected)
}

/// One GRU transition given the precomputed input projection `W x + b`.
pub fn gru_step_projected(g: &mut Graph, p: &GruNodes, prev: NodeId, projected: NodeId) -> Result<NodeId> {
    let h = p.hidden;
    if g.value(prev).shape() != [h] {
        return Err(Error::Dimension(format!(
            "GRU state has shape {:?}, expected [{h}]",
            g.value(prev).shape()
        )));
    }
    let xz = g.slice(projected, 0, h)?;
    let xr = g.slice(projected, h, h)?;
    let xh = g.slice(projected, 2 * h, h)?;

    let uz = g.matmul(p.u_z, prev)?;
    let z_pre = g.add(xz, uz)?;
    let z = g.sigmoid(z_pre)?;

    let ur = g.matmul(p.u_r, prev)?;
    let r_pre = g.add(xr, ur)?;
    let r = g.sigmoid(r_pre)?;

    let gated = g.mul(r, prev)?;
    let uh = g.matmul(p.u_h, gated)?;
    let cand_pre = g.add(xh, uh)?;
    let cand = g.tanh(cand_pre)?;

    // h + z ⊙ (h̃ - h)
    let delta = g.sub(cand, prev)?;
    let step = g.mul(z, delta)?;
    Ok(g.add(prev, step)?)
}

/// The encoder's annotations: one `2d` row per source position, forward
/// state first.
#[derive(Clone, Copy, Debug)]
pub struct SourceMemory {
    /// `[T_x, 2d]`.
    pub cells: NodeId,
    pub len: usize,
    pub dim: usize,
}

/// Embedding table and both directions' GRUs, bound.
#[derive(Clone, Copy, Debug)]
pub struct EncoderNodes {
    pub embed: NodeId,
    pub fwd: GruNodes,
    pub bwd: GruNodes,
}

/// Runs both GRUs over `source_ids` from zero initial states. Ids outside
/// the embedding table read the UNK row.
pub fn encode(g: &mut Graph, enc: &EncoderNodes, source_ids: &[usize]) -> Result<SourceMemory> {
    if source_ids.is_empty() {
        return Err(Error::Data("cannot encode an empty source sentence".into()));
    }
    let vocab = g.value(enc.embed).rows();
    if UNK >= vocab {
        return Err(Error::Dimension(format!("source vocabulary of {vocab} has no UNK row")));
    }
    let d = enc.fwd.hidden;
    if enc.bwd.hidden != d {
        return Err(Error::Dimension(format!(
            "forward GRU width {d} differs from backward width {}",
            enc.bwd.hidden
        )));
    }
    let rows: Vec<NodeId> = source_ids
        .iter()
        .map(|&id| g.row(enc.embed, if id < vocab { id } else { UNK }))
        .collect::<std::result::Result<_, _>>()?;
    let inputs = g.stack(&rows)?;
    let fwd_proj = enc.fwd.project_rows(g, inputs)?;
    let bwd_proj = enc.bwd.project_rows(g, inputs)?;

    let len = source_ids.len();
    let zero = g.constant(Tensor::zeros(&[d]));

    let mut fwd_states = Vec::with_capacity(len);
    let mut h = zero;
    for j in 0..len {
        let x = g.row(fwd_proj, j)?;
        h = gru_step_projected(g, &enc.fwd, h, x)?;
        fwd_states.push(h);
    }
    let mut bwd_states = vec![zero; len];
    let mut h = zero;
    for j in (0..len).rev() {
        let x = g.row(bwd_proj, j)?;
        h = gru_step_projected(g, &enc.bwd, h, x)?;
        bwd_states[j] = h;
    }
    let cells: Vec<NodeId> = fwd_states
        .iter()
        .zip(&bwd_states)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect::<std::result::Result<_, _>>()?;
    let cells = g.stack(&cells)?;
    Ok(SourceMemory { cells, len, dim: 2 * d })
}
