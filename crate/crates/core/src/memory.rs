//! The decoder's buffer memory: an `n x m` matrix read and written once per
//! decoding step through content-based addressing.
//!
//! Addressing for a query state `s` over cells `M(i)`:
//!
//! ```text
//! a(i) = vᵀ tanh(W M(i) + U s)          (ScoreForm::Tanh, default)
//! a(i) = vᵀ (W M(i) + U s)              (ScoreForm::Linear)
//! w̃    = softmax(a)
//! g    = σ(w_g · s)
//! w    = g · w_prev + (1 - g) · w̃
//! ```
//!
//! In the linear form `vᵀ U s` is the same for every cell and cancels in
//! the softmax, so the state only reaches the weights through the gate.
//!
//! Writing erases then adds, both scaled per cell by the write weights:
//!
//! ```text
//! M'(i) = M(i) ⊙ (1 - w(i) μ_ers) + w(i) μ_add
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{attend_with_keys, AttentionNodes};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::encoder::{gru_step, GruNodes, SourceMemory};
use crate::error::{Error, Result};

/// Standard deviation of the per-cell noise added at initialization.
pub const INIT_NOISE_STD: f64 = 0.1;

/// Shape of the addressing score function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreForm {
    #[default]
    Tanh,
    Linear,
}

/// Buffer contents plus the addressing weights carried to the next step.
#[derive(Clone, Copy, Debug)]
pub struct BufferMemory {
    /// `[n, m]`.
    pub cells: NodeId,
    pub read_weights: NodeId,
    pub write_weights: NodeId,
}

/// Addressing parameters: `W, U: [m, m]`, `v, w_g: [m]`.
#[derive(Clone, Copy, Debug)]
pub struct AddressNodes {
    pub w: NodeId,
    pub u: NodeId,
    pub v: NodeId,
    pub gate: NodeId,
}

/// `W^ers, W^add: [m, m]`.
#[derive(Clone, Copy, Debug)]
pub struct WriteNodes {
    pub erase: NodeId,
    pub add: NodeId,
}

/// `W^r: [m, m]`, `W^y: [m, embed]`.
#[derive(Clone, Copy, Debug)]
pub struct PreStateNodes {
    pub read: NodeId,
    pub embed: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct Addressing {
    /// Final interpolated weights.
    pub weights: NodeId,
    /// Content weights before interpolation.
    pub content: NodeId,
    /// Scalar interpolation gate.
    pub gate: NodeId,
}

fn expect_shape(g: &Graph, id: NodeId, shape: &[usize], what: &str) -> Result<()> {
    if g.value(id).shape() != shape {
        return Err(Error::Dimension(format!(
            "{what} has shape {:?}, expected {shape:?}",
            g.value(id).shape()
        )));
    }
    Ok(())
}

fn cell_dims(g: &Graph, cells: NodeId) -> Result<(usize, usize)> {
    let c = g.value(cells);
    if c.rank() != 2 {
        return Err(Error::Dimension(format!(
            "memory cells have shape {:?}, expected [n, m]",
            c.shape()
        )));
    }
    Ok((c.rows(), c.cols()))
}

/// Content-based addressing with interpolation against `prev_weights`.
pub fn address(
    g: &mut Graph,
    p: &AddressNodes,
    state: NodeId,
    cells: NodeId,
    prev_weights: NodeId,
    form: ScoreForm,
) -> Result<Addressing> {
    let (n, m) = cell_dims(g, cells)?;
    expect_shape(g, state, &[m], "addressing state")?;
    expect_shape(g, prev_weights, &[n], "previous weights")?;
    expect_shape(g, p.w, &[m, m], "cell key matrix")?;
    expect_shape(g, p.u, &[m, m], "state key matrix")?;
    expect_shape(g, p.v, &[m], "score vector")?;
    expect_shape(g, p.gate, &[m], "gate vector")?;

    let keys = g.matmul_nt(cells, p.w)?;
    let from_state = g.matmul(p.u, state)?;
    let mut pre = g.add_row(keys, from_state)?;
    if form == ScoreForm::Tanh {
        pre = g.tanh(pre)?;
    }
    let scores = g.matmul(pre, p.v)?;
    let content = g.softmax(scores)?;

    let gate_pre = g.dot(p.gate, state)?;
    let gate = g.sigmoid(gate_pre)?;
    // w̃ + g (w_prev - w̃)
    let diff = g.sub(prev_weights, content)?;
    let carried = g.scale_by(gate, diff)?;
    let weights = g.add(content, carried)?;
    Ok(Addressing { weights, content, gate })
}

#[derive(Clone, Copy, Debug)]
pub struct Read {
    /// `[m]`, the weight-blended cell content.
    pub r: NodeId,
    pub addressing: Addressing,
}

pub fn read_buffer(
    g: &mut Graph,
    p: &AddressNodes,
    state: NodeId,
    buffer: &BufferMemory,
    form: ScoreForm,
) -> Result<Read> {
    let addressing = address(g, p, state, buffer.cells, buffer.read_weights, form)?;
    let r = g.vecmat(addressing.weights, buffer.cells)?;
    Ok(Read { r, addressing })
}

/// `s̃ = tanh(W^r r + W^y e_prev)`.
pub fn pre_state(g: &mut Graph, p: &PreStateNodes, r: NodeId, e_prev: NodeId) -> Result<NodeId> {
    let (wr, wy) = (g.value(p.read), g.value(p.embed));
    if wr.cols() != g.value(r).len() || wy.cols() != g.value(e_prev).len() || wr.rows() != wy.rows() {
        return Err(Error::Dimension(format!(
            "pre-state weights {:?}/{:?} vs read {:?} and embedding {:?}",
            wr.shape(),
            wy.shape(),
            g.value(r).shape(),
            g.value(e_prev).shape()
        )));
    }
    let a = g.matmul(p.read, r)?;
    let b = g.matmul(p.embed, e_prev)?;
    let sum = g.add(a, b)?;
    Ok(g.tanh(sum)?)
}

/// Where the write weights come from.
#[derive(Clone, Copy, Debug)]
pub enum WriteAddress<'a> {
    /// Reuse addressing computed elsewhere (the read of the same step).
    Shared(Addressing),
    Own(&'a AddressNodes),
}

#[derive(Clone, Copy, Debug)]
pub struct Write {
    /// Cells after erase and add; `read_weights` is carried over unchanged.
    pub buffer: BufferMemory,
    /// Cells after the erase phase only.
    pub erased: NodeId,
    pub addressing: Addressing,
    pub mu_erase: NodeId,
    pub mu_add: NodeId,
}

pub fn write_buffer(
    g: &mut Graph,
    state: NodeId,
    buffer: &BufferMemory,
    address_with: WriteAddress<'_>,
    wp: &WriteNodes,
    form: ScoreForm,
) -> Result<Write> {
    let (_, m) = cell_dims(g, buffer.cells)?;
    expect_shape(g, state, &[m], "write state")?;
    expect_shape(g, wp.erase, &[m, m], "erase matrix")?;
    expect_shape(g, wp.add, &[m, m], "add matrix")?;
    let addressing = match address_with {
        WriteAddress::Shared(a) => a,
        WriteAddress::Own(p) => address(g, p, state, buffer.cells, buffer.write_weights, form)?,
    };
    let w = addressing.weights;

    let erase_pre = g.matmul(wp.erase, state)?;
    let mu_erase = g.sigmoid(erase_pre)?;
    let add_pre = g.matmul(wp.add, state)?;
    let mu_add = g.sigmoid(add_pre)?;

    let erase = g.outer(w, mu_erase)?;
    let keep = g.one_minus(erase)?;
    let erased = g.mul(buffer.cells, keep)?;
    let added = g.outer(w, mu_add)?;
    let cells = g.add(erased, added)?;
    Ok(Write {
        buffer: BufferMemory {
            cells,
            read_weights: buffer.read_weights,
            write_weights: w,
        },
        erased,
        addressing,
        mu_erase,
        mu_add,
    })
}

/// Initial buffer from the source annotations and explicit per-cell noise
/// (`noise: [n, m]`).
///
/// The shared cell content is `tanh(W_ini · mean_j h_j)`, or with `literal`
/// set, `tanh(W_ini · Σ_j h_j) / T_x`.
pub fn init_buffer_with_noise(
    g: &mut Graph,
    w_ini: NodeId,
    source: &SourceMemory,
    noise: Tensor,
    literal: bool,
) -> Result<BufferMemory> {
    let w = g.value(w_ini);
    if w.rank() != 2 || w.cols() != source.dim {
        return Err(Error::Dimension(format!(
            "W_ini has shape {:?}, annotations have width {}",
            w.shape(),
            source.dim
        )));
    }
    let m = w.rows();
    if noise.rank() != 2 || noise.cols() != m {
        return Err(Error::Dimension(format!(
            "noise has shape {:?}, cells have width {m}",
            noise.shape()
        )));
    }
    let n = noise.rows();
    let t = source.len as f64;
    let mean = if literal {
        let ones = g.constant(Tensor::filled(&[source.len], 1.0));
        let total = g.vecmat(ones, source.cells)?;
        let proj = g.matmul(w_ini, total)?;
        let act = g.tanh(proj)?;
        g.scale(act, 1.0 / t)?
    } else {
        let avg = g.constant(Tensor::filled(&[source.len], 1.0 / t));
        let mean_h = g.vecmat(avg, source.cells)?;
        let proj = g.matmul(w_ini, mean_h)?;
        g.tanh(proj)?
    };
    let noise = g.constant(noise);
    let cells = g.add_row(noise, mean)?;
    let uniform = Tensor::filled(&[n], 1.0 / n as f64);
    let read_weights = g.constant(uniform.clone());
    let write_weights = g.constant(uniform);
    Ok(BufferMemory {
        cells,
        read_weights,
        write_weights,
    })
}

/// `n x m` matrix of N(0, std²) draws; all zeros when `std == 0`.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, m: usize, std: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(&[n, m]);
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("positive std");
        for v in t.data_mut() {
            *v = normal.sample(rng);
        }
    }
    t
}

/// Initial buffer of `n` cells with fresh N(0, `noise_std`²) noise per cell.
pub fn init_buffer<R: Rng + ?Sized>(
    g: &mut Graph,
    w_ini: NodeId,
    source: &SourceMemory,
    n: usize,
    noise_std: f64,
    literal: bool,
    rng: &mut R,
) -> Result<BufferMemory> {
    if n == 0 {
        return Err(Error::Dimension("buffer needs at least one cell".into()));
    }
    let m = g.value(w_ini).rows();
    let noise = sample_noise(n, m, noise_std, rng);
    init_buffer_with_noise(g, w_ini, source, noise, literal)
}

/// All parameters of the memory-enhanced decoder step, bound.
#[derive(Clone, Copy, Debug)]
pub struct MemDecNodes {
    pub read: AddressNodes,
    /// `None` shares the read addressing with the write.
    pub write: Option<AddressNodes>,
    pub ops: WriteNodes,
    pub pre: PreStateNodes,
    pub gru: GruNodes,
    pub attention: AttentionNodes,
    pub form: ScoreForm,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    /// Vector-state, width `m`.
    pub s: NodeId,
    pub buffer: BufferMemory,
}

/// Everything produced by one decoding step.
#[derive(Clone, Copy, Debug)]
pub struct MemStep {
    pub state: DecoderState,
    pub read: Read,
    pub pre_state: NodeId,
    pub context: NodeId,
    pub alpha: NodeId,
    pub write: Write,
}

/// One decoder step: read the buffer with `s_{t-1}`, form the pre-state,
/// read the source, update the vector-state with the buffer read as the
/// recurrent input, then write the buffer with `s_t`.
pub fn decode_step(
    g: &mut Graph,
    p: &MemDecNodes,
    prev: &DecoderState,
    e_prev: NodeId,
    source: &SourceMemory,
    keys: NodeId,
) -> Result<MemStep> {
    let read = read_buffer(g, &p.read, prev.s, &prev.buffer, p.form)?;
    let pre = pre_state(g, &p.pre, read.r, e_prev)?;
    let att = attend_with_keys(g, &p.attention, pre, source, keys)?;
    let input = g.concat(&[e_prev, att.context])?;
    let s = gru_step(g, &p.gru, read.r, input)?;

    let carried = BufferMemory {
        read_weights: read.addressing.weights,
        ..prev.buffer
    };
    let address_with = match &p.write {
        Some(w) => WriteAddress::Own(w),
        None => WriteAddress::Shared(read.addressing),
    };
    let write = write_buffer(g, s, &carried, address_with, &p.ops, p.form)?;
    Ok(MemStep {
        state: DecoderState {
            s,
            buffer: write.buffer,
        },
        read,
        pre_state: pre,
        context: att.context,
        alpha: att.weights,
        write,
    })
}
