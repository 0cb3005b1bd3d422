//! The full encoder-decoder: parameter layout, binding into a graph, and
//! teacher-forced and free-running decoding.

use std::collections::HashMap;
use std::rc::Rc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend_with_keys, feedback_state, source_keys, AttentionNodes, FeedbackKind, FeedbackNodes};
use crate::autodiff::{self, Graph, NodeId, Tensor};
use crate::data::{IdPair, BOS, EOS};
use crate::encoder::{encode, gru_step, EncoderNodes, GruParams, SourceMemory};
use crate::error::{Error, Result};
use crate::eval::{self, StepScorer};
use crate::memory::{self, AddressNodes, DecoderState, MemDecNodes, PreStateNodes, ScoreForm, WriteNodes};
use crate::predictor::{score_logits, PredictorNodes};
use crate::trainer::{derive_seed, InitScheme, ParameterStore};

const INFERENCE_STREAM: u64 = 0x1f;

/// Names of parameters that only exist in the memory-enhanced decoder.
pub const MEMORY_PREFIX: &str = "mem.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Attention decoder with feedback attention, no buffer memory.
    Baseline,
    /// Attention decoder whose state is extended by the buffer memory.
    MemDec,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "memdec" => Ok(Variant::MemDec),
            other => Err(Error::Setting(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::MemDec => "memdec",
        })
    }
}

/// Architecture and sizes of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    /// Encoder GRU width `d`; annotations are `2d` wide.
    pub hidden_dim: usize,
    /// Decoder state and memory cell width `m`.
    pub cell_width: usize,
    /// Number of memory cells `n` (unused by the baseline).
    pub cells: usize,
    pub align_dim: usize,
    pub share_weights: bool,
    pub literal_init: bool,
    pub score_form: ScoreForm,
    pub feedback: FeedbackKind,
    pub init_noise_std: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("cell_width", self.cell_width),
            ("align_dim", self.align_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Setting(format!("{name} must be positive")));
            }
        }
        if self.variant == Variant::MemDec && self.cells == 0 {
            return Err(Error::Setting("cells must be positive".into()));
        }
        if !(self.init_noise_std >= 0.0) {
            return Err(Error::Setting("init_noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    fn annotation_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    fn encoder_gru(&self, dir: &str) -> GruParams {
        GruParams::new(format!("enc.{dir}"), self.embed_dim, self.hidden_dim)
    }

    fn decoder_gru(&self) -> GruParams {
        GruParams::new("dec.gru", self.embed_dim + self.annotation_dim(), self.cell_width)
    }

    fn feedback_gru(&self) -> GruParams {
        GruParams::new("att.fb.gru", self.embed_dim, self.cell_width)
    }

    /// Every trainable tensor: name, shape, init scheme.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, InitScheme)> {
        use InitScheme::*;
        let (e, m, a2, al) = (self.embed_dim, self.cell_width, self.annotation_dim(), self.align_dim);
        let mut out: Vec<(String, Vec<usize>, InitScheme)> = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>, init| out.push((name.to_string(), shape, init));
        push("src.embed", vec![self.src_vocab, e], Gaussian);
        push("tgt.embed", vec![self.tgt_vocab, e], Gaussian);
        push("dec.init", vec![m, a2], Gaussian);
        push("att.w", vec![al, m], Gaussian);
        push("att.u", vec![al, a2], Gaussian);
        push("att.v", vec![al], Gaussian);
        push("out.hidden", vec![m, m + a2 + e], Gaussian);
        push("out.hidden_b", vec![m], Zero);
        push("out.embed", vec![self.tgt_vocab, m], Gaussian);
        match self.variant {
            Variant::Baseline => match self.feedback {
                FeedbackKind::Tanh => {
                    push("att.fb.state", vec![m, m], Gaussian);
                    push("att.fb.embed", vec![m, e], Gaussian);
                }
                FeedbackKind::Gru => out.extend(self.feedback_gru().specs()),
            },
            Variant::MemDec => {
                push("mem.init", vec![m, a2], Gaussian);
                push("mem.pre.read", vec![m, m], Gaussian);
                push("mem.pre.embed", vec![m, e], Gaussian);
                let heads: &[&str] = if self.share_weights {
                    &["read"]
                } else {
                    &["read", "write"]
                };
                for head in heads {
                    push(&format!("mem.{head}.w"), vec![m, m], Gaussian);
                    push(&format!("mem.{head}.u"), vec![m, m], Gaussian);
                    push(&format!("mem.{head}.v"), vec![m], Gaussian);
                    push(&format!("mem.{head}.gate"), vec![m], Gaussian);
                }
                push("mem.erase", vec![m, m], Gaussian);
                push("mem.add", vec![m, m], Gaussian);
            }
        }
        out.extend(self.encoder_gru("fwd").specs());
        out.extend(self.encoder_gru("bwd").specs());
        out.extend(self.decoder_gru().specs());
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn num_weights(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// A graph plus lazily bound parameters from a store.
pub struct Ctx<'a> {
    pub graph: Graph,
    store: &'a ParameterStore,
    bound: HashMap<String, NodeId>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
        }
    }

    /// Leaf for parameter `name`, bound on first use.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let value = self.store.value(name)?.clone();
        let id = self.graph.param(name, value);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }
}

#[derive(Clone, Copy, Debug)]
enum DecoderNodes {
    Baseline {
        gru: crate::encoder::GruNodes,
        feedback: FeedbackNodes,
    },
    MemDec {
        nodes: MemDecNodes,
        w_ini: NodeId,
    },
}

/// All parameters bound into one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    spec: ModelSpec,
    encoder: EncoderNodes,
    tgt_embed: NodeId,
    dec_init: NodeId,
    attention: AttentionNodes,
    predictor: PredictorNodes,
    decoder: DecoderNodes,
    zero_embed: NodeId,
}

/// Encoded source sentence.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    pub source: SourceMemory,
    /// `U_a h_j` for every position.
    pub keys: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub enum State {
    Baseline { s: NodeId },
    MemDec(DecoderState),
}

impl State {
    pub fn vector_state(&self) -> NodeId {
        match self {
            State::Baseline { s } => *s,
            State::MemDec(d) => d.s,
        }
    }
}

/// Per-step quantities exported for inspection.
#[derive(Clone, Copy, Debug)]
pub struct StepTrace {
    pub alpha: NodeId,
    pub read_weights: NodeId,
    pub write_weights: NodeId,
    pub gate_read: NodeId,
    pub gate_write: NodeId,
    pub mu_erase: NodeId,
    pub mu_add: NodeId,
    pub cells: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub state: State,
    pub logits: NodeId,
    pub context: NodeId,
    pub alpha: NodeId,
    pub trace: Option<StepTrace>,
}

/// Inverted-dropout mask: each unit kept with probability `1 - rate` and
/// scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Rc<[f64]> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

impl BoundModel {
    pub fn bind(spec: &ModelSpec, ctx: &mut Ctx<'_>) -> Result<Self> {
        spec.validate()?;
        let encoder = EncoderNodes {
            embed: ctx.param("src.embed")?,
            fwd: spec.encoder_gru("fwd").bind(ctx)?,
            bwd: spec.encoder_gru("bwd").bind(ctx)?,
        };
        let attention = AttentionNodes {
            w: ctx.param("att.w")?,
            u: ctx.param("att.u")?,
            v: ctx.param("att.v")?,
        };
        let predictor = PredictorNodes {
            hidden: ctx.param("out.hidden")?,
            hidden_bias: ctx.param("out.hidden_b")?,
            output: ctx.param("out.embed")?,
        };
        let gru = spec.decoder_gru().bind(ctx)?;
        let decoder = match spec.variant {
            Variant::Baseline => {
                let feedback = match spec.feedback {
                    FeedbackKind::Tanh => FeedbackNodes::Tanh {
                        state: ctx.param("att.fb.state")?,
                        embed: ctx.param("att.fb.embed")?,
                    },
                    FeedbackKind::Gru => FeedbackNodes::Gru(spec.feedback_gru().bind(ctx)?),
                };
                DecoderNodes::Baseline { gru, feedback }
            }
            Variant::MemDec => {
                let mut head = |name: &str| -> Result<AddressNodes> {
                    Ok(AddressNodes {
                        w: ctx.param(&format!("mem.{name}.w"))?,
                        u: ctx.param(&format!("mem.{name}.u"))?,
                        v: ctx.param(&format!("mem.{name}.v"))?,
                        gate: ctx.param(&format!("mem.{name}.gate"))?,
                    })
                };
                let read = head("read")?;
                let write = if spec.share_weights { None } else { Some(head("write")?) };
                let nodes = MemDecNodes {
                    read,
                    write,
                    ops: WriteNodes {
                        erase: ctx.param("mem.erase")?,
                        add: ctx.param("mem.add")?,
                    },
                    pre: PreStateNodes {
                        read: ctx.param("mem.pre.read")?,
                        embed: ctx.param("mem.pre.embed")?,
                    },
                    gru,
                    attention,
                    form: spec.score_form,
                };
                DecoderNodes::MemDec {
                    nodes,
                    w_ini: ctx.param("mem.init")?,
                }
            }
        };
        let zero_embed = ctx.graph.constant(Tensor::zeros(&[spec.embed_dim]));
        Ok(BoundModel {
            spec: spec.clone(),
            encoder,
            tgt_embed: ctx.param("tgt.embed")?,
            dec_init: ctx.param("dec.init")?,
            attention,
            predictor,
            decoder,
            zero_embed,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn encode(&self, g: &mut Graph, source_ids: &[usize]) -> Result<Encoded> {
        let source = encode(g, &self.encoder, source_ids)?;
        let keys = source_keys(g, &self.attention, &source)?;
        Ok(Encoded { source, keys })
    }

    /// Decoder state before the first target word. The vector-state is
    /// `tanh(W_s · mean_j h_j)`; the memory variant also builds its buffer
    /// with the given `[n, m]` noise.
    pub fn initial_state(&self, g: &mut Graph, enc: &Encoded, noise: Option<Tensor>) -> Result<State> {
        let t = enc.source.len;
        let avg = g.constant(Tensor::filled(&[t], 1.0 / t as f64));
        let mean_h = g.vecmat(avg, enc.source.cells)?;
        let pre = g.matmul(self.dec_init, mean_h)?;
        let s = g.tanh(pre)?;
        match &self.decoder {
            DecoderNodes::Baseline { .. } => Ok(State::Baseline { s }),
            DecoderNodes::MemDec { w_ini, .. } => {
                let noise = noise.unwrap_or_else(|| Tensor::zeros(&[self.spec.cells, self.spec.cell_width]));
                let buffer = memory::init_buffer_with_noise(g, *w_ini, &enc.source, noise, self.spec.literal_init)?;
                Ok(State::MemDec(DecoderState { s, buffer }))
            }
        }
    }

    /// Samples initialization noise for the buffer (`None` for the baseline).
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Tensor> {
        match self.spec.variant {
            Variant::Baseline => None,
            Variant::MemDec => Some(memory::sample_noise(
                self.spec.cells,
                self.spec.cell_width,
                self.spec.init_noise_std,
                rng,
            )),
        }
    }

    /// Embedding of the previous target word; BOS embeds to zero.
    pub fn embed_target(&self, g: &mut Graph, token: usize) -> Result<NodeId> {
        if token == BOS {
            return Ok(self.zero_embed);
        }
        if token >= self.spec.tgt_vocab {
            return Err(Error::Data(format!(
                "target id {token} outside vocabulary of {}",
                self.spec.tgt_vocab
            )));
        }
        Ok(g.row(self.tgt_embed, token)?)
    }

    pub fn step(
        &self,
        g: &mut Graph,
        state: &State,
        prev_token: usize,
        enc: &Encoded,
        dropout: Option<Rc<[f64]>>,
    ) -> Result<Step> {
        let e_prev = self.embed_target(g, prev_token)?;
        match (&self.decoder, state) {
            (DecoderNodes::Baseline { gru, feedback }, State::Baseline { s }) => {
                let query = feedback_state(g, feedback, *s, e_prev)?;
                let att = attend_with_keys(g, &self.attention, query, &enc.source, enc.keys)?;
                let input = g.concat(&[e_prev, att.context])?;
                let s_new = gru_step(g, gru, *s, input)?;
                let logits = score_logits(g, &self.predictor, s_new, att.context, e_prev, dropout)?;
                Ok(Step {
                    state: State::Baseline { s: s_new },
                    logits,
                    context: att.context,
                    alpha: att.weights,
                    trace: None,
                })
            }
            (DecoderNodes::MemDec { nodes, .. }, State::MemDec(prev)) => {
                let out = memory::decode_step(g, nodes, prev, e_prev, &enc.source, enc.keys)?;
                let logits = score_logits(g, &self.predictor, out.state.s, out.context, e_prev, dropout)?;
                Ok(Step {
                    state: State::MemDec(out.state),
                    logits,
                    context: out.context,
                    alpha: out.alpha,
                    trace: Some(StepTrace {
                        alpha: out.alpha,
                        read_weights: out.read.addressing.weights,
                        write_weights: out.write.addressing.weights,
                        gate_read: out.read.addressing.gate,
                        gate_write: out.write.addressing.gate,
                        mu_erase: out.write.mu_erase,
                        mu_add: out.write.mu_add,
                        cells: out.state.buffer.cells,
                    }),
                })
            }
            _ => Err(Error::Setting("decoder state does not match the model variant".into())),
        }
    }

    /// Summed token negative log-likelihood of `target` (plus EOS) under
    /// teacher forcing. Returns the scalar loss node and the token count.
    pub fn sentence_nll(
        &self,
        g: &mut Graph,
        source: &[usize],
        target: &[usize],
        dropout_rate: f64,
        rng: &mut dyn RngCore,
    ) -> Result<(NodeId, usize)> {
        let enc = self.encode(g, source)?;
        let noise = self.sample_noise(rng);
        let mut state = self.initial_state(g, &enc, noise)?;
        let mut prev = BOS;
        let mut total: Option<NodeId> = None;
        for &y in target.iter().chain(std::iter::once(&EOS)) {
            let mask = (dropout_rate > 0.0).then(|| dropout_mask(self.spec.cell_width, dropout_rate, rng));
            let step = self.step(g, &state, prev, &enc, mask)?;
            let nll = g.cross_entropy(step.logits, y)?;
            total = Some(match total {
                Some(t) => g.add(t, nll)?,
                None => nll,
            });
            state = step.state;
            prev = y;
        }
        Ok((total.expect("at least the EOS step"), target.len() + 1))
    }
}

/// Deterministic RNG for the buffer noise used when decoding `source`
/// outside training.
pub fn inference_rng(seed: u64, source: &[usize]) -> ChaCha8Rng {
    let mut parts = vec![INFERENCE_STREAM];
    parts.extend(source.iter().map(|&t| t as u64));
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &parts))
}

/// Trained weights with the architecture and seed needed to run them.
#[derive(Clone, Copy, Debug)]
pub struct ModelRef<'a> {
    pub spec: &'a ModelSpec,
    pub store: &'a ParameterStore,
    pub seed: u64,
}

impl<'a> ModelRef<'a> {
    /// Mean per-token NLL over `pairs` without dropout.
    pub fn corpus_nll(&self, pairs: &[IdPair]) -> Result<f64> {
        let (mut total, mut tokens) = (0.0, 0usize);
        for p in pairs {
            let mut ctx = Ctx::new(self.store);
            let model = BoundModel::bind(self.spec, &mut ctx)?;
            let mut rng = inference_rng(self.seed, &p.source);
            let (loss, n) = model.sentence_nll(&mut ctx.graph, &p.source, &p.target, 0.0, &mut rng)?;
            total += ctx.graph.value(loss).item();
            tokens += n;
        }
        if tokens == 0 {
            return Err(Error::Data("no sentences to score".into()));
        }
        Ok(total / tokens as f64)
    }

    pub fn translator(&self) -> Translator<'a> {
        Translator {
            model: *self,
            active: None,
        }
    }

    /// Decodes every source with the given beam width.
    pub fn translate_all(&self, sources: &[Vec<usize>], beam: usize, max_len: usize) -> Result<Vec<Vec<usize>>> {
        let mut t = self.translator();
        sources.iter().map(|s| eval::decode(&mut t, s, beam, max_len)).collect()
    }

    /// Greedy decode of `source` recording the memory accesses of each step.
    pub fn trace(&self, source: &[usize], max_len: usize) -> Result<Vec<TraceRecord>> {
        if self.spec.variant != Variant::MemDec {
            return Err(Error::Setting("no memory to trace".into()));
        }
        let mut ctx = Ctx::new(self.store);
        let model = BoundModel::bind(self.spec, &mut ctx)?;
        let g = &mut ctx.graph;
        let enc = model.encode(g, source)?;
        let noise = model.sample_noise(&mut inference_rng(self.seed, source));
        let mut state = model.initial_state(g, &enc, noise)?;
        let mut prev = BOS;
        let mut out = Vec::new();
        for t in 0..max_len {
            let step = model.step(g, &state, prev, &enc, None)?;
            let tr = step.trace.expect("memory variant traces every step");
            let values = |id: NodeId| g.value(id).data().to_vec();
            out.push(TraceRecord {
                t,
                token: 0,
                alpha: values(tr.alpha),
                w_r: values(tr.read_weights),
                w_w: values(tr.write_weights),
                gate_r: g.value(tr.gate_read).item(),
                gate_w: g.value(tr.gate_write).item(),
                mu_ers_norm: g.value(tr.mu_erase).norm(),
                mu_add_norm: g.value(tr.mu_add).norm(),
            });
            let tok = eval::argmax(g.value(step.logits).data());
            out.last_mut().expect("just pushed").token = tok;
            if tok == EOS {
                break;
            }
            state = step.state;
            prev = tok;
        }
        Ok(out)
    }
}

/// Memory accesses of one decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// Token emitted at this step.
    pub token: usize,
    pub alpha: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_w: Vec<f64>,
    pub gate_r: f64,
    pub gate_w: f64,
    pub mu_ers_norm: f64,
    pub mu_add_norm: f64,
}

struct Active<'a> {
    ctx: Ctx<'a>,
    model: BoundModel,
    enc: Encoded,
}

/// Step-wise scorer over a trained model; one graph per source sentence.
pub struct Translator<'a> {
    model: ModelRef<'a>,
    active: Option<Active<'a>>,
}

impl StepScorer for Translator<'_> {
    type State = State;

    fn start(&mut self, source: &[usize]) -> Result<State> {
        let mut ctx = Ctx::new(self.model.store);
        let model = BoundModel::bind(self.model.spec, &mut ctx)?;
        let enc = model.encode(&mut ctx.graph, source)?;
        let noise = model.sample_noise(&mut inference_rng(self.model.seed, source));
        let state = model.initial_state(&mut ctx.graph, &enc, noise)?;
        self.active = Some(Active { ctx, model, enc });
        Ok(state)
    }

    fn step(&mut self, state: &State, prev: usize) -> Result<(Vec<f64>, State)> {
        let a = self
            .active
            .as_mut()
            .ok_or_else(|| Error::Eval("step before start".into()))?;
        let step = a.model.step(&mut a.ctx.graph, state, prev, &a.enc, None)?;
        let logits = a.ctx.graph.value(step.logits).data();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eval("non-finite logits".into()));
        }
        Ok((autodiff::log_softmax(logits), step.state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            src_vocab: 9,
            tgt_vocab: 8,
            embed_dim: 5,
            hidden_dim: 4,
            cell_width: 6,
            cells: 3,
            align_dim: 6,
            share_weights: true,
            literal_init: false,
            score_form: ScoreForm::Tanh,
            feedback: FeedbackKind::Tanh,
            init_noise_std: 0.1,
        }
    }

    #[test]
    fn memory_params_are_prefixed_and_variant_specific() {
        let base: Vec<String> = spec(Variant::Baseline).param_specs().into_iter().map(|p| p.0).collect();
        let mem: Vec<String> = spec(Variant::MemDec).param_specs().into_iter().map(|p| p.0).collect();
        assert!(base.iter().all(|n| !n.starts_with(MEMORY_PREFIX)));
        let mem_only: Vec<&String> = mem.iter().filter(|n| !base.contains(n)).collect();
        assert!(mem_only.iter().all(|n| n.starts_with(MEMORY_PREFIX)));
        for name in [
            "mem.read.w",
            "mem.read.u",
            "mem.read.v",
            "mem.read.gate",
            "mem.erase",
            "mem.add",
            "mem.init",
            "mem.pre.read",
            "mem.pre.embed",
        ] {
            assert!(mem.iter().any(|n| n == name), "{name}");
        }
    }

    #[test]
    fn unshared_weights_add_a_write_head() {
        let mut s = spec(Variant::MemDec);
        s.share_weights = false;
        let names: Vec<String> = s.param_specs().into_iter().map(|p| p.0).collect();
        assert!(names.iter().any(|n| n == "mem.write.gate"));
    }

    #[test]
    fn recurrent_matrices_are_tagged_orthogonal() {
        for (name, shape, init) in spec(Variant::MemDec).param_specs() {
            if name.contains(".u_") {
                assert_eq!(init, InitScheme::Orthogonal, "{name}");
                assert_eq!(shape[0], shape[1]);
            }
            if name.ends_with(".b") || name.ends_with("_b") {
                assert_eq!(init, InitScheme::Zero, "{name}");
            }
        }
    }

    #[test]
    fn zero_dims_are_rejected() {
        let mut s = spec(Variant::MemDec);
        s.cells = 0;
        assert!(s.validate().is_err());
        let mut s = spec(Variant::Baseline);
        s.embed_dim = 0;
        assert!(s.validate().is_err());
    }
}
