//! Universal feature encoder and the GNN architectures built on it.

mod checkpoint;
pub mod layers;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use layers::{Activation, EdgeIndex, Fusion, Mlp};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{laplacian_positional_encodings, normalized_adjacency, Graph};
use crate::params::{ParameterSet, VarMap};
use crate::tensor::{CsrMatrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "GAT")]
    Gat,
    #[serde(rename = "SAGE")]
    Sage,
    #[serde(rename = "GIN")]
    Gin,
    #[serde(rename = "PAGNN")]
    Pagnn,
    #[serde(rename = "MPNN")]
    Mpnn,
    #[serde(rename = "ALL")]
    All,
}

impl Architecture {
    /// The six single architectures, in fusion order.
    pub const SINGLE: [Architecture; 6] = [
        Architecture::Gcn,
        Architecture::Gat,
        Architecture::Sage,
        Architecture::Gin,
        Architecture::Pagnn,
        Architecture::Mpnn,
    ];

    pub const EVERY: [Architecture; 7] = [
        Architecture::Gcn,
        Architecture::Gat,
        Architecture::Sage,
        Architecture::Gin,
        Architecture::Pagnn,
        Architecture::Mpnn,
        Architecture::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Gcn => "GCN",
            Architecture::Gat => "GAT",
            Architecture::Sage => "SAGE",
            Architecture::Gin => "GIN",
            Architecture::Pagnn => "PAGNN",
            Architecture::Mpnn => "MPNN",
            Architecture::All => "ALL",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Architecture::Gcn => "gcn",
            Architecture::Gat => "gat",
            Architecture::Sage => "sage",
            Architecture::Gin => "gin",
            Architecture::Pagnn => "pagnn",
            Architecture::Mpnn => "mpnn",
            Architecture::All => "all",
        }
    }

    fn uses_pe(self) -> bool {
        matches!(self, Architecture::Pagnn | Architecture::All)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::EVERY
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

/// Architecture choice and layer widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub arch: Architecture,
    pub layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Width of the universal projection `X W_p`.
    pub d_h: usize,
    /// Width after adaptive pooling; input width of the first GNN layer.
    pub d_out: usize,
    /// Heads on hidden attention layers; the output layer uses one head.
    pub attention_heads: usize,
    pub eps_learnable: bool,
    pub pe_dim: usize,
    pub fusion: Fusion,
    pub sage_sample: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec {
            arch: Architecture::Gcn,
            layers: 2,
            hidden_dim: 128,
            embed_dim: 128,
            d_h: 256,
            d_out: 128,
            attention_heads: 4,
            eps_learnable: true,
            pe_dim: 8,
            fusion: Fusion::Sum,
            sage_sample: 10,
        }
    }
}

impl EncoderSpec {
    pub fn new(arch: Architecture) -> Self {
        EncoderSpec {
            arch,
            ..EncoderSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.layers == 0 || self.layers > 4 {
            return bad(format!("layers must lie in 1..=4, got {}", self.layers));
        }
        if self.attention_heads == 0 {
            return bad("attention_heads must be >= 1".into());
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.d_h == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.d_out == 0 || self.d_out > self.d_h {
            return bad(format!(
                "d_out {} must lie in 1..=d_h ({})",
                self.d_out, self.d_h
            ));
        }
        let attention = matches!(
            self.arch,
            Architecture::Gat | Architecture::Pagnn | Architecture::All
        );
        if attention && self.layers > 1 && self.hidden_dim % self.attention_heads != 0 {
            return bad(format!(
                "hidden_dim {} not divisible by {} attention heads",
                self.hidden_dim, self.attention_heads
            ));
        }
        if self.arch.uses_pe() && self.pe_dim == 0 {
            return bad("pe_dim must be >= 1".into());
        }
        if self.sage_sample == 0 {
            return bad("sage_sample must be >= 1".into());
        }
        Ok(())
    }

    /// `(input, output)` width of each GNN layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let input = if l == 0 { self.d_out } else { self.hidden_dim };
                let output = if l + 1 == self.layers {
                    self.embed_dim
                } else {
                    self.hidden_dim
                };
                (input, output)
            })
            .collect()
    }

    fn is_last(&self, l: usize) -> bool {
        l + 1 == self.layers
    }

    fn activation(&self, l: usize) -> Activation {
        if self.is_last(l) {
            Activation::Identity
        } else {
            Activation::Relu
        }
    }

    fn heads(&self, l: usize) -> usize {
        if self.is_last(l) {
            1
        } else {
            self.attention_heads
        }
    }

    /// Every parameter name with its shape for input width `d_in`.
    pub fn param_shapes(&self, d_in: usize) -> Vec<(String, (usize, usize))> {
        let mut out = vec![
            ("universal.w_p".to_string(), (d_in, self.d_h)),
            ("universal.b_p".to_string(), (1, self.d_h)),
        ];
        let archs: Vec<Architecture> = match self.arch {
            Architecture::All => Architecture::SINGLE.to_vec(),
            a => vec![a],
        };
        for a in archs {
            self.arch_shapes(a, &mut out);
        }
        if self.arch == Architecture::All && self.fusion == Fusion::Concat {
            out.push(("all.proj".into(), (6 * self.embed_dim, self.embed_dim)));
        }
        out
    }

    fn arch_shapes(&self, arch: Architecture, out: &mut Vec<(String, (usize, usize))>) {
        let p = arch.prefix();
        for (l, (din, dout)) in self.layer_dims().into_iter().enumerate() {
            match arch {
                Architecture::Gcn => out.push((format!("{p}.{l}.w"), (din, dout))),
                Architecture::Gat | Architecture::Pagnn => {
                    let heads = self.heads(l);
                    let m = dout / heads;
                    let extra = if arch == Architecture::Pagnn {
                        self.pe_dim
                    } else {
                        0
                    };
                    for k in 0..heads {
                        out.push((format!("{p}.{l}.h{k}.w"), (din, m)));
                        out.push((format!("{p}.{l}.h{k}.a"), (2 * m + extra, 1)));
                    }
                }
                Architecture::Sage => out.push((format!("{p}.{l}.w"), (2 * din, dout))),
                Architecture::Gin => {
                    if self.eps_learnable {
                        out.push((format!("{p}.{l}.eps"), (1, 1)));
                    }
                    out.push((format!("{p}.{l}.w1"), (din, dout)));
                    out.push((format!("{p}.{l}.b1"), (1, dout)));
                    out.push((format!("{p}.{l}.w2"), (dout, dout)));
                    out.push((format!("{p}.{l}.b2"), (1, dout)));
                }
                Architecture::Mpnn => {
                    out.push((format!("{p}.{l}.w_m"), (2 * din + 1, dout)));
                    out.push((format!("{p}.{l}.u"), (din + dout, dout)));
                }
                Architecture::All => unreachable!("ALL expands to single architectures"),
            }
        }
    }

    /// Seeded initial parameters: Glorot-uniform weights, zero biases and ε.
    pub fn init_params(&self, d_in: usize, seed: u64) -> Result<ParameterSet> {
        self.validate()?;
        let mut params = ParameterSet::new(seed);
        for (name, (r, c)) in self.param_shapes(d_in) {
            let zero = name.ends_with(".b_p")
                || name.ends_with(".b1")
                || name.ends_with(".b2")
                || name.ends_with(".eps");
            if zero {
                params.insert_zeros(&name, r, c);
            } else {
                params.insert_glorot(&name, r, c);
            }
        }
        Ok(params)
    }

    /// Checks that `params` holds every tensor this spec needs at width `d_in`.
    pub fn check_params(&self, params: &ParameterSet, d_in: usize) -> Result<()> {
        for (name, shape) in self.param_shapes(d_in) {
            match params.get(&name) {
                None => {
                    return Err(Error::ParamMismatch {
                        arch: self.arch.name().into(),
                        detail: format!("missing parameter {name:?}"),
                    })
                }
                Some(t) if t.shape() != shape => {
                    return Err(Error::ParamMismatch {
                        arch: self.arch.name().into(),
                        detail: format!("{name:?} has shape {:?}, expected {shape:?}", t.shape()),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Re-draws the universal projection for a new input width, keeping every
/// other tensor. The projection comes from the set's own init seed.
pub fn adapt_input_width(spec: &EncoderSpec, params: &ParameterSet, d_in: usize) -> ParameterSet {
    let mut out = params.clone();
    let w_p = out.get("universal.w_p").map(Tensor::shape);
    if w_p != Some((d_in, spec.d_h)) {
        out.insert_glorot("universal.w_p", d_in, spec.d_h);
    }
    out
}

/// Graph-derived constants shared by every forward pass on one graph.
#[derive(Debug, Clone)]
pub struct PreparedGraph<'g> {
    pub graph: &'g Graph,
    pub a_norm: Arc<CsrMatrix>,
    pub adjacency: Arc<CsrMatrix>,
    /// Edges with self-loops, for attention.
    pub attention_edges: EdgeIndex,
    /// Both directions of every edge, for message passing.
    pub message_edges: EdgeIndex,
    /// Laplacian positional encodings, present when the spec uses them.
    pub pe: Option<Tensor>,
}

impl<'g> PreparedGraph<'g> {
    pub fn new(graph: &'g Graph, spec: &EncoderSpec) -> Result<Self> {
        let pe = if spec.arch.uses_pe() {
            Some(laplacian_positional_encodings(graph, spec.pe_dim)?)
        } else {
            None
        };
        Ok(PreparedGraph {
            graph,
            a_norm: Arc::new(normalized_adjacency(graph)),
            adjacency: Arc::new(graph.adjacency()),
            attention_edges: EdgeIndex::from_graph(graph, true),
            message_edges: EdgeIndex::from_graph(graph, false),
            pe,
        })
    }
}

/// Records the forward pass and returns the `n x embed_dim` embedding.
/// `seed` drives SAGE neighbor sampling and nothing else.
pub fn encode_on_tape(
    tape: &mut Tape,
    spec: &EncoderSpec,
    vars: &VarMap,
    pg: &PreparedGraph<'_>,
    seed: u64,
) -> Result<Var> {
    spec.validate()?;
    let w_p = vars.get("universal.w_p")?;
    let b_p = vars.get("universal.b_p")?;
    let x = layers::universal_encode(tape, pg.graph.sparse_features(), w_p, b_p, spec.d_out)?;
    match spec.arch {
        Architecture::All => {
            let mut zs = Vec::with_capacity(6);
            for a in Architecture::SINGLE {
                zs.push(arch_forward(tape, spec, a, vars, pg, x, seed)?);
            }
            let proj = match spec.fusion {
                Fusion::Concat => Some(vars.get("all.proj")?),
                Fusion::Sum => None,
            };
            layers::fuse_all(tape, &zs, spec.fusion, proj)
        }
        a => arch_forward(tape, spec, a, vars, pg, x, seed),
    }
}

fn arch_forward(
    tape: &mut Tape,
    spec: &EncoderSpec,
    arch: Architecture,
    vars: &VarMap,
    pg: &PreparedGraph<'_>,
    x: Var,
    seed: u64,
) -> Result<Var> {
    let p = arch.prefix();
    let pe = match arch {
        Architecture::Pagnn => {
            let t = pg
                .pe
                .as_ref()
                .ok_or_else(|| Error::invalid("graph was prepared without positional encodings"))?;
            Some(tape.constant(t.clone()))
        }
        _ => None,
    };
    let mut h = x;
    for l in 0..spec.layers {
        let act = spec.activation(l);
        h = match arch {
            Architecture::Gcn => {
                layers::gcn_layer(tape, h, &pg.a_norm, vars.get(&format!("{p}.{l}.w"))?, act)?
            }
            Architecture::Gat | Architecture::Pagnn => {
                let heads = (0..spec.heads(l))
                    .map(|k| {
                        Ok((
                            vars.get(&format!("{p}.{l}.h{k}.w"))?,
                            vars.get(&format!("{p}.{l}.h{k}.a"))?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                layers::attention_layer(
                    tape,
                    h,
                    &pg.attention_edges,
                    &heads,
                    pe,
                    !spec.is_last(l),
                    act,
                )?
            }
            Architecture::Sage => {
                let s = Arc::new(layers::sampled_mean_operator(
                    pg.graph,
                    spec.sage_sample,
                    seed,
                    l,
                )?);
                layers::sage_layer(tape, h, &s, vars.get(&format!("{p}.{l}.w"))?, act)?
            }
            Architecture::Gin => {
                let eps = if spec.eps_learnable {
                    Some(vars.get(&format!("{p}.{l}.eps"))?)
                } else {
                    None
                };
                let mlp = Mlp {
                    w1: vars.get(&format!("{p}.{l}.w1"))?,
                    b1: vars.get(&format!("{p}.{l}.b1"))?,
                    w2: vars.get(&format!("{p}.{l}.w2"))?,
                    b2: vars.get(&format!("{p}.{l}.b2"))?,
                };
                layers::gin_layer(tape, h, &pg.adjacency, eps, &mlp, act)?
            }
            Architecture::Mpnn => layers::mpnn_layer(
                tape,
                h,
                &pg.message_edges,
                vars.get(&format!("{p}.{l}.w_m"))?,
                vars.get(&format!("{p}.{l}.u"))?,
                act,
            )?,
            Architecture::All => unreachable!("ALL expands to single architectures"),
        };
    }
    Ok(h)
}

/// Embeds `pg.graph` with frozen `params`.
pub fn encode(
    spec: &EncoderSpec,
    params: &ParameterSet,
    pg: &PreparedGraph<'_>,
    seed: u64,
) -> Result<Tensor> {
    spec.check_params(params, pg.graph.feature_dim())?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let z = encode_on_tape(&mut tape, spec, &vars, pg, seed)?;
    Ok(tape.value(z).clone())
}
