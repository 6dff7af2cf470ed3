//! Multi-head graph attention with edge-conditioned scores.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bind_params, ParamCursor};
use crate::error::{Error, Result};
use crate::numcore::{Parameterized, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::vesselgraph::{GraphFeatures, EDGE_FEATURES, NODE_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatLayerConfig {
    pub heads: usize,
    pub out_channels: usize,
    pub edge_dim: usize,
}

impl GatLayerConfig {
    pub fn output_dim(&self) -> usize {
        self.heads * self.out_channels
    }

    /// `heads·(F'·F + F'·Fe + 3F' + F')`.
    pub fn num_params(&self, input_dim: usize) -> usize {
        let f = self.out_channels;
        self.heads * (f * input_dim + f * self.edge_dim + 3 * f + f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
    Sum,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            "sum" => Ok(Pooling::Sum),
            _ => Err(Error::invalid(format!("unknown pooling {s:?} (mean | max | sum)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub input_dim: usize,
    pub layers: Vec<GatLayerConfig>,
    pub negative_slope: f64,
    #[serde(default)]
    pub pooling: Pooling,
    /// Add projected edge features to messages as well as scores.
    #[serde(default)]
    pub edge_messages: bool,
}

impl GatConfig {
    /// Heads 4, 4, 2 with 10, 50, 256 channels: 512-d embedding.
    pub fn published() -> Self {
        Self::with_layers(&[(4, 10), (4, 50), (2, 256)])
    }

    /// `(heads, channels)` per layer over vessel-graph features.
    pub fn with_layers(shape: &[(usize, usize)]) -> Self {
        GatConfig {
            input_dim: NODE_FEATURES,
            layers: shape.iter().map(|&(heads, out_channels)| GatLayerConfig { heads, out_channels, edge_dim: EDGE_FEATURES }).collect(),
            negative_slope: 0.2,
            pooling: Pooling::Mean,
            edge_messages: false,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, GatLayerConfig::output_dim)
    }

    pub fn num_params(&self) -> usize {
        let mut f = self.input_dim;
        let mut total = 0;
        for l in &self.layers {
            total += l.num_params(f);
            f = l.output_dim();
        }
        total
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.input_dim == 0 {
            return Err(Error::invalid("GAT needs an input dim and at least one layer"));
        }
        if self.layers.iter().any(|l| l.heads == 0 || l.out_channels == 0) {
            return Err(Error::invalid("GAT heads and channels must be positive"));
        }
        if self.edge_messages && self.layers.iter().any(|l| l.edge_dim == 0) {
            return Err(Error::invalid("edge messages need edge features"));
        }
        Ok(())
    }
}

/// A disjoint union of graphs with a self-loop (zero edge features) added
/// at every node. Edge `k` sends a message from `src[k]` to `dst[k]`.
#[derive(Debug, Clone)]
pub struct GraphBatch<T> {
    pub num_graphs: usize,
    pub node_feats: Tensor<T>,
    pub edge_feats: Tensor<T>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub graph_of: Vec<usize>,
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new(graphs: &[&GraphFeatures]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Empty("graph batch"));
        }
        let (mut nodes, mut edges) = (Vec::new(), Vec::new());
        let (mut src, mut dst, mut graph_of) = (Vec::new(), Vec::new(), Vec::new());
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.num_nodes == 0 {
                return Err(Error::Empty("graph_encode: graph without nodes"));
            }
            if g.node_feats.len() != g.num_nodes * NODE_FEATURES || g.edge_feats.len() != g.num_edges() * EDGE_FEATURES {
                return Err(Error::shape("graph batch", format!("graph {gi}: feature buffers do not match node/edge counts")));
            }
            nodes.extend(g.node_feats.iter().map(|&v| T::lit(v)));
            for (k, &(u, v)) in g.edge_index.iter().enumerate() {
                if u >= g.num_nodes || v >= g.num_nodes {
                    return Err(Error::Graph(format!("graph {gi}: edge ({u}, {v}) references a missing node")));
                }
                src.push(offset + u);
                dst.push(offset + v);
                edges.extend(g.edge_feats[k * EDGE_FEATURES..(k + 1) * EDGE_FEATURES].iter().map(|&x| T::lit(x)));
            }
            for i in 0..g.num_nodes {
                src.push(offset + i);
                dst.push(offset + i);
                edges.extend(std::iter::repeat_n(T::zero(), EDGE_FEATURES));
            }
            graph_of.extend(std::iter::repeat_n(gi, g.num_nodes));
            offset += g.num_nodes;
        }
        Ok(GraphBatch {
            num_graphs: graphs.len(),
            node_feats: Tensor::new(&[offset, NODE_FEATURES], nodes)?,
            edge_feats: Tensor::new(&[src.len(), EDGE_FEATURES], edges)?,
            src,
            dst,
            graph_of,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph_of.len()
    }
}

/// One layer's output and its attention coefficients `[E×heads]`.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    pub h: Var,
    pub alpha: Var,
}

/// Weights of one attention layer, heads stacked along columns.
#[derive(Debug, Clone)]
pub struct GatLayer<T> {
    pub config: GatLayerConfig,
    pub input_dim: usize,
    /// `[F×H·F']`
    pub w: Tensor<T>,
    /// `[Fe×H·F']`
    pub u: Tensor<T>,
    pub a_src: Tensor<T>,
    pub a_dst: Tensor<T>,
    pub a_edge: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> GatLayer<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input_dim: usize, config: GatLayerConfig, rng: &mut R) -> Self {
        let hf = config.output_dim();
        let f = config.out_channels;
        GatLayer {
            config,
            input_dim,
            w: Tensor::kaiming_uniform(format!("{name}.w"), &[input_dim, hf], input_dim, rng),
            u: Tensor::kaiming_uniform(format!("{name}.u"), &[config.edge_dim, hf], config.edge_dim.max(1), rng),
            a_src: Tensor::kaiming_uniform(format!("{name}.a_src"), &[hf], f, rng),
            a_dst: Tensor::kaiming_uniform(format!("{name}.a_dst"), &[hf], f, rng),
            a_edge: Tensor::kaiming_uniform(format!("{name}.a_edge"), &[hf], f, rng),
            bias: Tensor::zeros_param(format!("{name}.b"), &[hf]),
        }
    }

    /// Score `e_uv = LeakyReLU(a·[W x_u ‖ W x_v ‖ U f_uv])` for target `u`
    /// and source `v`, softmax over the sources of each target, then
    /// `out_u = Σ α_uv W x_v` per head, heads concatenated, plus bias.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        p: &mut ParamCursor,
        h: Var,
        edge_feats: Var,
        src: &[usize],
        dst: &[usize],
        slope: f64,
        edge_messages: bool,
    ) -> Result<LayerOutput> {
        let n = match tape.shape(h) {
            [n, f] if *f == self.input_dim => *n,
            s => return Err(Error::shape("gat_layer", format!("node features {s:?}, expected [N×{}]", self.input_dim))),
        };
        if src.len() != dst.len() || tape.shape(edge_feats) != [src.len(), self.config.edge_dim] {
            return Err(Error::shape("gat_layer", format!("{} edges with edge features {:?}", src.len(), tape.shape(edge_feats))));
        }
        let mut incoming = vec![false; n];
        for (&s, &d) in src.iter().zip(dst) {
            if s >= n || d >= n {
                return Err(Error::Graph(format!("edge ({s}, {d}) outside {n} nodes")));
            }
            incoming[d] = true;
        }
        if let Some(i) = incoming.iter().position(|&x| !x) {
            return Err(Error::Graph(format!("node {i} has no incoming edge or self-loop")));
        }
        let heads = self.config.heads;
        let [w, u, a_src, a_dst, a_edge, bias] = [(); 6].map(|_| p.next_var());
        let (w, u, a_src, a_dst, a_edge, bias) = (w?, u?, a_src?, a_dst?, a_edge?, bias?);

        let z = tape.matmul(h, w)?;
        let q = tape.matmul(edge_feats, u)?;
        let s_src = tape.block_dot(z, a_src, heads)?;
        let s_dst = tape.block_dot(z, a_dst, heads)?;
        let s_edge = tape.block_dot(q, a_edge, heads)?;
        let e_src = tape.gather_rows(s_src, src)?;
        let e_dst = tape.gather_rows(s_dst, dst)?;
        let e = tape.add(e_src, e_dst)?;
        let e = tape.add(e, s_edge)?;
        let e = tape.leaky_relu(e, T::lit(slope))?;
        let alpha = tape.segment_softmax(e, dst, n)?;

        let mut msg = tape.gather_rows(z, src)?;
        if edge_messages {
            msg = tape.add(msg, q)?;
        }
        let msg = tape.block_scale(msg, alpha)?;
        let out = tape.scatter_add_rows(msg, dst, n)?;
        let out = tape.add_row(out, bias)?;
        Ok(LayerOutput { h: out, alpha })
    }
}

impl<T: Scalar> Parameterized<T> for GatLayer<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w, &self.u, &self.a_src, &self.a_dst, &self.a_edge, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w, &mut self.u, &mut self.a_src, &mut self.a_dst, &mut self.a_edge, &mut self.bias]
    }
}

/// Stacked attention layers (ELU between, identity after the last) and a
/// global pooling over each graph's nodes.
#[derive(Debug, Clone)]
pub struct GatEncoder<T> {
    pub config: GatConfig,
    pub layers: Vec<GatLayer<T>>,
}

impl<T: Scalar> GatEncoder<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, config: GatConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut f = config.input_dim;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, &lc) in config.layers.iter().enumerate() {
            layers.push(GatLayer::new(&format!("{name}.{i}"), f, lc, rng));
            f = lc.output_dim();
        }
        Ok(GatEncoder { config, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Node embeddings after every layer, with attention coefficients.
    pub fn layer_outputs(&self, tape: &mut Tape<T>, p: &mut ParamCursor, nodes: Var, edges: Var, batch: &GraphBatch<T>) -> Result<Vec<LayerOutput>> {
        let mut h = nodes;
        let mut outs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let o = layer.forward_with(tape, p, h, edges, &batch.src, &batch.dst, self.config.negative_slope, self.config.edge_messages)?;
            h = if i + 1 < self.layers.len() { tape.elu(o.h)? } else { o.h };
            outs.push(o);
        }
        Ok(outs)
    }

    /// `[G×D]` graph embeddings with node and edge features given as vars.
    pub fn forward_with(&self, tape: &mut Tape<T>, p: &mut ParamCursor, nodes: Var, edges: Var, batch: &GraphBatch<T>) -> Result<Var> {
        let outs = self.layer_outputs(tape, p, nodes, edges, batch)?;
        let h = outs.last().expect("validated: at least one layer").h;
        let g = batch.num_graphs;
        match self.config.pooling {
            Pooling::Mean => tape.segment_mean(h, &batch.graph_of, g),
            Pooling::Max => tape.segment_max(h, &batch.graph_of, g),
            Pooling::Sum => tape.segment_sum(h, &batch.graph_of, g),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, batch: &GraphBatch<T>) -> Result<Var> {
        let vars = bind_params(tape, self)?;
        let nodes = tape.constant(&batch.node_feats)?;
        let edges = tape.constant(&batch.edge_feats)?;
        self.forward_with(tape, &mut ParamCursor::new(&vars), nodes, edges, batch)
    }

    /// Embeds each graph on its own tape; `[G×D]` values.
    pub fn encode(&self, graphs: &[&GraphFeatures]) -> Result<Tensor<T>> {
        let batch = GraphBatch::new(graphs)?;
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, &batch)?;
        Ok(tape.to_tensor(y))
    }
}

impl<T: Scalar> Parameterized<T> for GatEncoder<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
