use std::f64::consts::PI;

use super::edt::distance_transform;
use super::mask::{BinaryMask, Pixel};
use super::topology::chain_length;
use super::VesselGraph;
use crate::error::{Error, Result};

/// Node feature width: x/width, y/height, degree/4.
pub const NODE_FEATURES: usize = 3;
/// Edge feature width: length, curveness − 1, volume, mean radius.
pub const EDGE_FEATURES: usize = 4;

const CHORD_EPS: f64 = 1e-9;

/// Arc length of the centreline resampled at every `stride`-th pixel
/// (endpoints always kept). Stride 1 gives the raw chain length.
fn resampled_length(poly: &[Pixel], stride: usize) -> f64 {
    if poly.len() < 2 {
        return 0.0;
    }
    if stride <= 1 {
        return chain_length(poly);
    }
    let last = poly.len() - 1;
    let mut picks: Vec<Pixel> = (0..last).step_by(stride).map(|i| poly[i]).collect();
    picks.push(poly[last]);
    picks.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Fills length, curveness, volume and mean radius of every edge.
///
/// Radius at a centreline pixel is its Euclidean distance to the nearest
/// background pixel centre minus half a pixel, so a one-pixel vessel has
/// radius 0.5. Volume integrates π r² along the chain by the trapezoid
/// rule. Curveness divides the arc length of the centreline resampled every
/// `curve_stride` pixels by the endpoint chord; this removes the staircase
/// bias of 8-connected chains on oblique vessels. Self-loops get 1.
pub fn compute_edge_features(mut g: VesselGraph, mask: &BinaryMask, curve_stride: usize) -> Result<VesselGraph> {
    if g.width != mask.width() || g.height != mask.height() {
        return Err(Error::Graph(format!(
            "graph is {}×{} but mask is {}×{}",
            g.width,
            g.height,
            mask.width(),
            mask.height()
        )));
    }
    let dt = distance_transform(mask);
    for (k, e) in g.edges.iter_mut().enumerate() {
        if let Some(p) = e.polyline.iter().find(|p| !mask.get(**p)) {
            return Err(Error::Graph(format!("edge {k} leaves the mask at ({}, {})", p.x, p.y)));
        }
        let r: Vec<f64> = e.polyline.iter().map(|p| dt[p.y * mask.width() + p.x] - 0.5).collect();
        e.length = chain_length(&e.polyline);
        if e.length <= 0.0 {
            return Err(Error::Graph(format!("edge {k} has zero length")));
        }
        e.mean_radius = r.iter().sum::<f64>() / r.len() as f64;
        e.volume = e
            .polyline
            .windows(2)
            .zip(r.windows(2))
            .map(|(p, r)| PI * (r[0] * r[0] + r[1] * r[1]) / 2.0 * chain_length(p))
            .sum();
        e.curveness = if e.is_loop() {
            1.0
        } else {
            let chord = e.polyline[0].dist(*e.polyline.last().expect("non-empty"));
            resampled_length(&e.polyline, curve_stride) / chord.max(CHORD_EPS)
        };
    }
    Ok(g)
}

/// Per-dataset scale constants, fitted on training graphs only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    /// Largest edge mean radius.
    pub r_max: f64,
    /// Largest volume-equivalent radius sqrt(volume / (π·length)).
    pub rbar_max: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats { r_max: 1.0, rbar_max: 1.0 }
    }
}

impl NormStats {
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a VesselGraph>) -> Self {
        let mut s = NormStats { r_max: 0.0, rbar_max: 0.0 };
        for e in graphs.into_iter().flat_map(|g| &g.edges) {
            s.r_max = s.r_max.max(e.mean_radius);
            if e.length > 0.0 {
                s.rbar_max = s.rbar_max.max((e.volume / (PI * e.length)).sqrt());
            }
        }
        if s.r_max <= 0.0 {
            s.r_max = 1.0;
        }
        if s.rbar_max <= 0.0 {
            s.rbar_max = 1.0;
        }
        s
    }
}

/// GAT-ready matrices for one graph. `edge_index[k] = (src, dst)` pairs with
/// row `k` of `edge_feats`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    pub num_nodes: usize,
    /// Row-major `[num_nodes × NODE_FEATURES]`.
    pub node_feats: Vec<f64>,
    pub edge_index: Vec<(usize, usize)>,
    /// Row-major `[edge_index.len() × EDGE_FEATURES]`.
    pub edge_feats: Vec<f64>,
}

impl GraphFeatures {
    /// One node with zero features and no edges, used when a mask holds no
    /// vessel at all.
    pub fn fallback() -> Self {
        GraphFeatures { num_nodes: 1, node_feats: vec![0.0; NODE_FEATURES], edge_index: Vec::new(), edge_feats: Vec::new() }
    }

    pub fn num_edges(&self) -> usize {
        self.edge_index.len()
    }

    /// Relabels nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let node_feats = perm
            .iter()
            .flat_map(|&p| self.node_feats[p * NODE_FEATURES..(p + 1) * NODE_FEATURES].iter().copied())
            .collect();
        GraphFeatures {
            num_nodes: self.num_nodes,
            node_feats,
            edge_index: self.edge_index.iter().map(|&(a, b)| (inv[a], inv[b])).collect(),
            edge_feats: self.edge_feats.clone(),
        }
    }
}

/// Scales node and edge attributes to unit-order features. Non-loop edges
/// appear in both directions, self-loops once.
pub fn normalize_graph(g: &VesselGraph, stats: &NormStats) -> Result<GraphFeatures> {
    if g.nodes.is_empty() {
        return Err(Error::Graph("cannot normalise an empty graph".into()));
    }
    let (w, h) = (g.width as f64, g.height as f64);
    let diag = (w * w + h * h).sqrt();
    let node_feats = g.nodes.iter().flat_map(|n| [n.x as f64 / w, n.y as f64 / h, n.degree as f64 / 4.0]).collect();
    let mut edge_index = Vec::new();
    let mut edge_feats = Vec::new();
    for e in &g.edges {
        let f = [
            e.length / diag,
            e.curveness - 1.0,
            e.volume / (diag * PI * stats.rbar_max * stats.rbar_max),
            e.mean_radius / stats.r_max,
        ];
        edge_index.push((e.u, e.v));
        edge_feats.extend_from_slice(&f);
        if !e.is_loop() {
            edge_index.push((e.v, e.u));
            edge_feats.extend_from_slice(&f);
        }
    }
    Ok(GraphFeatures { num_nodes: g.nodes.len(), node_feats, edge_index, edge_feats })
}
