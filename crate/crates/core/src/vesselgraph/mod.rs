//! Binary vessel masks to attributed vessel graphs: thinning, topology
//! tracing, distance-transform calibre features, normalisation and a JSON
//! interchange format.

pub mod draw;
mod edt;
mod features;
mod json;
mod mask;
mod skeleton;
mod topology;


use rayon::prelude::*;

pub use edt::distance_transform;
pub use features::{compute_edge_features, normalize_graph, GraphFeatures, NormStats, EDGE_FEATURES, NODE_FEATURES};
pub use json::{deserialize, serialize};
pub use mask::{write_pgm, BinaryMask, Pixel};
pub use skeleton::{skeletonize, Skeleton};
pub use topology::extract_topology;

use crate::error::Result;

/// A graph node: skeleton position and number of incident edge ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub x: usize,
    pub y: usize,
    pub degree: usize,
}

impl Node {
    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.x, self.y)
    }
}

/// A traced vessel segment. Feature fields are zero until
/// [`compute_edge_features`] fills them.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub polyline: Vec<Pixel>,
    pub length: f64,
    pub curveness: f64,
    pub volume: f64,
    pub mean_radius: f64,
}

impl Edge {
    pub fn is_loop(&self) -> bool {
        self.u == self.v
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VesselGraph {
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl VesselGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn endpoints(&self) -> usize {
        self.nodes.iter().filter(|n| n.degree == 1).count()
    }

    pub fn branch_points(&self) -> usize {
        self.nodes.iter().filter(|n| n.degree >= 3).count()
    }

    /// Degrees implied by the edge list (self-loops count twice).
    pub fn incidence_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for e in &self.edges {
            d[e.u] += 1;
            d[e.v] += 1;
        }
        d
    }

    /// Mean curveness over non-loop edges, 1 when there are none.
    pub fn mean_curveness(&self) -> f64 {
        let c: Vec<f64> = self.edges.iter().filter(|e| !e.is_loop()).map(|e| e.curveness).collect();
        if c.is_empty() {
            1.0
        } else {
            c.iter().sum::<f64>() / c.len() as f64
        }
    }
}

/// Extraction knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    /// Terminal branches shorter than this (pixels of arc) are pruned.
    pub prune_threshold: f64,
    /// Pixel stride of the resampled centreline used for curveness.
    pub curve_stride: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { prune_threshold: 3.0, curve_stride: 5 }
    }
}

/// Full pipeline for one mask.
pub fn extract_graph(mask: &BinaryMask, cfg: &ExtractConfig) -> Result<VesselGraph> {
    let skel = skeletonize(mask);
    let g = extract_topology(&skel, cfg.prune_threshold)?;
    compute_edge_features(g, mask, cfg.curve_stride)
}

/// Maps [`extract_graph`] over masks in parallel; output order follows input.
pub fn extract_graphs(masks: &[BinaryMask], cfg: &ExtractConfig) -> Vec<Result<VesselGraph>> {
    masks.par_iter().map(|m| extract_graph(m, cfg)).collect()
}
