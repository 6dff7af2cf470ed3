//! Graph interchange document. Field order is fixed by the struct layout
//! and every float is rounded to 9 significant digits before writing.

use serde::{Deserialize, Serialize};

use super::mask::Pixel;
use super::{Edge, Node, VesselGraph};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    width: usize,
    height: usize,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    x: usize,
    y: usize,
    degree: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    u: usize,
    v: usize,
    polyline: Vec<[usize; 2]>,
    length: f64,
    curveness: f64,
    volume: f64,
    mean_radius: f64,
}

/// Rounds to 9 significant decimal digits.
pub(crate) fn sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

pub fn serialize(g: &VesselGraph) -> Vec<u8> {
    let doc = GraphDoc {
        width: g.width,
        height: g.height,
        nodes: g.nodes.iter().map(|n| NodeDoc { x: n.x, y: n.y, degree: n.degree }).collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                u: e.u,
                v: e.v,
                polyline: e.polyline.iter().map(|p| [p.x, p.y]).collect(),
                length: sig9(e.length),
                curveness: sig9(e.curveness),
                volume: sig9(e.volume),
                mean_radius: sig9(e.mean_radius),
            })
            .collect(),
    };
    serde_json::to_vec(&doc).expect("graph document serialises")
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut start = 0;
    for _ in 1..line {
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(i) => start += i + 1,
            None => break,
        }
    }
    (start + column.saturating_sub(1)).min(bytes.len())
}

pub fn deserialize(bytes: &[u8]) -> Result<VesselGraph> {
    let doc: GraphDoc = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        msg: e.to_string(),
    })?;
    let n = doc.nodes.len();
    for (k, e) in doc.edges.iter().enumerate() {
        if e.u >= n || e.v >= n {
            return Err(Error::Graph(format!("edge {k} references node {} of {n}", e.u.max(e.v))));
        }
    }
    Ok(VesselGraph {
        width: doc.width,
        height: doc.height,
        nodes: doc.nodes.into_iter().map(|d| Node { x: d.x, y: d.y, degree: d.degree }).collect(),
        edges: doc
            .edges
            .into_iter()
            .map(|d| Edge {
                u: d.u,
                v: d.v,
                polyline: d.polyline.into_iter().map(|[x, y]| Pixel::new(x, y)).collect(),
                length: d.length,
                curveness: d.curveness,
                volume: d.volume,
                mean_radius: d.mean_radius,
            })
            .collect(),
    })
}
