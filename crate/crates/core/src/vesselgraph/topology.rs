use std::collections::VecDeque;

use super::mask::{BinaryMask, Pixel};
use super::skeleton::Skeleton;
use super::{Edge, Node, VesselGraph};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Arc length of an 8-connected pixel chain: 1 per axial step, √2 per
/// diagonal step.
pub(crate) fn chain_length(poly: &[Pixel]) -> f64 {
    poly.windows(2)
        .map(|w| if w[0].x != w[1].x && w[0].y != w[1].y { std::f64::consts::SQRT_2 } else { 1.0 })
        .sum()
}

struct Tracer<'a> {
    m: &'a BinaryMask,
    cluster: Vec<usize>,
    visited: Vec<bool>,
}

impl Tracer<'_> {
    fn idx(&self, p: Pixel) -> usize {
        p.y * self.m.width() + p.x
    }

    /// Shortest 8-connected path from `a` to `b` inside one cluster.
    fn cluster_path(&self, a: Pixel, b: Pixel) -> Vec<Pixel> {
        if a == b {
            return vec![a];
        }
        let c = self.cluster[self.idx(a)];
        let mut parent = std::collections::HashMap::new();
        parent.insert(a, a);
        let mut queue = VecDeque::from([a]);
        while let Some(p) = queue.pop_front() {
            if p == b {
                break;
            }
            for q in self.m.neighbors(p) {
                if self.cluster[self.idx(q)] == c && !parent.contains_key(&q) {
                    parent.insert(q, p);
                    queue.push_back(q);
                }
            }
        }
        let mut path = vec![b];
        let mut cur = b;
        while cur != a {
            cur = parent[&cur];
            path.push(cur);
        }
        path.reverse();
        path
    }

    /// Follows degree-2 pixels from `start` (a cluster pixel) through `first`
    /// until another cluster pixel is reached.
    fn trace(&mut self, start: Pixel, first: Pixel) -> Vec<Pixel> {
        let mut path = vec![start, first];
        let i = self.idx(first);
        self.visited[i] = true;
        let (mut prev, mut cur) = (start, first);
        loop {
            let next = self.m.neighbors(cur).find(|&q| q != prev);
            let Some(next) = next else { break };
            path.push(next);
            let j = self.idx(next);
            if self.cluster[j] != NONE || self.visited[j] {
                break;
            }
            self.visited[j] = true;
            prev = cur;
            cur = next;
        }
        path
    }
}

/// Traces a thinned skeleton into a graph of end/branch nodes and pixel
/// chain edges, then prunes terminal spurs shorter than `prune_threshold`.
pub fn extract_topology(skel: &Skeleton, prune_threshold: f64) -> Result<VesselGraph> {
    let m = skel.mask();
    if m.has_2x2_block() {
        let at = (0..m.height() - 1)
            .flat_map(|y| (0..m.width() - 1).map(move |x| (x, y)))
            .find(|&(x, y)| (0..4).all(|k| m.get(Pixel::new(x + k % 2, y + k / 2))))
            .unwrap_or_default();
        return Err(Error::Graph(format!("skeleton is not thinned: 2×2 block at ({}, {})", at.0, at.1)));
    }
    let (w, h) = (m.width(), m.height());
    let mut cluster = vec![NONE; w * h];

    // node pixels grouped into 8-connected clusters
    let mut nclusters = 0;
    for p in m.pixels() {
        let i = p.y * w + p.x;
        if cluster[i] != NONE || m.neighbor_count(p) == 2 {
            continue;
        }
        cluster[i] = nclusters;
        let mut stack = vec![p];
        while let Some(a) = stack.pop() {
            for q in m.neighbors(a) {
                let j = q.y * w + q.x;
                if cluster[j] == NONE && m.neighbor_count(q) != 2 {
                    cluster[j] = nclusters;
                    stack.push(q);
                }
            }
        }
        nclusters += 1;
    }
    // a chain pixel wedged between two pixels of one cluster belongs to it
    loop {
        let mut changed = false;
        for p in m.pixels() {
            let i = p.y * w + p.x;
            if cluster[i] != NONE {
                continue;
            }
            let labels: Vec<usize> = m.neighbors(p).map(|q| cluster[q.y * w + q.x]).collect();
            if labels.len() == 2 && labels[0] != NONE && labels[0] == labels[1] {
                cluster[i] = labels[0];
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut members: Vec<Vec<Pixel>> = vec![Vec::new(); nclusters];
    for p in m.pixels() {
        let c = cluster[p.y * w + p.x];
        if c != NONE {
            members[c].push(p);
        }
    }
    let mut nodes: Vec<Node> = members
        .iter()
        .map(|ps| {
            let n = ps.len() as f64;
            let cx = ps.iter().map(|p| p.x as f64).sum::<f64>() / n;
            let cy = ps.iter().map(|p| p.y as f64).sum::<f64>() / n;
            // highest neighbour count, then nearest the centroid, then
            // first in raster order
            let mut best = ps[0];
            let mut best_key = (0, f64::INFINITY);
            for &p in ps {
                let k = m.neighbor_count(p);
                let d = (p.x as f64 - cx).powi(2) + (p.y as f64 - cy).powi(2);
                if k > best_key.0 || (k == best_key.0 && d < best_key.1) {
                    best = p;
                    best_key = (k, d);
                }
            }
            Node { x: best.x, y: best.y, degree: 0 }
        })
        .collect();

    let mut tracer = Tracer { m, cluster, visited: vec![false; w * h] };
    let mut edges = Vec::new();
    for (u, ps) in members.iter().enumerate() {
        for &c in ps {
            let starts: Vec<Pixel> = m.neighbors(c).collect();
            for q in starts {
                let j = tracer.idx(q);
                if tracer.cluster[j] != NONE || tracer.visited[j] {
                    continue;
                }
                let chain = tracer.trace(c, q);
                let end = *chain.last().expect("non-empty chain");
                let v = tracer.cluster[tracer.idx(end)];
                if v == NONE {
                    return Err(Error::Graph(format!("chain from ({}, {}) ends off-node", c.x, c.y)));
                }
                let mut poly = tracer.cluster_path(nodes[u].pixel(), c);
                poly.extend_from_slice(&chain[1..chain.len() - 1]);
                poly.extend(tracer.cluster_path(end, nodes[v].pixel()));
                edges.push(new_edge(u, v, poly));
            }
        }
    }

    // pure rings: anchor at the first pixel in raster order
    for p in m.pixels() {
        let i = tracer.idx(p);
        if tracer.cluster[i] != NONE || tracer.visited[i] {
            continue;
        }
        tracer.visited[i] = true;
        let first = m.neighbors(p).next().expect("ring pixel has two neighbours");
        let mut poly = vec![p, first];
        tracer.visited[first.y * w + first.x] = true;
        let (mut prev, mut cur) = (p, first);
        while let Some(next) = m.neighbors(cur).find(|&q| q != prev) {
            poly.push(next);
            if next == p {
                break;
            }
            tracer.visited[next.y * w + next.x] = true;
            prev = cur;
            cur = next;
        }
        let a = nodes.len();
        nodes.push(Node { x: p.x, y: p.y, degree: 0 });
        edges.push(new_edge(a, a, poly));
    }

    let mut g = VesselGraph { width: w, height: h, nodes, edges };
    refresh_degrees(&mut g);
    prune_spurs(&mut g, prune_threshold);
    merge_chains(&mut g);
    Ok(g)
}

fn new_edge(u: usize, v: usize, polyline: Vec<Pixel>) -> Edge {
    Edge { u, v, polyline, length: 0.0, curveness: 0.0, volume: 0.0, mean_radius: 0.0 }
}

fn refresh_degrees(g: &mut VesselGraph) {
    let d = g.incidence_degrees();
    for (n, d) in g.nodes.iter_mut().zip(d) {
        n.degree = d;
    }
}

/// Removes terminal edges (one end of degree 1, the other ≥ 3) shorter than
/// `threshold`, in a single simultaneous pass.
fn prune_spurs(g: &mut VesselGraph, threshold: f64) {
    let deg: Vec<usize> = g.nodes.iter().map(|n| n.degree).collect();
    let mut dead_node = vec![false; g.nodes.len()];
    g.edges.retain(|e| {
        if e.is_loop() {
            return true;
        }
        let (du, dv) = (deg[e.u], deg[e.v]);
        let spur = (du == 1 && dv >= 3) || (dv == 1 && du >= 3);
        if spur && chain_length(&e.polyline) < threshold {
            dead_node[if du == 1 { e.u } else { e.v }] = true;
            false
        } else {
            true
        }
    });
    compact(g, &dead_node);
    refresh_degrees(g);
}

/// Splices out nodes left with exactly two distinct incident edges.
fn merge_chains(g: &mut VesselGraph) {
    let mut dead_node = vec![false; g.nodes.len()];
    loop {
        let mut merged = false;
        for n in 0..g.nodes.len() {
            if dead_node[n] || g.nodes[n].degree != 2 {
                continue;
            }
            let inc: Vec<usize> = (0..g.edges.len()).filter(|&i| g.edges[i].u == n || g.edges[i].v == n).collect();
            if inc.len() != 2 {
                continue;
            }
            let (i, j) = (inc[0], inc[1]);
            let mut a = g.edges[i].clone();
            let mut b = g.edges[j].clone();
            if a.v != n {
                reverse(&mut a);
            }
            if b.u != n {
                reverse(&mut b);
            }
            a.polyline.extend_from_slice(&b.polyline[1..]);
            a.v = b.v;
            g.edges[i] = a;
            g.edges.remove(j);
            dead_node[n] = true;
            g.nodes[n].degree = 0;
            merged = true;
        }
        if !merged {
            break;
        }
    }
    compact(g, &dead_node);
    refresh_degrees(g);
}

fn reverse(e: &mut Edge) {
    std::mem::swap(&mut e.u, &mut e.v);
    e.polyline.reverse();
}

fn compact(g: &mut VesselGraph, dead: &[bool]) {
    let mut remap = vec![NONE; g.nodes.len()];
    let mut next = 0;
    for (i, &d) in dead.iter().enumerate() {
        if !d {
            remap[i] = next;
            next += 1;
        }
    }
    let mut k = 0;
    g.nodes.retain(|_| {
        k += 1;
        !dead[k - 1]
    });
    for e in &mut g.edges {
        e.u = remap[e.u];
        e.v = remap[e.v];
    }
}
