//! Graphs, ground-truth shortest-path distances and the synthetic bipartite benchmark.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Undirected simple graph with positive edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<Edge>,
    weighted: bool,
    labels: Vec<String>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds a graph, rejecting out-of-range nodes, self-loops, duplicate
    /// undirected edges and non-positive weights. Connectivity is not checked.
    pub fn new(node_count: usize, edges: Vec<Edge>, weighted: bool) -> Result<Self> {
        let labels = (0..node_count).map(|i| i.to_string()).collect();
        Self::with_labels(labels, edges, weighted)
    }

    pub fn with_labels(labels: Vec<String>, edges: Vec<Edge>, weighted: bool) -> Result<Self> {
        let node_count = labels.len();
        if node_count == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); node_count];
        for (k, e) in edges.iter().enumerate() {
            if e.u >= node_count || e.v >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge {k} ({}, {}) out of range for {node_count} nodes",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::SelfLoop {
                    label: labels[e.u].clone(),
                    line: k + 1,
                });
            }
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::NonPositiveWeight {
                    weight: e.weight,
                    line: k + 1,
                });
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(Error::DuplicateEdge {
                    u: labels[e.u].clone(),
                    v: labels[e.v].clone(),
                    line: k + 1,
                });
            }
            adjacency[e.u].push((e.v, e.weight));
            adjacency[e.v].push((e.u, e.weight));
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(w, _)| w);
        }
        Ok(Self {
            node_count,
            edges,
            weighted,
            labels,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Neighbours of `v` sorted by node index, with edge weights.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// The nodes closest to `v` by graph distance: every neighbour for an
    /// unweighted graph, otherwise the neighbours joined by a lightest edge
    /// (a closest node is always adjacent, since weights are positive).
    pub fn closest_neighbors(&self, v: usize) -> Vec<usize> {
        let lightest = self.adjacency[v]
            .iter()
            .map(|&(_, w)| w)
            .fold(f64::INFINITY, f64::min);
        self.adjacency[v]
            .iter()
            .filter(|&&(_, w)| w == lightest)
            .map(|&(u, _)| u)
            .collect()
    }

    /// [`Graph::closest_neighbors`] for every node; fails on an isolated node.
    pub fn relevance_sets(&self) -> Result<Vec<Vec<usize>>> {
        (0..self.node_count)
            .map(|v| {
                let set = self.closest_neighbors(v);
                if set.is_empty() {
                    Err(Error::IsolatedNode { node: v })
                } else {
                    Ok(set)
                }
            })
            .collect()
    }

    /// Connected component id for every node; ids are assigned in order of
    /// the smallest node index in each component.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut comp = vec![usize::MAX; self.node_count];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.node_count {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = count;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &(w, _) in &self.adjacency[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = count;
                        queue.push_back(w);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    pub fn ensure_connected(&self) -> Result<()> {
        let (components, _) = self.components();
        if components == 1 {
            Ok(())
        } else {
            Err(Error::Disconnected { components })
        }
    }

    /// Stable 64-bit FNV-1a digest of the graph structure, used to tag
    /// cached distance matrices.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write(&(self.node_count as u64).to_le_bytes());
        h.write(&[self.weighted as u8]);
        for e in &self.edges {
            h.write(&(e.u as u64).to_le_bytes());
            h.write(&(e.v as u64).to_le_bytes());
            h.write(&e.weight.to_bits().to_le_bytes());
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Parses an edge list: one `u v [w]` edge per line, `#` comments, labels
/// re-indexed densely in order of first appearance. Unweighted graphs
/// still validate a third column but store weight 1.
pub fn parse_edge_list<'a>(text: &'a str, weighted: bool, source: &str) -> Result<Graph> {
    let mut index: HashMap<&'a str, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let (a, b, w) = match fields.as_slice() {
            [a, b] => (*a, *b, 1.0),
            [a, b, w] => {
                let w: f64 = w
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid weight '{w}'")))?;
                (*a, *b, w)
            }
            _ => {
                return Err(parse_err(
                    line,
                    format!("expected 'u v [w]', found {} fields", fields.len()),
                ))
            }
        };
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::NonPositiveWeight { weight: w, line });
        }
        if a == b {
            return Err(Error::SelfLoop {
                label: a.to_string(),
                line,
            });
        }
        let mut intern = |label: &'a str| -> usize {
            let next = labels.len();
            *index.entry(label).or_insert_with(|| {
                labels.push(label.to_string());
                next
            })
        };
        let u = intern(a);
        let v = intern(b);
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(Error::DuplicateEdge {
                u: a.to_string(),
                v: b.to_string(),
                line,
            });
        }
        edges.push(Edge {
            u,
            v,
            weight: if weighted { w } else { 1.0 },
        });
    }
    if edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Graph::with_labels(labels, edges, weighted)
}

/// Loads an edge-list file and checks that the result is connected.
pub fn load_edge_list(path: impl AsRef<Path>, weighted: bool) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let graph = parse_edge_list(&text, weighted, &path.display().to_string())?;
    graph.ensure_connected()?;
    Ok(graph)
}

/// Dense symmetric matrix of graph distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

const DGMX_MAGIC: &[u8; 4] = b"DGMX";
const DGMX_HEADER: usize = 16;

impl DistanceMatrix {
    /// Wraps a row-major matrix after checking symmetry, a zero diagonal and
    /// strictly positive finite off-diagonal entries.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Format(format!(
                "expected {} entries for n = {n}, found {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::Format(format!("non-zero diagonal at {i}")));
            }
            for j in (i + 1)..n {
                let a = data[i * n + j];
                if a != data[j * n + i] {
                    return Err(Error::Format(format!("asymmetric entry ({i}, {j})")));
                }
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::Format(format!("invalid distance {a} at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Uses raw edge weights as targets. Only defined for complete graphs.
    pub fn from_raw_weights(g: &Graph) -> Result<Self> {
        let n = g.node_count();
        if g.edge_count() != n * (n - 1) / 2 {
            return Err(Error::InvalidGraph(
                "raw-weight targets need a complete graph".into(),
            ));
        }
        let mut data = vec![0.0; n * n];
        for e in g.edges() {
            data[e.u * n + e.v] = e.weight;
            data[e.v * n + e.u] = e.weight;
        }
        Self::from_rows(n, data)
    }

    /// Serialises as `DGMX`, u32 n, u64 graph fingerprint, then row-major
    /// little-endian f64 values.
    pub fn to_bytes(&self, fingerprint: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(DGMX_HEADER + 8 * self.data.len());
        out.extend_from_slice(DGMX_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&fingerprint.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`DistanceMatrix::to_bytes`]; returns the stored fingerprint.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, u64)> {
        if bytes.len() < DGMX_HEADER || &bytes[..4] != DGMX_MAGIC {
            return Err(Error::Format("missing DGMX header".into()));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let fingerprint = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[DGMX_HEADER..];
        let expected = n
            .checked_mul(n)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        if body.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} payload bytes for n = {n}, found {}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self::from_rows(n, data)?, fingerprint))
    }
}

/// All-pairs shortest paths: BFS per source for unweighted graphs,
/// Dijkstra per source otherwise.
pub fn shortest_paths(g: &Graph) -> Result<DistanceMatrix> {
    g.ensure_connected()?;
    let n = g.node_count();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            if g.is_weighted() {
                dijkstra(g, s)
            } else {
                bfs(g, s)
            }
        })
        .collect();
    let data = rows.into_iter().flatten().collect();
    Ok(DistanceMatrix { n, data })
}

/// Loads distances from `cache` when its fingerprint matches `g`, otherwise
/// computes them and writes the cache.
pub fn shortest_paths_cached(g: &Graph, cache: &Path) -> Result<DistanceMatrix> {
    let fp = g.fingerprint();
    if let Ok(bytes) = std::fs::read(cache) {
        if let Ok((dm, stored)) = DistanceMatrix::from_bytes(&bytes) {
            if stored == fp && dm.len() == g.node_count() {
                return Ok(dm);
            }
        }
        log::warn!("ignoring stale distance cache {}", cache.display());
    }
    let dm = shortest_paths(g)?;
    std::fs::write(cache, dm.to_bytes(fp)).map_err(|e| Error::io(cache, e))?;
    Ok(dm)
}

fn bfs(g: &Graph, source: usize) -> Vec<f64> {
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut queue = VecDeque::with_capacity(n);
    dist[source] = 0.0;
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        let next = dist[v] + 1.0;
        for &(w, _) in g.neighbors(v) {
            if dist[w].is_infinite() {
                dist[w] = next;
                queue.push_back(w);
            }
        }
    }
    dist
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(g: &Graph, source: usize) -> Vec<f64> {
    let n = g.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(HeapEntry { dist: d, node: v }) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(w, weight) in g.neighbors(v) {
            let nd = d + weight;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(HeapEntry { dist: nd, node: w });
            }
        }
    }
    dist
}

/// Raw edge draws of the bipartite model: every (small, large) pair is an
/// edge with probability `p`. Small nodes are `0..n_small`, large nodes
/// follow. Returned in draw order.
pub fn sample_bipartite_edges(
    n_small: usize,
    n_large: usize,
    p: f64,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for s in 0..n_small {
        for l in 0..n_large {
            if rng.gen::<f64>() < p {
                edges.push((s, n_small + l));
            }
        }
    }
    edges
}

/// Random bipartite graph between a small and a large node set. Isolated
/// nodes are dropped and the largest connected component is kept (ties go
/// to the component holding the lowest node). Surviving nodes keep their
/// relative order; labels are `s<i>` and `l<j>`.
pub fn generate_bipartite(n_small: usize, n_large: usize, p: f64, seed: u64) -> Result<Graph> {
    if n_small == 0 || n_large == 0 {
        return Err(Error::Config("bipartite sides must be non-empty".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!(
            "edge probability must lie in (0, 1), got {p}"
        )));
    }
    let total = n_small + n_large;
    let raw = sample_bipartite_edges(n_small, n_large, p, seed);
    if raw.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let labels: Vec<String> = (0..total)
        .map(|i| {
            if i < n_small {
                format!("s{i}")
            } else {
                format!("l{}", i - n_small)
            }
        })
        .collect();
    let edges = raw
        .iter()
        .map(|&(u, v)| Edge { u, v, weight: 1.0 })
        .collect();
    let full = Graph::with_labels(labels, edges, false)?;

    let (count, comp) = full.components();
    let mut sizes = vec![0usize; count];
    for v in 0..total {
        if full.degree(v) > 0 {
            sizes[comp[v]] += 1;
        }
    }
    // Component ids are ordered by lowest member, so the first maximum wins ties.
    let best = (0..count)
        .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
        .expect("at least one component");
    let mut remap = vec![usize::MAX; total];
    let mut labels = Vec::new();
    for v in 0..total {
        if comp[v] == best && full.degree(v) > 0 {
            remap[v] = labels.len();
            labels.push(full.labels()[v].clone());
        }
    }
    let edges = raw
        .iter()
        .filter(|&&(u, _)| remap[u] != usize::MAX)
        .map(|&(u, v)| Edge {
            u: remap[u],
            v: remap[v],
            weight: 1.0,
        })
        .collect();
    Graph::with_labels(labels, edges, false)
}

/// A graph in the edge-list format read by [`parse_edge_list`].
pub fn format_edge_list(g: &Graph) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let labels = g.labels();
    for e in g.edges() {
        if g.is_weighted() {
            let _ = writeln!(out, "{} {} {}", labels[e.u], labels[e.v], e.weight);
        } else {
            let _ = writeln!(out, "{} {}", labels[e.u], labels[e.v]);
        }
    }
    out
}

pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    std::fs::write(path, format_edge_list(g)).map_err(|e| Error::io(path, e))
}
