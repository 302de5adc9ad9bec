//! Graph topology, κ-hop neighborhoods and the (i, κ)-truncation operator.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Sentinel hop count for pairs of nodes in different components.
pub const UNREACHABLE: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("dimension lists have lengths {state} and {input}, expected {nodes}")]
    DimsLength {
        nodes: usize,
        state: usize,
        input: usize,
    },
    #[error("node {node} has zero state dimension")]
    ZeroStateDim { node: usize },
    #[error("edge ({0}, {1}) references a node outside the graph")]
    NodeOutOfRange(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("block shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Per-node partition of a stacked vector: node `i` owns `offsets[i]..offsets[i + 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_dims(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        for d in dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        Self { offsets }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dim(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn offset(&self, node: usize) -> usize {
        self.offsets[node]
    }

    pub fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    /// Flat indices of the listed nodes, in list order.
    pub fn indices(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().flat_map(|&n| self.range(n)).collect()
    }

    /// Layout of the sub-vector obtained by keeping `nodes` in list order.
    pub fn restrict(&self, nodes: &[usize]) -> BlockLayout {
        let dims: Vec<usize> = nodes.iter().map(|&n| self.dim(n)).collect();
        BlockLayout::from_dims(&dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    state_dims: Vec<usize>,
    input_dims: Vec<usize>,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    distances: Vec<Vec<usize>>,
    state_layout: BlockLayout,
    input_layout: BlockLayout,
}

impl NetworkGraph {
    /// Builds a graph from an undirected edge list. Node count is the length
    /// of the dimension lists.
    pub fn new(
        edges: &[(usize, usize)],
        state_dims: &[usize],
        input_dims: &[usize],
    ) -> Result<Self, NetworkError> {
        let n = state_dims.len();
        if input_dims.len() != n {
            return Err(NetworkError::DimsLength {
                nodes: n,
                state: state_dims.len(),
                input: input_dims.len(),
            });
        }
        Self::with_node_count(n, edges, state_dims, input_dims)
    }

    pub fn with_node_count(
        node_count: usize,
        edges: &[(usize, usize)],
        state_dims: &[usize],
        input_dims: &[usize],
    ) -> Result<Self, NetworkError> {
        if state_dims.len() != node_count || input_dims.len() != node_count {
            return Err(NetworkError::DimsLength {
                nodes: node_count,
                state: state_dims.len(),
                input: input_dims.len(),
            });
        }
        if let Some(node) = state_dims.iter().position(|&d| d == 0) {
            return Err(NetworkError::ZeroStateDim { node });
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(NetworkError::NodeOutOfRange(a, b));
            }
            if a == b {
                return Err(NetworkError::SelfLoop(a));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(NetworkError::DuplicateEdge(a, b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let distances = (0..node_count).map(|s| bfs(&adjacency, s)).collect();
        Ok(Self {
            state_dims: state_dims.to_vec(),
            input_dims: input_dims.to_vec(),
            edges: seen.into_iter().collect(),
            adjacency,
            distances,
            state_layout: BlockLayout::from_dims(state_dims),
            input_layout: BlockLayout::from_dims(input_dims),
        })
    }

    /// `side × side` grid, node id `row * side + col`, 4-neighbor edges.
    pub fn mesh(side: usize, state_dim: usize, input_dim: usize) -> Result<Self, NetworkError> {
        let mut edges = Vec::new();
        for r in 0..side {
            for c in 0..side {
                let id = r * side + c;
                if c + 1 < side {
                    edges.push((id, id + 1));
                }
                if r + 1 < side {
                    edges.push((id, id + side));
                }
            }
        }
        let n = side * side;
        Self::new(&edges, &vec![state_dim; n], &vec![input_dim; n])
    }

    pub fn path(n: usize, state_dim: usize, input_dim: usize) -> Result<Self, NetworkError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(&edges, &vec![state_dim; n], &vec![input_dim; n])
    }

    pub fn node_count(&self) -> usize {
        self.state_dims.len()
    }

    pub fn state_dims(&self) -> &[usize] {
        &self.state_dims
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Graph neighbors of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Hop distance, or [`UNREACHABLE`].
    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.distances[i][j]
    }

    /// Largest finite hop distance over all pairs.
    pub fn diameter(&self) -> usize {
        self.distances
            .iter()
            .flatten()
            .copied()
            .filter(|&d| d != UNREACHABLE)
            .max()
            .unwrap_or(0)
    }

    pub fn is_connected(&self) -> bool {
        self.distances[0].iter().all(|&d| d != UNREACHABLE)
    }

    pub fn state_layout(&self) -> &BlockLayout {
        &self.state_layout
    }

    pub fn input_layout(&self) -> &BlockLayout {
        &self.input_layout
    }

    pub fn total_state_dim(&self) -> usize {
        self.state_layout.total()
    }

    pub fn total_input_dim(&self) -> usize {
        self.input_layout.total()
    }

    /// Serializes to the edge-list text format read by [`NetworkGraph::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "nodes {}", self.node_count()).unwrap();
        for i in 0..self.node_count() {
            writeln!(out, "dims {} {} {}", i, self.state_dims[i], self.input_dims[i]).unwrap();
        }
        for &(a, b) in &self.edges {
            writeln!(out, "{a} {b}").unwrap();
        }
        out
    }

    /// Parses the edge-list format:
    ///
    /// ```text
    /// nodes 3
    /// dims 0 2 1
    /// dims 1 2 1
    /// dims 2 2 1
    /// 0 1
    /// 1 2
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        let mut node_count = None;
        let mut dims: Vec<Option<(usize, usize)>> = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| NetworkError::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let nums = |toks: &[&str]| -> Result<Vec<usize>, NetworkError> {
                toks.iter()
                    .map(|t| t.parse::<usize>().map_err(|_| err(&format!("bad integer `{t}`"))))
                    .collect()
            };
            match tokens[0] {
                "nodes" => {
                    let v = nums(&tokens[1..])?;
                    if v.len() != 1 || node_count.is_some() {
                        return Err(err("expected a single `nodes N` header"));
                    }
                    node_count = Some(v[0]);
                    dims = vec![None; v[0]];
                }
                "dims" => {
                    let v = nums(&tokens[1..])?;
                    if v.len() != 3 {
                        return Err(err("expected `dims i n_x n_u`"));
                    }
                    let slot = dims
                        .get_mut(v[0])
                        .ok_or_else(|| err("dims for unknown node"))?;
                    *slot = Some((v[1], v[2]));
                }
                _ => {
                    let v = nums(&tokens)?;
                    if v.len() != 2 {
                        return Err(err("expected an edge `i j`"));
                    }
                    edges.push((v[0], v[1]));
                }
            }
        }
        let n = node_count.ok_or(NetworkError::Parse {
            line: 0,
            msg: "missing `nodes N` header".into(),
        })?;
        let mut state_dims = Vec::with_capacity(n);
        let mut input_dims = Vec::with_capacity(n);
        for (i, d) in dims.into_iter().enumerate() {
            let (nx, nu) = d.ok_or(NetworkError::Parse {
                line: 0,
                msg: format!("missing dims for node {i}"),
            })?;
            state_dims.push(nx);
            input_dims.push(nu);
        }
        Self::with_node_count(n, &edges, &state_dims, &input_dims)
    }

    /// κ-hop neighborhood of `center` with its boundary shell and input support.
    pub fn khop(&self, center: usize, radius: usize) -> TruncationSet {
        let dist = &self.distances[center];
        let state_nodes: Vec<usize> = (0..self.node_count()).filter(|&j| dist[j] <= radius).collect();
        let boundary_nodes: Vec<usize> = (0..self.node_count()).filter(|&j| dist[j] == radius).collect();
        let mut inputs: BTreeSet<usize> = state_nodes.iter().copied().collect();
        for &j in &state_nodes {
            inputs.extend(self.adjacency[j].iter().copied());
        }
        TruncationSet {
            center,
            radius,
            state_nodes,
            input_nodes: inputs.into_iter().collect(),
            boundary_nodes,
        }
    }
}

fn bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![UNREACHABLE; adjacency.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if dist[v] == UNREACHABLE {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// The node sets seen by agent `center` at truncation radius `radius`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruncationSet {
    pub center: usize,
    pub radius: usize,
    /// Nodes within `radius` hops, ascending.
    pub state_nodes: Vec<usize>,
    /// `state_nodes` plus their graph neighbors, ascending.
    pub input_nodes: Vec<usize>,
    /// Nodes at exactly `radius` hops, ascending.
    pub boundary_nodes: Vec<usize>,
}

impl TruncationSet {
    pub fn contains_state(&self, node: usize) -> bool {
        self.state_nodes.binary_search(&node).is_ok()
    }

    pub fn contains_input(&self, node: usize) -> bool {
        self.input_nodes.binary_search(&node).is_ok()
    }
}

/// A block matrix with only the rows of a truncation set kept, stored in
/// reduced form: `data` holds the blocks `(row_nodes × col_nodes)`; every
/// other block of the full matrix is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMatrix {
    pub row_nodes: Vec<usize>,
    pub col_nodes: Vec<usize>,
    row_layout: BlockLayout,
    col_layout: BlockLayout,
    pub data: DMatrix<f64>,
}

impl TruncatedMatrix {
    /// Expands back to the full-size matrix with zero rows outside `row_nodes`.
    pub fn embed(&self) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.row_layout.total(), self.col_layout.total());
        let rows = self.row_layout.indices(&self.row_nodes);
        let cols = self.col_layout.indices(&self.col_nodes);
        for (ri, &r) in rows.iter().enumerate() {
            for (ci, &c) in cols.iter().enumerate() {
                full[(r, c)] = self.data[(ri, ci)];
            }
        }
        full
    }

    /// Reduced sub-block over the given node lists (subsets of the stored ones).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let local = |nodes: &[usize], stored: &[usize], layout: &BlockLayout| -> Vec<usize> {
            let stored_layout = layout.restrict(stored);
            nodes
                .iter()
                .flat_map(|n| {
                    let pos = stored.binary_search(n).expect("node not in truncated support");
                    stored_layout.range(pos)
                })
                .collect()
        };
        let r = local(rows, &self.row_nodes, &self.row_layout);
        let c = local(cols, &self.col_nodes, &self.col_layout);
        self.data.select_rows(&r).select_columns(&c)
    }
}

/// The (i, κ)-truncation of a block matrix: block row `j` is kept when `j` is
/// in the κ-hop neighborhood and zeroed otherwise. Columns are stored over the
/// graph-reachable support of the kept rows plus any column carrying a
/// nonzero entry in a kept row, so [`TruncatedMatrix::embed`] is exact.
pub fn truncate_matrix(
    m: &DMatrix<f64>,
    row_layout: &BlockLayout,
    col_layout: &BlockLayout,
    ts: &TruncationSet,
) -> Result<TruncatedMatrix, NetworkError> {
    if m.shape() != (row_layout.total(), col_layout.total()) {
        return Err(NetworkError::Shape {
            expected: (row_layout.total(), col_layout.total()),
            got: m.shape(),
        });
    }
    let rows = row_layout.indices(&ts.state_nodes);
    let mut cols: BTreeSet<usize> = ts
        .input_nodes
        .iter()
        .copied()
        .filter(|&k| k < col_layout.node_count())
        .collect();
    for k in 0..col_layout.node_count() {
        if cols.contains(&k) {
            continue;
        }
        let nonzero = rows
            .iter()
            .any(|&r| col_layout.range(k).any(|c| m[(r, c)] != 0.0));
        if nonzero {
            cols.insert(k);
        }
    }
    let col_nodes: Vec<usize> = cols.into_iter().collect();
    let col_idx = col_layout.indices(&col_nodes);
    Ok(TruncatedMatrix {
        row_nodes: ts.state_nodes.clone(),
        col_nodes,
        row_layout: row_layout.clone(),
        col_layout: col_layout.clone(),
        data: m.select_rows(&rows).select_columns(&col_idx),
    })
}

/// Truncated block vector: entries of `nodes` in reduced form.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedVector {
    pub nodes: Vec<usize>,
    layout: BlockLayout,
    pub data: DVector<f64>,
}

impl TruncatedVector {
    pub fn embed(&self) -> DVector<f64> {
        let mut full = DVector::zeros(self.layout.total());
        for (li, fi) in self.layout.indices(&self.nodes).into_iter().enumerate() {
            full[fi] = self.data[li];
        }
        full
    }
}

pub fn truncate_vector(
    v: &DVector<f64>,
    layout: &BlockLayout,
    ts: &TruncationSet,
) -> Result<TruncatedVector, NetworkError> {
    if v.len() != layout.total() {
        return Err(NetworkError::Shape {
            expected: (layout.total(), 1),
            got: (v.len(), 1),
        });
    }
    Ok(TruncatedVector {
        nodes: ts.state_nodes.clone(),
        layout: layout.clone(),
        data: v.select_rows(&layout.indices(&ts.state_nodes)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> NetworkGraph {
        NetworkGraph::path(3, 1, 1).unwrap()
    }

    #[test]
    fn mesh_five_has_diameter_eight() {
        let g = NetworkGraph::mesh(5, 2, 1).unwrap();
        assert_eq!(g.node_count(), 25);
        assert_eq!(g.edges().len(), 40);
        assert_eq!(g.diameter(), 8);
    }

    #[test]
    fn empty_graph_is_disconnected() {
        let g = NetworkGraph::new(&[], &[1, 1, 1], &[1, 1, 1]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = g.distance(i, j);
                assert_eq!(d, if i == j { 0 } else { UNREACHABLE });
            }
        }
        assert!(!g.is_connected());
        // truncation never reaches other components
        assert_eq!(g.khop(1, 5).state_nodes, vec![1]);
    }

    #[test]
    fn path_distance() {
        assert_eq!(chain3().distance(0, 2), 2);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            NetworkGraph::new(&[(0, 1)], &[1, 1], &[1]),
            Err(NetworkError::DimsLength { .. })
        ));
        assert_eq!(
            NetworkGraph::new(&[(0, 1), (1, 0)], &[1, 1], &[1, 1]),
            Err(NetworkError::DuplicateEdge(1, 0))
        );
        assert_eq!(
            NetworkGraph::new(&[(0, 0)], &[1], &[1]),
            Err(NetworkError::SelfLoop(0))
        );
        assert_eq!(
            NetworkGraph::new(&[(0, 2)], &[1, 1], &[1, 1]),
            Err(NetworkError::NodeOutOfRange(0, 2))
        );
    }

    #[test]
    fn khop_zero_radius() {
        let g = NetworkGraph::mesh(3, 1, 1).unwrap();
        let ts = g.khop(4, 0);
        assert_eq!(ts.state_nodes, vec![4]);
        assert_eq!(ts.boundary_nodes, vec![4]);
        assert_eq!(ts.input_nodes, vec![1, 3, 4, 5, 7]);
    }

    #[test]
    fn khop_full_cover() {
        let g = NetworkGraph::mesh(4, 1, 1).unwrap();
        let ts = g.khop(5, g.diameter());
        assert_eq!(ts.state_nodes, (0..16).collect::<Vec<_>>());
        assert_eq!(ts.input_nodes, ts.state_nodes);
    }

    #[test]
    fn mesh_corner_one_hop() {
        // corner 0 of the 5x5 grid touches 1 (right) and 5 (below)
        let g = NetworkGraph::mesh(5, 2, 1).unwrap();
        let ts = g.khop(0, 1);
        assert_eq!(ts.state_nodes, vec![0, 1, 5]);
        assert_eq!(ts.boundary_nodes, vec![1, 5]);
        assert_eq!(ts.input_nodes, vec![0, 1, 2, 5, 6, 10]);
    }

    #[test]
    fn truncation_of_chain_matrix() {
        let g = chain3();
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 3.0, 4.0, 5.0, 0.0, 6.0, 7.0]);
        let ts = g.khop(0, 0);
        let t = truncate_matrix(&a, g.state_layout(), g.state_layout(), &ts).unwrap();
        assert_eq!(t.row_nodes, vec![0]);
        assert_eq!(t.col_nodes, vec![0, 1]);
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.embed(), expected);
    }

    #[test]
    fn truncation_identity_and_zero() {
        let g = chain3();
        let a = DMatrix::from_fn(3, 3, |i, j| if i.abs_diff(j) <= 1 { (i * 3 + j + 1) as f64 } else { 0.0 });
        let ts = g.khop(1, g.diameter());
        let t = truncate_matrix(&a, g.state_layout(), g.state_layout(), &ts).unwrap();
        assert_eq!(t.embed(), a);
        let z = DMatrix::zeros(3, 3);
        let tz = truncate_matrix(&z, g.state_layout(), g.state_layout(), &g.khop(0, 1)).unwrap();
        assert_eq!(tz.embed(), z);
    }

    #[test]
    fn truncation_shape_error() {
        let g = chain3();
        let m = DMatrix::zeros(2, 3);
        assert!(matches!(
            truncate_matrix(&m, g.state_layout(), g.state_layout(), &g.khop(0, 0)),
            Err(NetworkError::Shape { .. })
        ));
    }

    #[test]
    fn graph_text_round_trip() {
        let g = NetworkGraph::new(&[(0, 1), (1, 2)], &[2, 1, 3], &[1, 0, 2]).unwrap();
        let text = g.to_text();
        assert_eq!(NetworkGraph::parse(&text).unwrap(), g);
    }

    #[test]
    fn graph_parse_errors() {
        assert!(NetworkGraph::parse("0 1\n").is_err());
        assert!(NetworkGraph::parse("nodes 2\ndims 0 1 1\n0 1\n").is_err());
        assert!(NetworkGraph::parse("nodes 2\ndims 0 1 1\ndims 1 1 x\n").is_err());
    }
}
