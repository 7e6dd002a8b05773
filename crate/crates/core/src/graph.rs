//! Causal DAG over named feature nodes.
//!
//! Nodes are addressed by name at the API boundary and by declaration index
//! internally. A [`CausalGraph`] is validated once at construction (unique
//! names, known endpoints, no duplicate edges, no directed cycle) and is
//! immutable afterwards; graph surgery produces a new graph.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl NodeSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        NodeSpec {
            name: name.into(),
            kind: FeatureKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        NodeSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
        }
    }
}

/// Serialized graph layout: declared nodes plus `[source, target]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(String, String)>,
}

impl TryFrom<GraphFile> for CausalGraph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Self> {
        CausalGraph::build(f.nodes, &f.edges)
    }
}

impl From<CausalGraph> for GraphFile {
    fn from(g: CausalGraph) -> Self {
        let edges = g
            .edges()
            .into_iter()
            .map(|(s, d)| (s.to_string(), d.to_string()))
            .collect();
        GraphFile {
            nodes: g.nodes,
            edges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct CausalGraph {
    nodes: Vec<NodeSpec>,
    edges: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl CausalGraph {
    /// Validates `nodes` and `edges` and builds the graph.
    ///
    /// Edges refer to nodes by name. Parent lists keep declaration order of
    /// the parents, which fixes the input layout of the per-node regressors.
    pub fn build<S: AsRef<str>>(nodes: Vec<NodeSpec>, edges: &[(S, S)]) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.name.clone(), i).is_some() {
                return Err(Error::DuplicateNode(node.name.clone()));
            }
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut resolved = Vec::with_capacity(edges.len());
        for (src, dst) in edges {
            let (src, dst) = (src.as_ref(), dst.as_ref());
            let s = *index
                .get(src)
                .ok_or_else(|| Error::UnknownNode(src.to_string()))?;
            let d = *index
                .get(dst)
                .ok_or_else(|| Error::UnknownNode(dst.to_string()))?;
            if !seen.insert((s, d)) {
                return Err(Error::DuplicateEdge(src.to_string(), dst.to_string()));
            }
            resolved.push((s, d));
        }
        Self::from_indexed(nodes, resolved, index)
    }

    fn from_indexed(
        nodes: Vec<NodeSpec>,
        edges: Vec<(usize, usize)>,
        index: HashMap<String, usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(s, d) in &edges {
            parents[d].push(s);
            children[s].push(d);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }

        let order = kahn(&parents, &children);
        if order.len() < n {
            let placed: HashSet<usize> = order.iter().copied().collect();
            let cycle = find_cycle(&parents, &placed)
                .into_iter()
                .map(|i| nodes[i].name.clone())
                .collect();
            return Err(Error::CycleDetected(cycle));
        }

        Ok(CausalGraph {
            nodes,
            edges,
            index,
            parents,
            children,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    pub fn kind(&self, idx: usize) -> FeatureKind {
        self.nodes[idx].kind
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.nodes[idx].name
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    /// Edges as `(source, target)` names, in declaration order.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.edges
            .iter()
            .map(|&(s, d)| (self.name(s), self.name(d)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn parents(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self.index_of(name)?;
        Ok(self.parents[idx].iter().map(|&p| self.name(p)).collect())
    }

    pub fn parent_indices(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    pub fn child_indices(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn is_root(&self, idx: usize) -> bool {
        self.parents[idx].is_empty()
    }

    pub fn roots(&self) -> Vec<&str> {
        (0..self.len())
            .filter(|&i| self.is_root(i))
            .map(|i| self.name(i))
            .collect()
    }

    /// Node names such that every node follows all of its parents. Ties are
    /// broken by declaration order.
    pub fn topological_order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.name(i)).collect()
    }

    pub fn topological_indices(&self) -> &[usize] {
        &self.order
    }

    /// Whether `order` is a permutation of the node indices that respects
    /// every edge.
    pub fn is_topological(&self, order: &[usize]) -> bool {
        if order.len() != self.len() {
            return false;
        }
        let mut pos = vec![usize::MAX; self.len()];
        for (p, &i) in order.iter().enumerate() {
            if i >= self.len() || pos[i] != usize::MAX {
                return false;
            }
            pos[i] = p;
        }
        self.edges.iter().all(|&(s, d)| pos[s] < pos[d])
    }

    /// Indices of `idx` and every node reachable from it.
    pub fn descendants(&self, idx: usize) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![idx];
        seen[idx] = true;
        while let Some(v) = stack.pop() {
            for &c in &self.children[v] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        (0..self.len()).filter(|&i| seen[i]).collect()
    }

    /// A new graph with every incoming edge of `frozen` removed.
    pub fn without_incoming<S: AsRef<str>>(&self, frozen: &[S]) -> Result<CausalGraph> {
        let mut cut = vec![false; self.len()];
        for name in frozen {
            cut[self.index_of(name.as_ref())?] = true;
        }
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(_, d)| !cut[d])
            .collect();
        Self::from_indexed(self.nodes.clone(), edges, self.index.clone())
    }
}

fn kahn(parents: &[Vec<usize>], children: &[Vec<usize>]) -> Vec<usize> {
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(parents.len());
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    order
}

/// Every node left over by Kahn's algorithm has an unplaced parent, so
/// walking unplaced parents must revisit a node.
fn find_cycle(parents: &[Vec<usize>], placed: &HashSet<usize>) -> Vec<usize> {
    let start = (0..parents.len())
        .find(|i| !placed.contains(i))
        .expect("cycle search called on an acyclic graph");
    let mut pos = HashMap::new();
    let mut walk = Vec::new();
    let mut v = start;
    while !pos.contains_key(&v) {
        pos.insert(v, walk.len());
        walk.push(v);
        v = *parents[v]
            .iter()
            .find(|p| !placed.contains(p))
            .expect("unplaced node without unplaced parent");
    }
    let mut cycle = walk[pos[&v]..].to_vec();
    cycle.reverse();
    cycle.push(cycle[0]);
    cycle
}
