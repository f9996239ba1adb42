//! Label taxonomies and the distances they induce.
//!
//! A taxonomy is a rooted tree read from an edge list (`parent child` per
//! line). The semantic distance between two leaf labels is the height of
//! their lowest common ancestor divided by the height of the tree, so
//! siblings under a low parent are close, and labels that only meet at the
//! root are at distance 1. This distance is an ultrametric.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::matrix::Matrix;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HierarchyError {
    #[error("taxonomy input contains no edges")]
    EmptyInput,
    #[error("line {line}: expected `parent child`, found {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("cycle detected through node {node:?}")]
    CycleDetected { node: String },
    #[error("node {child:?} has two parents: {first:?} and {second:?}")]
    MultipleParents {
        child: String,
        first: String,
        second: String,
    },
    #[error("taxonomy has more than one root: {roots:?}")]
    MultipleRoots { roots: Vec<String> },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("node {0:?} is not a leaf")]
    NotALeaf(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// Immutable rooted tree over label names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    root: NodeId,
    depth: Vec<u32>,
    /// Max edge count from each node down to a leaf in its subtree.
    node_height: Vec<u32>,
    leaves: Vec<NodeId>,
    leaf_labels: BTreeMap<String, NodeId>,
}

impl Taxonomy {
    /// Parses an edge list. Ids are assigned in order of first appearance.
    pub fn parse(text: &str) -> Result<Self, HierarchyError> {
        let mut ids: BTreeMap<&str, NodeId> = BTreeMap::new();
        let mut names: Vec<&str> = Vec::new();
        let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let (Some(p), Some(c), None) = (tokens.next(), tokens.next(), tokens.next()) else {
                return Err(HierarchyError::MalformedLine {
                    line: lineno + 1,
                    content: raw.to_string(),
                });
            };
            let pid = intern(p, &mut ids, &mut names);
            let cid = intern(c, &mut ids, &mut names);
            edges.push((pid, cid));
        }
        if edges.is_empty() {
            return Err(HierarchyError::EmptyInput);
        }

        let mut parent: Vec<Option<NodeId>> = vec![None; names.len()];
        for &(p, c) in &edges {
            if p == c {
                return Err(HierarchyError::CycleDetected {
                    node: names[c as usize].to_string(),
                });
            }
            match parent[c as usize] {
                None => parent[c as usize] = Some(p),
                Some(existing) if existing == p => {}
                Some(existing) => {
                    return Err(HierarchyError::MultipleParents {
                        child: names[c as usize].to_string(),
                        first: names[existing as usize].to_string(),
                        second: names[p as usize].to_string(),
                    })
                }
            }
        }

        let nodes: Vec<Node> = (0..names.len())
            .map(|i| Node {
                name: names[i].to_string(),
                parent: parent[i],
                children: Vec::new(),
            })
            .collect();
        Self::from_nodes(nodes)
    }

    /// Builds a taxonomy from nodes whose `parent` links are set; `children`
    /// lists are rebuilt in id order.
    fn from_nodes(mut nodes: Vec<Node>) -> Result<Self, HierarchyError> {
        for n in nodes.iter_mut() {
            n.children.clear();
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p as usize].children.push(i as NodeId);
            }
        }

        let roots: Vec<NodeId> = (0..nodes.len() as NodeId)
            .filter(|&i| nodes[i as usize].parent.is_none())
            .collect();

        // Every node has at most one parent, so anything not reachable from a
        // root sits on (or hangs below) a cycle.
        let mut depth = vec![u32::MAX; nodes.len()];
        let mut order: Vec<NodeId> = Vec::with_capacity(nodes.len());
        for &r in &roots {
            depth[r as usize] = 0;
            order.push(r);
        }
        let mut head = 0;
        while head < order.len() {
            let n = order[head];
            head += 1;
            for &c in &nodes[n as usize].children {
                depth[c as usize] = depth[n as usize] + 1;
                order.push(c);
            }
        }
        if let Some(i) = depth.iter().position(|&d| d == u32::MAX) {
            // Walk up until we land on the cycle itself.
            let mut n = i;
            for _ in 0..nodes.len() {
                n = nodes[n].parent.expect("unreachable nodes have parents") as usize;
            }
            return Err(HierarchyError::CycleDetected {
                node: nodes[n].name.clone(),
            });
        }
        if roots.len() > 1 {
            return Err(HierarchyError::MultipleRoots {
                roots: roots.iter().map(|&r| nodes[r as usize].name.clone()).collect(),
            });
        }
        let root = roots[0];

        let mut node_height = vec![0u32; nodes.len()];
        for &n in order.iter().rev() {
            if let Some(p) = nodes[n as usize].parent {
                let h = node_height[n as usize] + 1;
                if h > node_height[p as usize] {
                    node_height[p as usize] = h;
                }
            }
        }

        let leaves: Vec<NodeId> = (0..nodes.len() as NodeId)
            .filter(|&i| nodes[i as usize].children.is_empty())
            .collect();
        let leaf_labels = leaves
            .iter()
            .map(|&l| (nodes[l as usize].name.clone(), l))
            .collect();

        Ok(Self {
            nodes,
            root,
            depth,
            node_height,
            leaves,
            leaf_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Max root-to-leaf edge count.
    pub fn height(&self) -> u32 {
        self.node_height[self.root as usize]
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, HierarchyError> {
        self.nodes
            .get(id as usize)
            .ok_or(HierarchyError::UnknownNode(id))
    }

    pub fn name(&self, id: NodeId) -> Result<&str, HierarchyError> {
        self.node(id).map(|n| n.name.as_str())
    }

    pub fn depth(&self, id: NodeId) -> Result<u32, HierarchyError> {
        self.node(id)?;
        Ok(self.depth[id as usize])
    }

    pub fn node_height(&self, id: NodeId) -> Result<u32, HierarchyError> {
        self.node(id)?;
        Ok(self.node_height[id as usize])
    }

    pub fn is_leaf(&self, id: NodeId) -> Result<bool, HierarchyError> {
        Ok(self.node(id)?.children.is_empty())
    }

    /// Leaf node ids in id order. This is the canonical class order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_labels(&self) -> &BTreeMap<String, NodeId> {
        &self.leaf_labels
    }

    /// Resolves a leaf label name.
    pub fn leaf_id(&self, name: &str) -> Result<NodeId, HierarchyError> {
        if let Some(&id) = self.leaf_labels.get(name) {
            return Ok(id);
        }
        if self.nodes.iter().any(|n| n.name == name) {
            Err(HierarchyError::NotALeaf(name.to_string()))
        } else {
            Err(HierarchyError::UnknownLabel(name.to_string()))
        }
    }

    /// Position of a leaf in [`Taxonomy::leaves`].
    pub fn class_index(&self, leaf: NodeId) -> Result<usize, HierarchyError> {
        self.ensure_leaf(leaf)?;
        Ok(self.leaves.binary_search(&leaf).expect("leaf is listed"))
    }

    /// Deepest node that is an ancestor of both `a` and `b` (a node is its own ancestor).
    pub fn lca(&self, a: NodeId, b: NodeId) -> Result<NodeId, HierarchyError> {
        self.node(a)?;
        self.node(b)?;
        let (mut a, mut b) = (a, b);
        while self.depth[a as usize] > self.depth[b as usize] {
            a = self.nodes[a as usize].parent.expect("non-root");
        }
        while self.depth[b as usize] > self.depth[a as usize] {
            b = self.nodes[b as usize].parent.expect("non-root");
        }
        while a != b {
            a = self.nodes[a as usize].parent.expect("non-root");
            b = self.nodes[b as usize].parent.expect("non-root");
        }
        Ok(a)
    }

    /// `height(lca(a, b)) / height(root)` for two leaf labels.
    pub fn semantic_distance(&self, a: NodeId, b: NodeId) -> Result<f64, HierarchyError> {
        self.ensure_leaf(a)?;
        self.ensure_leaf(b)?;
        if a == b {
            return Ok(0.0);
        }
        let lca = self.lca(a, b)?;
        Ok(self.node_height[lca as usize] as f64 / self.height() as f64)
    }

    pub fn distance_matrix(&self, labels: &[NodeId]) -> Result<SemanticDistanceMatrix, HierarchyError> {
        for &l in labels {
            self.ensure_leaf(l)?;
        }
        let n = labels.len();
        let mut values = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.semantic_distance(labels[i], labels[j])?;
                values.set(i, j, d);
                values.set(j, i, d);
            }
        }
        Ok(SemanticDistanceMatrix {
            labels: labels.to_vec(),
            values,
        })
    }

    /// Edge list in breadth-first order from the root; parses back to an
    /// equivalent taxonomy.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let mut queue = vec![self.root];
        let mut head = 0;
        while head < queue.len() {
            let n = queue[head];
            head += 1;
            for &c in &self.nodes[n as usize].children {
                let _ = writeln!(out, "{} {}", self.nodes[n as usize].name, self.nodes[c as usize].name);
                queue.push(c);
            }
        }
        out
    }

    fn ensure_leaf(&self, id: NodeId) -> Result<(), HierarchyError> {
        let node = self.node(id)?;
        if node.children.is_empty() {
            Ok(())
        } else {
            Err(HierarchyError::NotALeaf(node.name.clone()))
        }
    }
}

fn intern<'a>(name: &'a str, ids: &mut BTreeMap<&'a str, NodeId>, names: &mut Vec<&'a str>) -> NodeId {
    *ids.entry(name).or_insert_with(|| {
        names.push(name);
        (names.len() - 1) as NodeId
    })
}

/// Pairwise semantic distances over an ordered list of leaf labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDistanceMatrix {
    labels: Vec<NodeId>,
    values: Matrix,
}

impl SemanticDistanceMatrix {
    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distances among a subset of positions, e.g. the labels of one minibatch.
    pub fn gather(&self, positions: &[usize]) -> Matrix {
        Matrix::from_fn(positions.len(), positions.len(), |i, j| {
            self.values.get(positions[i], positions[j])
        })
    }
}
