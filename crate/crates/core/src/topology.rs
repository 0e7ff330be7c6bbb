//! Finite balls of the infinite d-regular tree.
//!
//! Every vertex carries a [`VertexLabel`]: the sequence of child indices that
//! leads to it from the canonical root. The root has `d` children indexed
//! `0..d`, every other vertex has `d - 1` children indexed `0..d-1`. Labels are
//! global addresses, so the same physical vertex has the same label in every
//! truncation and in every re-rooted ball. Noise streams are keyed by label,
//! which is what makes nested and re-rooted systems share their driving noise.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Address of a vertex in the infinite d-regular tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct VertexLabel(Vec<u32>);

impl VertexLabel {
    pub fn root() -> Self {
        VertexLabel(Vec::new())
    }

    pub fn from_path(path: Vec<u32>) -> Self {
        VertexLabel(path)
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    /// Distance from the canonical root.
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parent(&self) -> Option<VertexLabel> {
        if self.0.is_empty() {
            None
        } else {
            Some(VertexLabel(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn child(&self, index: u32) -> VertexLabel {
        let mut path = self.0.clone();
        path.push(index);
        VertexLabel(path)
    }

    /// Number of children in the infinite tree of degree `d`.
    pub fn child_count(&self, d: usize) -> usize {
        if self.is_root() {
            d
        } else {
            d - 1
        }
    }

    /// Whether the label is a valid address in the tree of degree `d`.
    pub fn is_valid_for(&self, d: usize) -> bool {
        self.0.iter().enumerate().all(|(i, &c)| {
            let bound = if i == 0 { d } else { d - 1 };
            (c as usize) < bound
        })
    }

    /// Neighbors in the infinite tree: parent first, then children in index order.
    pub fn neighbors(&self, d: usize) -> Vec<VertexLabel> {
        let mut out = Vec::with_capacity(d);
        if let Some(p) = self.parent() {
            out.push(p);
        }
        for i in 0..self.child_count(d) {
            out.push(self.child(i as u32));
        }
        out
    }

    /// Graph distance in the infinite tree, computed from the labels alone.
    pub fn distance_to(&self, other: &VertexLabel) -> usize {
        let common = self.0.iter().zip(other.0.iter()).take_while(|(a, b)| a == b).count();
        self.0.len() + other.0.len() - 2 * common
    }
}

impl fmt::Display for VertexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for VertexLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Ok(VertexLabel::root());
        }
        s.split('/')
            .map(|part| part.parse::<u32>().map_err(|_| Error::input(format!("malformed vertex label {s:?}"))))
            .collect::<Result<Vec<_>>>()
            .map(VertexLabel)
    }
}

impl Serialize for VertexLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VertexLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Expected number of vertices of a depth-`depth` ball in the d-regular tree.
pub fn ball_size(d: usize, depth: usize) -> usize {
    if depth == 0 {
        return 1;
    }
    if d == 2 {
        return 1 + 2 * depth;
    }
    1 + d * ((d - 1).pow(depth as u32) - 1) / (d - 2)
}

/// An edge of a [`TreeTopology`], oriented away from the center.
///
/// Edges are identified with their far endpoint: the edge id of `(parent, child)`
/// is the index of `child`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
}

/// Interior / boundary partition of the edges of a ball.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSet {
    pub interior: Vec<Edge>,
    /// Edges whose child endpoint sits at the maximal depth.
    pub boundary: Vec<Edge>,
}

/// A finite ball of radius `depth` around `center` in the infinite d-regular tree.
///
/// Vertices are stored in breadth-first order: parents precede children, and
/// the ball of radius `r < depth` around the same center is a prefix of the
/// vertex list.
#[derive(Clone, Debug)]
pub struct TreeTopology {
    d: usize,
    depth: usize,
    center: VertexLabel,
    labels: Vec<VertexLabel>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    level: Vec<usize>,
    index: HashMap<VertexLabel, usize>,
}

/// Builds the depth-`depth` tree around the canonical root.
pub fn build_tree(d: usize, depth: usize) -> Result<TreeTopology> {
    TreeTopology::ball(d, VertexLabel::root(), depth)
}

impl TreeTopology {
    /// Ball of radius `depth` around an arbitrary vertex of the infinite tree.
    pub fn ball(d: usize, center: VertexLabel, depth: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::parameter("d", format!("degree must be at least 2, got {d}")));
        }
        if !center.is_valid_for(d) {
            return Err(Error::input(format!("label {center} is not a vertex of the {d}-regular tree")));
        }
        let mut topo = TreeTopology {
            d,
            depth,
            center: center.clone(),
            labels: vec![center.clone()],
            parent: vec![None],
            children: vec![Vec::new()],
            level: vec![0],
            index: HashMap::new(),
        };
        topo.index.insert(center, 0);
        let mut head = 0;
        while head < topo.labels.len() {
            let v = head;
            head += 1;
            if topo.level[v] == depth {
                continue;
            }
            let came_from = topo.parent[v].map(|p| topo.labels[p].clone());
            for nb in topo.labels[v].neighbors(d) {
                if Some(&nb) == came_from.as_ref() {
                    continue;
                }
                let id = topo.labels.len();
                topo.index.insert(nb.clone(), id);
                topo.labels.push(nb);
                topo.parent.push(Some(v));
                topo.children.push(Vec::new());
                topo.level.push(topo.level[v] + 1);
                topo.children[v].push(id);
            }
        }
        Ok(topo)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn center(&self) -> &VertexLabel {
        &self.center
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[VertexLabel] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> &VertexLabel {
        &self.labels[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    /// Distance from the center.
    pub fn level(&self, v: usize) -> usize {
        self.level[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.children[v].len() + usize::from(self.parent[v].is_some())
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.parent[v].into_iter().chain(self.children[v].iter().copied())
    }

    pub fn are_adjacent(&self, u: usize, v: usize) -> bool {
        self.parent[u] == Some(v) || self.parent[v] == Some(u)
    }

    pub fn index_of(&self, label: &VertexLabel) -> Result<usize> {
        self.index.get(label).copied().ok_or_else(|| Error::Lookup(label.to_string()))
    }

    pub fn contains(&self, label: &VertexLabel) -> bool {
        self.index.contains_key(label)
    }

    /// Number of edges (every non-center vertex owns the edge to its parent).
    pub fn edge_count(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (1..self.labels.len())
            .map(|child| Edge { parent: self.parent[child].expect("non-center vertex has a parent"), child })
    }

    /// Whether the edge owned by `child` ends on the outer sphere.
    pub fn is_boundary_edge(&self, child: usize) -> bool {
        child != 0 && self.level[child] == self.depth
    }

    pub fn distance(&self, u: &VertexLabel, v: &VertexLabel) -> Result<usize> {
        self.index_of(u)?;
        self.index_of(v)?;
        Ok(u.distance_to(v))
    }

    pub fn distance_idx(&self, u: usize, v: usize) -> usize {
        self.labels[u].distance_to(&self.labels[v])
    }

    /// Vertex indices of the unique path from `u` to `v`, both included.
    pub fn path_indices(&self, u: usize, v: usize) -> Vec<usize> {
        let (mut a, mut b) = (u, v);
        let mut front = vec![a];
        let mut back = vec![b];
        while self.level[a] > self.level[b] {
            a = self.parent[a].expect("deeper vertex has a parent");
            front.push(a);
        }
        while self.level[b] > self.level[a] {
            b = self.parent[b].expect("deeper vertex has a parent");
            back.push(b);
        }
        while a != b {
            a = self.parent[a].expect("distinct vertices below the meeting point");
            b = self.parent[b].expect("distinct vertices below the meeting point");
            front.push(a);
            back.push(b);
        }
        back.pop();
        front.extend(back.into_iter().rev());
        front
    }

    pub fn shortest_path(&self, u: &VertexLabel, v: &VertexLabel) -> Result<Vec<VertexLabel>> {
        let (ui, vi) = (self.index_of(u)?, self.index_of(v)?);
        Ok(self.path_indices(ui, vi).into_iter().map(|i| self.labels[i].clone()).collect())
    }

    pub fn boundary_edges(&self) -> EdgeSet {
        let mut set = EdgeSet::default();
        for e in self.edges() {
            if self.is_boundary_edge(e.child) {
                set.boundary.push(e);
            } else {
                set.interior.push(e);
            }
        }
        set
    }

    /// Re-centers the ball at the `neighbor_index`-th child of the current center.
    pub fn reroot(&self, neighbor_index: usize) -> Result<RerootMap> {
        let count = self.center.child_count(self.d);
        if neighbor_index >= count {
            return Err(Error::parameter(
                "neighbor_index",
                format!("center has {count} children, index {neighbor_index} is out of range"),
            ));
        }
        let target_center = self.center.child(neighbor_index as u32);
        let target = TreeTopology::ball(self.d, target_center, self.depth)?;
        let source_of_target: Vec<Option<usize>> = target.labels.iter().map(|l| self.index.get(l).copied()).collect();
        let target_of_source: Vec<Option<usize>> = self.labels.iter().map(|l| target.index.get(l).copied()).collect();
        let overlap =
            self.labels.iter().zip(&target_of_source).filter(|(_, t)| t.is_some()).map(|(l, _)| l.clone()).collect();
        let mut union: Vec<VertexLabel> = self.labels.clone();
        union.extend(target.labels.iter().zip(&source_of_target).filter(|(_, s)| s.is_none()).map(|(l, _)| l.clone()));
        Ok(RerootMap { source_center: self.center.clone(), target, source_of_target, target_of_source, overlap, union })
    }
}

/// Correspondence between a ball and the ball of equal radius around a neighbor
/// of its center.
#[derive(Clone, Debug)]
pub struct RerootMap {
    pub source_center: VertexLabel,
    /// The re-centered ball; its labels are physical addresses.
    pub target: TreeTopology,
    /// For each target vertex, its index in the source ball if shared.
    pub source_of_target: Vec<Option<usize>>,
    /// For each source vertex, its index in the target ball if shared.
    pub target_of_source: Vec<Option<usize>>,
    /// Shared vertices, in source order.
    pub overlap: Vec<VertexLabel>,
    /// Source vertices followed by target-only vertices.
    pub union: Vec<VertexLabel>,
}

impl RerootMap {
    pub fn target_center(&self) -> &VertexLabel {
        self.target.center()
    }
}
