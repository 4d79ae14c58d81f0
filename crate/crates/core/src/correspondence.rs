//! Template-to-target vertex pairings and exact nearest-neighbour search.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::TemplateMesh;
use crate::lifting::TargetMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchSpace {
    Embedding,
    Euclidean,
}

/// One candidate pair per template vertex: `(template index, target index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub active: Vec<bool>,
    pub match_space: MatchSpace,
}

impl CorrespondenceSet {
    /// All pairs active.
    pub fn new(pairs: Vec<(usize, usize)>, match_space: MatchSpace) -> Self {
        let active = vec![true; pairs.len()];
        Self { pairs, active, match_space }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().zip(&self.active).filter(|(_, &a)| a).map(|(&p, _)| p)
    }
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree answering exact nearest-neighbour queries. Among
/// equidistant points the smallest index wins.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn from_points(points: &[Point3<f64>]) -> Self {
        let v: Vec<Vector3<f64>> = points.iter().map(|p| p.coords).collect();
        Self::new(&v)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the nearest point, or `None` for an empty tree.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<usize> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, &q, &mut best);
        Some(best.1)
    }

    fn search(&self, node: usize, q: &[f64; 3], best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let p = &self.points[i];
                    let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Equal distance can still hold a smaller index.
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
    if hi[axis] - lo[axis] <= 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let value = points[slice[mid]][axis];
    // Points left of `mid` are <= value and right of it are >= value, so
    // either side may hold coordinates equal to the split.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}

/// For each template vertex, the target vertex nearest in embedding space.
pub fn match_embedding_nn(template: &TemplateMesh, target: &TargetMesh) -> CorrespondenceSet {
    let tree = KdTree::new(&target.embedding);
    let pairs = match_with(&tree, template.embedding());
    CorrespondenceSet::new(pairs, MatchSpace::Embedding)
}

/// For each template position, the target vertex nearest in space.
pub fn match_euclidean(positions: &[Point3<f64>], target: &TargetMesh) -> CorrespondenceSet {
    let tree = KdTree::from_points(target.mesh.vertices());
    let queries: Vec<Vector3<f64>> = positions.iter().map(|p| p.coords).collect();
    CorrespondenceSet::new(match_with(&tree, &queries), MatchSpace::Euclidean)
}

fn match_with(tree: &KdTree, queries: &[Vector3<f64>]) -> Vec<(usize, usize)> {
    if tree.is_empty() {
        return Vec::new();
    }
    queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| (i, tree.nearest(q).expect("tree is non-empty")))
        .collect()
}
