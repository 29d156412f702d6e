//! Wide-branching uniform spatial subdivision over a [`SourceSet`].
//!
//! The root cell is the bounding cube of the sources; each internal node
//! splits its cell into `d x d x d` equal sub-cells and keeps only the
//! non-empty ones. Node diameters are cell diagonals, so a child's diameter
//! is exactly its parent's divided by `d`.
//!
//! Nodes are stored depth-first in a flat array. Source indices are permuted
//! so every node owns a contiguous range of the permutation.

use std::fmt::{self, Write as _};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::kernels::Real;
use crate::types::SourceSet;

/// Clamp applied to zero cell diameters when forming far-field ratios.
pub const MIN_DIAMETER: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
    pub diameter: f64,
    pub aggregate_weight: f64,
    pub center_of_mass: Vec3,
    /// Offset of this node's child list in [`Octree::child_ids`].
    pub first_child: u32,
    pub child_count: u32,
    /// `[begin, end)` into [`Octree::permuted_indices`].
    pub begin: u32,
    pub end: u32,
    pub depth: u32,
}

impl TreeNode {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.child_count == 0
    }

    #[inline]
    pub fn point_range(&self) -> Range<usize> {
        self.begin as usize..self.end as usize
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.end - self.begin) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Octree {
    pub nodes: Vec<TreeNode>,
    pub child_ids: Vec<u32>,
    /// Aggregate masses, stride `channel_count`, indexed by node id.
    pub node_masses: Vec<f64>,
    /// Tree order -> original source index.
    pub permuted_indices: Vec<u32>,
    pub branching_per_dim: usize,
    pub max_depth: usize,
    pub channel_count: usize,
}

/// Sub-cell coordinate of `x` along one axis of a cell starting at `lo` with
/// side `size`, split `d` ways.
#[inline]
pub fn cell_coord(x: f64, lo: f64, size: f64, d: usize) -> usize {
    let t = ((x - lo) / size * d as f64).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(d - 1)
    }
}

/// Linear sub-cell index, x slowest.
#[inline]
pub fn cell_index(p: Vec3, lo: Vec3, size: f64, d: usize) -> usize {
    let ix = cell_coord(p[0], lo[0], size, d);
    let iy = cell_coord(p[1], lo[1], size, d);
    let iz = cell_coord(p[2], lo[2], size, d);
    (ix * d + iy) * d + iz
}

/// Bounding cube `(lo, side)` used as the root cell.
pub fn root_cube(positions: &[Vec3]) -> (Vec3, f64) {
    let (lo, hi) = geom::bounds(positions);
    let center = geom::scale(geom::add(lo, hi), 0.5);
    let side = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    (geom::sub(center, [0.5 * side; 3]), side)
}

struct Builder<'a> {
    sources: &'a SourceSet,
    d: usize,
    max_depth: usize,
    c: usize,
    perm: Vec<u32>,
    scratch: Vec<u32>,
    nodes: Vec<TreeNode>,
    masses: Vec<f64>,
    weighted_pos: Vec<Vec3>,
    child_ids: Vec<u32>,
}

impl Builder<'_> {
    fn coincident(&self, range: Range<usize>) -> bool {
        let first = self.sources.position(self.perm[range.start] as usize);
        self.perm[range]
            .iter()
            .all(|&i| self.sources.position(i as usize) == first)
    }

    fn build(&mut self, range: Range<usize>, lo: Vec3, size: f64, depth: usize) -> usize {
        let id = self.nodes.len();
        let hi = geom::add(lo, [size; 3]);
        self.nodes.push(TreeNode {
            bbox_min: lo,
            bbox_max: hi,
            diameter: geom::dist(hi, lo),
            aggregate_weight: 0.0,
            center_of_mass: [0.0; 3],
            first_child: 0,
            child_count: 0,
            begin: range.start as u32,
            end: range.end as u32,
            depth: depth as u32,
        });
        self.masses.extend(std::iter::repeat_n(0.0, self.c));
        self.weighted_pos.push([0.0; 3]);

        let count = range.len();
        let leaf = count == 1 || depth >= self.max_depth || size <= 0.0 || self.coincident(range.clone());
        if leaf {
            self.finish_leaf(id, range);
            return id;
        }

        // Stable counting sort of the range into sub-cells.
        let d = self.d;
        let nb = d * d * d;
        let mut counts = vec![0usize; nb + 1];
        for &i in &self.perm[range.clone()] {
            counts[cell_index(self.sources.position(i as usize), lo, size, d) + 1] += 1;
        }
        for b in 0..nb {
            counts[b + 1] += counts[b];
        }
        let starts = counts.clone();
        self.scratch.clear();
        self.scratch.resize(count, 0);
        for &i in &self.perm[range.clone()] {
            let b = cell_index(self.sources.position(i as usize), lo, size, d);
            self.scratch[counts[b]] = i;
            counts[b] += 1;
        }
        self.perm[range.clone()].copy_from_slice(&self.scratch);

        let child_size = size / d as f64;
        let mut children = Vec::new();
        for b in 0..nb {
            let (s, e) = (starts[b], starts[b + 1]);
            if s == e {
                continue;
            }
            let (ix, iy, iz) = (b / (d * d), (b / d) % d, b % d);
            let child_lo = [
                lo[0] + ix as f64 * child_size,
                lo[1] + iy as f64 * child_size,
                lo[2] + iz as f64 * child_size,
            ];
            let child = self.build(
                range.start + s..range.start + e,
                child_lo,
                child_size,
                depth + 1,
            );
            children.push(child as u32);
        }

        let c = self.c;
        let mut weight = 0.0;
        let mut wpos = [0.0; 3];
        for &ch in &children {
            let ch = ch as usize;
            weight += self.nodes[ch].aggregate_weight;
            wpos = geom::add(wpos, self.weighted_pos[ch]);
            for k in 0..c {
                self.masses[id * c + k] += self.masses[ch * c + k];
            }
        }
        let mut com = geom::scale(wpos, 1.0 / weight);
        for k in 0..3 {
            com[k] = com[k].clamp(lo[k], hi[k]);
        }
        let node = &mut self.nodes[id];
        node.aggregate_weight = weight;
        node.center_of_mass = com;
        node.first_child = self.child_ids.len() as u32;
        node.child_count = children.len() as u32;
        self.weighted_pos[id] = wpos;
        self.child_ids.extend_from_slice(&children);
        id
    }

    fn finish_leaf(&mut self, id: usize, range: Range<usize>) {
        let c = self.c;
        let mut weight = 0.0;
        let mut wpos = [0.0; 3];
        for &i in &self.perm[range.clone()] {
            let i = i as usize;
            let w = self.sources.weight(i);
            weight += w;
            wpos = geom::add(wpos, geom::scale(self.sources.position(i), w));
            for (k, m) in self.sources.mass(i).iter().enumerate() {
                self.masses[id * c + k] += m;
            }
        }
        // Coincident (including single-point) leaves sit exactly on their
        // points so the aggregate term reproduces the point term bit-for-bit.
        let com = if self.coincident(range.clone()) {
            self.sources.position(self.perm[range.start] as usize)
        } else {
            geom::scale(wpos, 1.0 / weight)
        };
        let node = &mut self.nodes[id];
        node.aggregate_weight = weight;
        node.center_of_mass = com;
        self.weighted_pos[id] = wpos;
    }
}

impl Octree {
    /// Builds the tree. `max_depth` caps subdivision; leaves at the cap may
    /// hold several points, as may leaves whose points all coincide.
    pub fn build(sources: &SourceSet, branching_per_dim: usize, max_depth: usize) -> Result<Octree> {
        if sources.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if branching_per_dim < 2 {
            return Err(Error::InvalidConfig("branching_per_dim must be >= 2".into()));
        }
        if sources.len() > u32::MAX as usize {
            return Err(Error::InvalidInput("too many source points".into()));
        }
        let m = sources.len();
        let (lo, size) = root_cube(sources.positions());
        let mut b = Builder {
            sources,
            d: branching_per_dim,
            max_depth,
            c: sources.channel_count(),
            perm: (0..m as u32).collect(),
            scratch: Vec::new(),
            nodes: Vec::new(),
            masses: Vec::new(),
            weighted_pos: Vec::new(),
            child_ids: Vec::new(),
        };
        b.build(0..m, lo, size, 0);
        Ok(Octree {
            nodes: b.nodes,
            child_ids: b.child_ids,
            node_masses: b.masses,
            permuted_indices: b.perm,
            branching_per_dim,
            max_depth,
            channel_count: sources.channel_count(),
        })
    }

    #[inline]
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    #[inline]
    pub fn children(&self, node: usize) -> &[u32] {
        let n = &self.nodes[node];
        &self.child_ids[n.first_child as usize..(n.first_child + n.child_count) as usize]
    }

    #[inline]
    pub fn node_mass(&self, node: usize) -> &[f64] {
        let c = self.channel_count;
        &self.node_masses[node * c..(node + 1) * c]
    }

    /// Original source indices owned by `node`.
    #[inline]
    pub fn node_points(&self, node: usize) -> &[u32] {
        &self.permuted_indices[self.nodes[node].point_range()]
    }

    /// Child of `node` whose range contains tree position `pos`.
    #[inline]
    pub fn child_containing(&self, node: usize, pos: u32) -> usize {
        let kids = self.children(node);
        let k = kids.partition_point(|&c| self.nodes[c as usize].end <= pos);
        kids[k] as usize
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.permuted_indices.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn height(&self) -> usize {
        self.nodes.iter().map(|n| n.depth as usize).max().unwrap_or(0)
    }

    /// Text outline: one line per node, indented by depth.
    pub fn outline(&self) -> String {
        let mut s = String::new();
        for (id, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:indent$}node {id} depth {} range [{}, {}) children {} weight {} mass {:?} com {:?}",
                "",
                n.depth,
                n.begin,
                n.end,
                n.child_count,
                n.aggregate_weight,
                self.node_mass(id),
                n.center_of_mass,
                indent = 2 * n.depth as usize,
            );
        }
        s
    }
}

/// `||q - p~|| / |B|` with zero diameters clamped to [`MIN_DIAMETER`].
#[inline]
pub fn far_field_ratio<T: Real>(node: &TreeNode, q: [T; 3]) -> T {
    let c = node.center_of_mass;
    let d = [q[0] - T::of(c[0]), q[1] - T::of(c[1]), q[2] - T::of(c[2])];
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    dist / T::of(node.diameter.max(MIN_DIAMETER))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Invariant {
    Permutation,
    RootRange,
    EmptyNode,
    ChildRanges,
    ChildCount,
    LeafOccupancy,
    AggregateMass,
    AggregateWeight,
    CenterOfMass,
    PointOutsideCell,
    Diameter,
    Depth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub node: Option<usize>,
    pub invariant: Invariant,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(n) => write!(f, "node {n}: {:?}: {}", self.invariant, self.detail),
            None => write!(f, "tree: {:?}: {}", self.invariant, self.detail),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, node: Option<usize>, invariant: Invariant, detail: String) {
        self.violations.push(Violation {
            node,
            invariant,
            detail,
        });
    }
}

fn coord_scale(node: &TreeNode) -> f64 {
    node.bbox_min
        .iter()
        .chain(&node.bbox_max)
        .fold(0.0, |m, x| m.max(x.abs()))
}

fn close(a: f64, b: f64, scale: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * scale.max(f64::MIN_POSITIVE) + 1e-300
}

/// Checks every structural and aggregate invariant of `tree` against the
/// sources it was built from. Violations are reported, never raised.
pub fn validate_tree(tree: &Octree, sources: &SourceSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = sources.len();
    let c = sources.channel_count();

    let mut seen = vec![false; m];
    let mut perm_ok = tree.permuted_indices.len() == m;
    for &i in &tree.permuted_indices {
        match seen.get_mut(i as usize) {
            Some(s) if !*s => *s = true,
            _ => perm_ok = false,
        }
    }
    if !perm_ok {
        report.push(None, Invariant::Permutation, "permuted_indices is not a permutation of 0..M".into());
        return report;
    }
    if tree.nodes.is_empty() || tree.root().begin != 0 || tree.root().end as usize != m {
        report.push(Some(0), Invariant::RootRange, "root range does not cover all points".into());
        return report;
    }

    let d = tree.branching_per_dim;
    let max_children = d * d * d;
    for (id, node) in tree.nodes.iter().enumerate() {
        let pts = tree.node_points(id);
        if pts.is_empty() {
            report.push(Some(id), Invariant::EmptyNode, "empty point range".into());
            continue;
        }

        // Aggregates recomputed straight from the points.
        let mut mass = vec![0.0; c];
        let mut abs_mass = vec![0.0; c];
        let mut weight = 0.0;
        let mut wpos = [0.0; 3];
        for &i in pts {
            let i = i as usize;
            for (k, v) in sources.mass(i).iter().enumerate() {
                mass[k] += v;
                abs_mass[k] += v.abs();
            }
            let w = sources.weight(i);
            weight += w;
            wpos = geom::add(wpos, geom::scale(sources.position(i), w));
        }
        for k in 0..c {
            let got = tree.node_mass(id)[k];
            if !close(got, mass[k], abs_mass[k], 1e-12) {
                report.push(
                    Some(id),
                    Invariant::AggregateMass,
                    format!("channel {k}: stored {got}, recomputed {}", mass[k]),
                );
            }
        }
        if !close(node.aggregate_weight, weight, weight, 1e-12) {
            report.push(
                Some(id),
                Invariant::AggregateWeight,
                format!("stored {}, recomputed {weight}", node.aggregate_weight),
            );
        }

        let extent = (0..3)
            .map(|k| node.bbox_max[k] - node.bbox_min[k])
            .fold(0.0, f64::max);
        let slack = 1e-12 * (1.0 + extent + geom::norm(node.bbox_min).max(geom::norm(node.bbox_max)));
        let com = geom::scale(wpos, 1.0 / weight);
        for k in 0..3 {
            let inside = node.center_of_mass[k] >= node.bbox_min[k] - slack
                && node.center_of_mass[k] <= node.bbox_max[k] + slack;
            if !inside || !close(node.center_of_mass[k], com[k], 1.0 + com[k].abs(), 1e-12) {
                report.push(
                    Some(id),
                    Invariant::CenterOfMass,
                    format!("stored {:?}, recomputed {com:?}", node.center_of_mass),
                );
                break;
            }
        }
        for &i in pts {
            let p = sources.position(i as usize);
            if (0..3).any(|k| p[k] < node.bbox_min[k] - slack || p[k] > node.bbox_max[k] + slack) {
                report.push(
                    Some(id),
                    Invariant::PointOutsideCell,
                    format!("point {i} at {p:?} outside cell"),
                );
                break;
            }
        }
        let diag = geom::dist(node.bbox_max, node.bbox_min);
        if !close(node.diameter, diag, diag.max(coord_scale(node)), 1e-12) {
            report.push(
                Some(id),
                Invariant::Diameter,
                format!("diameter {} != cell diagonal {diag}", node.diameter),
            );
        }

        if node.is_leaf() {
            let coincident = pts
                .iter()
                .all(|&i| sources.position(i as usize) == sources.position(pts[0] as usize));
            if pts.len() > 1 && node.depth as usize != tree.max_depth && !coincident {
                report.push(
                    Some(id),
                    Invariant::LeafOccupancy,
                    format!("leaf holds {} distinct points below the depth cap", pts.len()),
                );
            }
            continue;
        }

        let kids = tree.children(id);
        if kids.len() > max_children {
            report.push(
                Some(id),
                Invariant::ChildCount,
                format!("{} children exceeds {max_children}", kids.len()),
            );
        }
        let mut cursor = node.begin;
        for &k in kids {
            let child = &tree.nodes[k as usize];
            if child.begin != cursor {
                report.push(
                    Some(id),
                    Invariant::ChildRanges,
                    format!("child {k} starts at {} expected {cursor}", child.begin),
                );
            }
            cursor = child.end;
            if child.depth != node.depth + 1 {
                report.push(Some(k as usize), Invariant::Depth, "depth is not parent + 1".into());
            }
            // Cell corners are rounded at coordinate magnitude, so the slack
            // scales with it for cells far from the origin.
            let slack = 1e-12 * (node.diameter + coord_scale(node)).max(1.0);
            if child.diameter > node.diameter / d as f64 + slack {
                report.push(
                    Some(k as usize),
                    Invariant::Diameter,
                    format!(
                        "child diameter {} exceeds parent {} / {d}",
                        child.diameter, node.diameter
                    ),
                );
            }
        }
        if cursor != node.end {
            report.push(
                Some(id),
                Invariant::ChildRanges,
                "children do not cover the node range".into(),
            );
        }
    }
    report
}
