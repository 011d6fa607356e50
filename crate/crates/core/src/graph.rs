//! Factor graphs over joint content coordinates.
//!
//! A [`FactorGraph`] is a bipartite graph: factor nodes cover contiguous
//! pieces of the joint content vector, variable nodes cover the overlaps
//! between pieces. Edges are implied by inclusion — a variable is connected
//! to every factor whose coordinate set contains it. The builders produce
//! the four standard families (chain, cycle, grid, cubemap); arbitrary
//! graphs can be assembled from explicit coordinate lists and checked with
//! [`FactorGraph::validate`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Dimensions of the joint content vector, plus optional shape metadata used
/// only for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLayout {
    total_dim: usize,
    shape: Option<Shape>,
}

/// Rendering hint for the joint content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Line { len: usize },
    Image { height: usize, width: usize },
    Cubemap { face_dim: usize },
}

impl Shape {
    fn dim(&self) -> usize {
        match *self {
            Shape::Line { len } => len,
            Shape::Image { height, width } => height * width,
            Shape::Cubemap { face_dim } => 6 * face_dim * face_dim,
        }
    }
}

impl JointLayout {
    pub fn flat(total_dim: usize) -> Result<Self> {
        if total_dim == 0 {
            return Err(Error::invalid("joint layout needs total_dim >= 1"));
        }
        Ok(JointLayout {
            total_dim,
            shape: None,
        })
    }

    pub fn with_shape(shape: Shape) -> Result<Self> {
        let total_dim = shape.dim();
        if total_dim == 0 {
            return Err(Error::invalid("layout shape has zero size"));
        }
        Ok(JointLayout {
            total_dim,
            shape: Some(shape),
        })
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn shape(&self) -> Option<Shape> {
        self.shape
    }
}

/// Node kind within the bipartite graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Factor,
    Variable,
}

/// Reference to one node of a [`FactorGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeRef {
    pub fn factor(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::Factor,
            index,
        }
    }

    pub fn variable(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::Variable,
            index,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Factor => write!(f, "factor {}", self.index),
            NodeKind::Variable => write!(f, "variable {}", self.index),
        }
    }
}

/// One violation found by [`FactorGraph::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// What the violation is about: `"factor 3"`, `"variable 0"`, or
    /// `"coordinate 7"`.
    pub subject: String,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.subject, self.rule, self.detail)
    }
}

/// Per-node weights of the composed score: every factor counts with weight 1
/// and variable `i` with weight `1 - d_i`, where `d_i` is its degree. Leaf
/// variables (degree 1) therefore drop out entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct BetheCoefficients {
    pub factor_coeffs: Vec<f64>,
    pub variable_coeffs: Vec<f64>,
}

impl BetheCoefficients {
    pub fn coefficient(&self, node: NodeRef) -> f64 {
        match node.kind {
            NodeKind::Factor => self.factor_coeffs[node.index],
            NodeKind::Variable => self.variable_coeffs[node.index],
        }
    }
}

/// Gaussian marginal attached to one node, in node-local coordinate order.
#[derive(Debug, Clone)]
pub struct GaussianMarginal {
    pub node: NodeRef,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

impl GaussianMarginal {
    pub fn new(node: NodeRef, mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        if covariance.rows() != mean.len() || covariance.cols() != mean.len() {
            return Err(Error::Dimension {
                what: "marginal covariance",
                expected: mean.len(),
                got: covariance.rows(),
            });
        }
        if covariance.asymmetry() > 1e-12 {
            return Err(Error::invalid(format!(
                "marginal covariance for {node} is not symmetric (asymmetry {:.3e})",
                covariance.asymmetry()
            )));
        }
        Ok(GaussianMarginal {
            node,
            mean,
            covariance,
        })
    }
}

/// Bipartite factor graph over joint coordinates.
///
/// Immutable after construction; all accessors are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    layout: JointLayout,
    factors: Vec<Vec<usize>>,
    variables: Vec<Vec<usize>>,
    /// For each factor, the ascending list of incident variable indices.
    edges: Vec<Vec<usize>>,
    degrees: Vec<usize>,
    factor_conditions: Vec<Option<String>>,
    variable_conditions: Vec<Option<String>>,
}

impl FactorGraph {
    /// Assembles a graph from explicit coordinate sets. Edges are derived
    /// from subset inclusion. Coordinate indices must be in range; deeper
    /// structural problems (coverage, unsorted sets, zero-degree variables)
    /// are reported by [`Self::validate`] rather than rejected here.
    pub fn new(
        layout: JointLayout,
        factors: Vec<Vec<usize>>,
        variables: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = layout.total_dim();
        for (j, coords) in factors.iter().enumerate() {
            if coords.is_empty() {
                return Err(Error::invalid(format!("factor {j} has no coordinates")));
            }
            if let Some(&c) = coords.iter().find(|&&c| c >= n) {
                return Err(Error::invalid(format!(
                    "factor {j} references coordinate {c} >= total_dim {n}"
                )));
            }
        }
        for (i, coords) in variables.iter().enumerate() {
            if coords.is_empty() {
                return Err(Error::invalid(format!("variable {i} has no coordinates")));
            }
            if let Some(&c) = coords.iter().find(|&&c| c >= n) {
                return Err(Error::invalid(format!(
                    "variable {i} references coordinate {c} >= total_dim {n}"
                )));
            }
        }
        let edges: Vec<Vec<usize>> = factors
            .iter()
            .map(|f| {
                variables
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| is_subset(v, f))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut degrees = vec![0usize; variables.len()];
        for incident in &edges {
            for &i in incident {
                degrees[i] += 1;
            }
        }
        let nf = factors.len();
        let nv = variables.len();
        Ok(FactorGraph {
            layout,
            factors,
            variables,
            edges,
            degrees,
            factor_conditions: vec![None; nf],
            variable_conditions: vec![None; nv],
        })
    }

    pub fn layout(&self) -> &JointLayout {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn factor_coords(&self, j: usize) -> &[usize] {
        &self.factors[j]
    }

    pub fn variable_coords(&self, i: usize) -> &[usize] {
        &self.variables[i]
    }

    /// Coordinates of any node.
    pub fn node_coords(&self, node: NodeRef) -> &[usize] {
        match node.kind {
            NodeKind::Factor => self.factor_coords(node.index),
            NodeKind::Variable => self.variable_coords(node.index),
        }
    }

    /// Variable indices incident to factor `j`, ascending.
    pub fn factor_edges(&self, j: usize) -> &[usize] {
        &self.edges[j]
    }

    /// Degree of variable `i` (number of incident factors).
    pub fn variable_degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn set_condition_tag(&mut self, node: NodeRef, tag: impl Into<String>) {
        match node.kind {
            NodeKind::Factor => self.factor_conditions[node.index] = Some(tag.into()),
            NodeKind::Variable => self.variable_conditions[node.index] = Some(tag.into()),
        }
    }

    pub fn condition_tag(&self, node: NodeRef) -> Option<&str> {
        let slot = match node.kind {
            NodeKind::Factor => &self.factor_conditions[node.index],
            NodeKind::Variable => &self.variable_conditions[node.index],
        };
        slot.as_deref()
    }

    /// All nodes, factors first, each kind by ascending index. This is also
    /// the reduction order used when composing scores.
    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        (0..self.num_factors())
            .map(NodeRef::factor)
            .chain((0..self.num_variables()).map(NodeRef::variable))
    }

    /// Per-node composition weights. Leaf variables get exactly 0.
    pub fn bethe_coefficients(&self) -> BetheCoefficients {
        BetheCoefficients {
            factor_coeffs: vec![1.0; self.num_factors()],
            variable_coeffs: self.degrees.iter().map(|&d| 1.0 - d as f64).collect(),
        }
    }

    /// Checks every structural invariant and returns all violations found.
    /// An empty report means the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        let n = self.total_dim();

        let check_sorted = |report: &mut Vec<Violation>, subject: String, coords: &[usize]| {
            for w in coords.windows(2) {
                if w[1] <= w[0] {
                    report.push(Violation {
                        subject,
                        rule: "sorted-coordinates",
                        detail: format!("entries {} and {} out of order", w[0], w[1]),
                    });
                    return;
                }
            }
        };
        for (j, coords) in self.factors.iter().enumerate() {
            check_sorted(&mut report, format!("factor {j}"), coords);
        }
        for (i, coords) in self.variables.iter().enumerate() {
            check_sorted(&mut report, format!("variable {i}"), coords);
        }

        // Coverage: every joint coordinate belongs to at least one factor.
        let mut multiplicity = vec![0isize; n];
        for coords in &self.factors {
            for &c in coords {
                if c < n {
                    multiplicity[c] += 1;
                }
            }
        }
        for (c, &m) in multiplicity.iter().enumerate() {
            if m == 0 {
                report.push(Violation {
                    subject: format!("coordinate {c}"),
                    rule: "coverage",
                    detail: "not contained in any factor".to_string(),
                });
            }
        }

        // Edge consistency: variable i listed under factor j iff subset.
        for (j, f) in self.factors.iter().enumerate() {
            for (i, v) in self.variables.iter().enumerate() {
                let subset = is_subset(v, f);
                let listed = self.edges[j].binary_search(&i).is_ok();
                if subset != listed {
                    report.push(Violation {
                        subject: format!("variable {i}"),
                        rule: "edge-consistency",
                        detail: format!(
                            "subset of factor {j} is {subset} but edge listed is {listed}"
                        ),
                    });
                }
            }
        }

        // Every variable needs at least one incident factor.
        for (i, &d) in self.degrees.iter().enumerate() {
            if d == 0 {
                report.push(Violation {
                    subject: format!("variable {i}"),
                    rule: "degree",
                    detail: "not a subset of any factor".to_string(),
                });
            }
        }

        // Per-coordinate sum rule: factor multiplicity plus (1 - d_i) over
        // covering variables must equal exactly 1 for the composed score to
        // weight every coordinate once.
        let coeffs = self.bethe_coefficients();
        let mut sums: Vec<f64> = multiplicity.iter().map(|&m| m as f64).collect();
        for (i, coords) in self.variables.iter().enumerate() {
            for &c in coords {
                if c < n {
                    sums[c] += coeffs.variable_coeffs[i];
                }
            }
        }
        for (c, &s) in sums.iter().enumerate() {
            if (s - 1.0).abs() > 1e-12 && multiplicity[c] != 0 {
                report.push(Violation {
                    subject: format!("coordinate {c}"),
                    rule: "coefficient-sum",
                    detail: format!("weights sum to {s}, expected 1"),
                });
            }
        }

        report
    }

    /// True iff the bipartite graph has no cycle (union-find over edges).
    pub fn is_acyclic(&self) -> bool {
        let nf = self.num_factors();
        let mut parent: Vec<usize> = (0..nf + self.num_variables()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (j, incident) in self.edges.iter().enumerate() {
            for &i in incident {
                let a = find(&mut parent, j);
                let b = find(&mut parent, nf + i);
                if a == b {
                    return false;
                }
                parent[a] = b;
            }
        }
        true
    }
}

fn is_subset(sub: &[usize], sup: &[usize]) -> bool {
    // Both sets are sorted; walk them in lockstep.
    let mut it = sup.iter();
    'outer: for &s in sub {
        for &t in it.by_ref() {
            if t == s {
                continue 'outer;
            }
            if t > s {
                return false;
            }
        }
        return false;
    }
    true
}

/// Entropy of a k-dimensional Gaussian: `½·ln((2πe)^k · det Σ)`.
fn gaussian_entropy(cov: &Matrix) -> Result<f64> {
    let k = cov.rows() as f64;
    let log_det = cov.cholesky()?.log_det();
    Ok(0.5 * (k * libm::log(2.0 * core::f64::consts::PI * core::f64::consts::E) + log_det))
}

/// Bethe entropy `Σ_j H(f_j) + Σ_i (1 − d_i)·H(x_i)` for Gaussian marginals.
///
/// Exactly equals the joint entropy when the graph is acyclic and the
/// marginals are the true marginals of one joint Gaussian; on loopy graphs it
/// is an approximation. One marginal per node is required.
pub fn bethe_entropy(graph: &FactorGraph, marginals: &[GaussianMarginal]) -> Result<f64> {
    let lookup = |node: NodeRef| -> Result<&GaussianMarginal> {
        marginals
            .iter()
            .find(|m| m.node == node)
            .ok_or_else(|| Error::invalid(format!("missing marginal for {node}")))
    };
    let mut total = 0.0;
    for j in 0..graph.num_factors() {
        let node = NodeRef::factor(j);
        let m = lookup(node)?;
        expect_node_dim(graph, node, m.mean.len())?;
        total += gaussian_entropy(&m.covariance)?;
    }
    for i in 0..graph.num_variables() {
        let node = NodeRef::variable(i);
        let m = lookup(node)?;
        expect_node_dim(graph, node, m.mean.len())?;
        let weight = 1.0 - graph.variable_degree(i) as f64;
        if weight != 0.0 {
            total += weight * gaussian_entropy(&m.covariance)?;
        }
    }
    Ok(total)
}

fn expect_node_dim(graph: &FactorGraph, node: NodeRef, got: usize) -> Result<()> {
    let expected = graph.node_coords(node).len();
    if expected != got {
        return Err(Error::Dimension {
            what: "node marginal",
            expected,
            got,
        });
    }
    Ok(())
}

/// Linear chain of `num_factors` pieces of length `factor_len`, consecutive
/// pieces overlapping in `overlap` coordinates. Interior variables are the
/// overlaps (degree 2); the non-overlapped ends of the first and last factor
/// are kept as degree-1 leaf variables.
pub fn build_chain(num_factors: usize, factor_len: usize, overlap: usize) -> Result<FactorGraph> {
    check_chain_params(num_factors, factor_len, overlap)?;
    let m = num_factors;
    let stride = factor_len - overlap;
    let total = (m - 1) * stride + factor_len;
    let layout = JointLayout::with_shape(Shape::Line { len: total })?;

    let factors: Vec<Vec<usize>> = (0..m)
        .map(|j| (j * stride..j * stride + factor_len).collect())
        .collect();

    let mut variables: Vec<Vec<usize>> = Vec::with_capacity(m + 1);
    // Head leaf, then the interior overlaps in order, then tail leaf.
    variables.push((0..stride).collect());
    for j in 1..m {
        variables.push((j * stride..j * stride + overlap).collect());
    }
    variables.push((total - stride..total).collect());

    FactorGraph::new(layout, factors, variables)
}

fn check_chain_params(num_factors: usize, factor_len: usize, overlap: usize) -> Result<()> {
    if num_factors == 0 {
        return Err(Error::invalid("chain needs at least 1 factor"));
    }
    if factor_len < 2 {
        return Err(Error::invalid("chain factor length must be >= 2"));
    }
    if overlap == 0 || overlap >= factor_len {
        return Err(Error::invalid(format!(
            "chain overlap {overlap} must satisfy 1 <= overlap < factor_len {factor_len}"
        )));
    }
    Ok(())
}

/// Ring of `num_factors` pieces on `num_factors · (factor_len − overlap)`
/// coordinates; every consecutive pair of factors (including tail→head)
/// shares one overlap variable. All variables end up with degree 2.
pub fn build_cycle(num_factors: usize, factor_len: usize, overlap: usize) -> Result<FactorGraph> {
    if num_factors < 2 {
        return Err(Error::invalid("cycle needs at least 2 factors"));
    }
    check_chain_params(num_factors, factor_len, overlap)?;
    let m = num_factors;
    let stride = factor_len - overlap;
    let total = m * stride;
    if total < factor_len {
        return Err(Error::invalid(format!(
            "cycle of {m} factors on {total} coordinates: factor of length {factor_len} would wrap onto itself"
        )));
    }
    let layout = JointLayout::with_shape(Shape::Line { len: total })?;

    let arc = |start: usize, len: usize| -> Vec<usize> {
        let mut coords: Vec<usize> = (0..len).map(|r| (start + r) % total).collect();
        coords.sort_unstable();
        coords.dedup();
        coords
    };
    let factors: Vec<Vec<usize>> = (0..m).map(|j| arc(j * stride, factor_len)).collect();
    let variables: Vec<Vec<usize>> = (0..m).map(|i| arc((i + 1) * stride, overlap)).collect();

    let graph = FactorGraph::new(layout, factors, variables)?;
    // Degenerate geometries (large overlaps on short rings) can make a
    // variable a subset of non-adjacent factors; reject those outright.
    if let Some(i) = (0..graph.num_variables()).find(|&i| graph.variable_degree(i) != 2) {
        return Err(Error::invalid(format!(
            "cycle geometry degenerate: variable {i} has degree {} (expected 2); reduce overlap",
            graph.variable_degree(i)
        )));
    }
    Ok(graph)
}

/// 2D grid of `patch × patch` pieces with `overlap × overlap` corner overlaps.
///
/// Multi-row grids place patches on a checkerboard-offset lattice so that
/// every overlap region is the corner of exactly 2 diagonally neighboring
/// patches; this tiling only covers the full rectangle when
/// `patch == 2 · overlap`, and other combinations are rejected. Overlap cells
/// on the image border are covered by a single patch and become degree-1
/// leaf variables. A grid with one row (or one column) is a plain chain of
/// patches overlapping in `patch × overlap` strips.
pub fn build_grid(rows: usize, cols: usize, patch: usize, overlap: usize) -> Result<FactorGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid needs rows >= 1 and cols >= 1"));
    }
    if patch < 2 {
        return Err(Error::invalid("grid patch must be >= 2"));
    }
    if overlap == 0 || overlap >= patch {
        return Err(Error::invalid(format!(
            "grid overlap {overlap} must satisfy 1 <= overlap < patch {patch}"
        )));
    }
    if rows == 1 || cols == 1 {
        return build_grid_strip(rows, cols, patch, overlap);
    }
    if patch != 2 * overlap {
        return Err(Error::invalid(format!(
            "grid geometry with patch {patch} and overlap {overlap} leaves coordinates covered by zero \
             (or more than two) factors; multi-row grids require patch = 2 * overlap"
        )));
    }

    let s = overlap; // lattice stride = patch - overlap = overlap
    let lat_x = 2 * (cols - 1); // patch lattice extends 0..=lat_x
    let lat_y = 2 * (rows - 1);
    let width = (lat_x + 2) * s;
    let height = (lat_y + 2) * s;
    let layout = JointLayout::with_shape(Shape::Image { height, width })?;

    let rect = |x0: usize, y0: usize, w: usize, h: usize| -> Vec<usize> {
        let mut coords = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                coords.push(y * width + x);
            }
        }
        coords.sort_unstable();
        coords
    };

    // Factors: checkerboard lattice points (a + b even).
    let mut factors = Vec::new();
    for b in 0..=lat_y {
        for a in 0..=lat_x {
            if (a + b) % 2 == 0 {
                factors.push(rect(a * s, b * s, patch, patch));
            }
        }
    }
    // Variables: every s×s cell of the rectangle. Interior cells are corner
    // overlaps of two diagonal patches; border cells are leaves.
    let mut variables = Vec::new();
    for beta in 0..lat_y + 2 {
        for alpha in 0..lat_x + 2 {
            variables.push(rect(alpha * s, beta * s, s, s));
        }
    }

    FactorGraph::new(layout, factors, variables)
}

/// One-row (or one-column) grid: a chain of patches overlapping in strips.
fn build_grid_strip(rows: usize, cols: usize, patch: usize, overlap: usize) -> Result<FactorGraph> {
    let horizontal = rows == 1;
    let m = if horizontal { cols } else { rows };
    let stride = patch - overlap;
    let long = (m - 1) * stride + patch;
    let (height, width) = if horizontal { (patch, long) } else { (long, patch) };
    let layout = JointLayout::with_shape(Shape::Image { height, width })?;

    let strip = |from: usize, len: usize| -> Vec<usize> {
        let mut coords = Vec::with_capacity(len * patch);
        for k in 0..patch {
            for p in from..from + len {
                coords.push(if horizontal { k * width + p } else { p * width + k });
            }
        }
        coords.sort_unstable();
        coords
    };

    let factors: Vec<Vec<usize>> = (0..m).map(|j| strip(j * stride, patch)).collect();
    let mut variables = Vec::with_capacity(m + 1);
    variables.push(strip(0, stride));
    for j in 1..m {
        variables.push(strip(j * stride, overlap));
    }
    variables.push(strip(long - stride, stride));

    FactorGraph::new(layout, factors, variables)
}

/// Face order of the cubemap layout: Front, Back, Left, Right, Up, Down.
pub const CUBEMAP_FACES: [&str; 6] = ["F", "B", "L", "R", "U", "D"];

/// Cubemap of 6 faces with `face_dim²` coordinates each. Factors are the
/// three 4-face loops {F,B,L,R}, {F,B,U,D}, {L,R,U,D}; variables are the
/// opposite-face pairs {L,R}, {U,D}, {F,B}. Every face lies in exactly two
/// factors and one variable.
pub fn build_cubemap(face_dim: usize) -> Result<FactorGraph> {
    if face_dim == 0 {
        return Err(Error::invalid("cubemap needs face_dim >= 1"));
    }
    let fs = face_dim * face_dim;
    let layout = JointLayout::with_shape(Shape::Cubemap { face_dim })?;

    // Face index into CUBEMAP_FACES: F=0, B=1, L=2, R=3, U=4, D=5.
    let faces = |list: &[usize]| -> Vec<usize> {
        let mut coords = Vec::with_capacity(list.len() * fs);
        for &f in list {
            coords.extend(f * fs..(f + 1) * fs);
        }
        coords.sort_unstable();
        coords
    };
    let factors = vec![faces(&[0, 1, 2, 3]), faces(&[0, 1, 4, 5]), faces(&[2, 3, 4, 5])];
    let variables = vec![faces(&[2, 3]), faces(&[4, 5]), faces(&[0, 1])];

    FactorGraph::new(layout, factors, variables)
}
