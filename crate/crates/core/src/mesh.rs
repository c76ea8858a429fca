//! Structured quadrilateral meshes for the benchmark geometries.
//!
//! Meshes are tensor-product grids of bilinear quads, optionally graded
//! toward a refinement band, with geometric notches represented as seams
//! (duplicated nodes) and holes as stair-step element removal.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write as IoWrite;
use std::path::Path;

/// Errors from mesh construction and editing.
#[derive(Debug)]
pub enum MeshError {
    /// Zero or negative dimension, count, or spacing.
    InvalidDimensions(String),
    /// Refinement band does not intersect the domain.
    InvalidBand(String),
    /// Seam segment endpoints or interior do not lie on element edges.
    SeamNotEdgeAligned(String),
    /// Element removal left no elements.
    EmptyMesh,
    /// Element removal split the mesh into disconnected pieces.
    Disconnected,
}

impl fmt::Display for MeshError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshError::InvalidDimensions(s) => write!(f, "invalid mesh dimensions: {s}"),
            MeshError::InvalidBand(s) => write!(f, "invalid refinement band: {s}"),
            MeshError::SeamNotEdgeAligned(s) => write!(f, "seam not edge-aligned: {s}"),
            MeshError::EmptyMesh => write!(f, "element removal left an empty mesh"),
            MeshError::Disconnected => write!(f, "element removal disconnected the mesh"),
        }
    }
}

impl std::error::Error for MeshError {}

/// Axis-aligned refinement band: elements inside get edge length `h_fine`,
/// grading geometrically out to the coarse background spacing.
#[derive(Debug, Clone, Copy)]
pub struct RefinementBand {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub h_fine: f64,
}

/// Conforming mesh of bilinear quadrilaterals.
///
/// Node sets hold node indices for Dirichlet application; side sets hold
/// `(element, local_edge)` pairs where local edge `k` joins local nodes
/// `k` and `(k+1) % 4`. Elements are counter-clockwise.
#[derive(Debug, Clone)]
pub struct QuadMesh {
    pub node_coords: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    pub node_sets: BTreeMap<String, Vec<usize>>,
    pub side_sets: BTreeMap<String, Vec<(usize, u8)>>,
    pub h_min: f64,
    pub h_max: f64,
}

/// Growth ratio between neighbouring element sizes outside a refinement band.
const GRADING_RATIO: f64 = 1.6;

/// Geometric tolerance for matching nodes to seam segments and tags,
/// absolute in mm after scaling by the local feature size.
const GEOM_TOL: f64 = 1e-9;

impl QuadMesh {
    /// Builds a tensor-product grid from strictly increasing axis coordinates.
    /// Node index is `iy * xs.len() + ix` (x fastest).
    pub fn from_tensor_coords(xs: &[f64], ys: &[f64]) -> Result<Self, MeshError> {
        for (name, arr) in [("x", xs), ("y", ys)] {
            if arr.len() < 2 {
                return Err(MeshError::InvalidDimensions(format!(
                    "{name}-axis needs at least 2 coordinates, got {}",
                    arr.len()
                )));
            }
            if arr.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(MeshError::InvalidDimensions(format!(
                    "{name}-axis coordinates not strictly increasing"
                )));
            }
        }
        let (nxp, nyp) = (xs.len(), ys.len());
        let mut node_coords = Vec::with_capacity(nxp * nyp);
        for &y in ys {
            for &x in xs {
                node_coords.push([x, y]);
            }
        }
        let mut elements = Vec::with_capacity((nxp - 1) * (nyp - 1));
        for iy in 0..nyp - 1 {
            for ix in 0..nxp - 1 {
                let n00 = iy * nxp + ix;
                elements.push([n00, n00 + 1, n00 + nxp + 1, n00 + nxp]);
            }
        }
        let mut mesh = QuadMesh {
            node_coords,
            elements,
            node_sets: BTreeMap::new(),
            side_sets: BTreeMap::new(),
            h_min: 0.0,
            h_max: 0.0,
        };
        mesh.recompute_edge_stats();
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        let mut c = [0.0, 0.0];
        for &n in &self.elements[e] {
            c[0] += self.node_coords[n][0];
            c[1] += self.node_coords[n][1];
        }
        [c[0] / 4.0, c[1] / 4.0]
    }

    /// Shoelace area of one element (positive for counter-clockwise quads).
    pub fn element_area(&self, e: usize) -> f64 {
        let p: Vec<[f64; 2]> = self.elements[e].iter().map(|&n| self.node_coords[n]).collect();
        let mut a = 0.0;
        for k in 0..4 {
            let q = p[k];
            let r = p[(k + 1) % 4];
            a += q[0] * r[1] - r[0] * q[1];
        }
        0.5 * a
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_area(e)).sum()
    }

    /// Recomputes `h_min`/`h_max` from all element edge lengths.
    pub fn recompute_edge_stats(&mut self) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for el in &self.elements {
            for k in 0..4 {
                let a = self.node_coords[el[k]];
                let b = self.node_coords[el[(k + 1) % 4]];
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                lo = lo.min(len);
                hi = hi.max(len);
            }
        }
        self.h_min = lo;
        self.h_max = hi;
    }

    /// Node indices (sorted) whose coordinates satisfy the predicate.
    pub fn select_nodes(&self, pred: impl Fn(f64, f64) -> bool) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&n| pred(self.node_coords[n][0], self.node_coords[n][1]))
            .collect()
    }

    /// Stores a named node set selected by coordinate predicate.
    pub fn tag_nodes(&mut self, name: &str, pred: impl Fn(f64, f64) -> bool) {
        let set = self.select_nodes(pred);
        self.node_sets.insert(name.to_string(), set);
    }

    /// Edges owned by exactly one element, as `(element, local_edge)`.
    pub fn boundary_sides(&self) -> Vec<(usize, u8)> {
        let owners = self.edge_owner_map();
        let mut out = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            for k in 0..4u8 {
                let key = edge_key(el[k as usize], el[(k as usize + 1) % 4]);
                if owners[&key].len() == 1 {
                    out.push((e, k));
                }
            }
        }
        out
    }

    /// Stores a named side set of boundary edges whose midpoint satisfies
    /// the predicate.
    pub fn tag_boundary_sides(&mut self, name: &str, pred: impl Fn(f64, f64) -> bool) {
        let sides: Vec<(usize, u8)> = self
            .boundary_sides()
            .into_iter()
            .filter(|&(e, k)| {
                let el = self.elements[e];
                let a = self.node_coords[el[k as usize]];
                let b = self.node_coords[el[(k as usize + 1) % 4]];
                pred(0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]))
            })
            .collect();
        self.side_sets.insert(name.to_string(), sides);
    }

    /// Index of the node closest to `(x, y)`.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (n, c) in self.node_coords.iter().enumerate() {
            let d = (c[0] - x).powi(2) + (c[1] - y).powi(2);
            if d < best_d {
                best_d = d;
                best = n;
            }
        }
        best
    }

    pub fn translate(&mut self, dx: f64, dy: f64) {
        for c in &mut self.node_coords {
            c[0] += dx;
            c[1] += dy;
        }
    }

    fn edge_owner_map(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut owners: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (e, el) in self.elements.iter().enumerate() {
            for k in 0..4 {
                owners.entry(edge_key(el[k], el[(k + 1) % 4])).or_default().push(e);
            }
        }
        owners
    }

    fn node_to_elements(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for (e, el) in self.elements.iter().enumerate() {
            for &n in el {
                adj[n].push(e);
            }
        }
        adj
    }

    /// Nodes that lie on the mesh boundary (touch a single-owner edge).
    fn boundary_node_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_nodes()];
        for (e, k) in self.boundary_sides() {
            let el = self.elements[e];
            flags[el[k as usize]] = true;
            flags[el[(k as usize + 1) % 4]] = true;
        }
        flags
    }

    /// Cuts a notch along `p0`–`p1` by duplicating seam nodes so the two
    /// sides deform independently. The segment must run along existing
    /// element edges with endpoints on nodes. Interior seam nodes are
    /// duplicated; an endpoint is duplicated only when it lies on the
    /// domain boundary (an interior endpoint is the crack tip and stays
    /// shared). Seam faces from both sides are recorded under `set_name`.
    pub fn cut_seam(&self, p0: [f64; 2], p1: [f64; 2], set_name: &str) -> Result<QuadMesh, MeshError> {
        let seg = [p1[0] - p0[0], p1[1] - p0[1]];
        let len = (seg[0] * seg[0] + seg[1] * seg[1]).sqrt();
        let mut out = self.clone();
        if len < GEOM_TOL {
            return Ok(out);
        }
        let dir = [seg[0] / len, seg[1] / len];
        let normal = [-dir[1], dir[0]];
        let tol = GEOM_TOL * (1.0 + len + p0[0].abs() + p0[1].abs());

        let t_of = |q: [f64; 2]| (q[0] - p0[0]) * dir[0] + (q[1] - p0[1]) * dir[1];
        let n_of = |q: [f64; 2]| (q[0] - p0[0]) * normal[0] + (q[1] - p0[1]) * normal[1];
        let on_seg = |q: [f64; 2]| {
            let t = t_of(q);
            n_of(q).abs() <= tol && t >= -tol && t <= len + tol
        };

        let mut seam_nodes: Vec<(f64, usize)> = (0..self.n_nodes())
            .filter(|&n| on_seg(self.node_coords[n]))
            .map(|n| (t_of(self.node_coords[n]), n))
            .collect();
        seam_nodes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        if seam_nodes.is_empty()
            || seam_nodes.first().unwrap().0 > tol
            || seam_nodes.last().unwrap().0 < len - tol
        {
            return Err(MeshError::SeamNotEdgeAligned(
                "segment endpoints do not coincide with mesh nodes".into(),
            ));
        }
        let owners = self.edge_owner_map();
        for w in seam_nodes.windows(2) {
            if !owners.contains_key(&edge_key(w[0].1, w[1].1)) {
                return Err(MeshError::SeamNotEdgeAligned(format!(
                    "consecutive seam nodes {} and {} are not joined by an element edge",
                    w[0].1, w[1].1
                )));
            }
        }

        let adj = self.node_to_elements();
        let on_boundary = self.boundary_node_flags();
        for &(t, n) in &seam_nodes {
            let interior = t > tol && t < len - tol;
            if !interior && !on_boundary[n] {
                continue;
            }
            let mut pos = Vec::new();
            let mut neg = false;
            for &e in &adj[n] {
                let c = self.element_centroid(e);
                if n_of(c) > 0.0 {
                    pos.push(e);
                } else {
                    neg = true;
                }
            }
            if pos.is_empty() || !neg {
                continue;
            }
            let copy = out.node_coords.len();
            out.node_coords.push(out.node_coords[n]);
            for e in pos {
                for slot in &mut out.elements[e] {
                    if *slot == n {
                        *slot = copy;
                    }
                }
            }
        }

        let mut faces = Vec::new();
        for (e, el) in out.elements.iter().enumerate() {
            for k in 0..4u8 {
                let a = out.node_coords[el[k as usize]];
                let b = out.node_coords[el[(k as usize + 1) % 4]];
                if on_seg(a) && on_seg(b) {
                    faces.push((e, k));
                }
            }
        }
        out.side_sets.entry(set_name.to_string()).or_default().extend(faces);
        Ok(out)
    }

    /// Removes every element whose centroid satisfies the predicate,
    /// compacts node/element indices, and records newly exposed interior
    /// edges in the `"hole"` side set.
    pub fn remove_elements(&self, pred: impl Fn(f64, f64) -> bool) -> Result<QuadMesh, MeshError> {
        let keep: Vec<bool> = (0..self.n_elements())
            .map(|e| {
                let c = self.element_centroid(e);
                !pred(c[0], c[1])
            })
            .collect();
        if keep.iter().all(|&k| k) {
            return Ok(self.clone());
        }
        if keep.iter().all(|&k| !k) {
            return Err(MeshError::EmptyMesh);
        }

        let owners = self.edge_owner_map();
        let mut elem_map = vec![usize::MAX; self.n_elements()];
        let mut new_elements = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            if keep[e] {
                elem_map[e] = new_elements.len();
                new_elements.push(*el);
            }
        }

        let mut node_used = vec![false; self.n_nodes()];
        for el in &new_elements {
            for &n in el {
                node_used[n] = true;
            }
        }
        let mut node_map = vec![usize::MAX; self.n_nodes()];
        let mut new_coords = Vec::new();
        for n in 0..self.n_nodes() {
            if node_used[n] {
                node_map[n] = new_coords.len();
                new_coords.push(self.node_coords[n]);
            }
        }
        for el in &mut new_elements {
            for slot in el.iter_mut() {
                *slot = node_map[*slot];
            }
        }

        let mut node_sets = BTreeMap::new();
        for (name, set) in &self.node_sets {
            let mapped: Vec<usize> = set
                .iter()
                .filter(|&&n| node_used[n])
                .map(|&n| node_map[n])
                .collect();
            node_sets.insert(name.clone(), mapped);
        }
        let mut side_sets: BTreeMap<String, Vec<(usize, u8)>> = BTreeMap::new();
        for (name, set) in &self.side_sets {
            let mapped: Vec<(usize, u8)> = set
                .iter()
                .filter(|&&(e, _)| keep[e])
                .map(|&(e, k)| (elem_map[e], k))
                .collect();
            side_sets.insert(name.clone(), mapped);
        }

        let mut hole = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            if !keep[e] {
                continue;
            }
            for k in 0..4u8 {
                let key = edge_key(el[k as usize], el[(k as usize + 1) % 4]);
                let shared = &owners[&key];
                if shared.len() == 2 && shared.iter().any(|&o| !keep[o]) {
                    hole.push((elem_map[e], k));
                }
            }
        }
        side_sets.entry("hole".to_string()).or_default().extend(hole);

        let mut out = QuadMesh {
            node_coords: new_coords,
            elements: new_elements,
            node_sets,
            side_sets,
            h_min: 0.0,
            h_max: 0.0,
        };
        out.recompute_edge_stats();

        if out.connected_components() > 1 {
            return Err(MeshError::Disconnected);
        }
        Ok(out)
    }

    /// Number of element-connectivity components (elements joined via
    /// shared nodes).
    pub fn connected_components(&self) -> usize {
        let adj = self.node_to_elements();
        let mut seen = vec![false; self.n_elements()];
        let mut components = 0;
        for start in 0..self.n_elements() {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(e) = stack.pop() {
                for &n in &self.elements[e] {
                    for &o in &adj[n] {
                        if !seen[o] {
                            seen[o] = true;
                            stack.push(o);
                        }
                    }
                }
            }
        }
        components
    }

    /// Concatenates two meshes, merging nodes with bit-identical
    /// coordinates. Callers are responsible for building shared interfaces
    /// from identical coordinate arrays so the merge is conforming.
    pub fn merge(a: &QuadMesh, b: &QuadMesh) -> QuadMesh {
        let mut coords = a.node_coords.clone();
        let mut lookup: HashMap<(u64, u64), usize> = HashMap::with_capacity(coords.len());
        for (n, c) in coords.iter().enumerate() {
            lookup.insert((c[0].to_bits(), c[1].to_bits()), n);
        }
        let mut b_map = Vec::with_capacity(b.n_nodes());
        for c in &b.node_coords {
            let key = (c[0].to_bits(), c[1].to_bits());
            let idx = *lookup.entry(key).or_insert_with(|| {
                coords.push(*c);
                coords.len() - 1
            });
            b_map.push(idx);
        }
        let mut elements = a.elements.clone();
        for el in &b.elements {
            elements.push([b_map[el[0]], b_map[el[1]], b_map[el[2]], b_map[el[3]]]);
        }
        let mut node_sets = a.node_sets.clone();
        for (name, set) in &b.node_sets {
            let mapped: Vec<usize> = set.iter().map(|&n| b_map[n]).collect();
            node_sets.entry(name.clone()).or_default().extend(mapped);
        }
        let mut side_sets = a.side_sets.clone();
        let shift = a.n_elements();
        for (name, set) in &b.side_sets {
            let mapped: Vec<(usize, u8)> = set.iter().map(|&(e, k)| (e + shift, k)).collect();
            side_sets.entry(name.clone()).or_default().extend(mapped);
        }
        let mut out = QuadMesh {
            node_coords: coords,
            elements,
            node_sets,
            side_sets,
            h_min: 0.0,
            h_max: 0.0,
        };
        out.recompute_edge_stats();
        out
    }

    /// Writes the mesh as a legacy ASCII VTK unstructured grid (cell type 9).
    pub fn write_legacy_vtk(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# vtk DataFile Version 3.0")?;
        writeln!(f, "quad mesh")?;
        writeln!(f, "ASCII")?;
        writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(f, "POINTS {} double", self.n_nodes())?;
        for c in &self.node_coords {
            writeln!(f, "{:.9e} {:.9e} 0.0", c[0], c[1])?;
        }
        writeln!(f, "CELLS {} {}", self.n_elements(), 5 * self.n_elements())?;
        for el in &self.elements {
            writeln!(f, "4 {} {} {} {}", el[0], el[1], el[2], el[3])?;
        }
        writeln!(f, "CELL_TYPES {}", self.n_elements())?;
        for _ in 0..self.n_elements() {
            writeln!(f, "9")?;
        }
        Ok(())
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Strictly increasing axis coordinates over `[0, length]`.
///
/// Without `fine`, the spacing is uniform at (close to) `h_coarse`. With
/// `fine = (lo, hi, h_fine)`, the interval `[lo, hi]` is divided uniformly
/// at `h_fine` or finer, and the spacing grows geometrically (ratio at most
/// 1.6) away from the band until it reaches `h_coarse`. Fine-interval
/// points are computed as `lo + i * step` so that decimally exact inputs
/// produce exactly representable interior breakpoints.
pub fn graded_axis(length: f64, h_coarse: f64, fine: Option<(f64, f64, f64)>) -> Result<Vec<f64>, MeshError> {
    if !(length > 0.0) || !(h_coarse > 0.0) {
        return Err(MeshError::InvalidDimensions(format!(
            "axis length {length} and coarse spacing {h_coarse} must be positive"
        )));
    }
    let Some((lo_raw, hi_raw, h_fine)) = fine else {
        let n = ((length / h_coarse) - 1e-9).ceil().max(1.0) as usize;
        return Ok((0..=n).map(|i| length * i as f64 / n as f64).collect());
    };
    if !(h_fine > 0.0) {
        return Err(MeshError::InvalidDimensions(format!(
            "fine spacing {h_fine} must be positive"
        )));
    }
    if hi_raw < 0.0 || lo_raw > length || hi_raw < lo_raw {
        return Err(MeshError::InvalidBand(format!(
            "fine interval [{lo_raw}, {hi_raw}] does not meet axis [0, {length}]"
        )));
    }
    let mut lo = lo_raw.max(0.0);
    let mut hi = hi_raw.min(length);
    let h_cap = h_coarse.max(h_fine);

    // Snap the band to a whole number of fine cells, then grade each side
    // starting from the snapped spacing so the band-edge joint also honors
    // the ratio cap. A sliver between a band edge and the axis boundary
    // that is too small to grade within the cap is absorbed into the fine
    // region instead (the edge moves to the boundary).
    let (left, right) = loop {
        let band_step = if hi > lo {
            let n_f = ((hi - lo) / h_fine - 1e-9).ceil().max(1.0) as usize;
            (hi - lo) / n_f as f64
        } else {
            h_fine
        };
        let left =
            if lo > 0.0 { build_graded_section(lo, band_step, h_cap) } else { Some(Vec::new()) };
        let right = if hi < length {
            build_graded_section(length - hi, band_step, h_cap)
        } else {
            Some(Vec::new())
        };
        match (left, right) {
            (Some(l), Some(r)) => break (l, r),
            (l, r) => {
                if l.is_none() {
                    lo = 0.0;
                }
                if r.is_none() {
                    hi = length;
                }
            }
        }
    };

    let mut pts = Vec::new();
    for (i, off) in left.iter().enumerate().rev() {
        let x = if i == left.len() - 1 { 0.0 } else { lo - off };
        pts.push(x);
    }
    pts.push(lo);

    // Fine section, uniform at or below h_fine.
    if hi > lo {
        let n_f = ((hi - lo) / h_fine - 1e-9).ceil().max(1.0) as usize;
        let step = (hi - lo) / n_f as f64;
        for i in 1..=n_f {
            let x = if i == n_f { hi } else { lo + step * i as f64 };
            pts.push(x);
        }
    }

    for (i, off) in right.iter().enumerate() {
        let x = if i == right.len() - 1 { length } else { hi + off };
        pts.push(x);
    }

    if pts.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(MeshError::InvalidDimensions(
            "graded axis produced non-monotone coordinates".into(),
        ));
    }
    Ok(pts)
}

/// Cumulative offsets of a run of steps that leaves a cell of size
/// `h_start`, grows (or mildly shrinks) geometrically with every
/// adjacent-step ratio inside `[1/GRADING_RATIO, GRADING_RATIO]`, caps at
/// `h_cap`, and lands exactly on `span`. `None` when no such run exists
/// (the span is shorter than one minimally-shrunk step).
fn build_graded_section(span: f64, h_start: f64, h_cap: f64) -> Option<Vec<f64>> {
    let r_max = GRADING_RATIO;
    let r_min = 1.0 / GRADING_RATIO;
    // Distance covered by n capped steps growing at ratio r from h_start.
    let total = |r: f64, n: usize| -> f64 {
        let mut h = h_start;
        let mut tot = 0.0;
        for _ in 0..n {
            h = (h * r).min(h_cap);
            tot += h;
        }
        tot
    };
    // Minimal step count that reaches the span at the maximum ratio.
    let mut n = 0;
    {
        let mut h = h_start;
        let mut tot = 0.0;
        while tot < span {
            h = (h * r_max).min(h_cap);
            tot += h;
            n += 1;
        }
    }
    // The reach shrinks with the ratio; drop steps while even the minimum
    // ratio overshoots (possible only for spans of a couple of cells).
    while n > 1 && total(r_min, n) > span {
        n -= 1;
    }
    if n == 0 || total(r_min, n) > span || total(r_max, n) < span {
        return None;
    }
    // The reach is continuous and strictly increasing in the ratio: bisect
    // for the ratio that lands on the span, then normalize the roundoff.
    let (mut a, mut b) = (r_min, r_max);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if total(mid, n) < span {
            a = mid;
        } else {
            b = mid;
        }
    }
    let r = 0.5 * (a + b);
    let scale = span / total(r, n);
    let mut offs = Vec::with_capacity(n);
    let mut h = h_start;
    let mut acc = 0.0;
    for i in 0..n {
        h = (h * r).min(h_cap);
        acc += h;
        offs.push(if i == n - 1 { span } else { acc * scale });
    }
    Some(offs)
}

/// Builds a `width x height` rectangle anchored at the origin. Without a
/// band the grid is uniform `nx x ny`; with a band, both axes are graded
/// so elements inside the band have edges of `band.h_fine`.
pub fn build_rect_mesh(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    band: Option<&RefinementBand>,
) -> Result<QuadMesh, MeshError> {
    if !(width > 0.0) || !(height > 0.0) || nx == 0 || ny == 0 {
        return Err(MeshError::InvalidDimensions(format!(
            "rect {width} x {height} with {nx} x {ny} elements"
        )));
    }
    let (xs, ys) = match band {
        None => {
            let xs: Vec<f64> = (0..=nx).map(|i| width * i as f64 / nx as f64).collect();
            let ys: Vec<f64> = (0..=ny).map(|i| height * i as f64 / ny as f64).collect();
            (xs, ys)
        }
        Some(b) => {
            let xs = graded_axis(width, width / nx as f64, Some((b.x_lo, b.x_hi, b.h_fine)))?;
            let ys = graded_axis(height, height / ny as f64, Some((b.y_lo, b.y_hi, b.h_fine)))?;
            (xs, ys)
        }
    };
    QuadMesh::from_tensor_coords(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(n: usize) -> QuadMesh {
        build_rect_mesh(1.0, 1.0, n, n, None).unwrap()
    }

    #[test]
    fn rect_2x2_counts() {
        let m = unit_square(2);
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 4);
    }

    #[test]
    fn rect_10x10_uniform_spacing() {
        let m = unit_square(10);
        assert!((m.h_min - 0.1).abs() <= 1e-12);
        assert!((m.h_max - 0.1).abs() <= 1e-12);
    }

    #[test]
    fn rect_4x2_counts_and_edges() {
        let m = build_rect_mesh(2.0, 1.0, 4, 2, None).unwrap();
        assert_eq!(m.n_nodes(), 15);
        assert_eq!(m.n_elements(), 8);
        assert!((m.h_min - 0.5).abs() <= 1e-12);
        assert!((m.h_max - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn rect_rejects_bad_dimensions() {
        assert!(build_rect_mesh(0.0, 1.0, 2, 2, None).is_err());
        assert!(build_rect_mesh(1.0, -1.0, 2, 2, None).is_err());
        assert!(build_rect_mesh(1.0, 1.0, 0, 2, None).is_err());
    }

    #[test]
    fn elements_are_counter_clockwise() {
        let band = RefinementBand { x_lo: 0.4, x_hi: 0.6, y_lo: 0.4, y_hi: 0.6, h_fine: 0.02 };
        let m = build_rect_mesh(1.0, 1.0, 5, 5, Some(&band)).unwrap();
        for e in 0..m.n_elements() {
            assert!(m.element_area(e) > 0.0);
            let p: Vec<[f64; 2]> = m.elements[e].iter().map(|&n| m.node_coords[n]).collect();
            for k in 0..4 {
                let a = p[k];
                let b = p[(k + 1) % 4];
                let c = p[(k + 2) % 4];
                let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
                assert!(cross > 0.0, "corner {k} of element {e} not convex CCW");
            }
        }
    }

    #[test]
    fn graded_mesh_preserves_area() {
        let band = RefinementBand { x_lo: 0.0, x_hi: 2.0, y_lo: 0.45, y_hi: 0.55, h_fine: 0.01 };
        let m = build_rect_mesh(2.0, 1.0, 8, 4, Some(&band)).unwrap();
        assert!((m.total_area() - 2.0).abs() <= 1e-12 * 2.0);
        assert!(m.h_min <= 0.01 + 1e-12);
    }

    #[test]
    fn graded_axis_hits_band_and_endpoints() {
        let xs = graded_axis(1.0, 0.25, Some((0.4, 0.6, 0.025))).unwrap();
        assert_eq!(*xs.first().unwrap(), 0.0);
        assert_eq!(*xs.last().unwrap(), 1.0);
        assert!(xs.contains(&0.4));
        assert!(xs.contains(&0.6));
        // Uniform fine spacing inside the band.
        let fine: Vec<f64> = xs.iter().copied().filter(|&x| x >= 0.4 - 1e-12 && x <= 0.6 + 1e-12).collect();
        for w in fine.windows(2) {
            assert!((w[1] - w[0] - 0.025).abs() <= 1e-12);
        }
        // Growth ratio bounded outside the band.
        for w in xs.windows(3) {
            let r = (w[2] - w[1]) / (w[1] - w[0]);
            assert!(r < GRADING_RATIO + 0.2 && r > 1.0 / (GRADING_RATIO + 0.2), "ratio {r}");
        }
    }

    #[test]
    fn graded_axis_interior_breakpoints_exact_for_decimal_inputs() {
        let xs = graded_axis(500.0, 50.0, Some((240.0, 330.0, 1.0))).unwrap();
        assert!(xs.iter().any(|&x| x == 250.0));
    }

    #[test]
    fn build_is_deterministic_bitwise() {
        let band = RefinementBand { x_lo: 0.3, x_hi: 0.9, y_lo: 0.0, y_hi: 0.2, h_fine: 0.013 };
        let a = build_rect_mesh(1.7, 1.1, 7, 5, Some(&band)).unwrap();
        let b = build_rect_mesh(1.7, 1.1, 7, 5, Some(&band)).unwrap();
        assert_eq!(a.n_nodes(), b.n_nodes());
        for (p, q) in a.node_coords.iter().zip(&b.node_coords) {
            assert_eq!(p[0].to_bits(), q[0].to_bits());
            assert_eq!(p[1].to_bits(), q[1].to_bits());
        }
        assert_eq!(a.elements, b.elements);
    }

    #[test]
    fn seam_duplicates_interior_and_boundary_endpoint_nodes() {
        let m = unit_square(2);
        let cut = m.cut_seam([0.0, 0.5], [0.5, 0.5], "notch").unwrap();
        // Tip at (0.5, 0.5) stays shared; (0, 0.5) splits.
        assert_eq!(cut.n_nodes(), 10);
        assert_eq!(cut.n_elements(), 4);
        assert!((cut.total_area() - 1.0).abs() <= 1e-12);
        let dup: Vec<usize> = cut.select_nodes(|x, y| x == 0.0 && y == 0.5);
        assert_eq!(dup.len(), 2);
        let tip: Vec<usize> = cut.select_nodes(|x, y| x == 0.5 && y == 0.5);
        assert_eq!(tip.len(), 1);
        assert!(!cut.side_sets["notch"].is_empty());
    }

    #[test]
    fn seam_longer_interior_duplicates_midpoints() {
        // 4x4 grid, seam across the left half at mid-height: nodes at
        // x = 0, 0.25, 0.5 are on the seam; tip at (0.75, 0.5)? No: seam
        // ends at (0.5, 0.5), so x = 0 and x = 0.25 duplicate.
        let m = unit_square(4);
        let cut = m.cut_seam([0.0, 0.5], [0.5, 0.5], "notch").unwrap();
        assert_eq!(cut.n_nodes(), 25 + 2);
        assert!((cut.total_area() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_length_seam_is_identity() {
        let m = unit_square(2);
        let cut = m.cut_seam([0.5, 0.5], [0.5, 0.5], "notch").unwrap();
        assert_eq!(cut.n_nodes(), m.n_nodes());
        assert_eq!(cut.elements, m.elements);
        assert!(cut.side_sets.is_empty());
    }

    #[test]
    fn boundary_seam_only_tags_sides() {
        let m = unit_square(2);
        let cut = m.cut_seam([0.0, 0.0], [1.0, 0.0], "base").unwrap();
        assert_eq!(cut.n_nodes(), m.n_nodes());
        assert_eq!(cut.elements, m.elements);
        assert_eq!(cut.side_sets["base"].len(), 2);
    }

    #[test]
    fn seam_off_grid_errors() {
        let m = unit_square(2);
        assert!(matches!(
            m.cut_seam([0.0, 0.3], [0.5, 0.3], "notch"),
            Err(MeshError::SeamNotEdgeAligned(_))
        ));
    }

    #[test]
    fn remove_nothing_is_identity() {
        let m = unit_square(4);
        let out = m.remove_elements(|_, _| false).unwrap();
        assert_eq!(out.n_nodes(), m.n_nodes());
        assert_eq!(out.elements, m.elements);
    }

    #[test]
    fn remove_everything_errors() {
        let m = unit_square(4);
        assert!(matches!(m.remove_elements(|_, _| true), Err(MeshError::EmptyMesh)));
    }

    #[test]
    fn remove_central_disk_from_4x4() {
        let m = unit_square(4);
        let out = m
            .remove_elements(|x, y| ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt() < 0.3)
            .unwrap();
        assert_eq!(out.n_elements(), 12);
        // Only the centre node is orphaned.
        assert_eq!(out.n_nodes(), 24);
        assert!((out.total_area() - 0.75).abs() <= 1e-12);
        assert_eq!(out.side_sets["hole"].len(), 8);
    }

    #[test]
    fn remove_disconnecting_column_errors() {
        let m = build_rect_mesh(3.0, 1.0, 3, 1, None).unwrap();
        assert!(matches!(
            m.remove_elements(|x, _| (1.0..2.0).contains(&x)),
            Err(MeshError::Disconnected)
        ));
    }

    #[test]
    fn remove_remaps_node_and_side_sets() {
        let mut m = unit_square(4);
        m.tag_nodes("left", |x, _| x == 0.0);
        m.tag_boundary_sides("bottom", |_, y| y == 0.0);
        let out = m
            .remove_elements(|x, y| ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt() < 0.3)
            .unwrap();
        assert_eq!(out.node_sets["left"].len(), 5);
        for &n in &out.node_sets["left"] {
            assert_eq!(out.node_coords[n][0], 0.0);
        }
        assert_eq!(out.side_sets["bottom"].len(), 4);
    }

    #[test]
    fn merge_shares_interface_nodes() {
        let a = build_rect_mesh(1.0, 1.0, 2, 2, None).unwrap();
        let mut b = build_rect_mesh(1.0, 1.0, 2, 2, None).unwrap();
        b.translate(1.0, 0.0);
        let m = QuadMesh::merge(&a, &b);
        assert_eq!(m.n_nodes(), 15);
        assert_eq!(m.n_elements(), 8);
        assert!((m.total_area() - 2.0).abs() <= 1e-12);
        // Interface must be conforming: every interior edge has 2 owners.
        assert_eq!(m.connected_components(), 1);
        assert_eq!(m.boundary_sides().len(), 12);
    }

    #[test]
    fn l_shape_style_merge_from_shared_axis_tail() {
        let ys = graded_axis(500.0, 125.0, Some((240.0, 330.0, 10.0))).unwrap();
        let k250 = ys.iter().position(|&y| y == 250.0).unwrap();
        let xs_left = graded_axis(250.0, 125.0, None).unwrap();
        let left = QuadMesh::from_tensor_coords(&xs_left, &ys).unwrap();
        let xs_right: Vec<f64> = graded_axis(250.0, 125.0, None).unwrap().iter().map(|x| x + 250.0).collect();
        let ys_top = &ys[k250..];
        let mut right = QuadMesh::from_tensor_coords(&xs_right, ys_top).unwrap();
        right.translate(0.0, 0.0);
        let m = QuadMesh::merge(&left, &right);
        let shared_expected = ys_top.len();
        assert_eq!(m.n_nodes(), left.n_nodes() + right.n_nodes() - shared_expected);
        assert_eq!(m.connected_components(), 1);
        let area = 250.0 * 500.0 + 250.0 * (500.0 - 250.0);
        assert!((m.total_area() - area).abs() <= 1e-9 * area);
    }

    #[test]
    fn nearest_node_and_tagging() {
        let mut m = unit_square(4);
        assert_eq!(m.node_coords[m.nearest_node(0.52, 0.48)], [0.5, 0.5]);
        m.tag_nodes("top", |_, y| y == 1.0);
        assert_eq!(m.node_sets["top"].len(), 5);
    }

    #[test]
    fn vtk_dump_has_expected_counts() {
        let m = unit_square(2);
        let path = std::env::temp_dir().join("mesh_dump_test.vtk");
        m.write_legacy_vtk(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 4 20"));
        assert!(text.contains("CELL_TYPES 4"));
        let nines = text.lines().filter(|l| l.trim() == "9").count();
        assert_eq!(nines, 4);
        std::fs::remove_file(&path).ok();
    }
}
