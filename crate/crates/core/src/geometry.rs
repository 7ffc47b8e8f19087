//! Axis-aligned boxes, box unions sampled on uniform lattices, and point sets.
//!
//! A [`Region`] is the finite stand-in for a compact set or an open domain: a
//! union of closed boxes together with a uniform lattice over their bounding
//! box. Only lattice points lying in at least one box belong to the region's
//! grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack for closed-box membership tests.
const MEMBERSHIP_TOL: f64 = 1e-10;

fn slack(a: f64, b: f64) -> f64 {
    MEMBERSHIP_TOL * (1.0 + a.abs().max(b.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Geometry(format!(
                "box corners have mismatched or zero dimension ({} vs {})",
                lo.len(),
                hi.len()
            )));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::Geometry(format!(
                "box corners out of order: {lo:?} / {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Box `[-h, h]^d` shifted to `center`.
    pub fn centered(center: &[f64], half_width: &[f64]) -> Self {
        Self {
            lo: center.iter().zip(half_width).map(|(c, h)| c - h).collect(),
            hi: center.iter().zip(half_width).map(|(c, h)| c + h).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.extent(k)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Closed membership; boundary points count as inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&a, &b))| v >= a - slack(a, v) && v <= b + slack(b, v))
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        (0..self.dim()).all(|k| {
            other.lo[k] >= self.lo[k] - slack(self.lo[k], other.lo[k])
                && other.hi[k] <= self.hi[k] + slack(self.hi[k], other.hi[k])
        })
    }

    /// Inflate by `r` on every side (the box hull of the Euclidean inflation).
    pub fn inflate(&self, r: f64) -> Self {
        self.inflate_axes(&vec![r; self.dim()])
    }

    pub fn inflate_axes(&self, r: &[f64]) -> Self {
        Self {
            lo: self.lo.iter().zip(r).map(|(a, r)| a - r).collect(),
            hi: self.hi.iter().zip(r).map(|(b, r)| b + r).collect(),
        }
    }

    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        let lo: Vec<f64> = self
            .lo
            .iter()
            .zip(&other.lo)
            .map(|(a, b)| a.max(*b))
            .collect();
        let hi: Vec<f64> = self
            .hi
            .iter()
            .zip(&other.hi)
            .map(|(a, b)| a.min(*b))
            .collect();
        if lo.iter().zip(&hi).all(|(a, b)| *a <= *b + slack(*a, *b)) {
            let hi = hi.iter().zip(&lo).map(|(b, a)| b.max(*a)).collect();
            Some(AxisBox { lo, hi })
        } else {
            None
        }
    }

    /// Euclidean distance from `x` to the box (0 inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&a, &b))| {
                let d = if v < a {
                    a - v
                } else if v > b {
                    v - b
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform lattice over a bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Lattice {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of lattice index `i` along `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.step[axis]
    }

    /// Flat index (axis 0 slowest) to per-axis indices.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.counts[k];
            flat /= self.counts[k];
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.dim()];
        self.unflatten(flat, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.coord(k, idx[k]);
        }
    }
}

/// Flat storage for a list of points in R^d.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_points(dim: usize, pts: &[Vec<f64>]) -> Self {
        let mut s = Self::new(dim);
        for p in pts {
            s.push(p);
        }
        s
    }

    pub fn push(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dim);
        self.data.extend_from_slice(p);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Serialized as a list of points.
impl Serialize for PointSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.len()))?;
        for p in self.iter() {
            seq.serialize_element(p)?;
        }
        seq.end()
    }
}

/// Finite union of closed boxes sampled on a uniform lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub boxes: Vec<AxisBox>,
    /// Lattice points per axis over the bounding box.
    pub resolution: Vec<usize>,
}

impl Region {
    /// Strict constructor: non-empty, positive-volume boxes, at least two
    /// lattice points per axis.
    pub fn new(boxes: Vec<AxisBox>, resolution: Vec<usize>) -> Result<Self> {
        let r = Self::compact(boxes, resolution)?;
        if r.boxes.iter().any(|b| b.volume() <= 0.0) {
            return Err(Error::Geometry(
                "region boxes must have positive volume".into(),
            ));
        }
        if r.resolution.iter().any(|&n| n < 2) {
            return Err(Error::Geometry(
                "grid resolution must be at least 2 per axis".into(),
            ));
        }
        Ok(r)
    }

    /// Lenient constructor for computed compacts: degenerate boxes allowed.
    pub fn compact(boxes: Vec<AxisBox>, resolution: Vec<usize>) -> Result<Self> {
        let Some(first) = boxes.first() else {
            return Err(Error::EmptyRegion("region has no boxes".into()));
        };
        let d = first.dim();
        if boxes.iter().any(|b| b.dim() != d) || resolution.len() != d {
            return Err(Error::Geometry("inconsistent dimensions in region".into()));
        }
        if resolution.contains(&0) {
            return Err(Error::Geometry("zero grid resolution".into()));
        }
        Ok(Self { boxes, resolution })
    }

    /// Region whose lattice step is at most `step` along each axis.
    pub fn with_step(boxes: Vec<AxisBox>, step: &[f64]) -> Result<Self> {
        let Some(first) = boxes.first() else {
            return Err(Error::EmptyRegion("region has no boxes".into()));
        };
        let mut bb = first.clone();
        for b in &boxes[1..] {
            for k in 0..bb.dim() {
                bb.lo[k] = bb.lo[k].min(b.lo[k]);
                bb.hi[k] = bb.hi[k].max(b.hi[k]);
            }
        }
        let resolution = (0..bb.dim())
            .map(|k| {
                let e = bb.extent(k);
                if e <= 0.0 {
                    1
                } else if !(step[k] > 0.0) {
                    2
                } else {
                    ((e / step[k]) - 1e-9).ceil().max(1.0) as usize + 1
                }
            })
            .collect();
        Self::compact(boxes, resolution)
    }

    pub fn single(b: AxisBox, resolution: Vec<usize>) -> Result<Self> {
        Self::new(vec![b], resolution)
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn bounding_box(&self) -> AxisBox {
        let mut bb = self.boxes[0].clone();
        for b in &self.boxes[1..] {
            for k in 0..bb.dim() {
                bb.lo[k] = bb.lo[k].min(b.lo[k]);
                bb.hi[k] = bb.hi[k].max(b.hi[k]);
            }
        }
        bb
    }

    pub fn lattice(&self) -> Lattice {
        let bb = self.bounding_box();
        let d = bb.dim();
        let mut step = vec![0.0; d];
        let mut counts = vec![1; d];
        for k in 0..d {
            let e = bb.extent(k);
            if e > 0.0 && self.resolution[k] >= 2 {
                counts[k] = self.resolution[k];
                step[k] = e / (self.resolution[k] - 1) as f64;
            }
        }
        Lattice {
            lo: bb.lo,
            step,
            counts,
        }
    }

    /// Lattice spacing per axis (0 along degenerate axes).
    pub fn step(&self) -> Vec<f64> {
        self.lattice().step
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(x))
    }

    /// Grid points in lexicographic order (first axis slowest).
    pub fn grid_points(&self) -> PointSet {
        let lat = self.lattice();
        let d = lat.dim();
        let mut out = PointSet::new(d);
        let mut p = vec![0.0; d];
        for flat in 0..lat.len() {
            lat.point(flat, &mut p);
            if self.contains(&p) {
                out.push(&p);
            }
        }
        out
    }

    /// Box-wise inflation by `r`, keeping (approximately) the lattice step.
    pub fn inflate(&self, r: f64) -> Region {
        self.inflate_axes(&vec![r; self.dim()])
    }

    pub fn inflate_axes(&self, r: &[f64]) -> Region {
        let step = self.step();
        let boxes: Vec<AxisBox> = self.boxes.iter().map(|b| b.inflate_axes(r)).collect();
        let step: Vec<f64> = step
            .iter()
            .zip(r)
            .map(|(&h, &r)| {
                if h > 0.0 {
                    h
                } else if r > 0.0 {
                    r
                } else {
                    1.0
                }
            })
            .collect();
        Region::with_step(boxes, &step).expect("inflation keeps a valid region")
    }

    /// Same boxes, lattice refined by `factor` (step divided by `factor`).
    pub fn refine(&self, factor: usize) -> Region {
        let resolution = self
            .resolution
            .iter()
            .map(|&n| if n >= 2 { (n - 1) * factor + 1 } else { n })
            .collect();
        Region {
            boxes: self.boxes.clone(),
            resolution,
        }
    }

    /// Every box of `other` lies inside some box of `self`.
    pub fn contains_region(&self, other: &Region) -> bool {
        other
            .boxes
            .iter()
            .all(|b| self.boxes.iter().any(|a| a.contains_box(b)))
    }

    /// Pairwise intersection of box lists; `None` when nothing overlaps.
    pub fn intersect(&self, other: &Region) -> Option<Region> {
        let mut boxes = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(c) = a.intersect(b) {
                    boxes.push(c);
                }
            }
        }
        if boxes.is_empty() {
            return None;
        }
        let step = self.step();
        Region::with_step(boxes, &step).ok()
    }

    /// Euclidean distance from `x` to the union.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.distance(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// For each box of `domain`, the bounding box of the flagged points it
/// contains (each point is assigned to the first box containing it). Returns an
/// empty list when nothing is flagged.
pub fn hull_per_box(domain: &Region, pts: &PointSet, flagged: &[bool]) -> Vec<AxisBox> {
    let d = domain.dim();
    let mut hulls: Vec<Option<AxisBox>> = vec![None; domain.boxes.len()];
    for (i, p) in pts.iter().enumerate() {
        if !flagged[i] {
            continue;
        }
        let Some(b) = domain.boxes.iter().position(|b| b.contains(p)) else {
            continue;
        };
        match &mut hulls[b] {
            Some(h) => {
                for k in 0..d {
                    h.lo[k] = h.lo[k].min(p[k]);
                    h.hi[k] = h.hi[k].max(p[k]);
                }
            }
            slot => *slot = Some(AxisBox::centered(p, &vec![0.0; d])),
        }
    }
    hulls.into_iter().flatten().collect()
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
