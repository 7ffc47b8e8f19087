//! Weight families ν_{j,l} and audits of the structural conditions the
//! density theorems assume.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse, Program};
use crate::geometry::{hull_per_box, AxisBox, PointSet, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightIndex {
    pub j: usize,
    pub l: usize,
}

impl WeightIndex {
    pub fn new(j: usize, l: usize) -> Self {
        Self { j, l }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Schwartz,
    Exhaustion,
    ExpStrips,
    OmFinite,
    Custom,
}

/// Structured-text description of a weight family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub kind: FamilyKind,
    pub k_max: usize,
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    /// Exhaustion sets Ω_1 ⊂ Ω_2 ⊂ …; defaults to boxes shrunk toward the domain center.
    #[serde(default)]
    pub sets: Vec<AxisBox>,
    /// Base gauge functions for the multiplier-space family.
    #[serde(default)]
    pub gauges: Vec<String>,
    /// One expression per j in variables x1..xd with constants j and l.
    #[serde(default)]
    pub expressions: Vec<String>,
}

fn default_j_max() -> usize {
    1
}

enum Evaluator {
    Schwartz,
    Exhaustion(Vec<AxisBox>),
    ExpStrips,
    /// Base gauges; the j-th set is {g·(1+|x|²)^s : g ∈ base, s < j}.
    OmFinite(Vec<Program>),
    /// programs[(j-1)*(k_max+1) + l]
    Custom(Vec<Program>),
}

/// The standard structure ν_{j,l} = χ_{Ω_j}·ν̃_{j,l}.
#[derive(Clone, Debug, Serialize)]
pub struct StandardStructure {
    /// Ω_j as closed box unions, indexed by j − 1.
    pub omegas: Vec<Vec<AxisBox>>,
}

/// An indexed family ν_{j,l}: Ω → [0, ∞) with j ∈ {1..j_max}, l ∈ {0..k_max}.
pub struct WeightFamily {
    kind: FamilyKind,
    k_max: usize,
    j_max: usize,
    domain: Region,
    eval: Evaluator,
    structure: Option<StandardStructure>,
}

impl WeightFamily {
    pub fn from_config(cfg: &FamilyConfig, domain: Region) -> Result<Self> {
        if cfg.j_max == 0 {
            return Err(Error::Config("j_max must be at least 1".into()));
        }
        let d = domain.dim();
        let bb = domain.bounding_box();
        let (eval, structure) = match cfg.kind {
            FamilyKind::Schwartz => (Evaluator::Schwartz, None),
            FamilyKind::Exhaustion => {
                let sets = if cfg.sets.is_empty() {
                    let c = bb.center();
                    (1..=cfg.j_max)
                        .map(|j| {
                            let t = j as f64 / cfg.j_max as f64;
                            let half: Vec<f64> = (0..d).map(|k| 0.5 * bb.extent(k) * t).collect();
                            AxisBox::centered(&c, &half)
                        })
                        .collect()
                } else {
                    cfg.sets.clone()
                };
                if sets.len() != cfg.j_max {
                    return Err(Error::Config(format!(
                        "exhaustion needs {} sets, got {}",
                        cfg.j_max,
                        sets.len()
                    )));
                }
                if sets.windows(2).any(|w| !w[1].contains_box(&w[0])) {
                    return Err(Error::Config("exhaustion sets must be nested".into()));
                }
                let omegas = sets.iter().map(|b| vec![b.clone()]).collect();
                (
                    Evaluator::Exhaustion(sets),
                    Some(StandardStructure { omegas }),
                )
            }
            FamilyKind::ExpStrips => {
                if d != 2 {
                    return Err(Error::Config(
                        "exp_strips family lives in two dimensions".into(),
                    ));
                }
                let omegas = (1..=cfg.j_max)
                    .map(|j| {
                        let (a, b) = (1.0 / (j as f64 + 1.0), j as f64 + 1.0);
                        vec![
                            AxisBox::new(vec![bb.lo[0], -b], vec![bb.hi[0], -a]).expect("ordered"),
                            AxisBox::new(vec![bb.lo[0], a], vec![bb.hi[0], b]).expect("ordered"),
                        ]
                    })
                    .collect();
                (Evaluator::ExpStrips, Some(StandardStructure { omegas }))
            }
            FamilyKind::OmFinite => {
                if cfg.gauges.is_empty() {
                    return Err(Error::Config("om_finite needs at least one gauge".into()));
                }
                let progs = cfg
                    .gauges
                    .iter()
                    .map(|g| parse(g, d, &HashMap::new()).map(|e| e.compile()))
                    .collect::<Result<Vec<_>>>()?;
                (Evaluator::OmFinite(progs), None)
            }
            FamilyKind::Custom => {
                if cfg.expressions.len() != cfg.j_max {
                    return Err(Error::Config(format!(
                        "custom family needs one expression per j ({}), got {}",
                        cfg.j_max,
                        cfg.expressions.len()
                    )));
                }
                let mut progs = Vec::new();
                for (jm1, src) in cfg.expressions.iter().enumerate() {
                    for l in 0..=cfg.k_max {
                        let mut consts = HashMap::new();
                        consts.insert("j".to_string(), (jm1 + 1) as f64);
                        consts.insert("l".to_string(), l as f64);
                        progs.push(parse(src, d, &consts)?.compile());
                    }
                }
                (Evaluator::Custom(progs), None)
            }
        };
        Ok(Self {
            kind: cfg.kind,
            k_max: cfg.k_max,
            j_max: cfg.j_max,
            domain,
            eval,
            structure,
        })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn structure(&self) -> Option<&StandardStructure> {
        self.structure.as_ref()
    }

    /// Whether the family is declared non-decreasing in l.
    pub fn monotone_in_l(&self) -> bool {
        !matches!(self.kind, FamilyKind::Custom)
    }

    /// All indices in (j, l) lexicographic order.
    pub fn indices(&self) -> Vec<WeightIndex> {
        (1..=self.j_max)
            .flat_map(|j| (0..=self.k_max).map(move |l| WeightIndex::new(j, l)))
            .collect()
    }

    pub fn check_index(&self, idx: WeightIndex) -> Result<()> {
        if idx.j == 0 || idx.j > self.j_max || idx.l > self.k_max {
            return Err(Error::UnknownIndex { j: idx.j, l: idx.l });
        }
        Ok(())
    }

    /// ν_{j,l}(x) with index and domain checks.
    pub fn eval_weight(&self, idx: WeightIndex, x: &[f64]) -> Result<f64> {
        self.check_index(idx)?;
        if x.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(self.nu(idx, x))
    }

    /// ν_{j,l}(x) without checks.
    pub fn nu(&self, idx: WeightIndex, x: &[f64]) -> f64 {
        let WeightIndex { j, l } = idx;
        match &self.eval {
            Evaluator::Schwartz => japanese(x, l),
            Evaluator::Exhaustion(sets) => {
                if sets[j - 1].contains(x) {
                    1.0
                } else {
                    0.0
                }
            }
            Evaluator::ExpStrips => {
                if in_strip(j, x[1]) {
                    (-x[0].abs() / (j as f64 + 1.0)).exp()
                } else {
                    0.0
                }
            }
            Evaluator::OmFinite(gauges) => {
                let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
                let mut best = 0.0f64;
                for g in gauges {
                    let gv = g.eval(x).abs();
                    let mut p = 1.0;
                    for _ in 0..j {
                        best = best.max(gv * p);
                        p *= w;
                    }
                }
                best
            }
            Evaluator::Custom(progs) => progs[(j - 1) * (self.k_max + 1) + l].eval(x).max(0.0),
        }
    }

    /// ν̃_{j,l}(x) for standard-structure families.
    pub fn nu_tilde(&self, idx: WeightIndex, x: &[f64]) -> Option<f64> {
        match &self.eval {
            Evaluator::Exhaustion(_) => Some(1.0),
            Evaluator::ExpStrips => Some((-x[0].abs() / (idx.j as f64 + 1.0)).exp()),
            _ => None,
        }
    }

    /// [x ∈ Ω_j] for standard-structure families.
    pub fn in_omega(&self, j: usize, x: &[f64]) -> Option<bool> {
        self.structure
            .as_ref()
            .map(|s| s.omegas[j - 1].iter().any(|b| b.contains(x)))
    }

    fn table(&self, pts: &PointSet) -> Vec<Vec<f64>> {
        self.indices()
            .par_iter()
            .map(|&idx| pts.iter().map(|p| self.nu(idx, p)).collect())
            .collect()
    }
}

/// (1 + |x|²)^{l/2}
fn japanese(x: &[f64], l: usize) -> f64 {
    let w = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    if l.is_multiple_of(2) {
        w.powi((l / 2) as i32)
    } else {
        w.sqrt() * w.powi((l / 2) as i32)
    }
}

/// Closed strip 1/(j+1) ≤ |x₂| ≤ j+1.
fn in_strip(j: usize, x2: f64) -> bool {
    let a = x2.abs();
    let (lo, hi) = (1.0 / (j as f64 + 1.0), j as f64 + 1.0);
    a >= lo - 1e-12 && a <= hi + 1e-12
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dominator {
    pub j: usize,
    pub l: usize,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectedPair {
    pub first: WeightIndex,
    pub second: WeightIndex,
    pub dominator: Option<Dominator>,
    /// Grid point where the best candidate fails, when no dominator exists.
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectedReport {
    pub pass: bool,
    pub grid_points: usize,
    pub pairs: Vec<DirectedPair>,
}

impl DirectedReport {
    pub fn failures(&self) -> impl Iterator<Item = &DirectedPair> {
        self.pairs.iter().filter(|p| p.dominator.is_none())
    }
}

/// For every pair of indices find (j₃, l₃, C) with max(ν₁, ν₂) ≤ C·ν₃ on the grid.
///
/// Among candidates the smallest C is chosen; near-ties (relative 1e-12) go to
/// the lexicographically smallest (j₃, l₃).
pub fn check_directed(fam: &WeightFamily, region: &Region) -> DirectedReport {
    let pts = region.grid_points();
    let idx = fam.indices();
    let table = fam.table(&pts);
    let mut pairs = Vec::new();
    for a in 0..idx.len() {
        for b in a..idx.len() {
            pairs.push((a, b));
        }
    }
    let results: Vec<DirectedPair> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let mut best: Option<(usize, f64)> = None;
            let mut first_witness = None;
            for c in 0..idx.len() {
                let mut ratio = 0.0f64;
                let mut fail = None;
                for p in 0..pts.len() {
                    let top = table[a][p].max(table[b][p]);
                    if top == 0.0 {
                        continue;
                    }
                    let under = table[c][p];
                    if under == 0.0 {
                        fail = Some(p);
                        break;
                    }
                    ratio = ratio.max(top / under);
                }
                match fail {
                    Some(p) => {
                        if first_witness.is_none() {
                            first_witness = Some(pts.get(p).to_vec());
                        }
                    }
                    None => {
                        let better = match best {
                            None => true,
                            Some((_, r)) => ratio < r * (1.0 - 1e-12),
                        };
                        if better {
                            best = Some((c, ratio));
                        }
                    }
                }
            }
            DirectedPair {
                first: idx[a],
                second: idx[b],
                dominator: best.map(|(c, r)| Dominator {
                    j: idx[c].j,
                    l: idx[c].l,
                    c: if r == 0.0 { 1.0 } else { r },
                }),
                witness: if best.is_none() { first_witness } else { None },
            }
        })
        .collect();
    DirectedReport {
        pass: results.iter().all(|r| r.dominator.is_some()),
        grid_points: pts.len(),
        pairs: results,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundEntry {
    pub j: usize,
    pub l: usize,
    pub value: f64,
    pub at: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalBoundReport {
    pub pass: bool,
    pub grid_points: usize,
    pub sups: Vec<BoundEntry>,
}

impl LocalBoundReport {
    pub fn sup(&self, idx: WeightIndex) -> Option<f64> {
        self.sups
            .iter()
            .find(|e| e.j == idx.j && e.l == idx.l)
            .map(|e| e.value)
    }
}

fn first_max(vals: &[f64], pick_min: bool) -> (usize, f64) {
    let mut best = (0, vals[0]);
    for (i, &v) in vals.iter().enumerate().skip(1) {
        if (pick_min && v < best.1) || (!pick_min && v > best.1) {
            best = (i, v);
        }
    }
    best
}

/// Grid sup of every ν_{j,l} over K.
pub fn check_locally_bounded(fam: &WeightFamily, k: &Region) -> Result<LocalBoundReport> {
    let pts = k.grid_points();
    if pts.is_empty() {
        return Err(Error::EmptyRegion("compact has no grid points".into()));
    }
    let idx = fam.indices();
    let table = fam.table(&pts);
    let sups: Vec<BoundEntry> = idx
        .iter()
        .zip(&table)
        .map(|(i, vals)| {
            let (p, v) = first_max(vals, false);
            BoundEntry {
                j: i.j,
                l: i.l,
                value: v,
                at: pts.get(p).to_vec(),
            }
        })
        .collect();
    Ok(LocalBoundReport {
        pass: sups.iter().all(|e| e.value.is_finite()),
        grid_points: pts.len(),
        sups,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AwayFromZeroEntry {
    pub l: usize,
    /// Chosen j: the largest infimum (smallest j on ties); None when every inf is 0.
    pub chosen: Option<BoundEntry>,
    pub infs: Vec<BoundEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AwayFromZeroReport {
    pub pass: bool,
    pub grid_points: usize,
    pub per_order: Vec<AwayFromZeroEntry>,
}

impl AwayFromZeroReport {
    pub fn chosen(&self, l: usize) -> Option<&BoundEntry> {
        self.per_order
            .iter()
            .find(|e| e.l == l)
            .and_then(|e| e.chosen.as_ref())
    }
}

/// For each l, the j maximizing inf_K ν_{j,l}; fails for l when all infima vanish.
pub fn check_locally_bounded_away_from_zero(
    fam: &WeightFamily,
    k: &Region,
) -> Result<AwayFromZeroReport> {
    let pts = k.grid_points();
    if pts.is_empty() {
        return Err(Error::EmptyRegion("compact has no grid points".into()));
    }
    let idx = fam.indices();
    let table = fam.table(&pts);
    let mut per_order = Vec::new();
    for l in 0..=fam.k_max() {
        let infs: Vec<BoundEntry> = idx
            .iter()
            .zip(&table)
            .filter(|(i, _)| i.l == l)
            .map(|(i, vals)| {
                let (p, v) = first_max(vals, true);
                BoundEntry {
                    j: i.j,
                    l,
                    value: v,
                    at: pts.get(p).to_vec(),
                }
            })
            .collect();
        let mut chosen: Option<BoundEntry> = None;
        for e in &infs {
            if e.value > 0.0 && chosen.as_ref().is_none_or(|c| e.value > c.value) {
                chosen = Some(e.clone());
            }
        }
        per_order.push(AwayFromZeroEntry { l, chosen, infs });
    }
    Ok(AwayFromZeroReport {
        pass: per_order.iter().all(|e| e.chosen.is_some()),
        grid_points: pts.len(),
        per_order,
    })
}

/// Smallest compact K (one hull per search box) such that
/// ν_{jl}(x) ≤ ε·ν_{im}(x) at every grid point of `search` outside K.
///
/// A condition holding everywhere gives a degenerate K at the first grid
/// point; `None` means the condition fails on the outer boundary of the search
/// region, so no compact inside it can work.
pub fn check_vanishing_ratio(
    fam: &WeightFamily,
    jl: WeightIndex,
    im: WeightIndex,
    eps: f64,
    search: &Region,
) -> Result<Option<Region>> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    fam.check_index(jl)?;
    fam.check_index(im)?;
    let pts = search.grid_points();
    if pts.is_empty() {
        return Err(Error::EmptyRegion(
            "search region has no grid points".into(),
        ));
    }
    let flags: Vec<bool> = pts
        .iter()
        .map(|p| fam.nu(jl, p) > eps * fam.nu(im, p))
        .collect();
    compact_from_flags(search, &pts, &flags, true)
}

/// Hull compact of flagged points; `None` if `reject_boundary` and a flagged
/// point sits on the outer boundary of the search bounding box.
pub(crate) fn compact_from_flags(
    search: &Region,
    pts: &PointSet,
    flags: &[bool],
    reject_boundary: bool,
) -> Result<Option<Region>> {
    let step = search.step();
    let hulls = hull_per_box(search, pts, flags);
    if hulls.is_empty() {
        let p = pts.get(0).to_vec();
        let d = p.len();
        let b = AxisBox::centered(&p, &vec![0.0; d]);
        return Ok(Some(Region::with_step(vec![b], &step)?));
    }
    if reject_boundary {
        let bb = search.bounding_box();
        let on_edge = pts.iter().zip(flags).any(|(p, &f)| {
            f && (0..p.len()).any(|k| {
                bb.extent(k) > 0.0
                    && ((p[k] - bb.lo[k]).abs() < 1e-9 * (1.0 + bb.extent(k))
                        || (p[k] - bb.hi[k]).abs() < 1e-9 * (1.0 + bb.extent(k)))
            })
        });
        if on_edge {
            return Ok(None);
        }
    }
    Ok(Some(Region::with_step(hulls, &step)?))
}

/// Pointwise audits that do not involve pairs of indices.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointwiseReport {
    pub nonnegative: bool,
    /// Some l and grid point where every ν_{j,l} vanishes.
    pub degenerate_at: Option<(usize, Vec<f64>)>,
    /// max |ν − χ·ν̃| for structured families.
    pub structure_defect: Option<f64>,
    /// First (j, l, point) where ν_{j,l} > ν_{j,l+1}, for families declared monotone.
    pub monotone_violation: Option<(usize, usize, Vec<f64>)>,
}

impl PointwiseReport {
    pub fn pass(&self) -> bool {
        self.nonnegative
            && self.degenerate_at.is_none()
            && self.structure_defect.is_none_or(|d| d == 0.0)
            && self.monotone_violation.is_none()
    }
}

pub fn check_pointwise(fam: &WeightFamily, region: &Region) -> PointwiseReport {
    let pts = region.grid_points();
    let idx = fam.indices();
    let table = fam.table(&pts);
    let nonnegative = table.iter().all(|v| v.iter().all(|x| *x >= 0.0));
    let mut degenerate_at = None;
    'outer: for l in 0..=fam.k_max() {
        for p in 0..pts.len() {
            let any = idx.iter().zip(&table).any(|(i, v)| i.l == l && v[p] > 0.0);
            if !any {
                degenerate_at = Some((l, pts.get(p).to_vec()));
                break 'outer;
            }
        }
    }
    let structure_defect = fam.structure().map(|_| {
        let mut worst = 0.0f64;
        for (i, vals) in idx.iter().zip(&table) {
            for (p, x) in pts.iter().enumerate() {
                let chi = if fam.in_omega(i.j, x).unwrap_or(true) {
                    1.0
                } else {
                    0.0
                };
                let t = fam.nu_tilde(*i, x).unwrap_or(vals[p]);
                worst = worst.max((vals[p] - chi * t).abs());
            }
        }
        worst
    });
    let mut monotone_violation = None;
    if fam.monotone_in_l() {
        'mono: for j in 1..=fam.j_max() {
            for l in 0..fam.k_max() {
                let a = (j - 1) * (fam.k_max() + 1) + l;
                for p in 0..pts.len() {
                    if table[a][p] > table[a + 1][p] {
                        monotone_violation = Some((j, l, pts.get(p).to_vec()));
                        break 'mono;
                    }
                }
            }
        }
    }
    PointwiseReport {
        nonnegative,
        degenerate_at,
        structure_defect,
        monotone_violation,
    }
}

/// Euclidean radius √(1/ε − 1) beyond which (1+|x|²)^{-1} < ε.
pub fn schwartz_ratio_radius(eps: f64) -> f64 {
    if eps >= 1.0 {
        0.0
    } else {
        (1.0 / eps - 1.0).sqrt()
    }
}

/// |x₁| bound −ln(ε)(2j+2) for the strip family.
pub fn strip_ratio_bound(j: usize, eps: f64) -> f64 {
    -(eps.ln()) * (2.0 * j as f64 + 2.0)
}
