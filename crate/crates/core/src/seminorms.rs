//! Weighted sup-seminorms |f|_{j,l,α}, their tails outside a compact, and the
//! tail-compact search of the cut-off criterion.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::funcmodel::{MultiIndex, SampledFunction, SeminormIndex};
use crate::geometry::{AxisBox, PointSet, Region};
use crate::weights::{compact_from_flags, WeightFamily, WeightIndex};

/// A grid supremum together with the point and derivative attaining it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormValue {
    pub value: f64,
    pub witness_x: Vec<f64>,
    pub witness_beta: MultiIndex,
    /// True when no grid point entered the supremum.
    pub empty: bool,
}

impl SeminormValue {
    fn empty(dim: usize) -> Self {
        Self {
            value: 0.0,
            witness_x: Vec::new(),
            witness_beta: MultiIndex::zero(dim),
            empty: true,
        }
    }
}

/// Ledger form of a seminorm measurement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormRecord {
    pub j: usize,
    pub l: usize,
    pub alpha: String,
    pub value: f64,
    pub witness_x: Vec<f64>,
    pub witness_beta: MultiIndex,
}

impl SeminormRecord {
    pub fn new(idx: WeightIndex, alpha: &SeminormIndex, v: &SeminormValue) -> Self {
        Self {
            j: idx.j,
            l: idx.l,
            alpha: alpha.name(),
            value: v.value,
            witness_x: v.witness_x.clone(),
            witness_beta: v.witness_beta,
        }
    }
}

/// max_{β ∈ betas} p_α(∂^β f(x))·w, with the first maximizing β;
/// `buf` holds `betas.len()·m` values.
pub fn integrand(
    f: &SampledFunction,
    betas: &[MultiIndex],
    alpha: &SeminormIndex,
    w: f64,
    x: &[f64],
    buf: &mut [f64],
) -> (f64, MultiIndex) {
    let mut best = (0.0, betas[0]);
    if w == 0.0 {
        return best;
    }
    f.eval_many_into(betas, x, buf);
    for (b, v) in betas.iter().zip(buf.chunks(f.value_dim())) {
        let v = alpha.apply(v) * w;
        if v > best.0 {
            best = (v, *b);
        }
    }
    best
}

/// Per-point weighted integrand values over a point set.
pub struct Scan {
    pub points: PointSet,
    pub values: Vec<f64>,
    pub betas: Vec<MultiIndex>,
}

impl Scan {
    /// Evaluate the integrand with weight `nu` and derivative orders ≤ `order`.
    pub fn run(
        f: &SampledFunction,
        points: PointSet,
        nu: impl Fn(&[f64]) -> f64 + Sync,
        order: usize,
        alpha: &SeminormIndex,
    ) -> Result<Scan> {
        if order > f.order() {
            return Err(Error::OrderExceeded {
                requested: order,
                available: f.order(),
            });
        }
        alpha.validate(f.value_dim())?;
        let betas = MultiIndex::up_to_order(f.dim(), order);
        let m = f.value_dim();
        let res: Vec<(f64, MultiIndex)> = (0..points.len())
            .into_par_iter()
            .with_min_len(64)
            .map_init(
                || vec![0.0; m * betas.len()],
                |buf, i| {
                    let x = points.get(i);
                    integrand(f, &betas, alpha, nu(x), x, buf)
                },
            )
            .collect();
        let (values, betas) = res.into_iter().unzip();
        Ok(Scan {
            points,
            values,
            betas,
        })
    }

    /// Supremum over points accepted by `keep`, first maximizer wins.
    pub fn sup_where(&self, keep: impl Fn(&[f64]) -> bool) -> SeminormValue {
        let mut best: Option<usize> = None;
        for (i, x) in self.points.iter().enumerate() {
            if !keep(x) {
                continue;
            }
            match best {
                Some(b) if self.values[i] <= self.values[b] => {}
                _ => best = Some(i),
            }
        }
        match best {
            None => SeminormValue::empty(self.points.dim()),
            Some(i) => SeminormValue {
                value: self.values[i],
                witness_x: self.points.get(i).to_vec(),
                witness_beta: self.betas[i],
                empty: false,
            },
        }
    }

    pub fn sup(&self) -> SeminormValue {
        self.sup_where(|_| true)
    }
}

/// |f|_{j,l,α} = sup_x sup_{|β|≤l} p_α(∂^β f(x))·ν_{j,l}(x) over f's grid.
pub fn weighted_seminorm(
    f: &SampledFunction,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
) -> Result<SeminormValue> {
    weighted_seminorm_orders(f, fam, idx, idx.l, alpha)
}

/// Weighted supremum with the weight ν_{j,l} but derivatives up to `order`.
pub fn weighted_seminorm_orders(
    f: &SampledFunction,
    fam: &WeightFamily,
    idx: WeightIndex,
    order: usize,
    alpha: &SeminormIndex,
) -> Result<SeminormValue> {
    fam.check_index(idx)?;
    let scan = Scan::run(
        f,
        f.domain().grid_points(),
        |x| fam.nu(idx, x),
        order,
        alpha,
    )?;
    Ok(scan.sup())
}

/// The same supremum over a given point set (e.g. a refined grid).
pub fn weighted_seminorm_on(
    f: &SampledFunction,
    points: PointSet,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
) -> Result<SeminormValue> {
    fam.check_index(idx)?;
    Ok(Scan::run(f, points, |x| fam.nu(idx, x), idx.l, alpha)?.sup())
}

/// |f|_{Ω∖K,j,l,α}: the weighted supremum over grid points outside K.
pub fn tail_seminorm(
    f: &SampledFunction,
    k: &Region,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
) -> Result<SeminormValue> {
    fam.check_index(idx)?;
    let scan = Scan::run(
        f,
        f.domain().grid_points(),
        |x| fam.nu(idx, x),
        idx.l,
        alpha,
    )?;
    Ok(scan.sup_where(|x| !k.contains(x)))
}

/// q_{K,l,α}(f) = sup_{x∈K} sup_{|β|≤l} p_α(∂^β f(x)) over K's grid.
pub fn local_sup_seminorm(
    f: &SampledFunction,
    k: &Region,
    l: usize,
    alpha: &SeminormIndex,
) -> Result<SeminormValue> {
    let scan = Scan::run(f, k.grid_points(), |_| 1.0, l, alpha)?;
    Ok(scan.sup())
}

/// Result of the tail-compact search.
#[derive(Clone, Debug, Serialize)]
pub struct TailCompact {
    pub k: Region,
    pub tail: SeminormValue,
}

/// Smallest compact K (one grid-aligned box per search box) with
/// |f|_{Ω∖K,j,l,α} < ε and K + δ inside the domain.
///
/// The tail is a supremum over points outside K, so it drops below ε exactly
/// when K contains every grid point where the integrand reaches ε; the hull of
/// those points is therefore the minimal choice.
pub fn find_tail_compact(
    f: &SampledFunction,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
    eps: f64,
    delta: f64,
    search: &Region,
) -> Result<TailCompact> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    if !(delta >= 0.0) {
        return Err(Error::Precondition("delta must be non-negative".into()));
    }
    fam.check_index(idx)?;
    let pts = f.domain().grid_points();
    let scan = Scan::run(f, pts, |x| fam.nu(idx, x), idx.l, alpha)?;
    let in_search: Vec<bool> = scan.points.iter().map(|x| search.contains(x)).collect();
    // Grid points outside the search region must already satisfy the bound.
    let outside = scan.sup_where(|x| !search.contains(x));
    if outside.value >= eps {
        return Err(Error::CriterionFailure {
            best: outside.value,
            target: eps,
        });
    }
    let flags: Vec<bool> = scan
        .values
        .iter()
        .zip(&in_search)
        .map(|(v, s)| *s && *v >= eps)
        .collect();
    let k = if flags.iter().any(|f| *f) {
        compact_from_flags(f.domain(), &scan.points, &flags, false)?.expect("hull exists")
    } else {
        minimal_compact(f.domain(), search)?
    };
    let fits = k.boxes.iter().all(|b| {
        f.domain()
            .boxes
            .iter()
            .any(|d| d.contains_box(&b.inflate(delta)))
    });
    if !fits {
        // Best achievable: everything at distance ≥ δ from the domain boundary.
        let inner: Vec<AxisBox> = f
            .domain()
            .boxes
            .iter()
            .filter(|d| (0..d.dim()).all(|k| d.extent(k) >= 2.0 * delta))
            .map(|d| d.inflate(-delta))
            .collect();
        let best = scan.sup_where(|x| !inner.iter().any(|b| b.contains(x)));
        return Err(Error::CriterionFailure {
            best: best.value,
            target: eps,
        });
    }
    let tail = scan.sup_where(|x| !k.contains(x));
    debug_assert!(tail.value < eps);
    Ok(TailCompact { k, tail })
}

/// Degenerate compact at the grid point of `search` nearest its center.
fn minimal_compact(domain: &Region, search: &Region) -> Result<Region> {
    let pts = search.grid_points();
    if pts.is_empty() {
        return Err(Error::EmptyRegion(
            "search region has no grid points".into(),
        ));
    }
    let c = search.bounding_box().center();
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let dd = crate::geometry::dist(p, &c);
        if dd < bd {
            bd = dd;
            best = i;
        }
    }
    let p = pts.get(best);
    Region::with_step(
        vec![AxisBox::centered(p, &vec![0.0; p.len()])],
        &domain.step(),
    )
}
