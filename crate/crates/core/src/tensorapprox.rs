//! Finite-rank approximation Σ φ_i ⊗ f(x_i) from an oscillation cover and a
//! smooth partition of unity.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bump::e_deriv;
use crate::cutoff::box_cutoff;
use crate::error::{Error, Result};
use crate::funcmodel::{
    FactorSource, FiniteRankFunction, MultiIndex, SampledFunction, SeminormIndex, SupportIndex,
};
use crate::geometry::{dist, AxisBox, Lattice, PointSet, Region};
use crate::seminorms::{find_tail_compact, weighted_seminorm, SeminormRecord};
use crate::weights::{WeightFamily, WeightIndex};

/// How often the working grid may be halved when cover radii fall below it.
pub const MAX_REFINEMENTS: usize = 8;
/// Largest total grid refinement of the tail compact.
pub const MAX_REFINE_FACTOR: usize = 1 << 12;

/// Balls B(x_i, r_i) on whose grid points f oscillates by less than ε/N.
#[derive(Clone, Debug, Serialize)]
pub struct Cover {
    pub centers: PointSet,
    pub radii: Vec<f64>,
    /// N = 1 + sup_{W̄} ν_{j,0}.
    pub n_const: f64,
    /// K inflated by one grid cell.
    pub w: Region,
    /// Oscillation bound ε/N.
    pub target: f64,
    /// Grid step of the lattice the cover was certified on.
    pub step: Vec<f64>,
}

impl Cover {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Radius within which a grid point counts as covered: any point of K
    /// inflated by half a cell is then strictly inside the full ball.
    pub fn covering_radius(&self, i: usize) -> f64 {
        self.radii[i] - slack(&self.step)
    }
}

fn slack(step: &[f64]) -> f64 {
    let h = step.iter().cloned().fold(0.0, f64::max);
    (step.len() as f64).sqrt() * h
}

/// Lattice indices at Chebyshev distance exactly `t` from `c`, each once.
fn ring(c: &[usize], t: usize, counts: &[usize], mut visit: impl FnMut(&[usize])) {
    let d = c.len();
    let t = t as i64;
    let mut idx = vec![0usize; d];
    for fixed in 0..d {
        for sign in [-1i64, 1] {
            let pos = c[fixed] as i64 + sign * t;
            if pos < 0 || pos >= counts[fixed] as i64 {
                continue;
            }
            // axes before `fixed` stay strictly inside the ring
            let ranges: Vec<(i64, i64)> = (0..d)
                .map(|k| {
                    let w = if k < fixed { t - 1 } else { t };
                    let lo = (c[k] as i64 - w).max(0);
                    let hi = (c[k] as i64 + w).min(counts[k] as i64 - 1);
                    if k == fixed {
                        (pos, pos)
                    } else {
                        (lo, hi)
                    }
                })
                .collect();
            if ranges.iter().any(|r| r.0 > r.1) {
                continue;
            }
            let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
            'outer: loop {
                for k in 0..d {
                    idx[k] = cur[k] as usize;
                }
                visit(&idx);
                let mut k = d;
                loop {
                    if k == 0 {
                        break 'outer;
                    }
                    k -= 1;
                    cur[k] += 1;
                    if cur[k] <= ranges[k].1 {
                        break;
                    }
                    cur[k] = ranges[k].0;
                }
            }
        }
    }
}

/// Greedy cover of K's grid by oscillation balls, centers taken in lattice order.
///
/// W is K inflated by one grid cell and N = 1 + sup_{W̄} ν_{j,0}. Each center's
/// radius is the distance to the nearest grid point of W̄ where
/// p_α(f(y) − f(x_i)) ≥ ε/N; a point of K is covered once it lies within that
/// radius minus √d·h, which keeps K plus half a cell inside the union of balls.
pub fn oscillation_cover(
    f: &SampledFunction,
    k: &Region,
    fam: &WeightFamily,
    j: usize,
    alpha: &SeminormIndex,
    eps: f64,
) -> Result<Cover> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    alpha.validate(f.value_dim())?;
    let idx0 = WeightIndex::new(j, 0);
    fam.check_index(idx0)?;
    let step = k.step();
    let h = step.iter().cloned().fold(0.0, f64::max);
    let w = k.inflate_axes(&step);
    let lat: Lattice = w.lattice();
    let d = lat.dim();
    let m = f.value_dim();
    let n = lat.len();
    let zero = MultiIndex::zero(d);

    // Values, W- and K-membership on the lattice over W's bounding box.
    let rows: Vec<(bool, bool, f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| {
            let mut p = vec![0.0; d];
            lat.point(i, &mut p);
            if !w.contains(&p) {
                return (false, false, 0.0, Vec::new());
            }
            let mut v = vec![0.0; m];
            f.eval_into(&zero, &p, &mut v);
            (true, k.contains(&p), fam.nu(idx0, &p), v)
        })
        .collect();
    let n_const = 1.0 + rows.iter().filter(|r| r.0).map(|r| r.2).fold(0.0, f64::max);
    let target = eps / n_const;
    let in_w: Vec<bool> = rows.iter().map(|r| r.0).collect();
    let in_k: Vec<bool> = rows.iter().map(|r| r.1).collect();
    let mut vals = vec![0.0; n * m];
    for (i, r) in rows.into_iter().enumerate() {
        if r.0 {
            vals[i * m..(i + 1) * m].copy_from_slice(&r.3);
        }
    }
    let coord = |i: usize| {
        let mut p = vec![0.0; d];
        lat.point(i, &mut p);
        p
    };
    let bb = w.bounding_box();
    let diameter = (0..d).map(|a| bb.extent(a).powi(2)).sum::<f64>().sqrt();
    let max_span = lat.counts.iter().cloned().max().unwrap_or(1);
    let h_min = step
        .iter()
        .cloned()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let margin = slack(&step);

    let mut covered = vec![false; n];
    let mut centers = PointSet::new(d);
    let mut radii = Vec::new();
    let mut diff = vec![0.0; m];
    let mut ci = vec![0usize; d];

    // The first uncovered K point in lattice order becomes the next center.
    for index in 0..n {
        if !in_k[index] || covered[index] {
            continue;
        }
        let p = coord(index);
        // Nearest violator by expanding lattice rings.
        lat.unflatten(index, &mut ci);
        let fc = vals[index * m..(index + 1) * m].to_vec();
        let mut best = f64::INFINITY;
        for t in 1..=max_span {
            if best <= t as f64 * h_min {
                break;
            }
            ring(&ci, t, &lat.counts, |q| {
                let qi = lat.flatten(q);
                if !in_w[qi] {
                    return;
                }
                for (o, (a, b)) in diff
                    .iter_mut()
                    .zip(vals[qi * m..(qi + 1) * m].iter().zip(&fc))
                {
                    *o = a - b;
                }
                if alpha.apply(&diff) >= target {
                    let dq = dist(&coord(qi), &p);
                    best = best.min(dq);
                }
            });
        }
        let r = best.min(diameter + 2.0 * h);
        if r <= margin * (1.0 + 1e-9) {
            return Err(Error::Resolution {
                required: r,
                resolution: margin,
            });
        }
        // Mark K points inside the covering radius.
        let rc = r - margin;
        let reach: Vec<(usize, usize)> = (0..d)
            .map(|a| {
                let wdt = (rc / step[a]).ceil() as usize;
                (
                    ci[a].saturating_sub(wdt),
                    (ci[a] + wdt).min(lat.counts[a] - 1),
                )
            })
            .collect();
        let mut cur: Vec<usize> = reach.iter().map(|r| r.0).collect();
        'mark: loop {
            let qi = lat.flatten(&cur);
            if in_k[qi] && !covered[qi] && dist(&coord(qi), &p) < rc {
                covered[qi] = true;
            }
            let mut a = d;
            loop {
                if a == 0 {
                    break 'mark;
                }
                a -= 1;
                cur[a] += 1;
                if cur[a] <= reach[a].1 {
                    break;
                }
                cur[a] = reach[a].0;
            }
        }
        covered[index] = true;
        centers.push(&p);
        radii.push(r);
    }
    if radii.is_empty() {
        return Err(Error::EmptyRegion("compact has no grid points".into()));
    }
    Ok(Cover {
        centers,
        radii,
        n_const,
        w,
        target,
        step,
    })
}

/// φ_i = θ·b_i / Σ_q b_q with b_i(x) = exp(−1/(1−|x−x_i|²/r_i²)) and θ a box
/// cut-off equal to 1 on K and vanishing outside K plus half a grid cell.
pub struct PartitionSource {
    dim: usize,
    centers: PointSet,
    radii: Vec<f64>,
    theta: SampledFunction,
    boxes: Vec<AxisBox>,
    index: SupportIndex,
}

impl PartitionSource {
    fn bumps(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let mut cand = Vec::new();
        self.index.candidates(x, &mut cand);
        for &i in &cand {
            let i = i as usize;
            let c = self.centers.get(i);
            let u = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                / (self.radii[i] * self.radii[i]);
            let b = e_deriv(0, u);
            if b > 0.0 {
                out.push((i, b));
            }
        }
    }

    pub fn theta(&self) -> &SampledFunction {
        &self.theta
    }

    /// Σ_q b_q(x) at x.
    pub fn bump_sum(&self, x: &[f64]) -> f64 {
        let mut v = Vec::new();
        self.bumps(x, &mut v);
        v.iter().map(|e| e.1).sum()
    }
}

impl FactorSource for PartitionSource {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.radii.len()
    }
    fn order(&self) -> usize {
        0
    }
    fn active(&self, beta: &MultiIndex, x: &[f64], out: &mut Vec<(usize, f64)>) {
        debug_assert!(
            beta.is_zero(),
            "partition derivatives come from finite differences"
        );
        out.clear();
        let mut th = [0.0];
        self.theta.eval_into(beta, x, &mut th);
        if th[0] == 0.0 {
            return;
        }
        self.bumps(x, out);
        let total: f64 = out.iter().map(|e| e.1).sum();
        if total == 0.0 {
            out.clear();
            return;
        }
        for e in out.iter_mut() {
            e.1 *= th[0] / total;
        }
    }
    fn support(&self, i: usize) -> Option<AxisBox> {
        Some(self.boxes[i].clone())
    }
}

/// The partition of unity subordinate to a cover.
#[derive(Clone)]
pub struct Partition {
    pub source: Arc<PartitionSource>,
    /// Margin by which θ's support exceeds K.
    pub mu: f64,
    domain: Region,
    max_deriv: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.len() == 0
    }

    /// φ_i as scalar functions with finite-difference derivatives.
    pub fn functions(&self) -> Vec<SampledFunction> {
        let vectors = vec![vec![1.0]; self.len()];
        let fr = FiniteRankFunction::new(self.source.clone(), vectors, 1, self.domain.clone())
            .expect("shapes agree");
        (0..self.len())
            .map(|i| fr.factor(i).with_order(self.max_deriv))
            .collect()
    }

    /// Σ_i φ_i ⊗ e_i on `domain`.
    pub fn combine(
        &self,
        vectors: Vec<Vec<f64>>,
        value_dim: usize,
        domain: Region,
    ) -> Result<FiniteRankFunction> {
        FiniteRankFunction::new(self.source.clone(), vectors, value_dim, domain)
    }
}

/// Builds φ_i and checks Σ_q b_q > 0 at every grid point where θ > 0.
pub fn build_partition(cover: &Cover, k: &Region, max_deriv: usize) -> Result<Partition> {
    let d = k.dim();
    let mu = 0.5 * cover.step.iter().cloned().fold(0.0, f64::max);
    let fine = Region::with_step(cover.w.boxes.clone(), &cover.step)?;
    let theta = box_cutoff(k, 0.0, mu, max_deriv, fine.clone())?;
    let theta_box = theta.support().expect("declared").bounding_box();
    let boxes: Vec<AxisBox> = (0..cover.len())
        .map(|i| {
            let ball = AxisBox::centered(cover.centers.get(i), &vec![cover.radii[i]; d]);
            ball.intersect(&theta_box).unwrap_or(ball)
        })
        .collect();
    let index = SupportIndex::build(d, &boxes.iter().cloned().map(Some).collect::<Vec<_>>());
    let source = Arc::new(PartitionSource {
        dim: d,
        centers: cover.centers.clone(),
        radii: cover.radii.clone(),
        theta,
        boxes,
        index,
    });
    let zero = MultiIndex::zero(d);
    let pts = fine.grid_points();
    let defect = (0..pts.len()).into_par_iter().find_first(|&i| {
        let p = pts.get(i);
        let mut th = [0.0];
        source.theta.eval_into(&zero, p, &mut th);
        th[0] > 0.0 && source.bump_sum(p) == 0.0
    });
    if let Some(i) = defect {
        return Err(Error::CoverDefect {
            point: pts.get(i).to_vec(),
        });
    }
    Ok(Partition {
        source,
        mu,
        domain: fine,
        max_deriv,
    })
}

/// Ledger record of a localization step.
#[derive(Clone, Debug, Serialize)]
pub struct ApproxReport {
    pub n_centers: usize,
    pub rank: usize,
    pub n_const: f64,
    pub eps: f64,
    pub k_boxes: Vec<AxisBox>,
    /// Grid refinement factor of the compact the cover was built on.
    pub refine_factor: usize,
    pub measured_error: SeminormRecord,
    pub four_eps_bound_ok: bool,
}

/// g = Σ φ_i ⊗ f(x_i) with |f − g|_{j,0,α} < 4ε certified on f's grid.
///
/// With a support constraint V every φ_i vanishes outside V; V must contain
/// the tail compact plus half a grid cell.
pub fn finite_rank_c0_approx(
    f: &SampledFunction,
    fam: &WeightFamily,
    j: usize,
    alpha: &SeminormIndex,
    eps: f64,
    support_constraint: Option<&Region>,
) -> Result<(FiniteRankFunction, ApproxReport)> {
    let idx = WeightIndex::new(j, 0);
    let step = f.domain().step();
    let h = step.iter().cloned().fold(0.0, f64::max);
    let whole = weighted_seminorm(f, fam, idx, alpha)?;
    if whole.value < eps {
        // g = 0 already meets the tolerance.
        let g = FiniteRankFunction::zero(f.value_dim(), f.domain().clone());
        let report = ApproxReport {
            n_centers: 0,
            rank: 0,
            n_const: 1.0,
            eps,
            k_boxes: Vec::new(),
            refine_factor: 0,
            measured_error: SeminormRecord::new(idx, alpha, &whole),
            four_eps_bound_ok: true,
        };
        return Ok((g, report));
    }
    let tail = find_tail_compact(f, fam, idx, alpha, eps, h, f.domain())?;
    // Degenerate axes (a single flagged grid line) get half a cell each side.
    let boxes = tail
        .k
        .boxes
        .iter()
        .map(|b| {
            let pad: Vec<f64> = (0..b.dim())
                .map(|a| {
                    if b.extent(a) > 0.0 {
                        0.0
                    } else {
                        0.5 * step[a]
                    }
                })
                .collect();
            b.inflate_axes(&pad)
        })
        .collect();
    let k = Region::with_step(boxes, &step)?;
    let (cover, kt, refine_factor) = {
        let (mut t, mut factor) = (0, 1usize);
        loop {
            let kt = k.refine(factor);
            match oscillation_cover(f, &kt, fam, j, alpha, eps) {
                Ok(c) => break (c, kt, factor),
                Err(Error::Resolution {
                    required,
                    resolution,
                }) if t < MAX_REFINEMENTS => {
                    // Aim for a margin of at most half the violator distance.
                    let want = if required > 0.0 {
                        2.0 * resolution / required
                    } else {
                        2.0
                    };
                    factor *= (want.ceil() as usize)
                        .clamp(2, MAX_REFINE_FACTOR)
                        .next_power_of_two();
                    if factor > MAX_REFINE_FACTOR {
                        return Err(Error::Resolution {
                            required,
                            resolution,
                        });
                    }
                    t += 1;
                }
                Err(e) => return Err(e),
            }
        }
    };
    let partition = build_partition(&cover, &kt, 1)?;
    if let Some(v) = support_constraint {
        let reach = kt.inflate(partition.mu);
        if !v.contains_region(&reach) {
            return Err(Error::Precondition(
                "support constraint must contain the tail compact plus half a cell".into(),
            ));
        }
    }
    let zero = MultiIndex::zero(f.dim());
    let vectors: Vec<Vec<f64>> = cover
        .centers
        .iter()
        .map(|c| {
            let mut v = vec![0.0; f.value_dim()];
            f.eval_into(&zero, c, &mut v);
            v
        })
        .collect();
    let g = partition.combine(vectors, f.value_dim(), f.domain().clone())?;
    let measured = weighted_seminorm(&f.sub(&g.as_sampled(0)), fam, idx, alpha)?;
    let report = ApproxReport {
        n_centers: cover.len(),
        rank: g.rank(),
        n_const: cover.n_const,
        eps,
        k_boxes: k.boxes.clone(),
        refine_factor,
        measured_error: SeminormRecord::new(idx, alpha, &measured),
        four_eps_bound_ok: measured.value < 4.0 * eps,
    };
    Ok((g, report))
}
