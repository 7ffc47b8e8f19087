//! Smooth cut-off functions ψ equal to 1 on a box union K and vanishing
//! outside K + δ, with measured derivative constants C_β.
//!
//! Along each axis ψ is a mollified interval indicator
//! (χ_{[a−r, b+r]} ∗ ρ_s)(t) = F((t−a+r)/s) − F((t−b−r)/s), where F is the
//! distribution function of the one-dimensional mollifier. Products over axes
//! give one box; several boxes are joined as 1 − Π_b (1 − ψ_b).

use std::sync::{Arc, OnceLock};

use gauss_quad::GaussLegendre;
use serde::Serialize;

use crate::bump::bump1d;
use crate::error::{Error, Result};
use crate::funcmodel::{multiindex_binom, Field, MultiIndex, SampledFunction, SeminormIndex};
use crate::geometry::{AxisBox, Region};
use crate::mollify::{normalization, QuadratureSpec, MAX_MOLLIFIER_ORDER};
use crate::seminorms::{find_tail_compact, weighted_seminorm, SeminormRecord, SeminormValue};
use crate::weights::{WeightFamily, WeightIndex};

const CDF_CELLS: usize = 4096;
/// Points per unit of u = t/s in the edge scans that measure C_β.
const EDGE_SCAN: usize = 2000;

/// Distribution function of the 1D mollifier, tabulated with exact first
/// and second derivatives and interpolated by quintic Hermite polynomials.
struct Cdf {
    h: f64,
    z: f64,
    values: Vec<f64>,
}

impl Cdf {
    fn get() -> &'static Cdf {
        static CDF: OnceLock<Cdf> = OnceLock::new();
        CDF.get_or_init(|| {
            let gl = GaussLegendre::new(8.try_into().expect("nonzero"));
            let h = 2.0 / CDF_CELLS as f64;
            let mut values = Vec::with_capacity(CDF_CELLS + 1);
            let mut acc = 0.0;
            values.push(0.0);
            for i in 0..CDF_CELLS {
                let a = -1.0 + i as f64 * h;
                let cell: f64 = gl
                    .iter()
                    .map(|(x, w)| 0.5 * h * w * bump1d(0, a + 0.5 * h * (x + 1.0)))
                    .sum();
                acc += cell;
                values.push(acc);
            }
            let z = acc;
            for v in values.iter_mut() {
                *v /= z;
            }
            *values.last_mut().expect("nonempty") = 1.0;
            Cdf { h, z, values }
        })
    }

    /// k-th derivative of F at u; F is exactly 0 below −1 and 1 above 1.
    fn eval(&self, k: usize, u: f64) -> f64 {
        if k > 0 {
            return bump1d(k - 1, u) / self.z;
        }
        if u <= -1.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let pos = (u + 1.0) / self.h;
        let i = (pos.floor() as usize).min(CDF_CELLS - 1);
        let t = pos - i as f64;
        let (u0, u1) = (-1.0 + i as f64 * self.h, -1.0 + (i + 1) as f64 * self.h);
        let h = self.h;
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (bump1d(0, u0) / self.z, bump1d(0, u1) / self.z);
        let (s0, s1) = (bump1d(1, u0) / self.z, bump1d(1, u1) / self.z);
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let h5 = 0.5 * (t3 - 2.0 * t4 + t5);
        (f0 * h0 + h * d0 * h1 + h * h * s0 * h2 + f1 * h3 + h * d1 * h4 + h * h * s1 * h5)
            .clamp(0.0, 1.0)
    }
}

/// k-th derivative of the mollified indicator of [lo, hi] with radius s.
fn edge_factor(cdf: &Cdf, k: usize, t: f64, lo: f64, hi: f64, s: f64) -> f64 {
    let v = cdf.eval(k, (t - lo) / s) - cdf.eval(k, (t - hi) / s);
    if k == 0 {
        v.clamp(0.0, 1.0)
    } else {
        v / s.powi(k as i32)
    }
}

/// The field ψ itself.
struct CutoffField {
    dim: usize,
    order: usize,
    /// Inflated boxes [a − r, b + r] before mollification.
    cores: Vec<AxisBox>,
    s: f64,
}

impl CutoffField {
    fn box_deriv(&self, b: &AxisBox, beta: &MultiIndex, x: &[f64]) -> f64 {
        let cdf = Cdf::get();
        let mut v = 1.0;
        for k in 0..self.dim {
            v *= edge_factor(cdf, beta.get(k), x[k], b.lo[k], b.hi[k], self.s);
            if v == 0.0 {
                break;
            }
        }
        v
    }

    fn reaches(&self, b: &AxisBox, x: &[f64]) -> bool {
        (0..self.dim).all(|k| x[k] >= b.lo[k] - self.s && x[k] <= b.hi[k] + self.s)
    }
}

impl Field for CutoffField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_dim(&self) -> usize {
        1
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        let mut hits = self.cores.iter().filter(|b| self.reaches(b, x));
        let (Some(first), second) = (hits.next(), hits.next()) else {
            out[0] = 0.0;
            return;
        };
        if second.is_none() {
            out[0] = self.box_deriv(first, beta, x);
            return;
        }
        let near: Vec<&AxisBox> = self.cores.iter().filter(|b| self.reaches(b, x)).collect();
        // ∂^β of Q = Π_b (1 − ψ_b) by repeated Leibniz over γ ≤ β.
        out[0] = {
            let lower = beta.lower_set();
            let pos = |g: &MultiIndex| lower.iter().position(|c| c == g).expect("in lower set");
            let factor = |b: &AxisBox| -> Vec<f64> {
                lower
                    .iter()
                    .map(|g| {
                        let v = self.box_deriv(b, g, x);
                        if g.is_zero() {
                            1.0 - v
                        } else {
                            -v
                        }
                    })
                    .collect()
            };
            let mut q = factor(near[0]);
            for b in &near[1..] {
                let a = factor(b);
                q = lower
                    .iter()
                    .map(|g| {
                        g.lower_set()
                            .iter()
                            .map(|e| {
                                let rest = g.checked_sub(e).expect("e <= g");
                                multiindex_binom(g, e).expect("e <= g") as f64
                                    * q[pos(e)]
                                    * a[pos(&rest)]
                            })
                            .sum()
                    })
                    .collect();
            }
            let qb = q[pos(beta)];
            if beta.is_zero() {
                (1.0 - qb).clamp(0.0, 1.0)
            } else {
                -qb
            }
        };
    }
}

/// ψ together with its construction radii and derivative constants.
#[derive(Clone, Debug)]
pub struct CutoffFunction {
    pub k: Region,
    pub delta: f64,
    /// Mollifier scale of the one-dimensional edges.
    pub n: u32,
    /// ψ = 1 on K inflated by `inner` along every axis.
    pub inner: f64,
    /// ψ = 0 outside K inflated by `outer` along every axis.
    pub outer: f64,
    pub psi: SampledFunction,
    /// C_β = sup|∂^β ψ|·δ^{|β|} for |β| ≤ max_deriv.
    pub c_beta: Vec<(MultiIndex, f64)>,
}

impl CutoffFunction {
    pub fn c(&self, beta: &MultiIndex) -> Option<f64> {
        self.c_beta.iter().find(|e| e.0 == *beta).map(|e| e.1)
    }

    pub fn max_deriv(&self) -> usize {
        self.psi.order()
    }
}

/// sup_t |d^k/dt^k| of one mollified edge, from a dense scan in u = t/s.
fn edge_sup(k: usize, s: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let cdf = Cdf::get();
    let m = 2 * EDGE_SCAN;
    let best = (0..=m)
        .map(|i| cdf.eval(k, -1.0 + i as f64 / EDGE_SCAN as f64).abs())
        .fold(0.0, f64::max);
    best / s.powi(k as i32)
}

/// Builds ψ with ψ = 1 on K + 𝔹̄_{δ/4} and supp ψ ⊆ K + 𝔹̄_{3δ/4}.
///
/// Per axis the box is inflated by r and mollified at radius s ≤ (outer −
/// inner)/2 where inner = δ/4 and outer = (3δ/4)/√d, so that the box
/// inflation by `outer` lies in the Euclidean 3δ/4-neighbourhood. In one
/// dimension this is χ_{K+δ/2} ∗ ρ_{⌈4/δ⌉}.
pub fn build_cutoff(
    k: &Region,
    delta: f64,
    max_deriv: usize,
    quad: &QuadratureSpec,
) -> Result<CutoffFunction> {
    if !(delta > 0.0) {
        return Err(Error::Geometry("cut-off margin must be positive".into()));
    }
    if max_deriv > MAX_MOLLIFIER_ORDER {
        return Err(Error::OrderExceeded {
            requested: max_deriv,
            available: MAX_MOLLIFIER_ORDER,
        });
    }
    if k.boxes.is_empty() {
        return Err(Error::EmptyRegion("cut-off set has no boxes".into()));
    }
    let d = k.dim();
    let cdf = Cdf::get();
    let c1 = normalization(1, quad)?;
    if (cdf.z * c1 - 1.0).abs() > 10.0 * quad.tol.max(1e-12) {
        return Err(Error::QuadratureConvergence {
            last_change: (cdf.z * c1 - 1.0).abs(),
            tol: quad.tol,
        });
    }
    let inner_t = 0.25 * delta;
    let outer_t = 0.75 * delta / (d as f64).sqrt();
    let n = (2.0 / (outer_t - inner_t) * (1.0 - 1e-12)).ceil() as u32;
    let s = 1.0 / n as f64;
    let r = 0.5 * (inner_t + outer_t);
    let cores: Vec<AxisBox> = k.boxes.iter().map(|b| b.inflate(r)).collect();
    let field = CutoffField {
        dim: d,
        order: max_deriv,
        cores: cores.clone(),
        s,
    };
    // A degenerate K has no lattice spacing; sample ψ at δ/8 there.
    let step: Vec<f64> = k
        .step()
        .iter()
        .map(|&h| if h > 0.0 { h } else { delta / 8.0 })
        .collect();
    let support = Region::with_step(cores.iter().map(|b| b.inflate(s)).collect(), &step)?;
    let domain = k.inflate(delta);
    let field = Arc::new(field);
    let psi =
        SampledFunction::analytic(field.clone(), domain, max_deriv)?.with_support(support.clone());

    // Separable boxes: sup|∂^β ψ_b| = Π_k sup|edge^{(β_k)}|, the same for every box.
    let disjoint = support.boxes.iter().enumerate().all(|(i, a)| {
        support.boxes[i + 1..]
            .iter()
            .all(|b| a.intersect(b).is_none_or(|c| c.volume() == 0.0))
    });
    let betas = MultiIndex::up_to_order(d, max_deriv);
    let mut c_beta = Vec::with_capacity(betas.len());
    for beta in &betas {
        let sep: f64 = (0..d).map(|a| edge_sup(beta.get(a), s)).product();
        let mut sup = sep;
        if !disjoint {
            let mut v = [0.0];
            for p in support.refine(4).grid_points().iter() {
                field.eval(beta, p, &mut v);
                sup = sup.max(v[0].abs());
            }
        }
        c_beta.push((*beta, sup * delta.powi(beta.order() as i32)));
    }
    Ok(CutoffFunction {
        k: k.clone(),
        delta,
        n,
        inner: r - s,
        outer: r + s,
        psi,
        c_beta,
    })
}

/// ψ = 1 on K inflated by `inner` and ψ = 0 outside K inflated by `outer`
/// (box-wise along every axis), on the domain `domain`.
pub fn box_cutoff(
    k: &Region,
    inner: f64,
    outer: f64,
    order: usize,
    domain: Region,
) -> Result<SampledFunction> {
    if !(outer > inner && inner >= 0.0) {
        return Err(Error::Geometry(
            "box cut-off needs 0 <= inner < outer".into(),
        ));
    }
    let s = 0.5 * (outer - inner);
    let r = 0.5 * (outer + inner);
    let cores: Vec<AxisBox> = k.boxes.iter().map(|b| b.inflate(r)).collect();
    let support = Region::with_step(cores.iter().map(|b| b.inflate(s)).collect(), &domain.step())?;
    let field = CutoffField {
        dim: k.dim(),
        order: order.min(MAX_MOLLIFIER_ORDER),
        cores,
        s,
    };
    Ok(
        SampledFunction::analytic(Arc::new(field), domain, order.min(MAX_MOLLIFIER_ORDER))?
            .with_support(support),
    )
}

/// C_{l,δ} = sup_{|β|≤l} Σ_{γ≤β} binom(β,γ)·C_{β−γ}·δ^{−|β−γ|}.
pub fn cutoff_constant(cut: &CutoffFunction, l: usize) -> Result<f64> {
    if l > cut.max_deriv() {
        return Err(Error::OrderExceeded {
            requested: l,
            available: cut.max_deriv(),
        });
    }
    let d = cut.k.dim();
    let mut best = 0.0f64;
    for beta in MultiIndex::up_to_order(d, l) {
        let mut sum = 0.0;
        for gamma in beta.lower_set() {
            let rest = beta.checked_sub(&gamma).expect("gamma <= beta");
            let c = cut.c(&rest).expect("table covers order");
            sum += multiindex_binom(&beta, &gamma)? as f64
                * c
                * cut.delta.powi(-(rest.order() as i32));
        }
        best = best.max(sum);
    }
    Ok(best)
}

/// Ledger record of a cut-off step.
#[derive(Clone, Debug, Serialize)]
pub struct CutoffReport {
    pub delta: f64,
    pub k_boxes: Vec<AxisBox>,
    pub n: u32,
    pub c_beta: Vec<(MultiIndex, f64)>,
    pub c_l_delta: f64,
    /// Tail target ε/(1+C_{l,δ}) handed to the compact search.
    pub tail_target: f64,
    pub tail: SeminormRecord,
    pub measured_error: SeminormRecord,
    pub bound: f64,
    pub bound_ok: bool,
}

/// f̃ = ψ·f with ψ built around the tail compact for ε/(1+C_{l,δ}).
#[allow(clippy::too_many_arguments)]
pub fn apply_cutoff(
    f: &SampledFunction,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
    eps: f64,
    delta: f64,
    search: &Region,
    quad: &QuadratureSpec,
) -> Result<(SampledFunction, CutoffReport)> {
    let order = idx.l.clamp(1, MAX_MOLLIFIER_ORDER);
    if idx.l > f.order() {
        return Err(Error::OrderExceeded {
            requested: idx.l,
            available: f.order(),
        });
    }
    // C_{l,δ} does not depend on K; measure it on a point.
    let d = f.dim();
    let point = Region::with_step(
        vec![AxisBox::centered(&vec![0.0; d], &vec![0.0; d])],
        &f.domain().step(),
    )?;
    let reference = build_cutoff(&point, delta, order, quad)?;
    let mut c = cutoff_constant(&reference, idx.l)?;
    let mut target = eps / (1.0 + c);
    let mut found = find_tail_compact(f, fam, idx, alpha, target, delta, search)?;
    let mut cut = build_cutoff(&found.k, delta, order, quad)?;
    let c_actual = cutoff_constant(&cut, idx.l)?;
    if c_actual > c * (1.0 + 1e-12) {
        c = c_actual;
        target = eps / (1.0 + c);
        found = find_tail_compact(f, fam, idx, alpha, target, delta, search)?;
        cut = build_cutoff(&found.k, delta, order, quad)?;
        c = c.max(cutoff_constant(&cut, idx.l)?);
    }
    let psi = cut.psi.clone().with_domain(f.domain().clone());
    let mut ft = f.times_scalar(&psi)?;
    ft = ft.with_support(Region::with_step(
        psi.support().expect("declared").boxes.clone(),
        &f.domain().step(),
    )?);
    let measured: SeminormValue = weighted_seminorm(&f.sub(&ft), fam, idx, alpha)?;
    let bound = (1.0 + c) * found.tail.value;
    let report = CutoffReport {
        delta,
        k_boxes: found.k.boxes.clone(),
        n: cut.n,
        c_beta: cut.c_beta.clone(),
        c_l_delta: c,
        tail_target: target,
        tail: SeminormRecord::new(idx, alpha, &found.tail),
        measured_error: SeminormRecord::new(idx, alpha, &measured),
        bound,
        bound_ok: measured.value <= bound + 1e-10,
    };
    Ok((ft, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_k() -> Region {
        Region::new(
            vec![AxisBox::new(vec![-1.0], vec![1.0]).unwrap()],
            vec![201],
        )
        .unwrap()
    }

    #[test]
    fn cdf_is_a_distribution() {
        let c = Cdf::get();
        assert_eq!(c.eval(0, -1.0), 0.0);
        assert_eq!(c.eval(0, 1.0), 1.0);
        assert!((c.eval(0, 0.0) - 0.5).abs() < 1e-14);
        // derivative of the interpolant matches the density
        let (u, h) = (0.3, 1e-5);
        let num = (c.eval(0, u + h) - c.eval(0, u - h)) / (2.0 * h);
        assert!((num - c.eval(1, u)).abs() < 1e-8);
    }

    #[test]
    fn one_dim_radii() {
        let cut = build_cutoff(&unit_k(), 1.0, 2, &QuadratureSpec::default()).unwrap();
        assert_eq!(cut.n, 4);
        let z = MultiIndex::zero(1);
        for x in [-1.25, -1.0, 0.0, 1.0, 1.25] {
            assert_eq!(cut.psi.evaluate(&z, &[x]).unwrap()[0], 1.0, "{x}");
        }
        for x in [-1.75, 1.75, 1.9] {
            assert_eq!(cut.psi.evaluate(&z, &[x]).unwrap()[0], 0.0, "{x}");
        }
        assert_eq!(cut.c(&z), Some(1.0));
        assert_eq!(cutoff_constant(&cut, 0).unwrap(), 1.0);
        let c1 = cut.c(&MultiIndex::new(&[1])).unwrap();
        assert_eq!(
            cutoff_constant(&cut, 1).unwrap(),
            (1.0f64).max(c1 / 1.0 + 1.0)
        );
    }

    #[test]
    fn two_boxes_join_smoothly() {
        let k = Region::new(
            vec![
                AxisBox::new(vec![-2.0, -1.0], vec![-1.0, 1.0]).unwrap(),
                AxisBox::new(vec![-1.2, -1.0], vec![1.0, 0.0]).unwrap(),
            ],
            vec![41, 41],
        )
        .unwrap();
        let cut = build_cutoff(&k, 0.5, 2, &QuadratureSpec::default()).unwrap();
        let psi = &cut.psi;
        for p in k.grid_points().iter() {
            assert_eq!(psi.evaluate(&MultiIndex::zero(2), p).unwrap()[0], 1.0);
        }
        // mixed derivative against central differences of the first derivative
        let x = [-1.0, 0.02];
        let h = 1e-5;
        let b10 = MultiIndex::new(&[1, 0]);
        let num = (psi.evaluate(&b10, &[x[0], x[1] + h]).unwrap()[0]
            - psi.evaluate(&b10, &[x[0], x[1] - h]).unwrap()[0])
            / (2.0 * h);
        let ana = psi.evaluate(&MultiIndex::new(&[1, 1]), &x).unwrap()[0];
        assert!((num - ana).abs() < 1e-5 * (1.0 + ana.abs()), "{num} {ana}");
    }
}
