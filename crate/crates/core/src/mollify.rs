//! The mollifier family ρ_n(x) = n^d·C·exp(−1/(1−|nx|²)), tensor quadrature,
//! and quadrature convolution with derivatives moved onto the compact factor.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bump::BumpTable;
use crate::error::{Error, Result};
use crate::funcmodel::{
    fd_derivative_oracle, FactorSource, Field, FnField, MultiIndex, SampledFunction, SeminormIndex,
};
use crate::geometry::{AxisBox, PointSet, Region};
use crate::seminorms::{weighted_seminorm, SeminormValue};
use crate::weights::{WeightFamily, WeightIndex};

/// Highest mollifier derivative order with tabulated closed forms.
pub const MAX_MOLLIFIER_ORDER: usize = 6;

/// Nodes per Gauss–Legendre panel.
const GAUSS_PANEL: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "midpoint")]
    Midpoint,
    #[serde(rename = "gauss-tensor")]
    GaussTensor,
}

impl Rule {
    fn other(self) -> Rule {
        match self {
            Rule::Midpoint => Rule::GaussTensor,
            Rule::GaussTensor => Rule::Midpoint,
        }
    }
}

/// Tensor-product quadrature with refinement by doubling the points per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub rule: Rule,
    pub points_per_axis: usize,
    pub refinement_levels: usize,
    pub tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rule: Rule::Midpoint,
            points_per_axis: 64,
            refinement_levels: 2,
            tol: 1e-8,
        }
    }
}

/// A quadrature value with the change between its last two levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    pub last_change: f64,
    pub level: usize,
    pub converged: bool,
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_axis < 8 {
            return Err(Error::Precondition(
                "points_per_axis must be at least 8".into(),
            ));
        }
        if self.rule == Rule::GaussTensor && !self.points_per_axis.is_multiple_of(GAUSS_PANEL) {
            return Err(Error::Precondition(
                "gauss-tensor needs points_per_axis divisible by 8".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Precondition(
                "quadrature tol must be positive".into(),
            ));
        }
        Ok(())
    }

    fn with_rule(&self, rule: Rule) -> Self {
        Self {
            rule,
            ..self.clone()
        }
    }

    /// One-dimensional nodes and weights on [a, b] at refinement `level`.
    pub fn nodes_1d(&self, level: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.points_per_axis << level;
        match self.rule {
            Rule::Midpoint => {
                let h = (b - a) / n as f64;
                (
                    (0..n).map(|i| a + (i as f64 + 0.5) * h).collect(),
                    vec![h; n],
                )
            }
            Rule::GaussTensor => {
                static PANEL: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
                let panel = PANEL.get_or_init(|| {
                    GaussLegendre::new(GAUSS_PANEL.try_into().expect("nonzero"))
                        .iter()
                        .map(|(x, w)| (*x, *w))
                        .collect()
                });
                let panels = n / GAUSS_PANEL;
                let h = (b - a) / panels as f64;
                let mut xs = Vec::with_capacity(n);
                let mut ws = Vec::with_capacity(n);
                for p in 0..panels {
                    let c = a + (p as f64 + 0.5) * h;
                    for (x, w) in panel {
                        xs.push(c + 0.5 * h * x);
                        ws.push(0.5 * h * w);
                    }
                }
                (xs, ws)
            }
        }
    }

    /// Tensor nodes (flattened, `dim` per node) and weights on a box.
    pub fn tensor(&self, level: usize, bx: &AxisBox) -> (Vec<f64>, Vec<f64>) {
        let d = bx.dim();
        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
            .map(|k| self.nodes_1d(level, bx.lo[k], bx.hi[k]))
            .collect();
        let per = axes[0].0.len();
        let total = per.pow(d as u32);
        let mut nodes = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut w = 1.0;
            for k in 0..d {
                nodes.push(axes[k].0[idx[k]]);
                w *= axes[k].1[idx[k]];
            }
            weights.push(w);
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < per {
                    break;
                }
                idx[k] = 0;
            }
        }
        (nodes, weights)
    }

    /// ∫_box f at one level; fixed chunking keeps the sum reproducible.
    pub fn integrate_level(
        &self,
        level: usize,
        bx: &AxisBox,
        f: &(dyn Fn(&[f64]) -> f64 + Sync),
    ) -> f64 {
        let d = bx.dim();
        let (nodes, weights) = self.tensor(level, bx);
        let partial: Vec<f64> = weights
            .par_chunks(4096)
            .enumerate()
            .map(|(c, ws)| {
                let base = c * 4096;
                ws.iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let k = base + i;
                        w * f(&nodes[k * d..(k + 1) * d])
                    })
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum()
    }

    /// All levels up to `refinement_levels`, stopping once successive levels
    /// differ by less than `tol`; never fails.
    pub fn integrate_levels(&self, bx: &AxisBox, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Integral {
        let mut prev = self.integrate_level(0, bx, f);
        let mut change = f64::INFINITY;
        for level in 1..=self.refinement_levels {
            let cur = self.integrate_level(level, bx, f);
            change = (cur - prev).abs();
            prev = cur;
            if change < self.tol {
                return Integral {
                    value: cur,
                    last_change: change,
                    level,
                    converged: true,
                };
            }
        }
        Integral {
            value: prev,
            last_change: change,
            level: self.refinement_levels,
            converged: false,
        }
    }

    /// Adaptive integral; error when the levels do not settle within `tol`.
    pub fn integrate(&self, bx: &AxisBox, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<Integral> {
        let r = self.integrate_levels(bx, f);
        if r.converged {
            Ok(r)
        } else {
            Err(Error::QuadratureConvergence {
                last_change: r.last_change,
                tol: self.tol,
            })
        }
    }
}

/// Surface area of the unit sphere in ℝ^d.
fn sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        4 => 2.0 * PI * PI,
        _ => unreachable!("dimension checked by caller"),
    }
}

/// C = (∫_{B₁} exp(−1/(1−|x|²)) dx)^{−1}, via the radial integral
/// |S^{d−1}|·∫_0^1 exp(−1/(1−r²)) r^{d−1} dr on Gauss panels; cached per
/// (d, quadrature).
pub fn normalization(d: usize, quad: &QuadratureSpec) -> Result<f64> {
    if !(1..=4).contains(&d) {
        return Err(Error::Precondition(format!("dimension {d} outside 1..=4")));
    }
    quad.validate()?;
    type Key = (usize, Rule, usize, usize, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, f64>>> = OnceLock::new();
    let key = (
        d,
        quad.rule,
        quad.points_per_axis,
        quad.refinement_levels,
        quad.tol.to_bits(),
    );
    if let Some(c) = CACHE
        .get_or_init(Default::default)
        .lock()
        .expect("cache")
        .get(&key)
    {
        return Ok(*c);
    }
    let unit = AxisBox::new(vec![0.0], vec![1.0])?;
    // r^{d−1} spoils endpoint smoothness at r = 0 for even d, so the radial
    // integral always uses the high-order panel rule.
    let radial_quad = QuadratureSpec {
        rule: Rule::GaussTensor,
        points_per_axis: quad.points_per_axis.div_ceil(GAUSS_PANEL) * GAUSS_PANEL,
        ..quad.clone()
    };
    let radial = radial_quad.integrate(&unit, &|r: &[f64]| {
        crate::bump::e_deriv(0, r[0] * r[0]) * r[0].powi(d as i32 - 1)
    })?;
    let c = 1.0 / (sphere_area(d) * radial.value);
    CACHE
        .get_or_init(Default::default)
        .lock()
        .expect("cache")
        .insert(key, c);
    Ok(c)
}

/// ρ_n with its closed-form derivatives.
#[derive(Clone, Debug, Serialize)]
pub struct Mollifier {
    pub dim: usize,
    pub n: u32,
    pub norm_c: f64,
    pub max_deriv: usize,
    pub quad: QuadratureSpec,
    /// Tensor quadrature of ρ_n over its support box.
    pub mass: Integral,
}

impl Mollifier {
    pub fn build(d: usize, n: u32, quad: &QuadratureSpec, max_deriv: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition(
                "mollifier scale must be at least 1".into(),
            ));
        }
        if max_deriv > MAX_MOLLIFIER_ORDER {
            return Err(Error::OrderExceeded {
                requested: max_deriv,
                available: MAX_MOLLIFIER_ORDER,
            });
        }
        let norm_c = normalization(d, quad)?;
        let mut m = Mollifier {
            dim: d,
            n,
            norm_c,
            max_deriv,
            quad: quad.clone(),
            mass: Integral {
                value: f64::NAN,
                last_change: f64::NAN,
                level: 0,
                converged: false,
            },
        };
        let bx = m.support_box();
        m.mass = quad.integrate_levels(&bx, &|x: &[f64]| m.value(x));
        Ok(m)
    }

    /// ρ(x) = C·exp(−1/(1−|x|²)).
    pub fn rho(&self, x: &[f64]) -> f64 {
        self.norm_c * BumpTable::get(self.dim).eval(&MultiIndex::zero(self.dim), x)
    }

    /// ρ_n(x) = n^d·ρ(nx).
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.n as f64;
        let y: Vec<f64> = x.iter().map(|v| n * v).collect();
        n.powi(self.dim as i32) * self.rho(&y)
    }

    /// ∂^β ρ_n(x) = n^{d+|β|}·C·(∂^β b)(nx).
    pub fn deriv(&self, beta: &MultiIndex, x: &[f64]) -> f64 {
        if beta.is_zero() {
            return self.value(x);
        }
        let n = self.n as f64;
        let y: Vec<f64> = x.iter().map(|v| n * v).collect();
        n.powi((self.dim + beta.order()) as i32)
            * self.norm_c
            * BumpTable::get(self.dim).eval(beta, &y)
    }

    pub fn radius(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn support_box(&self) -> AxisBox {
        AxisBox::centered(&vec![0.0; self.dim], &vec![self.radius(); self.dim])
    }

    /// ∫|∂^β ρ_n| = n^{|β|}·∫|∂^β ρ|; the returned value adds the last
    /// refinement change so it is an upper estimate.
    pub fn abs_deriv_integral(&self, beta: &MultiIndex) -> Integral {
        let unit = AxisBox::centered(&vec![0.0; self.dim], &vec![1.0; self.dim]);
        let tab = BumpTable::get(self.dim);
        let c = self.norm_c;
        let mut r = self
            .quad
            .integrate_levels(&unit, &|y: &[f64]| (c * tab.eval(beta, y)).abs());
        let s = (self.n as f64).powi(beta.order() as i32);
        r.value = s * (r.value + r.last_change);
        r.last_change *= s;
        r
    }

    /// ρ_n as a scalar function on `domain` with declared support.
    pub fn as_function(&self, domain: Region) -> Result<SampledFunction> {
        let support = Region::with_step(vec![self.support_box()], &domain.step())?;
        Ok(
            SampledFunction::analytic(Arc::new(self.clone()), domain, self.max_deriv)?
                .with_support(support),
        )
    }
}

impl Field for Mollifier {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_dim(&self) -> usize {
        1
    }
    fn order(&self) -> usize {
        self.max_deriv
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        out[0] = self.deriv(beta, x);
    }
}

/// Which factor the quadrature nodes are laid on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// ∫ f(x−y)·∂^β g(y) dy with nodes on supp g.
    NodesOnKernel,
    /// ∫ f(y)·∂^β g(x−y) dy with nodes on supp f.
    NodesOnFunction,
}

enum Table {
    /// w_k·∂^β g(y_k) per derivative slot.
    Kernel {
        f: Arc<dyn Field>,
        per_beta: Vec<Vec<f64>>,
    },
    /// w_k·f(y_k), `m` values per node.
    Function { g: Arc<dyn Field>, fw: Vec<f64> },
}

/// f∗g evaluated by a fixed tensor rule; derivatives fall on g.
pub struct ConvolvedField {
    dim: usize,
    m: usize,
    order: usize,
    betas: Vec<MultiIndex>,
    nodes: Vec<f64>,
    table: Table,
}

impl ConvolvedField {
    fn build(
        f: Arc<dyn Field>,
        g: Arc<dyn Field>,
        orientation: Orientation,
        node_box: &AxisBox,
        quad: &QuadratureSpec,
        level: usize,
    ) -> Self {
        let dim = f.dim();
        let m = f.value_dim();
        let order = g.order().min(MAX_MOLLIFIER_ORDER);
        let betas = MultiIndex::up_to_order(dim, order);
        let (all_nodes, weights) = quad.tensor(level, node_box);
        let mut nodes = Vec::new();
        match orientation {
            Orientation::NodesOnKernel => {
                let mut per_beta = vec![Vec::new(); betas.len()];
                let mut buf = vec![0.0; betas.len()];
                for (k, w) in weights.iter().enumerate() {
                    let y = &all_nodes[k * dim..(k + 1) * dim];
                    g.eval_many(&betas, y, &mut buf);
                    if buf.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    nodes.extend_from_slice(y);
                    for (t, v) in per_beta.iter_mut().zip(&buf) {
                        t.push(w * v);
                    }
                }
                ConvolvedField {
                    dim,
                    m,
                    order,
                    betas,
                    nodes,
                    table: Table::Kernel { f, per_beta },
                }
            }
            Orientation::NodesOnFunction => {
                let zero = MultiIndex::zero(dim);
                let mut fw = Vec::new();
                let mut buf = vec![0.0; m];
                for (k, w) in weights.iter().enumerate() {
                    let y = &all_nodes[k * dim..(k + 1) * dim];
                    f.eval(&zero, y, &mut buf);
                    if buf.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    nodes.extend_from_slice(y);
                    fw.extend(buf.iter().map(|v| w * v));
                }
                ConvolvedField {
                    dim,
                    m,
                    order,
                    betas,
                    nodes,
                    table: Table::Function { g, fw },
                }
            }
        }
    }

    /// Number of quadrature nodes kept after pruning zeros.
    pub fn node_count(&self) -> usize {
        self.nodes.len() / self.dim
    }

    fn slot(&self, b: &MultiIndex) -> usize {
        self.betas
            .iter()
            .position(|c| c == b)
            .unwrap_or_else(|| panic!("derivative {b} beyond convolution order {}", self.order))
    }
}

impl Field for ConvolvedField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_dim(&self) -> usize {
        self.m
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        self.eval_many(std::slice::from_ref(beta), x, out)
    }
    fn eval_many(&self, betas: &[MultiIndex], x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.dim, self.m);
        out.fill(0.0);
        let mut z = vec![0.0; d];
        match &self.table {
            Table::Kernel { f, per_beta } => {
                let slots: Vec<usize> = betas.iter().map(|b| self.slot(b)).collect();
                let zero = MultiIndex::zero(d);
                let mut fv = vec![0.0; m];
                for (k, y) in self.nodes.chunks(d).enumerate() {
                    for i in 0..d {
                        z[i] = x[i] - y[i];
                    }
                    f.eval(&zero, &z, &mut fv);
                    if fv.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for (o, &s) in out.chunks_mut(m).zip(&slots) {
                        let t = per_beta[s][k];
                        for (oq, fq) in o.iter_mut().zip(&fv) {
                            *oq += t * fq;
                        }
                    }
                }
            }
            Table::Function { g, fw } => {
                let mut gv = vec![0.0; betas.len()];
                for (k, y) in self.nodes.chunks(d).enumerate() {
                    for i in 0..d {
                        z[i] = x[i] - y[i];
                    }
                    g.eval_many(betas, &z, &mut gv);
                    let fk = &fw[k * m..(k + 1) * m];
                    for (o, gb) in out.chunks_mut(m).zip(&gv) {
                        if *gb == 0.0 {
                            continue;
                        }
                        for (oq, fq) in o.iter_mut().zip(fk) {
                            *oq += gb * fq;
                        }
                    }
                }
            }
        }
    }
}

/// A convolution together with its quadrature diagnostics.
#[derive(Clone, Debug)]
pub struct Convolution {
    pub function: SampledFunction,
    pub orientation: Orientation,
    pub level: usize,
    /// Largest change between the chosen and the next finer level at the probes.
    pub quad_change: f64,
}

fn minkowski(a: &Region, b: &AxisBox) -> Vec<AxisBox> {
    a.boxes
        .iter()
        .map(|x| AxisBox {
            lo: x.lo.iter().zip(&b.lo).map(|(p, q)| p + q).collect(),
            hi: x.hi.iter().zip(&b.hi).map(|(p, q)| p + q).collect(),
        })
        .collect()
}

fn probe_points(bx: &AxisBox) -> PointSet {
    let c = bx.center();
    let mut pts = PointSet::new(bx.dim());
    pts.push(&c);
    for k in 0..bx.dim() {
        for s in [-0.25, 0.25] {
            let mut p = c.clone();
            p[k] += s * bx.extent(k);
            pts.push(&p);
        }
    }
    pts
}

/// f∗g with the requested node placement; the quadrature level is the
/// coarsest one agreeing with the next finer level at probe points.
pub fn convolve_with(
    f: &SampledFunction,
    g: &SampledFunction,
    quad: &QuadratureSpec,
    orientation: Orientation,
) -> Result<Convolution> {
    quad.validate()?;
    if g.value_dim() != 1 {
        return Err(Error::Precondition(
            "second convolution factor must be scalar".into(),
        ));
    }
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: g.dim(),
        });
    }
    let (node_box, support) = match (orientation, f.support(), g.support()) {
        (Orientation::NodesOnKernel, fs, Some(gs)) => {
            let gb = gs.bounding_box();
            (gb.clone(), fs.map(|s| minkowski(s, &gb)))
        }
        (Orientation::NodesOnFunction, Some(fs), gs) => {
            let fb = fs.bounding_box();
            (fb.clone(), gs.map(|s| minkowski(s, &fb)))
        }
        (_, None, None) => {
            return Err(Error::Precondition(
                "convolution needs a compactly supported factor".into(),
            ))
        }
        (Orientation::NodesOnKernel, _, None) => {
            return Err(Error::Precondition(
                "nodes on kernel need a compact kernel".into(),
            ))
        }
        (Orientation::NodesOnFunction, None, _) => {
            return Err(Error::Precondition(
                "nodes on function need a compact function".into(),
            ))
        }
    };
    let step = f.domain().step();
    let domain = match orientation {
        Orientation::NodesOnKernel => Region::with_step(minkowski(f.domain(), &node_box), &step)?,
        Orientation::NodesOnFunction => f.domain().clone(),
    };
    let support = support.map(|b| Region::with_step(b, &step)).transpose()?;
    let probes = probe_points(&support.as_ref().unwrap_or(&domain).bounding_box());

    let (fa, ga) = (f.as_field(), g.as_field());
    let build =
        |level| ConvolvedField::build(fa.clone(), ga.clone(), orientation, &node_box, quad, level);
    let sample = |c: &ConvolvedField| -> Vec<f64> {
        let m = c.m * c.betas.len();
        let mut all = Vec::new();
        for p in probes.iter() {
            let mut out = vec![0.0; m];
            c.eval_many(&c.betas, p, &mut out);
            all.extend(out);
        }
        all
    };
    let mut cur = build(0);
    let mut cur_vals = sample(&cur);
    let mut level = 0;
    let mut change = f64::INFINITY;
    for next_level in 1..=quad.refinement_levels {
        let next = build(next_level);
        let next_vals = sample(&next);
        let scale = next_vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        change = cur_vals
            .iter()
            .zip(&next_vals)
            .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        if change < quad.tol * scale {
            break;
        }
        cur = next;
        cur_vals = next_vals;
        level = next_level;
    }
    let order = cur.order;
    let mut function = SampledFunction::analytic(Arc::new(cur), domain, order)?;
    if let Some(s) = support {
        function = function.with_support(s);
    }
    Ok(Convolution {
        function,
        orientation,
        level,
        quad_change: change,
    })
}

/// f∗g, laying nodes on g's support when g is compact and on f's otherwise.
pub fn convolve(
    f: &SampledFunction,
    g: &SampledFunction,
    quad: &QuadratureSpec,
) -> Result<SampledFunction> {
    let orientation = if g.support().is_some() {
        Orientation::NodesOnKernel
    } else {
        Orientation::NodesOnFunction
    };
    Ok(convolve_with(f, g, quad, orientation)?.function)
}

/// max_x sup_q |(f∗g)(x) − (g∗f)(x)| where the two sides place their nodes on
/// different factors, or use the alternate rule when only one is compact.
pub fn commutativity_check(
    f: &SampledFunction,
    g: &SampledFunction,
    quad: &QuadratureSpec,
    points: &PointSet,
) -> Result<f64> {
    let (a, b) = match (f.support().is_some(), g.support().is_some()) {
        (true, true) => (
            convolve_with(f, g, quad, Orientation::NodesOnKernel)?,
            convolve_with(f, g, quad, Orientation::NodesOnFunction)?,
        ),
        (false, true) => (
            convolve_with(f, g, quad, Orientation::NodesOnKernel)?,
            convolve_with(
                f,
                g,
                &quad.with_rule(quad.rule.other()),
                Orientation::NodesOnKernel,
            )?,
        ),
        (true, false) => (
            convolve_with(f, g, quad, Orientation::NodesOnFunction)?,
            convolve_with(
                f,
                g,
                &quad.with_rule(quad.rule.other()),
                Orientation::NodesOnFunction,
            )?,
        ),
        (false, false) => {
            return Err(Error::Precondition(
                "convolution needs a compactly supported factor".into(),
            ))
        }
    };
    let zero = MultiIndex::zero(f.dim());
    let m = f.value_dim();
    let worst = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let (mut u, mut v) = (vec![0.0; m], vec![0.0; m]);
            a.function.eval_into(&zero, points.get(i), &mut u);
            b.function.eval_into(&zero, points.get(i), &mut v);
            u.iter()
                .zip(&v)
                .fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()))
        })
        .collect::<Vec<_>>();
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// Pairwise sup-discrepancies between the three derivative routes of f∗ρ_n.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub beta: MultiIndex,
    /// finite difference of f∗ρ_n vs f∗∂^βρ_n
    pub fd_vs_kernel: f64,
    /// f∗∂^βρ_n vs (∂^β f)∗ρ_n
    pub kernel_vs_moved: f64,
    /// finite difference of f∗ρ_n vs (∂^β f)∗ρ_n
    pub fd_vs_moved: f64,
}

impl TransferReport {
    pub fn max(&self) -> f64 {
        self.fd_vs_kernel
            .max(self.kernel_vs_moved)
            .max(self.fd_vs_moved)
    }
}

/// Compares ∂^β(f∗ρ_n) by finite differences (step `h`), by differentiating
/// the kernel, and by convolving ∂^β f.
pub fn derivative_transfer_check(
    f: &SampledFunction,
    moll: &Mollifier,
    beta: &MultiIndex,
    points: &PointSet,
    h: f64,
) -> Result<TransferReport> {
    if beta.order() > f.order().min(moll.max_deriv) {
        return Err(Error::OrderExceeded {
            requested: beta.order(),
            available: f.order().min(moll.max_deriv),
        });
    }
    let rho = moll.as_function(f.domain().clone())?;
    let conv = convolve_with(f, &rho, &moll.quad, Orientation::NodesOnKernel)?.function;
    let inner = f.clone();
    let b = *beta;
    let moved_field = FnField {
        dim: f.dim(),
        value_dim: f.value_dim(),
        order: 0,
        f: move |_: &MultiIndex, x: &[f64], out: &mut [f64]| inner.eval_into(&b, x, out),
    };
    let mut moved_fn = SampledFunction::analytic(Arc::new(moved_field), f.domain().clone(), 0)?;
    if let Some(s) = f.support() {
        moved_fn = moved_fn.with_support(s.clone());
    }
    let moved = convolve_with(&moved_fn, &rho, &moll.quad, Orientation::NodesOnKernel)?.function;
    // The finite-difference oracle needs its stencil inside the domain.
    let wide = conv
        .clone()
        .with_domain(conv.domain().inflate(2.0 * h * beta.order() as f64));
    let zero = MultiIndex::zero(f.dim());
    let rows: Vec<Result<(f64, f64, f64)>> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let x = points.get(i);
            let fd = if beta.is_zero() {
                conv.evaluate(&zero, x)?
            } else {
                fd_derivative_oracle(&wide, beta, x, h)?
            };
            let k = conv.evaluate(beta, x)?;
            let mv = moved.evaluate(&zero, x)?;
            let d = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
            };
            Ok((d(&fd, &k), d(&k, &mv), d(&fd, &mv)))
        })
        .collect();
    let mut rep = TransferReport {
        beta: *beta,
        fd_vs_kernel: 0.0,
        kernel_vs_moved: 0.0,
        fd_vs_moved: 0.0,
    };
    for r in rows {
        let (a, b, c) = r?;
        rep.fd_vs_kernel = rep.fd_vs_kernel.max(a);
        rep.kernel_vs_moved = rep.kernel_vs_moved.max(b);
        rep.fd_vs_moved = rep.fd_vs_moved.max(c);
    }
    Ok(rep)
}

/// The compact support used for convolution: declared, else estimated.
fn compact_support(f: &SampledFunction) -> Result<SampledFunction> {
    if f.support().is_some() {
        return Ok(f.clone());
    }
    let s = crate::funcmodel::support_estimate(f, crate::funcmodel::SUPPORT_THRESHOLD)?;
    Ok(f.clone().with_support(s))
}

/// f∗ρ_n on f's grid extended by 1/n, of order [`MAX_MOLLIFIER_ORDER`].
pub fn regularize(f: &SampledFunction, n: u32, quad: &QuadratureSpec) -> Result<SampledFunction> {
    let moll = Mollifier::build(f.dim(), n, quad, MAX_MOLLIFIER_ORDER)?;
    regularize_with(f, &moll)
}

pub fn regularize_with(f: &SampledFunction, moll: &Mollifier) -> Result<SampledFunction> {
    let f = match compact_support(f) {
        Ok(f) => f,
        Err(Error::EmptyRegion(_)) => {
            let out =
                SampledFunction::zero(f.value_dim(), f.domain().clone()).with_order(moll.max_deriv);
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let rho = moll.as_function(f.domain().clone())?;
    Ok(convolve_with(&f, &rho, &moll.quad, Orientation::NodesOnKernel)?.function)
}

/// Outcome of the regularization-order search.
#[derive(Clone, Debug, Serialize)]
pub struct RegularizationOrder {
    pub n: u32,
    pub value: SeminormValue,
    /// (n, |f − f∗ρ_n|) for every scale tried.
    pub history: Vec<(u32, f64)>,
}

/// |f − f∗ρ_n|_{j,l,α} on f's grid.
pub fn regularization_error(
    f: &SampledFunction,
    moll: &Mollifier,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
) -> Result<SeminormValue> {
    let conv = regularize_with(f, moll)?.with_domain(f.domain().clone());
    let diff = f.sub(&conv);
    weighted_seminorm(&diff, fam, idx, alpha)
}

/// Smallest n in 2, 4, …, n_max with |f − f∗ρ_n|_{j,l,α} < eps.
pub fn find_regularization_order(
    f: &SampledFunction,
    fam: &WeightFamily,
    idx: WeightIndex,
    alpha: &SeminormIndex,
    eps: f64,
    n_max: u32,
    quad: &QuadratureSpec,
) -> Result<RegularizationOrder> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    if idx.l > f.order() {
        return Err(Error::OrderExceeded {
            requested: idx.l,
            available: f.order(),
        });
    }
    let mut history = Vec::new();
    let mut n = 2u32;
    let mut best = f64::INFINITY;
    while n <= n_max {
        let moll = Mollifier::build(f.dim(), n, quad, idx.l.clamp(1, MAX_MOLLIFIER_ORDER))?;
        let v = regularization_error(f, &moll, fam, idx, alpha)?;
        history.push((n, v.value));
        best = best.min(v.value);
        if v.value < eps {
            return Ok(RegularizationOrder {
                n,
                value: v,
                history,
            });
        }
        n *= 2;
    }
    Err(Error::ConvergenceFailure {
        achieved: best,
        target: eps,
        n_max: n_max as usize,
    })
}

/// Factors φ_i∗ρ_n of an underlying factor source.
pub struct ConvolvedFactors {
    inner: Arc<dyn FactorSource>,
    moll: Mollifier,
    nodes: Vec<f64>,
    betas: Vec<MultiIndex>,
    per_beta: Vec<Vec<f64>>,
}

impl ConvolvedFactors {
    /// Tabulates the kernel at the quadrature level `level`.
    pub fn new(inner: Arc<dyn FactorSource>, moll: Mollifier, level: usize) -> Self {
        let d = moll.dim;
        let betas = MultiIndex::up_to_order(d, moll.max_deriv);
        let (all, weights) = moll.quad.tensor(level, &moll.support_box());
        let mut nodes = Vec::new();
        let mut per_beta = vec![Vec::new(); betas.len()];
        for (k, w) in weights.iter().enumerate() {
            let y = &all[k * d..(k + 1) * d];
            let vals: Vec<f64> = betas.iter().map(|b| moll.deriv(b, y)).collect();
            if vals.iter().all(|v| *v == 0.0) {
                continue;
            }
            nodes.extend_from_slice(y);
            for (t, v) in per_beta.iter_mut().zip(vals) {
                t.push(w * v);
            }
        }
        Self {
            inner,
            moll,
            nodes,
            betas,
            per_beta,
        }
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.moll
    }
}

impl FactorSource for ConvolvedFactors {
    fn dim(&self) -> usize {
        self.moll.dim
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn order(&self) -> usize {
        self.moll.max_deriv
    }
    fn active(&self, beta: &MultiIndex, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let d = self.moll.dim;
        let s = self
            .betas
            .iter()
            .position(|b| b == beta)
            .unwrap_or_else(|| panic!("derivative {beta} beyond factor order"));
        let zero = MultiIndex::zero(d);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut tmp = Vec::new();
        let mut z = vec![0.0; d];
        for (k, y) in self.nodes.chunks(d).enumerate() {
            for i in 0..d {
                z[i] = x[i] - y[i];
            }
            self.inner.active(&zero, &z, &mut tmp);
            let t = self.per_beta[s][k];
            for (i, v) in &tmp {
                *acc.entry(*i).or_insert(0.0) += t * v;
            }
        }
        out.extend(acc.into_iter().filter(|e| e.1 != 0.0));
    }
    fn support(&self, i: usize) -> Option<AxisBox> {
        self.inner.support(i).map(|b| b.inflate(self.moll.radius()))
    }
}
