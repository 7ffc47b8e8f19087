use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::field::{leibniz, ConstField, Field, LinearCombination, ProductField};
use super::multiindex::MultiIndex;
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Region};

/// Default relative threshold for numerical supports.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// How derivatives beyond the field's exact order are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeProvider {
    /// All derivatives up to `order` come from the field itself.
    Analytic,
    /// Derivatives above the field's exact order use nested central differences
    /// with the given step (default: half the grid step).
    FiniteDifference { step: Option<f64> },
}

/// An ℝ^m-valued C^k function on a gridded domain.
#[derive(Clone)]
pub struct SampledFunction {
    field: Arc<dyn Field>,
    domain: Region,
    order: usize,
    provider: DerivativeProvider,
    support: Option<Region>,
}

impl fmt::Debug for SampledFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampledFunction")
            .field("dim", &self.dim())
            .field("value_dim", &self.value_dim())
            .field("order", &self.order)
            .field("provider", &self.provider)
            .field("support", &self.support.as_ref().map(|r| &r.boxes))
            .finish()
    }
}

impl SampledFunction {
    /// Function whose derivatives up to `order` all come from `field`.
    pub fn analytic(field: Arc<dyn Field>, domain: Region, order: usize) -> Result<Self> {
        if field.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: field.dim(),
            });
        }
        if order > field.order() {
            return Err(Error::OrderExceeded {
                requested: order,
                available: field.order(),
            });
        }
        Ok(Self {
            field,
            domain,
            order,
            provider: DerivativeProvider::Analytic,
            support: None,
        })
    }

    /// Function with finite-difference derivatives above the field's exact order.
    pub fn finite_difference(
        field: Arc<dyn Field>,
        domain: Region,
        order: usize,
        step: Option<f64>,
    ) -> Result<Self> {
        if field.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: field.dim(),
            });
        }
        Ok(Self {
            field,
            domain,
            order,
            provider: DerivativeProvider::FiniteDifference { step },
            support: None,
        })
    }

    pub fn constant(value: Vec<f64>, domain: Region) -> Self {
        let dim = domain.dim();
        Self {
            field: Arc::new(ConstField { dim, value }),
            domain,
            order: usize::MAX,
            provider: DerivativeProvider::Analytic,
            support: None,
        }
    }

    pub fn zero(value_dim: usize, domain: Region) -> Self {
        let mut f = Self::constant(vec![0.0; value_dim], domain);
        f.support = Some(f.domain.clone());
        f
    }

    /// Declare a compact support; evaluation is zero outside it.
    pub fn with_support(mut self, support: Region) -> Self {
        self.support = Some(support);
        self
    }

    pub fn without_support(mut self) -> Self {
        self.support = None;
        self
    }

    pub fn with_domain(mut self, domain: Region) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn value_dim(&self) -> usize {
        self.field.value_dim()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn support(&self) -> Option<&Region> {
        self.support.as_ref()
    }

    pub fn provider(&self) -> DerivativeProvider {
        self.provider
    }

    pub fn field(&self) -> &Arc<dyn Field> {
        &self.field
    }

    /// Shared handle usable as a [`Field`] (zero extension and providers included).
    pub fn as_field(&self) -> Arc<dyn Field> {
        Arc::new(self.clone())
    }

    fn fd_step(&self) -> f64 {
        match self.provider {
            DerivativeProvider::FiniteDifference { step: Some(h) } => h,
            _ => {
                let s = self.domain.step();
                0.5 * s
                    .iter()
                    .cloned()
                    .filter(|v| *v > 0.0)
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// ∂^β f(x) checked against order and domain.
    pub fn evaluate(&self, beta: &MultiIndex, x: &[f64]) -> Result<Vec<f64>> {
        self.check(beta, x)?;
        let mut out = vec![0.0; self.value_dim()];
        self.eval_into(beta, x, &mut out);
        Ok(out)
    }

    pub(crate) fn check(&self, beta: &MultiIndex, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || beta.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if beta.order() > self.order {
            return Err(Error::OrderExceeded {
                requested: beta.order(),
                available: self.order,
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// ∂^β f(x) without checks; zero outside a declared support.
    pub fn eval_into(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        if let Some(s) = &self.support {
            if !s.contains(x) {
                out.fill(0.0);
                return;
            }
        }
        let exact = self.field.order();
        if beta.order() <= exact {
            self.field.eval(beta, x, out);
            return;
        }
        // Differentiate the highest exact derivative numerically.
        let mut budget = exact;
        let split: Vec<usize> = (0..self.dim())
            .map(|k| {
                let take = beta.get(k).min(budget);
                budget -= take;
                take
            })
            .collect();
        let gamma = MultiIndex::new(&split);
        let rest = beta.checked_sub(&gamma).expect("gamma <= beta");
        let h = self.fd_step();
        let support = self.support.clone();
        let field = &self.field;
        central_difference(
            |p, o| {
                if support.as_ref().is_some_and(|s| !s.contains(p)) {
                    o.fill(0.0);
                } else {
                    field.eval(&gamma, p, o)
                }
            },
            &rest,
            x,
            h,
            out,
        );
    }

    /// ∂^β f(x) for every β in `betas`, in consecutive blocks of `out`.
    pub fn eval_many_into(&self, betas: &[MultiIndex], x: &[f64], out: &mut [f64]) {
        if self.support.as_ref().is_some_and(|s| !s.contains(x)) {
            out.fill(0.0);
            return;
        }
        let exact = self.field.order();
        if betas.iter().all(|b| b.order() <= exact) {
            self.field.eval_many(betas, x, out);
        } else {
            let m = self.value_dim();
            for (b, o) in betas.iter().zip(out.chunks_mut(m)) {
                self.eval_into(b, x, o);
            }
        }
    }

    /// Values of ∂^β f at every grid point of the domain, in grid order.
    pub fn sample(&self, beta: &MultiIndex) -> Vec<Vec<f64>> {
        let pts = self.domain.grid_points();
        let idx: Vec<usize> = (0..pts.len()).collect();
        idx.par_iter()
            .map(|&i| {
                let mut v = vec![0.0; self.value_dim()];
                self.eval_into(beta, pts.get(i), &mut v);
                v
            })
            .collect()
    }

    /// f − g on f's domain.
    pub fn sub(&self, other: &SampledFunction) -> SampledFunction {
        self.combine(1.0, other, -1.0)
    }

    /// a·f + b·g on f's domain.
    pub fn combine(&self, a: f64, other: &SampledFunction, b: f64) -> SampledFunction {
        let field = Arc::new(LinearCombination {
            a,
            f: self.as_field(),
            b,
            g: other.as_field(),
        });
        let support = match (&self.support, &other.support) {
            (Some(s), Some(t)) => {
                let mut boxes = s.boxes.clone();
                boxes.extend(t.boxes.iter().cloned());
                Region::with_step(boxes, &self.domain.step()).ok()
            }
            _ => None,
        };
        SampledFunction {
            field,
            domain: self.domain.clone(),
            order: self.order.min(other.order),
            provider: DerivativeProvider::Analytic,
            support,
        }
    }

    /// Pointwise product g·f with a scalar g; derivatives by the Leibniz rule.
    pub fn times_scalar(&self, g: &SampledFunction) -> Result<SampledFunction> {
        if g.value_dim() != 1 {
            return Err(Error::Precondition("multiplier must be scalar".into()));
        }
        let field = Arc::new(ProductField {
            g: g.as_field(),
            f: self.as_field(),
        });
        let support = match (&g.support, &self.support) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(s)) => Some(s.clone()),
            _ => None,
        };
        Ok(SampledFunction {
            field,
            domain: self.domain.clone(),
            order: self.order.min(g.order),
            provider: DerivativeProvider::Analytic,
            support,
        })
    }
}

impl Field for SampledFunction {
    fn dim(&self) -> usize {
        self.domain.dim()
    }
    fn value_dim(&self) -> usize {
        self.field.value_dim()
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        self.eval_into(beta, x, out)
    }
    fn eval_many(&self, betas: &[MultiIndex], x: &[f64], out: &mut [f64]) {
        self.eval_many_into(betas, x, out)
    }
}

/// Nested second-order central differences of order `beta`:
/// D_k g(x) = (g(x + h e_k) − g(x − h e_k)) / 2h applied β_k times per axis.
pub(crate) fn central_difference(
    mut g: impl FnMut(&[f64], &mut [f64]),
    beta: &MultiIndex,
    x: &[f64],
    h: f64,
    out: &mut [f64],
) {
    let d = x.len();
    out.fill(0.0);
    // Stencil offsets per axis: (shift in units of h, weight).
    let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
    for k in 0..d {
        let m = beta.get(k);
        let scale = (2.0 * h).powi(m as i32);
        axes.push(
            (0..=m)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let w = sign * super::multiindex::binomial(m, i) as f64 / scale;
                    ((m as f64) - 2.0 * i as f64, w)
                })
                .collect(),
        );
    }
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    let mut v = vec![0.0; out.len()];
    loop {
        let mut w = 1.0;
        for k in 0..d {
            let (s, wk) = axes[k][idx[k]];
            p[k] = x[k] + s * h;
            w *= wk;
        }
        g(&p, &mut v);
        for (o, val) in out.iter_mut().zip(&v) {
            *o += w * val;
        }
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Independent derivative oracle: nested central differences of the values.
pub fn fd_derivative_oracle(
    f: &SampledFunction,
    beta: &MultiIndex,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Precondition(
            "finite-difference step must be positive".into(),
        ));
    }
    let reach: Vec<f64> = (0..f.dim()).map(|k| beta.get(k) as f64 * h).collect();
    let stencil = AxisBox::centered(x, &reach);
    if !f.domain().boxes.iter().any(|b| b.contains_box(&stencil)) {
        return Err(Error::OutsideDomain { point: x.to_vec() });
    }
    let zero = MultiIndex::zero(f.dim());
    let mut out = vec![0.0; f.value_dim()];
    central_difference(|p, o| f.eval_into(&zero, p, o), beta, x, h, &mut out);
    Ok(out)
}

/// ∂^β(g·f)(x) = Σ_{γ≤β} C(β,γ) ∂^{β−γ}g(x) ∂^γ f(x) for scalar g.
pub fn product_rule_apply(
    g: &SampledFunction,
    f: &SampledFunction,
    beta: &MultiIndex,
    x: &[f64],
) -> Result<Vec<f64>> {
    if g.value_dim() != 1 {
        return Err(Error::Precondition("product rule needs a scalar g".into()));
    }
    g.check(beta, x)?;
    f.check(beta, x)?;
    let mut out = vec![0.0; f.value_dim()];
    leibniz(
        |b, o| g.eval_into(b, x, o),
        |b, o| f.eval_into(b, x, o),
        beta,
        &mut out,
    );
    Ok(out)
}

/// Numerical support: per domain box, the grid hull of the points where some
/// coordinate exceeds `threshold`·(global max), inflated by one grid step.
pub fn support_estimate(f: &SampledFunction, threshold: f64) -> Result<Region> {
    if !(threshold > 0.0) {
        return Err(Error::Precondition("threshold must be positive".into()));
    }
    let zero = MultiIndex::zero(f.dim());
    let pts = f.domain().grid_points();
    let vals = f.sample(&zero);
    let amp: Vec<f64> = vals
        .iter()
        .map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .collect();
    let global = amp.iter().cloned().fold(0.0f64, f64::max);
    if global == 0.0 {
        return Err(Error::EmptyRegion("function vanishes on the grid".into()));
    }
    let cut = threshold * global;
    let d = f.dim();
    let step = f.domain().step();
    let mut boxes = Vec::new();
    for b in &f.domain().boxes {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut any = false;
        for (i, p) in pts.iter().enumerate() {
            if amp[i] > cut && b.contains(p) {
                any = true;
                for k in 0..d {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        if any {
            let bx = AxisBox { lo, hi }.inflate_axes(&step);
            if !boxes.iter().any(|c: &AxisBox| c.contains_box(&bx)) {
                boxes.push(bx);
            }
        }
    }
    Region::with_step(boxes, &step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_plain;
    use crate::funcmodel::field::ExprField;

    fn line(a: f64, b: f64, n: usize) -> Region {
        Region::new(vec![AxisBox::new(vec![a], vec![b]).unwrap()], vec![n]).unwrap()
    }

    fn expr_fn(src: &str, order: usize) -> SampledFunction {
        let e = parse_plain(src, 1).unwrap();
        SampledFunction::analytic(
            Arc::new(ExprField::new(1, &[e], order)),
            line(-3.0, 3.0, 121),
            order,
        )
        .unwrap()
    }

    fn fd_fn(src: &str, order: usize) -> SampledFunction {
        let e = parse_plain(src, 1).unwrap();
        SampledFunction::finite_difference(
            Arc::new(ExprField::new(1, &[e], 0)),
            line(-3.0, 3.0, 121),
            order,
            Some(1e-3),
        )
        .unwrap()
    }

    fn b(v: usize) -> MultiIndex {
        MultiIndex::new(&[v])
    }

    #[test]
    fn constant_derivatives_vanish() {
        let f = SampledFunction::constant(vec![2.0, -1.0], line(0.0, 1.0, 5));
        assert_eq!(f.evaluate(&b(2), &[0.3]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(f.evaluate(&b(0), &[0.3]).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn gaussian_derivative() {
        let f = expr_fn("exp(-x^2)", 2);
        let x = 0.7;
        let v = f.evaluate(&b(1), &[x]).unwrap()[0];
        assert!((v - (-2.0 * x * (-x * x).exp())).abs() < 1e-14);
    }

    #[test]
    fn fd_provider_second_derivative() {
        let f = fd_fn("x^2", 2);
        let v = f.evaluate(&b(2), &[0.3]).unwrap()[0];
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn evaluate_errors() {
        let f = expr_fn("x", 1);
        assert!(matches!(
            f.evaluate(&b(2), &[0.0]),
            Err(Error::OrderExceeded { .. })
        ));
        assert!(matches!(
            f.evaluate(&b(0), &[5.0]),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn oracle_examples() {
        let cube = expr_fn("x^3", 0);
        let v = fd_derivative_oracle(&cube, &b(1), &[1.0], 1e-4).unwrap()[0];
        assert!((v - 3.0).abs() < 1e-7);
        let lin = expr_fn("3*x - 1", 0);
        let v = fd_derivative_oracle(&lin, &b(2), &[0.4], 1e-3).unwrap()[0];
        assert!(v.abs() < 1e-6);
        let s = expr_fn("sin(x)", 0);
        let v = fd_derivative_oracle(&s, &b(1), &[0.0], 1e-4).unwrap()[0];
        assert!((v - 1.0).abs() < 1e-8);
        assert!(fd_derivative_oracle(&s, &b(2), &[2.9999], 1e-3).is_err());
    }

    #[test]
    fn oracle_error_is_second_order() {
        // halving h divides the sin'(0) error by ~4
        let s = expr_fn("sin(x)", 0);
        let err = |h: f64| (fd_derivative_oracle(&s, &b(1), &[0.0], h).unwrap()[0] - 1.0).abs();
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn product_rule_examples() {
        let one = SampledFunction::constant(vec![1.0], line(-3.0, 3.0, 121));
        let f = expr_fn("exp(-x^2)", 2);
        let p = product_rule_apply(&one, &f, &b(2), &[0.5]).unwrap();
        assert_eq!(p, f.evaluate(&b(2), &[0.5]).unwrap());

        let g = expr_fn("x", 2);
        let p = product_rule_apply(&g, &f, &b(2), &[0.5]).unwrap()[0];
        let xf = expr_fn("x*exp(-x^2)", 0);
        let oracle = fd_derivative_oracle(&xf, &b(2), &[0.5], 1e-3).unwrap()[0];
        assert!(((p - oracle) / oracle).abs() < 1e-4);

        let p0 = product_rule_apply(&g, &f, &b(0), &[0.5]).unwrap()[0];
        assert_eq!(p0, 0.5 * (-0.25f64).exp());
    }

    #[test]
    fn support_of_bump() {
        let f = expr_fn("bump(x)", 0);
        let s = support_estimate(&f, SUPPORT_THRESHOLD).unwrap();
        let h = f.domain().step()[0];
        assert_eq!(s.boxes.len(), 1);
        assert!(s.boxes[0].lo[0] >= -1.0 - h - 1e-12 && s.boxes[0].hi[0] <= 1.0 + h + 1e-12);
        let z = SampledFunction::zero(1, line(0.0, 1.0, 11));
        assert!(matches!(
            support_estimate(&z, 1e-12),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn declared_support_zero_extension() {
        let f = expr_fn("x + 2", 1).with_support(line(-1.0, 1.0, 11));
        assert_eq!(f.evaluate(&b(0), &[2.0]).unwrap(), vec![0.0]);
        assert_eq!(f.evaluate(&b(0), &[0.5]).unwrap(), vec![2.5]);
    }
}
