use std::sync::Arc;

use super::multiindex::{multiindex_binom, MultiIndex};
use crate::expr::{Expr, Program};

/// A vector-valued map ℝ^d → ℝ^m with exact derivatives up to `order`.
///
/// Implementations must be stateless: evaluation may happen concurrently.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn value_dim(&self) -> usize;
    /// Highest derivative order evaluated exactly by [`Field::eval`].
    fn order(&self) -> usize;
    /// Writes ∂^β F(x) into `out` (length `value_dim`); requires |β| ≤ order.
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]);
    /// Writes ∂^β F(x) for every β in `betas` into consecutive blocks of `out`.
    fn eval_many(&self, betas: &[MultiIndex], x: &[f64], out: &mut [f64]) {
        let m = self.value_dim();
        for (b, o) in betas.iter().zip(out.chunks_mut(m)) {
            self.eval(b, x, o);
        }
    }
}

/// Dense lookup of derivative slots for |β| ≤ order.
#[derive(Clone, Debug)]
pub(crate) struct BetaSlots {
    dim: usize,
    base: usize,
    slots: Vec<usize>,
    pub(crate) list: Vec<MultiIndex>,
}

impl BetaSlots {
    pub(crate) fn new(dim: usize, order: usize) -> Self {
        let base = order + 1;
        let list = MultiIndex::up_to_order(dim, order);
        let mut slots = vec![usize::MAX; base.pow(dim as u32)];
        for (i, b) in list.iter().enumerate() {
            slots[Self::key_of(dim, base, b)] = i;
        }
        Self {
            dim,
            base,
            slots,
            list,
        }
    }

    fn key_of(dim: usize, base: usize, b: &MultiIndex) -> usize {
        (0..dim).fold(0, |acc, k| acc * base + b.get(k))
    }

    pub(crate) fn slot(&self, b: &MultiIndex) -> usize {
        if (0..self.dim).any(|k| b.get(k) >= self.base) {
            return usize::MAX;
        }
        self.slots[Self::key_of(self.dim, self.base, b)]
    }
}

/// Coordinates given by symbolic expressions; derivatives are symbolic.
pub struct ExprField {
    dim: usize,
    order: usize,
    slots: BetaSlots,
    /// programs[slot][q]
    programs: Vec<Vec<Program>>,
}

impl ExprField {
    pub fn new(dim: usize, coords: &[Expr], order: usize) -> Self {
        let slots = BetaSlots::new(dim, order);
        let mut exprs: Vec<Vec<Expr>> = Vec::with_capacity(slots.list.len());
        for (i, beta) in slots.list.iter().enumerate() {
            if i == 0 {
                exprs.push(coords.to_vec());
                continue;
            }
            let axis = (0..dim).find(|&k| beta.get(k) > 0).expect("nonzero index");
            let parent = beta
                .checked_sub(&MultiIndex::unit(dim, axis))
                .expect("parent");
            let p = slots.slot(&parent);
            let next = exprs[p].iter().map(|e| e.diff(axis)).collect();
            exprs.push(next);
        }
        let programs = exprs
            .iter()
            .map(|v| v.iter().map(|e| e.compile()).collect())
            .collect();
        Self {
            dim,
            order,
            slots,
            programs,
        }
    }
}

impl Field for ExprField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_dim(&self) -> usize {
        self.programs[0].len()
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        let s = self.slots.slot(beta);
        assert!(
            s != usize::MAX,
            "derivative {beta} beyond order {}",
            self.order
        );
        for (o, p) in out.iter_mut().zip(&self.programs[s]) {
            *o = p.eval(x);
        }
    }
}

/// Constant vector; every derivative vanishes.
pub struct ConstField {
    pub dim: usize,
    pub value: Vec<f64>,
}

impl Field for ConstField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_dim(&self) -> usize {
        self.value.len()
    }
    fn order(&self) -> usize {
        usize::MAX
    }
    fn eval(&self, beta: &MultiIndex, _x: &[f64], out: &mut [f64]) {
        if beta.is_zero() {
            out.copy_from_slice(&self.value);
        } else {
            out.fill(0.0);
        }
    }
}

/// Closure-backed field, used for test fixtures and sampled data.
pub struct FnField<F> {
    pub dim: usize,
    pub value_dim: usize,
    pub order: usize,
    pub f: F,
}

impl<F> Field for FnField<F>
where
    F: Fn(&MultiIndex, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_dim(&self) -> usize {
        self.value_dim
    }
    fn order(&self) -> usize {
        self.order
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        (self.f)(beta, x, out)
    }
}

/// Pointwise product g·F of a scalar and a vector field via the Leibniz rule.
pub struct ProductField {
    pub g: Arc<dyn Field>,
    pub f: Arc<dyn Field>,
}

impl Field for ProductField {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn value_dim(&self) -> usize {
        self.f.value_dim()
    }
    fn order(&self) -> usize {
        self.g.order().min(self.f.order())
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        leibniz(
            |b, o| self.g.eval(b, x, o),
            |b, o| self.f.eval(b, x, o),
            beta,
            out,
        );
    }
}

/// Σ_{γ≤β} C(β,γ) ∂^{β−γ}g · ∂^γ f, with g scalar.
pub(crate) fn leibniz(
    mut g: impl FnMut(&MultiIndex, &mut [f64]),
    mut f: impl FnMut(&MultiIndex, &mut [f64]),
    beta: &MultiIndex,
    out: &mut [f64],
) {
    out.fill(0.0);
    let mut gv = [0.0];
    let mut fv = vec![0.0; out.len()];
    for gamma in beta.lower_set() {
        let rest = beta.checked_sub(&gamma).expect("gamma <= beta");
        g(&rest, &mut gv);
        if gv[0] == 0.0 {
            continue;
        }
        f(&gamma, &mut fv);
        let c = multiindex_binom(beta, &gamma).expect("gamma <= beta") as f64 * gv[0];
        for (o, v) in out.iter_mut().zip(&fv) {
            *o += c * v;
        }
    }
}

/// a·F + b·G.
pub struct LinearCombination {
    pub a: f64,
    pub f: Arc<dyn Field>,
    pub b: f64,
    pub g: Arc<dyn Field>,
}

impl Field for LinearCombination {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn value_dim(&self) -> usize {
        self.f.value_dim()
    }
    fn order(&self) -> usize {
        self.f.order().min(self.g.order())
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.f.eval(beta, x, out);
        self.g.eval(beta, x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o = self.a * *o + self.b * t;
        }
    }
    fn eval_many(&self, betas: &[MultiIndex], x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.f.eval_many(betas, x, out);
        self.g.eval_many(betas, x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o = self.a * *o + self.b * t;
        }
    }
}
