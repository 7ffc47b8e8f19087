//! Closed-form derivatives of the unnormalized bump b(x) = exp(-1/(1-|x|²)).
//!
//! With E(u) = exp(-1/(1-u)) and s = 1/(1-u) every derivative of E is
//! E^{(k)}(u) = P_k(s)·e^{-s} where P_0 = 1 and P_{k+1} = s²(P_k' - P_k).
//! Spatial derivatives follow from u = |x|²:
//! ∂_m[E^{(k)}(u)·Q(x)] = E^{(k+1)}(u)·2x_m·Q(x) + E^{(k)}(u)·∂_m Q(x),
//! so ∂^β b(x) = Σ_k E^{(k)}(|x|²)·Q_{β,k}(x) with polynomial Q_{β,k}.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::funcmodel::{MultiIndex, MAX_DIM};

/// Highest derivative order tabulated.
pub const MAX_ORDER: usize = 8;

/// Points with |x|² at or beyond this value evaluate to exactly zero.
pub const FLAT_CUTOFF: f64 = 1.0 - 1e-8;

type Monomial = [u16; MAX_DIM];

#[derive(Clone, Debug, Default)]
struct Poly {
    terms: Vec<(Monomial, f64)>,
}

impl Poly {
    fn one() -> Self {
        Poly {
            terms: vec![([0; MAX_DIM], 1.0)],
        }
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        if let Some(t) = self.terms.iter_mut().find(|t| t.0 == m) {
            t.1 += c;
        } else {
            self.terms.push((m, c));
        }
    }

    fn times_coord(&self, axis: usize, factor: f64) -> Poly {
        let mut out = Poly::default();
        for (m, c) in &self.terms {
            let mut m2 = *m;
            m2[axis] += 1;
            out.add_term(m2, c * factor);
        }
        out
    }

    fn diff(&self, axis: usize) -> Poly {
        let mut out = Poly::default();
        for (m, c) in &self.terms {
            if m[axis] > 0 {
                let mut m2 = *m;
                m2[axis] -= 1;
                out.add_term(m2, c * m[axis] as f64);
            }
        }
        out
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                let mut v = *c;
                for (k, &xk) in x.iter().enumerate() {
                    if m[k] > 0 {
                        v *= xk.powi(m[k] as i32);
                    }
                }
                v
            })
            .sum()
    }
}

/// Coefficients of P_k(s), lowest degree first.
fn s_polys() -> &'static Vec<Vec<f64>> {
    static P: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    P.get_or_init(|| {
        let mut out = vec![vec![1.0]];
        for k in 0..=MAX_ORDER {
            let p = &out[k];
            // s²·(P' - P)
            let mut next = vec![0.0; p.len() + 2];
            for (i, &c) in p.iter().enumerate() {
                if i > 0 {
                    next[i - 1 + 2] += c * i as f64;
                }
                next[i + 2] -= c;
            }
            out.push(next);
        }
        out
    })
}

/// E^{(k)}(u) for u = |x|²; exactly zero at or beyond the flat cut-off.
pub fn e_deriv(k: usize, u: f64) -> f64 {
    if u >= FLAT_CUTOFF {
        return 0.0;
    }
    let s = 1.0 / (1.0 - u);
    let p = &s_polys()[k];
    let mut acc = 0.0;
    for &c in p.iter().rev() {
        acc = acc * s + c;
    }
    acc * (-s).exp()
}

/// Tabulated ∂^β b for every |β| ≤ MAX_ORDER in a fixed dimension.
pub struct BumpTable {
    dim: usize,
    entries: HashMap<MultiIndex, Vec<(usize, Poly)>>,
}

impl BumpTable {
    fn build(dim: usize) -> Self {
        let mut entries: HashMap<MultiIndex, Vec<(usize, Poly)>> = HashMap::new();
        entries.insert(MultiIndex::zero(dim), vec![(0, Poly::one())]);
        for beta in MultiIndex::up_to_order(dim, MAX_ORDER) {
            if beta.is_zero() {
                continue;
            }
            let axis = (0..dim).find(|&k| beta.get(k) > 0).expect("nonzero index");
            let parent = beta
                .checked_sub(&MultiIndex::unit(dim, axis))
                .expect("parent");
            let mut acc: Vec<(usize, Poly)> = Vec::new();
            let push = |k: usize, p: Poly, acc: &mut Vec<(usize, Poly)>| {
                if p.terms.is_empty() {
                    return;
                }
                if let Some(e) = acc.iter_mut().find(|e| e.0 == k) {
                    for (m, c) in p.terms {
                        e.1.add_term(m, c);
                    }
                } else {
                    acc.push((k, p));
                }
            };
            for (k, q) in &entries[&parent] {
                push(k + 1, q.times_coord(axis, 2.0), &mut acc);
                push(*k, q.diff(axis), &mut acc);
            }
            for e in acc.iter_mut() {
                e.1.terms.retain(|t| t.1 != 0.0);
            }
            acc.retain(|e| !e.1.terms.is_empty());
            acc.sort_by_key(|e| e.0);
            entries.insert(beta, acc);
        }
        BumpTable { dim, entries }
    }

    /// Cached table for dimension `dim`.
    pub fn get(dim: usize) -> &'static BumpTable {
        static TABLES: [OnceLock<BumpTable>; MAX_DIM] = [
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
            OnceLock::new(),
        ];
        TABLES[dim - 1].get_or_init(|| BumpTable::build(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// ∂^β b(x); zero for |x|² ≥ FLAT_CUTOFF and for |β| > MAX_ORDER is a panic.
    pub fn eval(&self, beta: &MultiIndex, x: &[f64]) -> f64 {
        let u: f64 = x.iter().map(|v| v * v).sum();
        if u >= FLAT_CUTOFF {
            return 0.0;
        }
        let terms = self
            .entries
            .get(beta)
            .unwrap_or_else(|| panic!("bump derivative {beta} beyond tabulated order"));
        terms.iter().map(|(k, q)| e_deriv(*k, u) * q.eval(x)).sum()
    }
}

/// n-th derivative of t ↦ exp(-1/(1-t²)), zero for |t| ≥ 1.
pub fn bump1d(n: usize, t: f64) -> f64 {
    BumpTable::get(1).eval(&MultiIndex::new(&[n]), &[t])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn e_derivatives_chain() {
        for k in 0..5 {
            for &u in &[-0.5, 0.0, 0.3, 0.7] {
                let num = fd(|v| e_deriv(k, v), u, 1e-6);
                let ana = e_deriv(k + 1, u);
                assert!((num - ana).abs() < 1e-5 * (1.0 + ana.abs()), "k={k} u={u}");
            }
        }
    }

    #[test]
    fn one_dim_derivatives_match_fd() {
        for n in 0..6 {
            for &t in &[-0.8, -0.3, 0.0, 0.45, 0.9] {
                let num = fd(|v| bump1d(n, v), t, 1e-6);
                let ana = bump1d(n + 1, t);
                assert!((num - ana).abs() < 1e-4 * (1.0 + ana.abs()), "n={n} t={t}");
            }
        }
    }

    #[test]
    fn two_dim_mixed_derivative() {
        let tab = BumpTable::get(2);
        let x = [0.2, -0.4];
        let h = 1e-5;
        let b10 = |p: [f64; 2]| tab.eval(&MultiIndex::new(&[1, 0]), &p);
        let num = (b10([x[0], x[1] + h]) - b10([x[0], x[1] - h])) / (2.0 * h);
        let ana = tab.eval(&MultiIndex::new(&[1, 1]), &x);
        assert!((num - ana).abs() < 1e-6);
    }

    #[test]
    fn flat_outside_unit_ball() {
        assert_eq!(bump1d(0, 1.0), 0.0);
        assert_eq!(bump1d(3, -1.2), 0.0);
        assert_eq!(
            BumpTable::get(2).eval(&MultiIndex::new(&[2, 1]), &[0.8, 0.6]),
            0.0
        );
        assert!((bump1d(0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
    }
}
