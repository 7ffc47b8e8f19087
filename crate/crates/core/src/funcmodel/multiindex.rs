use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest spatial dimension supported by the fixed-size multi-index.
pub const MAX_DIM: usize = 4;

/// Multi-index β = (β₁, …, β_d) for partial derivatives.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    comps: [u16; MAX_DIM],
    dim: u8,
}

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self {
            comps: [0; MAX_DIM],
            dim: dim as u8,
        }
    }

    pub fn new(comps: &[usize]) -> Self {
        let mut m = Self::zero(comps.len());
        for (k, &c) in comps.iter().enumerate() {
            m.comps[k] = c as u16;
        }
        m
    }

    /// Unit multi-index along `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut m = Self::zero(dim);
        m.comps[axis] = 1;
        m
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn get(&self, axis: usize) -> usize {
        self.comps[axis] as usize
    }

    pub fn components(&self) -> Vec<usize> {
        (0..self.dim()).map(|k| self.get(k)).collect()
    }

    /// |β| = Σ β_n.
    pub fn order(&self) -> usize {
        self.comps[..self.dim()].iter().map(|&c| c as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.order() == 0
    }

    /// Componentwise γ ≤ β.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.dim == other.dim && (0..self.dim()).all(|k| self.comps[k] <= other.comps[k])
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if !other.le(self) {
            return None;
        }
        let mut m = *self;
        for k in 0..self.dim() {
            m.comps[k] -= other.comps[k];
        }
        Some(m)
    }

    pub fn plus_unit(&self, axis: usize) -> MultiIndex {
        let mut m = *self;
        m.comps[axis] += 1;
        m
    }

    /// All γ ≤ β in lexicographic order.
    pub fn lower_set(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::zero(self.dim())];
        for k in 0..self.dim() {
            let mut next = Vec::with_capacity(out.len() * (self.get(k) + 1));
            for m in &out {
                for v in 0..=self.get(k) {
                    let mut g = *m;
                    g.comps[k] = v as u16;
                    next.push(g);
                }
            }
            out = next;
        }
        out.sort();
        out
    }

    /// All β with |β| ≤ `max_order`, by increasing order, then lexicographic.
    pub fn up_to_order(dim: usize, max_order: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for total in 0..=max_order {
            let mut level = Vec::new();
            collect_exact(dim, total, 0, &mut MultiIndex::zero(dim), &mut level);
            level.sort();
            level.reverse();
            out.extend(level);
        }
        out
    }
}

fn collect_exact(
    dim: usize,
    remaining: usize,
    axis: usize,
    cur: &mut MultiIndex,
    out: &mut Vec<MultiIndex>,
) {
    if axis == dim - 1 {
        cur.comps[axis] = remaining as u16;
        out.push(*cur);
        cur.comps[axis] = 0;
        return;
    }
    for v in 0..=remaining {
        cur.comps[axis] = v as u16;
        collect_exact(dim, remaining - v, axis + 1, cur, out);
    }
    cur.comps[axis] = 0;
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.components())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.components().iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.components().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(
                "multi-index dimension out of range",
            ));
        }
        Ok(MultiIndex::new(&v))
    }
}

/// Binomial coefficient C(n, k) in floating point (exact for the small orders used here).
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Multi-index binomial coefficient Π_n C(β_n, γ_n); requires γ ≤ β.
pub fn multiindex_binom(beta: &MultiIndex, gamma: &MultiIndex) -> Result<u64> {
    if !gamma.le(beta) {
        return Err(Error::Precondition(format!("{gamma} is not <= {beta}")));
    }
    Ok((0..beta.dim())
        .map(|k| binomial(beta.get(k), gamma.get(k)))
        .product())
}
