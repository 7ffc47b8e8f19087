use std::fmt;
use std::sync::Arc;

use super::field::Field;
use super::function::{central_difference, DerivativeProvider, SampledFunction};
use super::multiindex::MultiIndex;
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Region};

/// A list of scalar factors φ_0, …, φ_{n−1} evaluated together.
///
/// `active` reports every factor that may be nonzero at `x` as `(index, value)`
/// pairs in ascending index order; omitted factors vanish at `x`.
pub trait FactorSource: Send + Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Highest derivative order evaluated exactly.
    fn order(&self) -> usize;
    fn active(&self, beta: &MultiIndex, x: &[f64], out: &mut Vec<(usize, f64)>);
    /// Box containing the support of factor `i`, if known.
    fn support(&self, i: usize) -> Option<AxisBox>;
}

/// Uniform bucket grid over factor support boxes.
#[derive(Clone, Debug)]
pub struct SupportIndex {
    lo: Vec<f64>,
    cell: Vec<f64>,
    counts: Vec<usize>,
    cells: Vec<Vec<u32>>,
    unbounded: Vec<u32>,
}

impl SupportIndex {
    pub fn build(dim: usize, supports: &[Option<AxisBox>]) -> Self {
        let bounded: Vec<&AxisBox> = supports.iter().flatten().collect();
        let unbounded: Vec<u32> = supports
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i as u32)
            .collect();
        if bounded.is_empty() {
            return Self {
                lo: vec![0.0; dim],
                cell: vec![1.0; dim],
                counts: vec![0; dim],
                cells: Vec::new(),
                unbounded,
            };
        }
        let mut lo = bounded[0].lo.clone();
        let mut hi = bounded[0].hi.clone();
        for b in &bounded {
            for k in 0..dim {
                lo[k] = lo[k].min(b.lo[k]);
                hi[k] = hi[k].max(b.hi[k]);
            }
        }
        let budget = (4096f64).powf(1.0 / dim as f64).max(2.0);
        let mut cell = vec![0.0; dim];
        let mut counts = vec![0; dim];
        for k in 0..dim {
            let mut ext: Vec<f64> = bounded.iter().map(|b| b.extent(k)).collect();
            ext.sort_by(|a, b| a.total_cmp(b));
            let median = ext[ext.len() / 2];
            let span = (hi[k] - lo[k]).max(f64::MIN_POSITIVE);
            let c = median.max(span / budget.powi(2)).max(span * 1e-9);
            counts[k] = ((span / c).ceil() as usize).max(1);
            cell[k] = span / counts[k] as f64;
        }
        let total: usize = counts.iter().product();
        let mut cells = vec![Vec::new(); total];
        for (i, s) in supports.iter().enumerate() {
            let Some(b) = s else { continue };
            let range: Vec<(usize, usize)> = (0..dim)
                .map(|k| {
                    let a = ((b.lo[k] - lo[k]) / cell[k]).floor().max(0.0) as usize;
                    let z = ((b.hi[k] - lo[k]) / cell[k]).floor().max(0.0) as usize;
                    (a.min(counts[k] - 1), z.min(counts[k] - 1))
                })
                .collect();
            let mut idx: Vec<usize> = range.iter().map(|r| r.0).collect();
            'outer: loop {
                let flat = idx.iter().zip(&counts).fold(0, |acc, (&i, &n)| acc * n + i);
                cells[flat].push(i as u32);
                let mut k = dim;
                loop {
                    if k == 0 {
                        break 'outer;
                    }
                    k -= 1;
                    idx[k] += 1;
                    if idx[k] <= range[k].1 {
                        break;
                    }
                    idx[k] = range[k].0;
                }
            }
        }
        Self {
            lo,
            cell,
            counts,
            cells,
            unbounded,
        }
    }

    /// Candidate factor indices at `x`, ascending.
    pub fn candidates(&self, x: &[f64], out: &mut Vec<u32>) {
        out.clear();
        out.extend_from_slice(&self.unbounded);
        if !self.cells.is_empty() {
            let mut flat = 0usize;
            let mut inside = true;
            for k in 0..x.len() {
                let t = (x[k] - self.lo[k]) / self.cell[k];
                // small slack so boundary points reach the adjacent cell's entries
                if t < -1e-9 || t > self.counts[k] as f64 + 1e-9 {
                    inside = false;
                    break;
                }
                let i = (t.floor().max(0.0) as usize).min(self.counts[k] - 1);
                flat = flat * self.counts[k] + i;
            }
            if inside {
                out.extend_from_slice(&self.cells[flat]);
            }
        }
        if !self.unbounded.is_empty() {
            out.sort_unstable();
            out.dedup();
        }
    }
}

/// Factors given as independent scalar functions.
pub struct ExplicitFactors {
    dim: usize,
    factors: Vec<SampledFunction>,
    boxes: Vec<Option<AxisBox>>,
    index: SupportIndex,
    order: usize,
}

impl ExplicitFactors {
    pub fn new(dim: usize, factors: Vec<SampledFunction>) -> Self {
        let boxes: Vec<Option<AxisBox>> = factors
            .iter()
            .map(|f| f.support().map(|s| s.bounding_box()))
            .collect();
        let index = SupportIndex::build(dim, &boxes);
        let order = factors
            .iter()
            .map(|f| f.order())
            .min()
            .unwrap_or(usize::MAX);
        Self {
            dim,
            factors,
            boxes,
            index,
            order,
        }
    }
}

impl FactorSource for ExplicitFactors {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        self.factors.len()
    }
    fn order(&self) -> usize {
        self.order
    }
    fn active(&self, beta: &MultiIndex, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let mut cand = Vec::new();
        self.index.candidates(x, &mut cand);
        let mut v = [0.0];
        for &i in &cand {
            let i = i as usize;
            if let Some(b) = &self.boxes[i] {
                if !b.contains(x) {
                    continue;
                }
            }
            self.factors[i].eval_into(beta, x, &mut v);
            if v[0] != 0.0 {
                out.push((i, v[0]));
            }
        }
    }
    fn support(&self, i: usize) -> Option<AxisBox> {
        self.boxes[i].clone()
    }
}

struct NoFactors {
    dim: usize,
}

impl FactorSource for NoFactors {
    fn dim(&self) -> usize {
        self.dim
    }
    fn len(&self) -> usize {
        0
    }
    fn order(&self) -> usize {
        usize::MAX
    }
    fn active(&self, _beta: &MultiIndex, _x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
    }
    fn support(&self, _i: usize) -> Option<AxisBox> {
        None
    }
}

/// Σ_i φ_i ⊗ e_i with scalar factors φ_i and vectors e_i ∈ ℝ^m.
#[derive(Clone)]
pub struct FiniteRankFunction {
    source: Arc<dyn FactorSource>,
    vectors: Arc<Vec<Vec<f64>>>,
    value_dim: usize,
    domain: Region,
}

impl fmt::Debug for FiniteRankFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteRankFunction")
            .field("terms", &self.len())
            .field("value_dim", &self.value_dim)
            .finish()
    }
}

impl FiniteRankFunction {
    pub fn new(
        source: Arc<dyn FactorSource>,
        vectors: Vec<Vec<f64>>,
        value_dim: usize,
        domain: Region,
    ) -> Result<Self> {
        if source.len() != vectors.len() {
            return Err(Error::Precondition(format!(
                "{} factors but {} vectors",
                source.len(),
                vectors.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != value_dim) {
            return Err(Error::DimensionMismatch {
                expected: value_dim,
                got: v.len(),
            });
        }
        if source.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: source.dim(),
            });
        }
        Ok(Self {
            source,
            vectors: Arc::new(vectors),
            value_dim,
            domain,
        })
    }

    /// From explicit (φ_i, e_i) pairs.
    pub fn from_terms(
        terms: Vec<(SampledFunction, Vec<f64>)>,
        value_dim: usize,
        domain: Region,
    ) -> Result<Self> {
        if let Some((f, _)) = terms.iter().find(|(f, _)| f.value_dim() != 1) {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: f.value_dim(),
            });
        }
        let (factors, vectors): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let source = Arc::new(ExplicitFactors::new(domain.dim(), factors));
        Self::new(source, vectors, value_dim, domain)
    }

    pub fn zero(value_dim: usize, domain: Region) -> Self {
        Self {
            source: Arc::new(NoFactors { dim: domain.dim() }),
            vectors: Arc::new(Vec::new()),
            value_dim,
            domain,
        }
    }

    /// Number of terms.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Rank bound: the number of terms with a nonzero vector.
    pub fn rank(&self) -> usize {
        self.vectors
            .iter()
            .filter(|v| v.iter().any(|c| *c != 0.0))
            .count()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn domain(&self) -> &Region {
        &self.domain
    }

    pub fn source(&self) -> &Arc<dyn FactorSource> {
        &self.source
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn order(&self) -> usize {
        self.source.order()
    }

    /// Same factors, different vectors.
    pub fn with_vectors(&self, vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            self.source.clone(),
            vectors,
            self.value_dim,
            self.domain.clone(),
        )
    }

    /// Same vectors over a different factor list (e.g. convolved factors).
    pub fn with_source(&self, source: Arc<dyn FactorSource>, domain: Region) -> Result<Self> {
        Self::new(source, self.vectors.to_vec(), self.value_dim, domain)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|v| v.iter().map(|c| lambda * c).collect())
            .collect();
        self.with_vectors(vectors).expect("shape unchanged")
    }

    /// Σ_i ∂^β φ_i(x)·e_i without domain checks.
    pub fn eval_into(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        if beta.order() <= self.source.order() {
            let mut act = Vec::with_capacity(16);
            self.source.active(beta, x, &mut act);
            out.fill(0.0);
            for (i, v) in act {
                for (o, e) in out.iter_mut().zip(&self.vectors[i]) {
                    *o += v * e;
                }
            }
            return;
        }
        let h = 0.5
            * self
                .domain
                .step()
                .into_iter()
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min);
        let zero = MultiIndex::zero(self.dim());
        central_difference(|p, o| self.eval_into(&zero, p, o), beta, x, h, out);
    }

    pub fn evaluate(&self, beta: &MultiIndex, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        let mut out = vec![0.0; self.value_dim];
        self.eval_into(beta, x, &mut out);
        Ok(out)
    }

    /// Factor `i` as a scalar function.
    pub fn factor(&self, i: usize) -> SampledFunction {
        let field = Arc::new(FactorField {
            source: self.source.clone(),
            index: i,
        });
        let f = SampledFunction::finite_difference(field, self.domain.clone(), usize::MAX, None)
            .expect("dimensions agree");
        match self.source.support(i) {
            Some(b) => {
                let step = self.domain.step();
                f.with_support(Region::with_step(vec![b], &step).expect("valid box"))
            }
            None => f,
        }
    }

    pub fn terms(&self) -> Vec<(SampledFunction, Vec<f64>)> {
        (0..self.len())
            .map(|i| (self.factor(i), self.vectors[i].clone()))
            .collect()
    }

    /// The sum as an ordinary vector-valued function (order `order`).
    pub fn as_sampled(&self, order: usize) -> SampledFunction {
        let field: Arc<dyn Field> = Arc::new(self.clone());
        SampledFunction::finite_difference(field, self.domain.clone(), order, None)
            .expect("dimensions agree")
    }
}

impl Field for FiniteRankFunction {
    fn dim(&self) -> usize {
        self.domain.dim()
    }
    fn value_dim(&self) -> usize {
        self.value_dim
    }
    fn order(&self) -> usize {
        self.source.order()
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        self.eval_into(beta, x, out)
    }
}

struct FactorField {
    source: Arc<dyn FactorSource>,
    index: usize,
}

impl Field for FactorField {
    fn dim(&self) -> usize {
        self.source.dim()
    }
    fn value_dim(&self) -> usize {
        1
    }
    fn order(&self) -> usize {
        self.source.order()
    }
    fn eval(&self, beta: &MultiIndex, x: &[f64], out: &mut [f64]) {
        let mut act = Vec::new();
        self.source.active(beta, x, &mut act);
        out[0] = match act.binary_search_by_key(&self.index, |e| e.0) {
            Ok(p) => act[p].1,
            Err(_) => 0.0,
        };
    }
}

impl DerivativeProvider {
    pub fn is_analytic(&self) -> bool {
        matches!(self, DerivativeProvider::Analytic)
    }
}
