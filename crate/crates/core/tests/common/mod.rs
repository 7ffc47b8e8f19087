//! Scenario loading and independent numerical oracles shared by the
//! integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use cvdense::weights::{FamilyConfig, FamilyKind, WeightFamily};
use cvdense::{AxisBox, Region, Scenario};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn line(lo: f64, hi: f64, n: usize) -> Region {
    Region::new(vec![AxisBox::new(vec![lo], vec![hi]).unwrap()], vec![n]).unwrap()
}

pub fn schwartz_family(dom: Region, k_max: usize) -> WeightFamily {
    WeightFamily::from_config(
        &FamilyConfig {
            kind: FamilyKind::Schwartz,
            k_max,
            j_max: 1,
            sets: vec![],
            gauges: vec![],
            expressions: vec![],
        },
        dom,
    )
    .unwrap()
}

/// Adaptive Simpson quadrature on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 40)
}

/// Richardson-extrapolated central difference of order `k` (1 or 2) over the
/// steps h, h/2, h/4; returns the estimate and the spread between the two
/// finest extrapolants.
pub fn fd_sweep(f: &dyn Fn(f64) -> f64, x: f64, k: usize, h: f64) -> (f64, f64) {
    let d = |h: f64| match k {
        1 => (f(x + h) - f(x - h)) / (2.0 * h),
        2 => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
        _ => panic!("order {k} unsupported"),
    };
    let (a, b, c) = (d(h), d(h / 2.0), d(h / 4.0));
    let r1 = (4.0 * b - a) / 3.0;
    let r2 = (4.0 * c - b) / 3.0;
    (r2, (r2 - r1).abs())
}

/// Unnormalized bump mass ∫_{B₁} exp(−1/(1−|x|²)) dx in d = 1 or 2.
pub fn bump_mass(d: usize) -> f64 {
    let b = |r: f64| {
        if r.abs() < 1.0 {
            (-1.0 / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    };
    match d {
        1 => adaptive_simpson(&b, -1.0, 1.0, 1e-14),
        2 => 2.0 * std::f64::consts::PI * adaptive_simpson(&|r| b(r) * r, 0.0, 1.0, 1e-14),
        _ => panic!("dimension {d} unsupported"),
    }
}

/// Values frozen from oracle-checked runs.
pub mod pinned {
    /// (n, |f̃ − f̃∗ρ_n|_{1,1,sup}) for the cut-off Gaussian.
    pub const REGULARIZATION_L1: [(u32, f64); 5] = [
        (2, 8.369629253e-2),
        (4, 2.174427570e-2),
        (8, 5.489559125e-3),
        (16, 1.375803900e-3),
        (32, 3.442073548e-4),
    ];
    /// Schwartz plane-wave fixture at ε = 0.1, l = 1.
    pub const SCHWARTZ_RANK: usize = 37445;
    pub const SCHWARTZ_N2: u32 = 8;
    pub const SCHWARTZ_TOTAL: f64 = 1.9174314648192848e-2;
}

/// Independent |f̃ − f̃∗ρ_n|_{1,l} for a scalar function on the line: the
/// convolution by adaptive Simpson per point, scanned on `points`, with the
/// weight (1+x²)^{l/2}.
pub fn regularization_oracle(
    ft: &cvdense::SampledFunction,
    n: u32,
    l: usize,
    points: impl Iterator<Item = f64>,
) -> f64 {
    use cvdense::MultiIndex;
    let c = 1.0 / bump_mass(1);
    let nf = n as f64;
    let rho = move |y: f64| {
        let u = nf * y;
        if u.abs() < 1.0 {
            nf * c * (-1.0 / (1.0 - u * u)).exp()
        } else {
            0.0
        }
    };
    let r = 1.0 / nf;
    let mut worst = 0.0f64;
    for x in points {
        let w = (1.0 + x * x).powf(l as f64 / 2.0);
        for k in 0..=l {
            let beta = MultiIndex::new(&[k]);
            let at = |t: f64| ft.evaluate(&beta, &[t]).unwrap()[0];
            let conv = adaptive_simpson(&|y| at(x - y) * rho(y), -r, r, 1e-11);
            worst = worst.max((at(x) - conv).abs() * w);
        }
    }
    worst
}
