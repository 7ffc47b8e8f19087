//! Frozen fixture numbers re-derived by independent oracles.

mod common;

use common::{
    adaptive_simpson, bump_mass, fd_sweep, line, pinned, regularization_oracle, schwartz_family,
};
use cvdense::cutoff::{apply_cutoff, build_cutoff};
use cvdense::funcmodel::scalar_expr;
use cvdense::mollify::{normalization, regularization_error, Mollifier, QuadratureSpec};
use cvdense::weights::WeightIndex;
use cvdense::{AxisBox, MultiIndex, Region, SampledFunction, SeminormIndex};

fn cut_gaussian() -> (SampledFunction, cvdense::weights::WeightFamily) {
    let dom = line(-6.0, 6.0, 1201);
    let fam = schwartz_family(dom.clone(), 2);
    let f = scalar_expr("exp(-x^2)", dom.clone(), 3).unwrap();
    let (ft, _) = apply_cutoff(
        &f,
        &fam,
        WeightIndex::new(1, 1),
        &SeminormIndex::SupAll,
        1e-3,
        0.5,
        &dom,
        &QuadratureSpec::default(),
    )
    .unwrap();
    (ft, fam)
}

#[test]
fn simpson_oracle_is_sane() {
    let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
    assert!((v - 2.0).abs() < 1e-11);
    // ∫_{-1}^{1} e^{-1/(1-x²)} dx = 0.4439938161680794
    assert!((bump_mass(1) - 0.443_993_816_168_079_4).abs() < 1e-13);
}

#[test]
fn normalization_constant_matches_adaptive_quadrature() {
    for rule in ["midpoint", "gauss-tensor"] {
        let quad: QuadratureSpec = toml::from_str(&format!("rule = \"{rule}\"")).unwrap();
        for d in 1..=2 {
            let c = normalization(d, &quad).unwrap();
            assert!((c * bump_mass(d) - 1.0).abs() < 1e-9, "{rule} d={d}: {c}");
        }
    }
}

#[test]
fn regularization_column_regenerates() {
    let (ft, fam) = cut_gaussian();
    let quad = QuadratureSpec::default();
    for (n, frozen) in pinned::REGULARIZATION_L1 {
        let m = Mollifier::build(1, n, &quad, 1).unwrap();
        let got = regularization_error(
            &ft,
            &m,
            &fam,
            WeightIndex::new(1, 1),
            &SeminormIndex::SupAll,
        )
        .unwrap()
        .value;
        assert!(
            (got - frozen).abs() <= 1e-6 * frozen,
            "n={n}: {got:e} vs {frozen:e}"
        );
    }
}

#[test]
fn regularization_column_against_simpson_on_a_tenfold_grid() {
    let (ft, _) = cut_gaussian();
    let fine: Vec<f64> = (0..=8000).map(|i| -4.0 + i as f64 * 1e-3).collect();
    for (n, frozen) in pinned::REGULARIZATION_L1 {
        let oracle = regularization_oracle(&ft, n, 1, fine.iter().copied());
        // quadrature slack 10·tol either way; the coarse grid may undershoot by O(h²)
        let slack = 10.0 * QuadratureSpec::default().tol;
        assert!(
            oracle >= frozen - slack && oracle <= frozen * (1.0 + 2e-3) + slack,
            "n={n}: oracle {oracle:e} frozen {frozen:e}"
        );
    }
}

#[test]
fn mollifier_derivatives_match_finite_difference_sweep() {
    let quad = QuadratureSpec::default();
    for n in [1, 3, 8] {
        let m = Mollifier::build(1, n, &quad, 2).unwrap();
        let r = m.radius();
        for t in [-0.8, -0.3, 0.1, 0.55, 0.9] {
            let x = t * r;
            let v = |y: f64| m.value(&[y]);
            for k in 1..=2 {
                let (est, spread) = fd_sweep(&v, x, k, 1e-3 * r);
                let exact = m.deriv(&MultiIndex::new(&[k]), &[x]);
                let scale = 1.0 + exact.abs();
                assert!(
                    (est - exact).abs() <= spread + 1e-6 * scale,
                    "n={n} x={x} k={k}: {est} vs {exact}"
                );
            }
        }
    }
}

#[test]
fn cutoff_derivatives_match_finite_difference_sweep() {
    let k = Region::new(
        vec![AxisBox::new(vec![-1.0], vec![1.0]).unwrap()],
        vec![201],
    )
    .unwrap();
    let cut = build_cutoff(&k, 0.5, 2, &QuadratureSpec::default()).unwrap();
    let psi = &cut.psi;
    for x in [1.05, 1.12, 1.2, 1.31, -1.18] {
        let v = |t: f64| psi.evaluate(&MultiIndex::zero(1), &[t]).unwrap()[0];
        for order in 1..=2 {
            let (est, spread) = fd_sweep(&v, x, order, 1e-3);
            let exact = psi.evaluate(&MultiIndex::new(&[order]), &[x]).unwrap()[0];
            assert!(
                (est - exact).abs() <= spread + 1e-5 * (1.0 + exact.abs()),
                "x={x} k={order}: {est} vs {exact}"
            );
        }
    }
}
