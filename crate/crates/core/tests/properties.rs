//! Property tests for the structural invariants of seminorms, mollifiers,
//! cut-offs, partitions of unity and the error ledger.

mod common;

use common::{line, scenario, schwartz_family};
use cvdense::cutoff::build_cutoff;
use cvdense::funcmodel::{binomial, scalar_expr, FunctionSpec};
use cvdense::mollify::{convolve, Mollifier, QuadratureSpec};
use cvdense::pipeline::approximate;
use cvdense::seminorms::{find_tail_compact, tail_seminorm, weighted_seminorm};
use cvdense::tensorapprox::{build_partition, oscillation_cover};
use cvdense::weights::WeightIndex;
use cvdense::{AxisBox, MultiIndex, Region, SampledFunction, SeminormIndex};
use proptest::prelude::*;

fn gaussian(a: f64, c: f64, dom: &Region) -> SampledFunction {
    scalar_expr(&format!("{a}*exp(-(x-({c}))^2)"), dom.clone(), 3).unwrap()
}

fn sup(f: &SampledFunction, l: usize) -> f64 {
    let fam = schwartz_family(f.domain().clone(), 2);
    weighted_seminorm(f, &fam, WeightIndex::new(1, l), &SeminormIndex::SupAll)
        .unwrap()
        .value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn multiindex_counts(d in 1usize..=3, k in 0usize..=4) {
        let all = MultiIndex::up_to_order(d, k);
        prop_assert_eq!(all.len() as u64, binomial(d + k, k));
        prop_assert!(all.windows(2).all(|w| w[0].order() <= w[1].order()));
        for b in &all {
            let lower = b.lower_set();
            let size: usize = b.components().iter().map(|c| c + 1).product();
            prop_assert_eq!(lower.len(), size);
            prop_assert!(lower.iter().all(|g| g.le(b)));
        }
    }

    #[test]
    fn seminorm_is_absolutely_homogeneous(
        a in -3.0f64..3.0, c in -1.0f64..1.0, lambda in -4.0f64..4.0, l in 0usize..=2,
    ) {
        let dom = line(-4.0, 4.0, 161);
        let f = gaussian(a, c, &dom);
        let scaled = f.combine(lambda, &f, 0.0);
        let (lhs, rhs) = (sup(&scaled, l), lambda.abs() * sup(&f, l));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn seminorm_triangle_inequality(
        a in -3.0f64..3.0, c in -1.0f64..1.0, b in -3.0f64..3.0, e in -1.0f64..1.0, l in 0usize..=2,
    ) {
        let dom = line(-4.0, 4.0, 161);
        let (f, g) = (gaussian(a, c, &dom), gaussian(b, e, &dom));
        let sum = f.combine(1.0, &g, 1.0);
        prop_assert!(sup(&sum, l) <= sup(&f, l) + sup(&g, l) + 1e-12);
    }

    #[test]
    fn seminorms_grow_with_derivative_order(a in -3.0f64..3.0, c in -1.0f64..1.0) {
        let dom = line(-4.0, 4.0, 161);
        let f = gaussian(a, c, &dom);
        prop_assert!(sup(&f, 0) <= sup(&f, 1) && sup(&f, 1) <= sup(&f, 2));
    }

    #[test]
    fn tail_never_exceeds_full_seminorm(a in -3.0f64..3.0, r in 0.1f64..3.0) {
        let dom = line(-4.0, 4.0, 161);
        let f = gaussian(a, 0.0, &dom);
        let fam = schwartz_family(dom.clone(), 2);
        let k = Region::with_step(vec![AxisBox::new(vec![-r], vec![r]).unwrap()], &dom.step()).unwrap();
        let idx = WeightIndex::new(1, 1);
        let tail = tail_seminorm(&f, &k, &fam, idx, &SeminormIndex::SupAll).unwrap().value;
        prop_assert!(tail <= sup(&f, 1));
    }

    #[test]
    fn mollifier_is_scaled_and_compact(n in 1u32..=16, t in -1.5f64..1.5, d in 1usize..=2) {
        let m = Mollifier::build(d, n, &QuadratureSpec::default(), 1).unwrap();
        let x: Vec<f64> = (0..d).map(|k| t / n as f64 * if k == 0 { 1.0 } else { 0.5 }).collect();
        let y: Vec<f64> = x.iter().map(|v| v * n as f64).collect();
        let want = (n as f64).powi(d as i32) * m.rho(&y);
        prop_assert!((m.value(&x) - want).abs() <= 1e-12 * (1.0 + want));
        prop_assert!(m.value(&x) >= 0.0);
        if cvdense::geometry::norm(&x) >= m.radius() {
            prop_assert_eq!(m.value(&x), 0.0);
        }
    }

    #[test]
    fn cutoff_is_one_on_k_and_zero_far_away(lo in -2.0f64..0.0, w in 0.1f64..2.0, delta in 0.2f64..1.0) {
        let dom = line(-6.0, 6.0, 241);
        let k = Region::with_step(vec![AxisBox::new(vec![lo], vec![lo + w]).unwrap()], &dom.step()).unwrap();
        let cut = build_cutoff(&k, delta, 2, &QuadratureSpec::default()).unwrap();
        let psi = cut.psi.clone().with_domain(dom.clone());
        let zero = MultiIndex::zero(1);
        for x in dom.grid_points().iter() {
            let v = psi.evaluate(&zero, x).unwrap()[0];
            prop_assert!((0.0..=1.0).contains(&v));
            let dist = k.distance(x);
            if dist == 0.0 {
                prop_assert_eq!(v, 1.0);
            }
            if dist > delta {
                prop_assert_eq!(v, 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn convolution_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, n in 2u32..=8) {
        let dom = line(-3.0, 3.0, 121);
        let supp = Region::with_step(vec![AxisBox::new(vec![-1.0], vec![1.0]).unwrap()], &dom.step()).unwrap();
        let f = scalar_expr("bump(x)", dom.clone(), 2).unwrap().with_support(supp.clone());
        let g = scalar_expr("x*bump(x)", dom.clone(), 2).unwrap().with_support(supp.clone());
        let quad = QuadratureSpec::default();
        let rho = Mollifier::build(1, n, &quad, 1).unwrap().as_function(dom.clone()).unwrap();
        let mix = f.combine(a, &g, b).with_support(supp);
        let lhs = convolve(&mix, &rho, &quad).unwrap();
        let (cf, cg) = (convolve(&f, &rho, &quad).unwrap(), convolve(&g, &rho, &quad).unwrap());
        let zero = MultiIndex::zero(1);
        for x in [-1.3, -0.5, 0.0, 0.4, 1.1] {
            let l = lhs.evaluate(&zero, &[x]).unwrap()[0];
            let r = a * cf.evaluate(&zero, &[x]).unwrap()[0] + b * cg.evaluate(&zero, &[x]).unwrap()[0];
            prop_assert!((l - r).abs() < 1e-10, "{} vs {}", l, r);
        }
    }

    #[test]
    fn partition_of_unity_sums_to_one(w in 0.3f64..2.0, eps in 0.1f64..0.5, s in 0.5f64..2.0) {
        let dom = line(-4.0, 4.0, 1601);
        let f = scalar_expr(&format!("sin({s}*x)"), dom.clone(), 1).unwrap();
        let fam = schwartz_family(dom.clone(), 1);
        let k = Region::with_step(vec![AxisBox::new(vec![-w], vec![w]).unwrap()], &dom.step()).unwrap();
        let cover = oscillation_cover(&f, &k, &fam, 1, &SeminormIndex::SupAll, eps).unwrap();
        let part = build_partition(&cover, &k, 0).unwrap();
        let phis = part.functions();
        let zero = MultiIndex::zero(1);
        for x in k.grid_points().iter() {
            let total: f64 = phis.iter().map(|p| p.evaluate(&zero, x).unwrap()[0]).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "sum {} at {:?}", total, x);
        }
    }

    #[test]
    fn tail_compacts_grow_as_eps_shrinks(e1 in 0.01f64..0.5, ratio in 0.1f64..0.9) {
        let scn = scenario("schwartz");
        let f = scn.build_function().unwrap();
        let fam = scn.family().unwrap();
        let idx = WeightIndex::new(1, 1);
        let k = |eps| find_tail_compact(&f, &fam, idx, &SeminormIndex::SupAll, eps, 0.5, &scn.domain).unwrap().k;
        let (big, small) = (k(e1 * ratio), k(e1));
        prop_assert!(big.contains_region(&small));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Ledger invariants on small Gaussian runs across tolerances.
    #[test]
    fn ledger_invariants_hold(amp in 0.2f64..2.0, eps in 0.1f64..0.6, l in 0usize..=1) {
        let mut scn = scenario("exhaustion");
        scn.function = FunctionSpec::Gaussian { amplitude: amp, width: 1.0, vector: vec![1.0, -0.5] };
        let f = scn.build_function().unwrap();
        let idx = WeightIndex::new(scn.run.j, l);
        let (result, led) = approximate(&f, &scn, idx, &SeminormIndex::SupAll, eps).unwrap();
        prop_assert!(led.total_measured <= led.stage_sum() + 1e-10);
        prop_assert!(led.stage3.measured.value <= led.stage3.chain_bound + led.stage3.chain_slack);
        if led.certified {
            prop_assert!(led.total_measured < eps);
            prop_assert!(led.missed_stages().is_empty());
        }
        prop_assert_eq!(result.rank(), led.rank);
        prop_assert!(result.order() >= scn.order);
    }
}
