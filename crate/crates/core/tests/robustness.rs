//! Audit-level properties on small fuzz corpora.

use fedro_core::audit::{cwtm_break_witness, empirical_kappa, empirical_kappa_many, error_ratio, fuzz_cloud, lower_bound_witness};
use fedro_core::bounds::{kappa_composite_chain, kappa_table};
use fedro_core::{aggregate, AggregatorKind, AggregatorSpec, RatioValue};

#[test]
fn witness_ratio_is_tight_for_all_rules() {
    for n in [4usize, 6, 10, 16] {
        for f_hat in 1..n.div_ceil(2) {
            for f in 0..=f_hat {
                let w = lower_bound_witness(n, f, f_hat).unwrap();
                let expected = f_hat as f64 / (n - f - f_hat) as f64;
                for spec in [
                    AggregatorSpec::cwtm(f_hat),
                    AggregatorSpec::cwmed(),
                    AggregatorSpec::krum(f_hat),
                    AggregatorSpec::krum_nnm(f_hat),
                ] {
                    let r = error_ratio(&spec, &w.points, &w.honest_set).unwrap().finite().unwrap();
                    assert!((r - expected).abs() <= 1e-12, "{} n={n} f={f}: {r}", spec.label());
                }
            }
        }
    }
}

#[test]
fn witness_embeds_in_higher_dimensions() {
    let w = lower_bound_witness(10, 2, 3).unwrap().embed(5);
    let r = error_ratio(&AggregatorSpec::krum_nnm(3), &w.points, &w.honest_set).unwrap();
    assert!((r.finite().unwrap() - 0.6).abs() <= 1e-12);
}

#[test]
fn trimmed_mean_breaks_under_underestimation() {
    for (n, f, f_hat) in [(5, 2, 1), (16, 4, 1), (11, 5, 2), (7, 3, 0)] {
        let w = cwtm_break_witness(n, f, f_hat).unwrap();
        let out = aggregate(&AggregatorSpec::cwtm(f_hat), &w.points).unwrap();
        assert_eq!(out[0], (f - f_hat) as f64 / (n - 2 * f_hat) as f64);
        assert_eq!(
            error_ratio(&AggregatorSpec::cwtm(f_hat), &w.points, &w.honest_set).unwrap(),
            RatioValue::Infinite
        );
    }
}

#[test]
fn fuzz_ceilings_small_corpus() {
    for n in [6usize, 10] {
        for d in [1usize, 3] {
            for seed in 0..40u64 {
                let xs = fuzz_cloud(n, d, seed * 1000 + n as u64 * 10 + d as u64);
                for f_hat in 1..n.div_ceil(2) {
                    let outputs = vec![
                        aggregate(&AggregatorSpec::cwtm(f_hat), &xs).unwrap(),
                        aggregate(&AggregatorSpec::krum(f_hat), &xs).unwrap(),
                        aggregate(&AggregatorSpec::krum_nnm(f_hat), &xs).unwrap(),
                    ];
                    let at = |f| empirical_kappa_many(&outputs, &xs, f, 20_000, seed).unwrap();
                    let top = at(f_hat);
                    let cwtm_cap = kappa_table(&AggregatorKind::Cwtm, n, f_hat, f_hat).unwrap();
                    let krum_cap = kappa_table(&AggregatorKind::Krum, n, f_hat, f_hat).unwrap();
                    assert!(top[0].worst_ratio.at_most(cwtm_cap + 1e-9));
                    assert!(top[1].worst_ratio.at_most(krum_cap + 1e-9));
                    for f in 0..=f_hat {
                        let low = at(f);
                        assert!(low.iter().all(|r| r.exhaustive));
                        for k in 0..3 {
                            assert!(low[k].worst_ratio <= top[k].worst_ratio, "n={n} f={f} f̂={f_hat} rule {k}");
                        }
                        let cap = kappa_composite_chain(n, f, f_hat).unwrap().ceiling;
                        assert!(low[2].worst_ratio.at_most(cap + 1e-9));
                    }
                }
            }
        }
    }
}

#[test]
fn audit_matches_single_rule_api() {
    let xs = fuzz_cloud(10, 2, 5);
    let spec = AggregatorSpec::cwtm(3);
    let single = empirical_kappa(&spec, &xs, 2, 20_000, 0).unwrap();
    let out = aggregate(&spec, &xs).unwrap();
    let many = empirical_kappa_many(&[out], &xs, 2, 20_000, 0).unwrap();
    assert_eq!(single, many[0]);
    assert_eq!(single.worst_subset.len(), 8);
    let direct = error_ratio(&spec, &xs, &single.worst_subset).unwrap().finite().unwrap();
    let fast = single.worst_ratio.finite().unwrap();
    assert!((direct - fast).abs() <= 1e-9 * direct.max(1.0));
}
