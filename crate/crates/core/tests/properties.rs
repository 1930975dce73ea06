//! Property tests: transform invariants, brute-force metric oracles, and
//! independent scalar-loop implementations of the graph operators.

use proptest::prelude::*;

use riskcast_core::autodiff::Tape;
use riskcast_core::encoder::{bind_all, hgcn_view};
use riskcast_core::metrics::{mae, recall_at_k, rmse, StackedOutcomes};
use riskcast_core::params::ParamSet;
use riskcast_core::risk::{
    apply_pkde, compute_risk_scores, fit_pkde, AccidentEvent, RiskKind, RiskTensor,
};
use riskcast_core::tensor::Tensor;
use riskcast_core::views::{max_col_nnz, max_row_nnz, topk_mask_cols, topk_mask_rows};

fn risk_tensor_strategy(max_n: usize, max_t: usize) -> impl Strategy<Value = RiskTensor> {
    (2..=max_n, 4..=max_t)
        .prop_flat_map(|(n, t)| {
            proptest::collection::vec(
                prop_oneof![
                    4 => Just(0.0),
                    1 => (1u32..=20).prop_map(|v| v as f64),
                ],
                n * t,
            )
            .prop_map(move |data| RiskTensor {
                values: Tensor::new(vec![n, t], data),
                kind: RiskKind::Raw,
                interval_hours: 24,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pkde_partitions_image_and_preserves_rank(rt in risk_tensor_strategy(10, 16)) {
        let train_end = rt.n_steps();
        prop_assume!(fit_pkde(&rt, train_end).is_ok());
        let params = fit_pkde(&rt, train_end).unwrap();
        let out = apply_pkde(&rt, &params);

        let steps = rt.n_steps();
        for r in 0..rt.n_regions() {
            for t in 0..steps {
                let raw = rt.values.at2(r, t);
                let v = out.values.at2(r, t);
                if raw == 0.0 {
                    prop_assert!((-1.0..0.0).contains(&v), "zero cell mapped to {v}");
                } else {
                    prop_assert!((0.0..=1.0).contains(&v), "nonzero cell mapped to {v}");
                    prop_assert!(v > 0.0);
                }
            }
        }
        // rank preservation among nonzero raw values
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for r in 0..rt.n_regions() {
            for t in 0..steps {
                let raw = rt.values.at2(r, t);
                if raw != 0.0 {
                    pairs.push((raw, out.values.at2(r, t)));
                }
            }
        }
        for i in 0..pairs.len() {
            for j in 0..pairs.len() {
                if pairs[i].0 < pairs[j].0 {
                    prop_assert!(pairs[i].1 < pairs[j].1, "rank broken");
                }
            }
        }
        // monotone intensity: larger epsilon -> strictly larger pi
        for i in 0..params.epsilon.len() {
            for j in 0..params.epsilon.len() {
                if params.epsilon[i] < params.epsilon[j] {
                    prop_assert!(params.pi(i) < params.pi(j));
                }
            }
        }
        // boundary values
        let eps_max = params.epsilon.iter().cloned().fold(0.0f64, f64::max);
        let eps_min = params.epsilon.iter().cloned().fold(f64::INFINITY, f64::min);
        for (i, &e) in params.epsilon.iter().enumerate() {
            if eps_min == eps_max {
                prop_assert_eq!(params.pi(i), -0.5);
            } else if e == eps_max {
                prop_assert!((params.pi(i) + 0.05).abs() < 1e-12);
            } else if e == eps_min {
                prop_assert!((params.pi(i) + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn risk_scores_match_per_event_oracle(
        n in 2usize..=10,
        t in 2usize..=20,
        raw_events in proptest::collection::vec((0usize..10, 0usize..20, 1u8..=3), 0..120)
    ) {
        let events: Vec<AccidentEvent> = raw_events
            .into_iter()
            .map(|(r, tt, s)| AccidentEvent { region: r % n, time: tt % t, severity: s })
            .collect();
        let fast = compute_risk_scores(&events, n, t, 24).unwrap();
        // oracle: independent accumulation into a plain grid
        let mut grid = vec![vec![0.0f64; t]; n];
        for e in &events {
            grid[e.region][e.time] += e.severity as f64;
        }
        for r in 0..n {
            for c in 0..t {
                prop_assert_eq!(fast.values.at2(r, c), grid[r][c]);
            }
        }
    }

    #[test]
    fn topk_rows_cap_nnz_and_project(
        rows in 1usize..8,
        cols in 1usize..8,
        k in 0usize..9,
        data in proptest::collection::vec(-1.0f64..1.0, 64)
    ) {
        let values = Tensor::new(vec![rows, cols], data[..rows * cols].to_vec());
        let relu = values.map(|v| v.max(0.0));
        let (mask, _) = topk_mask_rows(&relu, k);
        let masked = Tensor::new(
            relu.dims().to_vec(),
            relu.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect(),
        );
        prop_assert!(max_row_nnz(&masked) <= k.min(cols));
        // projection: re-masking changes nothing
        let (mask2, _) = topk_mask_rows(&masked, k);
        let twice = Tensor::new(
            masked.dims().to_vec(),
            masked.data().iter().zip(mask2.data()).map(|(a, m)| a * m).collect(),
        );
        prop_assert_eq!(&masked, &twice);
        let (cmask, _) = topk_mask_cols(&relu, k);
        let cmasked = Tensor::new(
            relu.dims().to_vec(),
            relu.data().iter().zip(cmask.data()).map(|(a, m)| a * m).collect(),
        );
        prop_assert!(max_col_nnz(&cmasked) <= k.min(rows));
    }

    #[test]
    fn metrics_match_scalar_loop_oracles(
        w in 1usize..4,
        n in 2usize..8,
        tau in 1usize..5,
        seed in 0u64..1000
    ) {
        let len = w * n * tau;
        let actual = Tensor::from_fn(&[w, n, tau], |i| {
            let x = ((i as f64 + seed as f64) * 0.7311).sin();
            if x > 0.2 { x * 10.0 } else { 0.0 }
        });
        let predicted = Tensor::from_fn(&[w, n, tau], |i| ((i as f64 * 1.13 + seed as f64) * 0.37).cos() * 5.0);
        let outcomes = StackedOutcomes::new(actual.clone(), predicted.clone());

        // scalar-loop oracles, written independently of the library path
        let mut sq = 0.0;
        let mut ab = 0.0;
        for i in 0..len {
            let d = actual.data()[i] - predicted.data()[i];
            sq += d * d;
            ab += d.abs();
        }
        let oracle_rmse = (sq / len as f64).sqrt();
        let oracle_mae = ab / len as f64;
        prop_assert!((rmse(&outcomes) - oracle_rmse).abs() < 1e-9);
        prop_assert!((mae(&outcomes) - oracle_mae).abs() < 1e-9);

        // recall oracle: enumerate top-k sets directly
        let k = ((0.25 * n as f64).round() as usize).max(1);
        let mut acc = 0.0;
        let mut retained = 0usize;
        for wi in 0..w {
            for step in 0..tau {
                let col = |t: &Tensor, r: usize| t.data()[(wi * n + r) * tau + step];
                let mut actual_rank: Vec<usize> = (0..n).collect();
                actual_rank.sort_by(|&a, &b| col(&actual, b).total_cmp(&col(&actual, a)).then(a.cmp(&b)));
                let positives: Vec<usize> = (0..n).filter(|&r| col(&actual, r) > 0.0).collect();
                if positives.is_empty() {
                    continue;
                }
                let actual_set: Vec<usize> = if positives.len() > k {
                    actual_rank.iter().cloned().take(k).collect()
                } else {
                    positives
                };
                let mut pred_rank: Vec<usize> = (0..n).collect();
                pred_rank.sort_by(|&a, &b| col(&predicted, b).total_cmp(&col(&predicted, a)).then(a.cmp(&b)));
                let pred_set: Vec<usize> = pred_rank.into_iter().take(k).collect();
                let hits = actual_set.iter().filter(|r| pred_set.contains(r)).count();
                acc += hits as f64 / actual_set.len() as f64;
                retained += 1;
            }
        }
        let oracle = (retained > 0).then(|| acc / retained as f64);
        let got = recall_at_k(&outcomes, 0.25);
        match (got, oracle) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn hgcn_matches_independent_dense_oracle(
        n in 2usize..=8,
        i_edges in 1usize..=4,
        t_len in 1usize..=3,
        d in 1usize..=3,
        seed in 0u64..500
    ) {
        // library path
        let h = Tensor::from_fn(&[n, i_edges], |idx| {
            let x = ((idx as f64 + seed as f64 * 3.7) * 0.91).sin();
            if x > 0.0 { x } else { 0.0 }
        });
        let x = Tensor::from_fn(&[n, t_len, d], |idx| ((idx as f64 - seed as f64) * 0.53).cos());
        let w = Tensor::from_fn(&[d, d], |idx| ((idx as f64 + seed as f64) * 0.71).sin() * 0.8);

        let mut ps = ParamSet::new();
        let wid = ps.register("w".into(), w.clone(), true);
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let hv = tape.constant(h.clone());
        let xv = tape.constant(x.clone());
        let y = hgcn_view(&mut tape, &bound, wid, hv, xv);
        let got = tape.value(y).clone();

        // independent dense scalar-loop oracle
        let mut col_sum = vec![0.0f64; i_edges];
        let mut row_sum = vec![0.0f64; n];
        for r in 0..n {
            for e in 0..i_edges {
                col_sum[e] += h.at2(r, e);
                row_sum[r] += h.at2(r, e);
            }
        }
        for r in 0..n {
            for t in 0..t_len {
                for out_c in 0..d {
                    let mut pre = 0.0;
                    for in_c in 0..d {
                        // spread = D_v^{-1/2} * H * relu(M)
                        let mut spread = 0.0;
                        for e in 0..i_edges {
                            if col_sum[e] <= 0.0 {
                                continue;
                            }
                            let mut agg = 0.0;
                            for rr in 0..n {
                                agg += h.at2(rr, e) * x.at3(rr, t, in_c);
                            }
                            let m_val = (agg / col_sum[e]).max(0.0);
                            spread += h.at2(r, e) * m_val;
                        }
                        if row_sum[r] > 0.0 {
                            spread /= row_sum[r].sqrt();
                        } else {
                            spread = 0.0;
                        }
                        pre += spread * w.at2(in_c, out_c);
                    }
                    let expect = pre.max(0.0);
                    prop_assert!(
                        (got.at3(r, t, out_c) - expect).abs() < 1e-6,
                        "mismatch at ({r},{t},{out_c}): {} vs {expect}",
                        got.at3(r, t, out_c)
                    );
                }
            }
        }
    }
}

#[test]
fn recall_k_zero_fraction_panics() {
    let o = StackedOutcomes::new(Tensor::zeros(&[1, 2, 1]), Tensor::zeros(&[1, 2, 1]));
    assert!(std::panic::catch_unwind(|| recall_at_k(&o, 0.0)).is_err());
}
