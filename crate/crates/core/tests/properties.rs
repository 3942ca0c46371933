//! Property tests for the numeric invariants of each module.

use proptest::prelude::*;
use shishu::bench::{memory_estimate, BenchMode, ScoreStorage};
use shishu::emd::{emd_1d, emd_lp, family_scores, DiscreteDistribution, Family};
use shishu::model::LayerSchedule;
use shishu::probe::{fit_linear, fit_scalar_identity, residual_cosine, IoCapture};
use shishu::tensor::linalg::lstsq;
use shishu::tensor::ops::{rmsnorm, rope_apply, softmax_rows};
use shishu::train::lr_at;
use shishu::{ModelConfig, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Tensor::from_vec(&[rows, cols], v).unwrap())
}

fn distribution(max_len: usize) -> impl Strategy<Value = DiscreteDistribution> {
    prop::collection::vec((-10.0f64..10.0, 0.05f64..1.0), 1..=max_len).prop_map(|mut pairs| {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let (points, masses): (Vec<f64>, Vec<f64>) =
            pairs.into_iter().map(|(x, m)| (x, m / total)).unzip();
        DiscreteDistribution::new(points, masses).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 9)) {
        let p = softmax_rows(&x);
        for row in p.rows() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn rope_preserves_pair_norms(x in matrix(3, 8), pos in prop::collection::vec(0usize..4096, 3)) {
        let x3 = x.clone().reshape(&[1, 3, 8]).unwrap();
        let y = rope_apply(&x3, &pos, 10_000.0).unwrap();
        for (a, b) in x3.data().chunks(2).zip(y.data().chunks(2)) {
            let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            prop_assert!((na - nb).abs() < 1e-6);
        }
        let at_zero = rope_apply(&x3, &[0, 0, 0], 10_000.0).unwrap();
        prop_assert_eq!(at_zero.data(), x3.data());
    }

    #[test]
    fn rmsnorm_ignores_positive_scale(x in matrix(2, 16), w in prop::collection::vec(0.1f64..2.0, 16)) {
        prop_assume!(x.rows().all(|r| r.iter().any(|v| v.abs() > 1e-3)));
        let w = Tensor::from_vec(&[16], w).unwrap();
        let base = rmsnorm(&x, &w, 0.0).unwrap();
        for alpha in [0.5, 2.0, 10.0, 100.0] {
            let y = rmsnorm(&x.map(|v| v * alpha), &w, 0.0).unwrap();
            prop_assert!(y.max_abs_diff(&base) < 1e-6);
        }
    }

    #[test]
    fn lstsq_residual_is_orthogonal_to_columns(x in matrix(20, 5), z in matrix(20, 3)) {
        let fit = lstsq(&x, &z).unwrap();
        prop_assume!(fit.ridge.is_none());
        // residual R = X·Wᵀ − Z; check ‖Xᵀ·R‖∞
        let (n, d, e) = (20, 5, 3);
        let mut worst = 0.0f64;
        for c in 0..d {
            for k in 0..e {
                let mut acc = 0.0;
                for r in 0..n {
                    let pred: f64 = (0..d).map(|j| x.data()[r * d + j] * fit.w.data()[k * d + j]).sum();
                    acc += x.data()[r * d + c] * (pred - z.data()[r * e + k]);
                }
                worst = worst.max(acc.abs());
            }
        }
        prop_assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn scalar_fit_matches_grid_search(w in matrix(8, 8)) {
        let (alpha, mse) = fit_scalar_identity(&w).unwrap();
        let mse_at = |a: f64| {
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    let t = if i == j { a } else { 0.0 };
                    s += (t - w.data()[i * 8 + j]).powi(2);
                }
            }
            s / 64.0
        };
        let mut best = (f64::INFINITY, 0.0);
        let mut a = -4.0;
        while a <= 4.0 {
            let m = mse_at(a);
            if m < best.0 {
                best = (m, a);
            }
            a += 1e-4;
        }
        prop_assert!((best.1 - alpha).abs() < 1e-3);
        prop_assert!((best.0 - mse).abs() < 1e-3);
    }

    #[test]
    fn linear_fit_interpolates_few_rows(x in matrix(6, 8), z in matrix(6, 8)) {
        let cap = IoCapture::from_pairs(vec![(x, z)], 6).unwrap();
        let fit = fit_linear(&cap, 0, false).unwrap();
        prop_assert!(fit.mse < 1e-8, "{}", fit.mse);
    }

    #[test]
    fn bypassed_attention_gives_unit_cosine_and_zero_map(x in matrix(12, 4)) {
        prop_assume!(x.rows().all(|r| r.iter().any(|v| v.abs() > 1e-3)));
        let z = Tensor::zeros(&[12, 4]);
        let cap = IoCapture::from_pairs(vec![(x, z)], 12).unwrap();
        let cos = residual_cosine(&cap, 0, None).unwrap();
        prop_assert!((cos.mean - 1.0).abs() < 1e-12);
        let fit = fit_linear(&cap, 0, false).unwrap();
        prop_assert!(fit.w.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn emd_closed_form_equals_transport_lp(p in distribution(25), q in distribution(25)) {
        let closed = emd_1d(&p, &q).unwrap();
        let lp = emd_lp(&p, &q).unwrap().cost;
        prop_assert!((closed - lp).abs() < 1e-9, "{closed} vs {lp}");
    }

    #[test]
    fn ratio_is_invariant_to_common_rescaling(a in matrix(6, 6), b in matrix(6, 6)) {
        let base = family_scores(Family::Gate, &[&a, &b], 1000, 0).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let (sa, sb) = (a.map(|v| v * s), b.map(|v| v * s));
            let scaled = family_scores(Family::Gate, &[&sa, &sb], 1000, 0).unwrap();
            let (r0, r1) = (base.r[0].unwrap(), scaled.r[0].unwrap());
            prop_assert!((r0 - r1).abs() < 1e-9 * r0.max(1.0));
        }
    }

    #[test]
    fn emd_matrix_is_a_symmetric_dissimilarity(a in matrix(4, 4), b in matrix(4, 4), c in matrix(4, 4)) {
        let rep = family_scores(Family::Up, &[&a, &b, &c], 1000, 0).unwrap();
        for i in 0..3 {
            prop_assert_eq!(rep.matrix[i][i], 0.0);
            for j in 0..3 {
                prop_assert_eq!(rep.matrix[i][j], rep.matrix[j][i]);
                prop_assert!(rep.matrix[i][j] >= 0.0);
            }
        }
    }

    #[test]
    fn lr_is_continuous_at_warmup_end(total in 20usize..5000, ratio in 0.01f64..0.5, peak in 1e-5f64..1e-1) {
        let w = (ratio * total as f64).round() as usize;
        prop_assume!(w >= 1 && w < total);
        // the ramp reaches the peak exactly where the cosine starts
        let ramp_end = lr_at(w - 1, peak, ratio, total) * w as f64 / (w - 1).max(1) as f64;
        let start = lr_at(w, peak, ratio, total);
        prop_assert!((start - peak).abs() < 1e-9 * peak);
        if w > 1 {
            prop_assert!((ramp_end - peak).abs() < 1e-9 * peak);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn emd_metric_axioms(p in distribution(12), q in distribution(12), r in distribution(12)) {
        let pq = emd_1d(&p, &q).unwrap();
        let qp = emd_1d(&q, &p).unwrap();
        let pr = emd_1d(&p, &r).unwrap();
        let rq = emd_1d(&r, &q).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert!(emd_1d(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!(pq <= pr + rq + 1e-9);
    }
}

fn sized(hidden: usize, layers: usize) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(LayerSchedule::all_decoder(layers).unwrap());
    cfg.hidden_size = hidden;
    cfg.intermediate_size = 3 * hidden;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn memory_is_monotone(t in 1usize..2048, b in 1usize..8, l in 1usize..16, d in 1usize..8, streaming: bool) {
        let scores = if streaming { ScoreStorage::Streaming } else { ScoreStorage::Materialized };
        let d = d * 16;
        for mode in [BenchMode::Inference, BenchMode::Training] {
            let base = memory_estimate(&sized(d, l), b, t, mode, scores).total();
            prop_assert!(memory_estimate(&sized(d, l), b, t + 1, mode, scores).total() >= base);
            prop_assert!(memory_estimate(&sized(d, l), b + 1, t, mode, scores).total() >= base);
            prop_assert!(memory_estimate(&sized(d, l + 1), b, t, mode, scores).total() >= base);
            prop_assert!(memory_estimate(&sized(d + 16, l), b, t, mode, scores).total() >= base);
        }
        let cfg = sized(d, l);
        let train = memory_estimate(&cfg, b, t, BenchMode::Training, scores).total();
        let infer = memory_estimate(&cfg, b, t, BenchMode::Inference, scores).total();
        prop_assert!(train > infer);
    }

    #[test]
    fn kv_cache_ratio_is_decoder_share(thirds in 1usize..6, t in 1usize..1024) {
        let l = 6 * thirds;
        let n_dec = l / 3;
        let vanilla = sized(64, l);
        let pruned = ModelConfig { schedule: LayerSchedule::shishu(l, n_dec, 2).unwrap(), ..vanilla.clone() };
        let kv = |c: &ModelConfig| memory_estimate(c, 1, t, BenchMode::Inference, ScoreStorage::Materialized).kv_cache_bytes;
        prop_assert_eq!(kv(&pruned) * l, kv(&vanilla) * n_dec);
    }
}
