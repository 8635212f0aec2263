mod common;

use ndarray::{s, Array1, Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lanepatch_core::attention::flops::{flop_estimate, AttentionKind};
use lanepatch_core::attention::{
    lla_forward, mlp_forward, ppa_forward, pya_forward, softmax_in_place, Activation, AttentionWeights, FeatureTensor,
    MlpWeights,
};
use lanepatch_core::eval::{evaluate_scene, pair_score, resample_for_eval, EvalConfig};
use lanepatch_core::{
    ep_patch_inference, generate_training_gt, loss_ep, make_grid, DenseLane, EpPrediction, GtMode, PatchStatus,
    SynthConfig,
};

use common::*;

/// A curved lane inside `[3, 103]`: `x = a + b d + c d^2`, `z = z0 + k d`.
fn lane_strategy() -> impl Strategy<Value = DenseLane> {
    (
        3.0f64..95.0,
        0.05f64..1.0,
        -5.0f64..5.0,
        -0.05f64..0.05,
        -0.01f64..0.01,
        -1.0f64..1.0,
        -0.03f64..0.03,
        0.3f64..3.0,
    )
        .prop_map(|(y0, frac, a, b, c, z0, k, step)| {
            let len = (frac * (103.0 - y0)).max(1.0).min(103.0 - y0);
            let y1 = y0 + len;
            let n = ((len / step).ceil() as usize).max(1);
            let pts = (0..=n)
                .map(|i| {
                    let y = if i == n { y1 } else { y0 + i as f64 * len / n as f64 };
                    let d = y - y0;
                    [a + b * d + c * d * d, y, z0 + k * d]
                })
                .collect();
            DenseLane::new(pts, 1).unwrap()
        })
}

fn grid_m() -> impl Strategy<Value = usize> {
    prop_oneof![Just(5usize), Just(10), Just(20), 2usize..40]
}

fn visible_extent(vis: &[bool], ys: &[f64]) -> Option<(f64, f64)> {
    let first = vis.iter().position(|&v| v)?;
    let last = vis.iter().rposition(|&v| v)?;
    Some((ys[first], ys[last]))
}

proptest! {
    #[test]
    fn interpolation_exact_at_vertices(lane in lane_strategy()) {
        for p in lane.points() {
            let (x, z) = lane.interpolate(p[1]).unwrap();
            prop_assert!((x - p[0]).abs() <= 1e-12 * p[0].abs().max(1.0));
            prop_assert!((z - p[2]).abs() <= 1e-12 * p[2].abs().max(1.0));
        }
    }

    #[test]
    fn interpolation_matches_segment_scan(lane in lane_strategy(), t in 0.0f64..=1.0) {
        let y = lane.y_min() + t * lane.length();
        let (x, z) = lane.interpolate(y).unwrap();
        let (ox, oz) = scan_interpolate(lane.points(), y).unwrap();
        prop_assert!((x - ox).abs() < 1e-9 && (z - oz).abs() < 1e-9);
    }

    #[test]
    fn interpolation_stays_between_bracketing_vertices(lane in lane_strategy(), t in 0.0f64..=1.0) {
        let y = lane.y_min() + t * lane.length();
        let pts = lane.points();
        let i = pts.iter().position(|p| p[1] >= y).unwrap().max(1);
        let (lo, hi) = (pts[i - 1][0].min(pts[i][0]), pts[i - 1][0].max(pts[i][0]));
        let (x, _) = lane.interpolate(y).unwrap();
        prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
    }

    #[test]
    fn short_extent_inside_original(lane in lane_strategy(), m in grid_m()) {
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        if let Ok(gt) = generate_training_gt(&lane, &grid, GtMode::Short) {
            let (lo, hi) = visible_extent(gt.vis(), grid.y_values()).unwrap();
            prop_assert!(lo >= lane.y_min() && hi <= lane.y_max());
        }
    }

    #[test]
    fn long_extent_covers_original(lane in lane_strategy(), m in grid_m()) {
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        let gt = generate_training_gt(&lane, &grid, GtMode::Long).unwrap();
        let (lo, hi) = visible_extent(gt.vis(), grid.y_values()).unwrap();
        prop_assert!(lo <= lane.y_min().max(3.0) + 1e-9);
        prop_assert!(hi >= lane.y_max().min(103.0) - 1e-9);
    }

    #[test]
    fn long_adds_at_most_two_points(lane in lane_strategy(), m in grid_m()) {
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        let long = lanepatch_core::visibility_mask(&lane, &grid, GtMode::Long);
        let short = lanepatch_core::visibility_mask(&lane, &grid, GtMode::Short);
        let (nl, ns) = (long.iter().filter(|&&v| v).count(), short.iter().filter(|&&v| v).count());
        prop_assert!(nl >= ns && nl - ns <= 2);
    }

    #[test]
    fn patched_deltas_recover_endpoints(lane in lane_strategy(), m in grid_m()) {
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        let Ok(gt) = generate_training_gt(&lane, &grid, GtMode::Patched) else {
            return Ok(());
        };
        let (first, last) = gt.visible_span().unwrap();
        let patch = gt.patch().unwrap();
        let (s, e) = (gt.point(first), gt.point(last));
        for a in 0..3 {
            prop_assert!((s[a] + patch.start[first][a] - lane.start()[a]).abs() <= 1e-9);
            prop_assert!((e[a] + patch.end[last][a] - lane.end()[a]).abs() <= 1e-9);
        }
    }

    #[test]
    fn full_span_lane_is_mode_independent(a in -3.0f64..3.0, b in -0.02f64..0.02, m in grid_m()) {
        let pts: Vec<[f64; 3]> = (0..=200).map(|i| {
            let y = 3.0 + 0.5 * i as f64;
            [a + b * (y - 3.0), y, 0.1 * b * (y - 3.0)]
        }).collect();
        let lane = DenseLane::new(pts, 0).unwrap();
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        let base = generate_training_gt(&lane, &grid, GtMode::Short).unwrap();
        for mode in GtMode::ALL {
            let gt = generate_training_gt(&lane, &grid, mode).unwrap();
            prop_assert_eq!(gt.x(), base.x());
            prop_assert_eq!(gt.z(), base.z());
            prop_assert_eq!(gt.vis(), base.vis());
        }
    }

    #[test]
    fn ep_inference_touches_only_endpoints(lane in lane_strategy(), m in grid_m(), seed in any::<u64>()) {
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        let Ok(gt) = generate_training_gt(&lane, &grid, GtMode::Short) else {
            return Ok(());
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..m).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)]).collect::<Vec<_>>();
        let ep = EpPrediction::new(draw(), draw()).unwrap();
        let out = ep_patch_inference(&gt, &ep).unwrap();
        prop_assert_eq!(out.lane.vis(), gt.vis());
        prop_assert_eq!(out.lane.category(), gt.category());
        match gt.visible_span() {
            Some((f, l)) if f < l => {
                prop_assert_eq!(out.status, PatchStatus::Patched);
                for j in 0..m {
                    if j != f && j != l {
                        prop_assert_eq!(out.lane.point(j), gt.point(j));
                    }
                }
            }
            _ => {
                prop_assert_eq!(out.status, PatchStatus::TooFewValid);
                prop_assert_eq!(out.lane.x(), gt.x());
                prop_assert_eq!(out.lane.y(), gt.y());
            }
        }
        let zero = ep_patch_inference(&gt, &EpPrediction::zeros(m)).unwrap();
        prop_assert_eq!(zero.lane.x(), gt.x());
        prop_assert_eq!(zero.lane.y(), gt.y());
        prop_assert_eq!(zero.lane.z(), gt.z());
    }

    #[test]
    fn ep_inference_matches_reference_code(lane in lane_strategy(), m in grid_m()) {
        let grid = make_grid(m, 3.0, 103.0).unwrap();
        let Ok(gt) = generate_training_gt(&lane, &grid, GtMode::Patched) else {
            return Ok(());
        };
        let patch = gt.patch().unwrap().clone();
        let ep = EpPrediction::new(patch.start.clone(), patch.end.clone()).unwrap();
        let out = ep_patch_inference(&gt, &ep).unwrap();
        let reference = reference_post_process(gt.x(), gt.y(), gt.z(), gt.vis(), &patch.start, &patch.end);
        match reference {
            Some(points) => {
                let (f, l) = out.lane.visible_span().unwrap();
                let ours: Vec<[f64; 3]> = (f..=l).map(|j| out.lane.point(j)).collect();
                prop_assert_eq!(ours, points);
            }
            None => prop_assert_eq!(out.status, PatchStatus::TooFewValid),
        }
    }

    #[test]
    fn loss_is_nonnegative_and_grows_with_residuals(
        seed in any::<u64>(),
        m in 1usize..30,
        grow in 1.0f64..4.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..m).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect::<Vec<[f64; 3]>>();
        let (s, e, sh, eh) = (draw(), draw(), draw(), draw());
        let pred = EpPrediction::new(sh.clone(), eh.clone()).unwrap();
        let l = loss_ep(&pred, &s, &e).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(loss_ep(&EpPrediction::new(s.clone(), e.clone()).unwrap(), &s, &e).unwrap(), 0.0);
        let scale = |t: &[[f64; 3]], p: &[[f64; 3]]| -> Vec<[f64; 3]> {
            t.iter().zip(p).map(|(t, p)| [t[0] + grow * (p[0] - t[0]), t[1] + grow * (p[1] - t[1]), t[2] + grow * (p[2] - t[2])]).collect()
        };
        let bigger = EpPrediction::new(scale(&s, &sh), scale(&e, &eh)).unwrap();
        prop_assert!(loss_ep(&bigger, &s, &e).unwrap() >= l - 1e-12);
        let oracle = l1_loss_oracle(&sh, &eh, &s, &e);
        prop_assert!((l - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn self_evaluation_is_perfect(lanes in prop::collection::vec(lane_strategy(), 1..6)) {
        let cfg = EvalConfig::default();
        let e = evaluate_scene(&lanes, &lanes, &cfg);
        let r = lanepatch_core::EvalReport::from_counts(e.counts, &cfg);
        prop_assert_eq!(r.f1, 1.0);
        prop_assert_eq!(r.x_err_near + r.x_err_far + r.z_err_near + r.z_err_far, 0.0);
    }

    #[test]
    fn matched_count_monotone_in_threshold(a in lane_strategy(), b in lane_strategy(), t in 0.1f64..3.0, dt in 0.0f64..2.0) {
        let lo = EvalConfig { point_match_threshold: t, ..EvalConfig::default() };
        let hi = EvalConfig { point_match_threshold: t + dt, ..EvalConfig::default() };
        let (ga, pb) = (resample_for_eval(&a, &lo), resample_for_eval(&b, &lo));
        prop_assert!(pair_score(&ga, &pb, &hi).matched >= pair_score(&ga, &pb, &lo).matched);
    }

    #[test]
    fn assignment_is_optimal(
        gt in prop::collection::vec(lane_strategy(), 0..5),
        pred in prop::collection::vec(lane_strategy(), 0..5),
    ) {
        let cfg = EvalConfig::default();
        let e = evaluate_scene(&gt, &pred, &cfg);
        let g: Vec<_> = gt.iter().map(|l| resample_for_eval(l, &cfg)).collect();
        let p: Vec<_> = pred.iter().map(|l| resample_for_eval(l, &cfg)).collect();
        let w: Vec<Vec<i64>> = g.iter().map(|g| p.iter().map(|p| pair_score(g, p, &cfg).matched as i64).collect()).collect();
        prop_assert_eq!(e.counts.total_matched_points as i64, brute_force_max_matching(&w));
    }

    #[test]
    fn raising_lane_iou_never_raises_f1(
        gt in prop::collection::vec(lane_strategy(), 1..5),
        pred in prop::collection::vec(lane_strategy(), 1..5),
    ) {
        let lo = EvalConfig::default();
        let hi = EvalConfig::default().with_lane_iou(0.9);
        let f = |cfg: &EvalConfig| lanepatch_core::EvalReport::from_counts(evaluate_scene(&gt, &pred, cfg).counts, cfg);
        let (a, b) = (f(&lo), f(&hi));
        prop_assert!(b.f1 <= a.f1 && b.recall <= a.recall && b.precision <= a.precision);
    }

    #[test]
    fn aggregation_is_order_independent(
        scenes in prop::collection::vec((prop::collection::vec(lane_strategy(), 0..4), prop::collection::vec(lane_strategy(), 0..4)), 1..5),
    ) {
        let cfg = EvalConfig::default();
        let sum = |order: &mut dyn Iterator<Item = &(Vec<DenseLane>, Vec<DenseLane>)>| {
            let mut c = lanepatch_core::eval::EvalCounts::default();
            for (g, p) in order {
                c += &evaluate_scene(g, p, &cfg).counts;
            }
            c
        };
        let fwd = sum(&mut scenes.iter());
        let rev = sum(&mut scenes.iter().rev());
        prop_assert_eq!(fwd.gt_matched, rev.gt_matched);
        prop_assert_eq!(fwd.pred_matched, rev.pred_matched);
        prop_assert_eq!(fwd.total_matched_points, rev.total_matched_points);
        prop_assert!((fwd.x_err_near_sum - rev.x_err_near_sum).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_lanes_are_valid_and_smooth(seed in any::<u64>(), scenes in 1usize..20) {
        let cfg = SynthConfig { seed, scenes, ..SynthConfig::default() };
        let set = lanepatch_core::generate_scene_set(&cfg).unwrap();
        let kmax = cfg.curvature_max();
        for lane in set.lanes() {
            let pts = lane.points();
            prop_assert!(pts.len() >= 2);
            for w in pts.windows(2) {
                prop_assert!(w[1][1] > w[0][1] && w[1][1] - w[0][1] <= 0.5 + 1e-9);
            }
            for w in pts.windows(3) {
                let (h1, h2) = (w[1][1] - w[0][1], w[2][1] - w[1][1]);
                let second = 2.0 * ((w[2][0] - w[1][0]) / h2 - (w[1][0] - w[0][0]) / h1) / (h1 + h2);
                prop_assert!(second.abs() <= kmax + 1e-6);
            }
            prop_assert!(lane.y_min() >= 3.0 && lane.y_max() <= 103.0);
        }
        let again = lanepatch_core::generate_scene_set(&cfg).unwrap();
        prop_assert_eq!(set.scenes, again.scenes);
    }
}

fn random_array(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn rows(a: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn attn_dims() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (1usize..6, 1usize..6, prop_oneof![Just(8usize), Just(16)], prop_oneof![Just(1usize), Just(2)], any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_sum_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..40), shift in -1e3f64..1e3) {
        let mut a = logits.clone();
        softmax_in_place(&mut a);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let mut b: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn ppa_equals_block_diagonal_oracle((n, m, c, h, seed) in attn_dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feat = FeatureTensor::new(random_array((n, m + 1, c), &mut rng)).unwrap();
        let w = AttentionWeights::seeded(c, h, seed ^ 1).unwrap();
        let ours = ppa_forward(&feat, &w).unwrap();
        let t = m + 1;
        let flat = rows(feat.data().to_shape((n * t, c)).unwrap().view());
        let oracle = dense_masked_attention(&flat, &w, &|i, j| i / t == j / t);
        let got = rows(ours.data().to_shape((n * t, c)).unwrap().view());
        prop_assert!(max_abs_diff(&got, &oracle) <= 1e-6);
    }

    #[test]
    fn lla_equals_cls_masked_oracle((n, m, c, h, seed) in attn_dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feat = FeatureTensor::new(random_array((n, m + 1, c), &mut rng)).unwrap();
        let w = AttentionWeights::seeded(c, h, seed ^ 2).unwrap();
        let ours = lla_forward(feat.cls(), &w).unwrap();
        let t = m + 1;
        let is_cls = |i: usize| i % t == m;
        let flat = rows(feat.data().to_shape((n * t, c)).unwrap().view());
        let oracle = dense_masked_attention(&flat, &w, &|i, j| is_cls(i) && is_cls(j));
        let at_cls: Vec<Vec<f64>> = (0..n).map(|i| oracle[i * t + m].clone()).collect();
        prop_assert!(max_abs_diff(&rows(ours.view()), &at_cls) <= 1e-6);
    }

    #[test]
    fn pya_equals_same_row_oracle((n, m, c, h, seed) in attn_dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feat = FeatureTensor::new(random_array((n, m + 1, c), &mut rng)).unwrap();
        let w = AttentionWeights::seeded(c, h, seed ^ 3).unwrap();
        let ours = pya_forward(feat.points(), &w).unwrap();
        let flat = rows(feat.points().to_shape((n * m, c)).unwrap().view());
        let oracle = dense_masked_attention(&flat, &w, &|i, j| i % m == j % m);
        let got = rows(ours.to_shape((n * m, c)).unwrap().view());
        prop_assert!(max_abs_diff(&got, &oracle) <= 1e-6);
    }

    #[test]
    fn attention_maps_are_stochastic((n, m, c, h, seed) in attn_dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_array((1, n * (m + 1), c), &mut rng);
        let w = AttentionWeights::seeded(c, h, seed).unwrap();
        for p in w.attention_maps(x.index_axis(Axis(0), 0)).unwrap() {
            for r in p.rows() {
                prop_assert!((r.sum() - 1.0).abs() <= 1e-9);
                prop_assert!(r.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn lane_and_row_permutation_equivariance((n, m, c, h, seed) in attn_dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_array((n, m + 1, c), &mut rng);
        let w = AttentionWeights::seeded(c, h, seed).unwrap();
        let lane_perm: Vec<usize> = (0..n).rev().collect();
        let row_perm: Vec<usize> = (0..m).rev().collect();

        let feat = FeatureTensor::new(data.clone()).unwrap();
        let permuted = FeatureTensor::new(data.select(Axis(0), &lane_perm)).unwrap();
        let a = ppa_forward(&feat, &w).unwrap().into_inner().select(Axis(0), &lane_perm);
        let b = ppa_forward(&permuted, &w).unwrap().into_inner();
        prop_assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));

        let a = lla_forward(feat.cls(), &w).unwrap().select(Axis(0), &lane_perm);
        let b = lla_forward(permuted.cls(), &w).unwrap();
        prop_assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));

        let pts = data.slice(s![.., ..m, ..]).to_owned();
        let a = pya_forward(pts.view(), &w).unwrap().select(Axis(1), &row_perm);
        let b = pya_forward(pts.select(Axis(1), &row_perm).view(), &w).unwrap();
        prop_assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mlp_matches_matmul_oracle(seed in any::<u64>(), rows_n in 1usize..6, hidden in 1usize..12) {
        let w = MlpWeights::seeded(&[4, hidden, 3], Activation::Relu, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
        let x = Array2::from_shape_simple_fn((rows_n, 4), || rng.random_range(-2.0..2.0));
        let got = mlp_forward(&w, x.view()).unwrap();
        let to_vec = |a: &Array2<f64>| rows(a.view());
        let add_bias = |mut m: Vec<Vec<f64>>, b: &Array1<f64>| {
            for r in &mut m {
                for (v, bb) in r.iter_mut().zip(b.iter()) {
                    *v += bb;
                }
            }
            m
        };
        let mut h1 = add_bias(matmul(&to_vec(&x), &to_vec(&w.layers[0].weight)), &w.layers[0].bias);
        h1.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
        let out = add_bias(matmul(&h1, &to_vec(&w.layers[1].weight)), &w.layers[1].bias);
        prop_assert!(max_abs_diff(&rows(got.view()), &out) <= 1e-12);
    }

    #[test]
    fn seeded_forward_is_deterministic((n, m, c, h, seed) in attn_dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_array((n, m + 1, c), &mut rng);
        let feat = FeatureTensor::new(data).unwrap();
        let run = || {
            let w = lanepatch_core::attention::PlAttentionWeights::seeded(c, h, seed).unwrap();
            lanepatch_core::attention::pl_attention_forward(&feat, &w).unwrap()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn pla_attention_terms_below_msa(n in 2usize..129, m in 2usize..129, c in prop_oneof![Just(8usize), Just(64), Just(256)]) {
        let pla = flop_estimate(AttentionKind::Pla, n, m, c, 4.min(c)).unwrap();
        let msa = flop_estimate(AttentionKind::Msa, n, m, c, 4.min(c)).unwrap();
        prop_assert!(pla.attention_macs() < msa.attention_macs());
        prop_assert!(pla.score_units < msa.score_units);
    }
}
