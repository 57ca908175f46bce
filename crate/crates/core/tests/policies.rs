use adakv::attention::HeadKv;
use adakv::loss::epsilon_star;
use adakv::policy::{observation_scores, window_scores};
use adakv::tensor::Matrix;
use adakv::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Layer whose window query scores the outside keys with exactly the
/// weights in `rows`: width-1 heads, keys `ln a`, query 1, no scaling.
fn scripted_layer(rows: &[Vec<f64>]) -> (LayerCache, LayerCache, Matrix, LayerParams) {
    let one = || Matrix::from_rows(&[[1.0]]);
    let outside = LayerCache::from_heads(
        1,
        rows.iter()
            .map(|a| HeadKv {
                keys: Matrix::from_vec(a.len(), 1, a.iter().map(|w| w.ln()).collect()).unwrap(),
                values: Matrix::from_vec(a.len(), 1, (0..a.len()).map(|j| j as f64).collect())
                    .unwrap(),
            })
            .collect(),
    )
    .unwrap();
    let window = LayerCache::from_heads(
        1,
        rows.iter()
            .map(|_| HeadKv {
                keys: one(),
                values: one(),
            })
            .collect(),
    )
    .unwrap();
    let params = LayerParams::new(
        rows.iter()
            .map(|_| HeadParams::new(one(), one(), one(), one()).unwrap())
            .collect(),
    )
    .unwrap();
    (outside, window, one(), params)
}

fn config(kind: PolicyKind, alpha: f64) -> PolicyConfig {
    let mut c = PolicyConfig::new(kind);
    c.window_size = 1;
    c.pool_kernel = 1;
    c.alpha = alpha;
    c.scale = LogitScale::Unscaled;
    c
}

fn two_heads() -> Vec<Vec<f64>> {
    vec![vec![0.4, 0.3, 0.3], vec![0.98, 0.01, 0.01]]
}

#[test]
fn scripted_scores_reproduce_weights() {
    let rows = two_heads();
    let (outside, _, x, params) = scripted_layer(&rows);
    let s = observation_scores(&outside, &x, &params, &config(PolicyKind::SnapKv, 0.2)).unwrap();
    for (a, b) in s.iter().flatten().zip(rows.iter().flatten()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn ada_moves_budget_to_the_flat_head() {
    let (outside, window, x, params) = scripted_layer(&two_heads());
    let ev = evict_layer(
        &outside,
        &window,
        &x,
        &params,
        4 + 2,
        &config(PolicyKind::AdaSnapKv, 1.0),
    )
    .unwrap();
    assert_eq!(ev.allocation.per_head(), &[3, 1]);
    assert_eq!(ev.decision.head(1), &[true, false, false]);
    assert_eq!(ev.decision.counts(), vec![3, 1]);
    assert_eq!(ev.retained.lengths(), vec![4, 2]);
}

#[test]
fn snapkv_splits_evenly() {
    let (outside, window, x, params) = scripted_layer(&two_heads());
    let ev = evict_layer(
        &outside,
        &window,
        &x,
        &params,
        6,
        &config(PolicyKind::SnapKv, 0.2),
    )
    .unwrap();
    assert_eq!(ev.allocation.per_head(), &[2, 2]);
    assert_eq!(
        ev.decision.heads(),
        &[vec![true, true, false], vec![true, true, false]]
    );
}

#[test]
fn full_budget_keeps_everything() {
    let (outside, window, x, params) = scripted_layer(&two_heads());
    for kind in PolicyKind::ALL {
        let ev = evict_layer(&outside, &window, &x, &params, 2 + 6, &config(kind, 0.2)).unwrap();
        assert_eq!(
            ev.decision,
            EvictionDecision::all_retained(&[3, 3]),
            "{kind}"
        );
        assert_eq!(ev.retained.total_len(), 8);
    }
}

#[test]
fn budget_limits_are_errors() {
    let (outside, window, x, params) = scripted_layer(&two_heads());
    let c = config(PolicyKind::AdaSnapKv, 0.2);
    assert!(matches!(
        evict_layer(&outside, &window, &x, &params, 3, &c),
        Err(Error::BudgetBelowFloor { floor: 4, .. })
    ));
    assert!(matches!(
        evict_layer(&outside, &window, &x, &params, 9, &c),
        Err(Error::BudgetExceedsCapacity { .. })
    ));
    let mut wide = c;
    wide.window_size = 2;
    assert!(evict_layer(&outside, &window, &x, &params, 8, &wide).is_err());
    let mut grouped = c;
    grouped.gqa_group_size = 2;
    assert!(evict_layer(&outside, &window, &x, &params, 6, &grouped).is_err());
}

#[test]
fn streaming_keeps_sinks_and_recent() {
    let rows = vec![vec![0.1; 10]];
    let (outside, window, x, params) = scripted_layer(&rows);
    let ev = evict_layer(
        &outside,
        &window,
        &x,
        &params,
        1 + 7,
        &config(PolicyKind::StreamingLlm, 0.2),
    )
    .unwrap();
    let kept: Vec<usize> = (0..10).filter(|&j| ev.decision.head(0)[j]).collect();
    assert_eq!(kept, vec![0, 1, 2, 3, 7, 8, 9]);
}

#[test]
fn pooling_runs_before_the_mean() {
    let keys = Matrix::from_rows(&[[0.1f64.ln()], [0.7f64.ln()], [0.2f64.ln()]]);
    let q = Matrix::from_rows(&[[1.0]]);
    let pooled = window_scores(&q, &keys, 3, LogitScale::Unscaled).unwrap();
    for p in pooled {
        assert!((p - 0.7).abs() < 1e-12);
    }
}

struct RandomLayer {
    outside: LayerCache,
    window: LayerCache,
    x_win: Matrix,
    params: LayerParams,
}

fn random_layer(rng: &mut ChaCha8Rng, h: usize, g: usize, n: usize, m: usize) -> RandomLayer {
    let (d, dh) = (6, 4);
    let heads = (0..h)
        .map(|_| HeadParams::random(rng, d, dh, 0.8))
        .collect();
    let params = LayerParams::grouped(heads, g).unwrap();
    let mut gauss = |rows: usize| {
        Matrix::from_vec(
            rows,
            d,
            (0..rows * d).map(|_| StandardNormal.sample(rng)).collect(),
        )
        .unwrap()
    };
    let x = gauss(n);
    let x_win = gauss(m);
    RandomLayer {
        outside: params.project_cache(&x).unwrap(),
        window: params.project_cache(&x_win).unwrap(),
        x_win,
        params,
    }
}

fn evict(l: &RandomLayer, budget: usize, kind: PolicyKind, alpha: f64, m: usize) -> LayerEviction {
    let mut c = PolicyConfig::new(kind);
    c.window_size = m;
    c.alpha = alpha;
    c.gqa_group_size = l.params.kv_group_size();
    evict_layer(&l.outside, &l.window, &l.x_win, &l.params, budget, &c).unwrap()
}

#[test]
fn randomized_policy_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..60 {
        let g = [1, 2, 4][rng.random_range(0..3)];
        let h = g * rng.random_range(1..=3);
        let kv = h / g;
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=4);
        let l = random_layer(&mut rng, h, g, n, m);
        let budget = rng.random_range(kv * (m + 1)..=kv * (m + n));
        for kind in PolicyKind::ALL {
            let ev = evict(&l, budget, kind, 0.2, m);
            // retained count is the budget, counted once per shared cache head
            assert_eq!(ev.retained.total_len(), budget, "{kind}");
            assert_eq!(ev.retained.num_heads(), kv);
            assert_eq!(ev.decision.counts(), ev.allocation.per_head());
            assert!(ev.allocation.per_head().iter().all(|&b| b >= 1));
            // kept rows are the selected ones, in their original order
            for j in 0..kv {
                let src = &l.outside.head(j).unwrap().keys;
                let dst = &ev.retained.head(j).unwrap().keys;
                let picked: Vec<usize> = (0..n).filter(|&p| ev.decision.head(j)[p]).collect();
                for (r, &p) in picked.iter().enumerate() {
                    assert_eq!(dst.row(r), src.row(p));
                }
                assert_eq!(dst.row(picked.len()), l.window.head(j).unwrap().keys.row(0));
            }
        }
        for (ada, uni) in [
            (PolicyKind::AdaSnapKv, PolicyKind::SnapKv),
            (PolicyKind::AdaPyramid, PolicyKind::Pyramid),
        ] {
            assert_eq!(
                evict(&l, budget, ada, 0.0, m).decision,
                evict(&l, budget, uni, 0.2, m).decision
            );
            let a = evict(&l, budget, ada, 1.0, m);
            let u = evict(&l, budget, uni, 0.2, m);
            let c = 1.0;
            assert!(
                epsilon_star(&a.scores, &a.allocation, c).unwrap()
                    <= epsilon_star(&u.scores, &u.allocation, c).unwrap() + 1e-12
            );
        }
    }
}

#[test]
fn grouped_heads_share_one_decision() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = random_layer(&mut rng, 8, 4, 20, 2);
    let ev = evict(&l, 2 * 2 + 10, PolicyKind::AdaSnapKv, 0.2, 2);
    assert_eq!(ev.decision.num_heads(), 2);
    let expanded = ev.decision.expand_groups(4);
    assert_eq!(expanded.num_heads(), 8);
    for i in 0..8 {
        assert_eq!(expanded.head(i), ev.decision.head(i / 4));
    }
    assert_eq!(
        FlattenedCache::flatten(&ev.retained)
            .unwrap()
            .total_elements(),
        14
    );
}

#[test]
fn safeguard_can_keep_less_mass_than_uniform() {
    // the blend lands between adaptive and uniform but rounding can leave it
    // below uniform in retained mass
    let rows = vec![
        vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0],
        vec![0.2, 0.2, 0.2, 0.2, 0.1, 0.1],
        vec![0.05; 20],
    ];
    let caps = vec![6, 6, 20];
    let ada = adaptive_allocation(&rows, 10, TieBreak::HeadMajor).unwrap();
    assert_eq!(ada.per_head(), &[4, 6, 0]);
    let blend = safeguard_blend(&ada, 10, 0.2, &caps).unwrap();
    let uniform = uniform_allocation(10, 3, &caps).unwrap();
    assert_eq!(blend.per_head(), &[3, 4, 3]);
    assert_eq!(uniform.per_head(), &[4, 3, 3]);
    let e = |b: &BudgetAllocation| epsilon_star(&rows, b, 1.0).unwrap();
    assert!(e(&blend) > e(&uniform));
    assert!(e(&ada) < e(&uniform));
}
