use adakv::allocation::{enforce_floor, global_topk, largest_remainder};
use adakv::attention::{masked_softmax, softmax};
use adakv::loss::top_sum;
use adakv::tensor::Matrix;
use adakv::*;
use proptest::prelude::*;

fn row(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 1..=max_len).prop_map(|v| {
        let v: Vec<f64> = v.into_iter().map(|x| x + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn rows(max_heads: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(row(max_len), 1..=max_heads)
}

fn mass(rows: &[Vec<f64>], b: &BudgetAllocation) -> f64 {
    rows.iter()
        .zip(b.per_head())
        .map(|(r, &k)| top_sum(r, k))
        .sum()
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..40), shift in -100.0f64..100.0) {
        let p = softmax(&logits).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&w| w >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn masking_equals_renormalizing(
        logits in prop::collection::vec(-20.0f64..20.0, 1..30),
        seed in any::<u64>(),
    ) {
        let n = logits.len();
        let mut keep: Vec<bool> = (0..n).map(|j| (seed >> (j % 64)) & 1 == 1).collect();
        keep[(seed as usize) % n] = true;
        let masked = masked_softmax(&logits, &keep).unwrap();
        let renorm = renormalized_weights(&softmax(&logits).unwrap(), &keep).unwrap();
        for ((m, r), &k) in masked.iter().zip(&renorm).zip(&keep) {
            prop_assert!((m - r).abs() < 1e-9);
            if !k {
                prop_assert_eq!(*m, 0.0);
            }
        }
    }

    #[test]
    fn largest_remainder_keeps_the_total(reals in prop::collection::vec(0.0f64..50.0, 1..10)) {
        let total = reals.iter().sum::<f64>().round() as usize;
        let ints = largest_remainder(&reals, total);
        prop_assert_eq!(ints.iter().sum::<usize>(), total);
        for (&i, &r) in ints.iter().zip(&reals) {
            prop_assert!((i as f64 - r).abs() < 2.0);
        }
    }

    #[test]
    fn allocations_keep_the_total(rows in rows(6, 20), frac in 0.0f64..=1.0, alpha in 0.0f64..=1.0) {
        let caps: Vec<usize> = rows.iter().map(Vec::len).collect();
        let capacity: usize = caps.iter().sum();
        let total = (frac * capacity as f64) as usize;
        let h = rows.len();
        let uni = uniform_allocation(total, h, &caps).unwrap();
        let ada = adaptive_allocation(&rows, total, TieBreak::HeadMajor).unwrap();
        let blend = safeguard_blend(&ada, total, alpha, &caps).unwrap();
        for b in [&uni, &ada, &blend] {
            prop_assert_eq!(b.total(), total);
            prop_assert!(b.per_head().iter().zip(&caps).all(|(x, c)| x <= c));
        }
        prop_assert_eq!(global_topk(&rows, total, TieBreak::PositionMajor).unwrap().total(), total);
        prop_assert!(mass(&rows, &ada) >= mass(&rows, &uni) - 1e-12);
        prop_assert!(mass(&rows, &ada) >= mass(&rows, &blend) - 1e-12);
        if total >= h {
            let floored = enforce_floor(&blend, 1, &caps).unwrap();
            prop_assert_eq!(floored.total(), total);
            prop_assert!(floored.per_head().iter().all(|&b| b >= 1));
        }
    }

    #[test]
    fn safeguard_keeps_a_floor(rows in rows(6, 12), total in 0usize..60, alpha in 0.0f64..1.0) {
        // caps that never bind
        let caps = vec![total; rows.len()];
        let h = rows.len();
        let padded: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.resize(total.max(r.len()), 0.0);
                r
            })
            .collect();
        let ada = adaptive_allocation(&padded, total, TieBreak::HeadMajor).unwrap();
        let blend = safeguard_blend(&ada, total, alpha, &caps).unwrap();
        let floor = ((1.0 - alpha) * total as f64 / h as f64).floor() as i64 - 1;
        prop_assert!(blend.per_head().iter().all(|&b| b as i64 >= floor));
    }

    #[test]
    fn more_budget_never_raises_the_bound(rows in rows(4, 10), c in 0.0f64..5.0, seed in any::<u64>()) {
        let base: Vec<usize> = rows.iter().enumerate().map(|(i, r)| (seed as usize >> i) % (r.len() + 1)).collect();
        let before = epsilon_star(&rows, &BudgetAllocation::new(base.clone()), c).unwrap();
        for i in 0..rows.len() {
            if base[i] < rows[i].len() {
                let mut more = base.clone();
                more[i] += 1;
                prop_assert!(epsilon_star(&rows, &BudgetAllocation::new(more), c).unwrap() <= before + 1e-12);
            }
        }
    }

    #[test]
    fn pyramid_schedule_shape(avg in 0usize..2000, layers in 1usize..40, lo in 0.1f64..2.0, extra in 0.0f64..2.0) {
        let b = pyramid_layer_budgets(avg, layers, lo + extra, lo).unwrap();
        prop_assert_eq!(b.len(), layers);
        prop_assert_eq!(b.iter().sum::<usize>(), avg * layers);
        prop_assert!(b.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn topk_keeps_the_largest(a in row(30), k_seed in any::<usize>()) {
        let k = k_seed % (a.len() + 1);
        let keep = topk_decision(&a, k).unwrap();
        prop_assert_eq!(keep.iter().filter(|&&b| b).count(), k);
        let low = a.iter().zip(&keep).filter(|(_, &b)| b).map(|(w, _)| *w).fold(f64::INFINITY, f64::min);
        let high = a.iter().zip(&keep).filter(|(_, &b)| !b).map(|(w, _)| *w).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(low >= high);
    }

    #[test]
    fn layout_round_trips(lengths in prop::collection::vec(0usize..6, 1..6), dh in 1usize..4) {
        let mut cache = LayerCache::new(lengths.len(), dh);
        let mut x = 0.0;
        for (i, &n) in lengths.iter().enumerate() {
            for _ in 0..n {
                let k: Vec<f64> = (0..dh).map(|_| { x += 1.0; x }).collect();
                let v: Vec<f64> = k.iter().map(|t| -t).collect();
                cache.append_kv(i, &k, &v).unwrap();
            }
        }
        let flat = FlattenedCache::flatten(&cache).unwrap();
        let mut acc = 0;
        for (i, &n) in lengths.iter().enumerate() {
            prop_assert_eq!(flat.offsets()[i], acc);
            acc += n;
            let view = flat.head_slice(i).unwrap();
            let head = cache.head(i).unwrap();
            prop_assert_eq!(view.keys, head.keys.as_slice());
            prop_assert_eq!(view.values, head.values.as_slice());
        }
        prop_assert_eq!(flat.data().len(), 2 * acc * dh);
        prop_assert_eq!(&flat.unflatten(), &cache);
        prop_assert_eq!(FlattenedCache::from_bytes(&flat.to_bytes()).unwrap(), flat);
    }

    #[test]
    fn output_is_linear_in_values(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = LayerParams::random(&mut rng, 3, 4, 2, 1.0);
        let x = Matrix::from_vec(5, 4, (0..20).map(|i| ((i as f64) * 0.7 + seed as f64).sin()).collect()).unwrap();
        let cache = params.project_cache(&x).unwrap();
        let w = AttentionWeights::new(vec![vec![0.2; 5]; 3]).unwrap();
        let y = attention_output(&w, &cache, &params).unwrap();
        let all = EvictionDecision::all_retained(&cache.lengths());
        prop_assert_eq!(&post_eviction_output(&w, &all, &cache, &params).unwrap(), &y);
        let doubled = LayerCache::from_heads(
            2,
            cache.heads().iter().map(|h| adakv::attention::HeadKv { keys: h.keys.clone(), values: h.values.scale(2.0) }).collect(),
        ).unwrap();
        for (a, b) in attention_output(&w, &doubled, &params).unwrap().iter().zip(&y) {
            prop_assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
