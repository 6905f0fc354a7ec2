//! Property tests for the library's structural invariants.

use proptest::prelude::*;

use retseg_core::{
    filter_confident_masks, fuse, l2_normalize, mask_average_pool, miou, pseudo_logits,
    resize_mask, stitch_semantic_map, Embedding, EmbeddingDatabase, EmbeddingRecord, ExactIndex,
    FeatureMap, InstanceMask, MaskPrediction, OverlapStrategy, ProbabilityVector, RetrievalHit,
    SemanticMap, VectorIndex, WeightGrid, VOID_LABEL,
};

fn arb_map(max_c: usize, max_hw: usize) -> impl Strategy<Value = FeatureMap> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(|(c, h, w)| {
        proptest::collection::vec(-10.0f32..10.0, c * h * w)
            .prop_map(move |data| FeatureMap::new(c, h, w, data).unwrap())
    })
}

fn arb_weights(h: usize, w: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(0.0f32..=1.0, h * w).prop_filter("needs nonzero sum", |ws| {
        ws.iter().map(|&x| x as f64).sum::<f64>() > 1e-3
    })
}

fn arb_mask(max_hw: usize) -> impl Strategy<Value = InstanceMask> {
    (1..=max_hw, 1..=max_hw).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w)
            .prop_filter("mask needs a set cell", |cells| cells.iter().any(|&c| c))
            .prop_map(move |cells| InstanceMask::new(h, w, cells).unwrap())
    })
}

proptest! {
    // Pooling is invariant to uniform scaling of the weight grid.
    #[test]
    fn pooling_scale_invariance(
        map in arb_map(3, 6),
        seed_weights in proptest::collection::vec(0.0f32..=1.0, 36),
        s1 in 0.05f32..=1.0,
        s2 in 0.05f32..=1.0,
    ) {
        let (h, w) = map.spatial_dims();
        let base: Vec<f32> = seed_weights[..h * w].to_vec();
        prop_assume!(base.iter().map(|&x| x as f64).sum::<f64>() > 1e-3);
        let a = WeightGrid::new(h, w, base.iter().map(|&x| x * s1).collect()).unwrap();
        let b = WeightGrid::new(h, w, base.iter().map(|&x| x * s2).collect()).unwrap();
        let ea = mask_average_pool(&map, &a).unwrap();
        let eb = mask_average_pool(&map, &b).unwrap();
        for (x, y) in ea.values().iter().zip(eb.values()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }

    // Pooled output stays inside the per-channel min/max over supported cells.
    #[test]
    fn pooling_bounded_by_supported_extremes(map in arb_map(3, 6), raw in proptest::collection::vec(0.0f32..=1.0, 36)) {
        let (h, w) = map.spatial_dims();
        let ws = &raw[..h * w];
        prop_assume!(ws.iter().map(|&x| x as f64).sum::<f64>() > 1e-3);
        let grid = WeightGrid::new(h, w, ws.to_vec()).unwrap();
        let e = mask_average_pool(&map, &grid).unwrap();
        for c in 0..map.channels() {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for (i, &v) in map.channel(c).iter().enumerate() {
                if ws[i] > 0.0 {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            prop_assert!(e.values()[c] >= lo - 1e-4 && e.values()[c] <= hi + 1e-4);
        }
    }

    // Pooling agrees with a direct f64 weighted-mean oracle, including on
    // fractional weights produced by resize_mask.
    #[test]
    fn pooling_matches_direct_oracle(map in arb_map(3, 6), mask in arb_mask(12)) {
        let grid = resize_mask(&mask, map.spatial_dims()).unwrap();
        let e = mask_average_pool(&map, &grid).unwrap();
        let wsum: f64 = grid.weights().iter().map(|&x| x as f64).sum();
        for c in 0..map.channels() {
            let num: f64 = map
                .channel(c)
                .iter()
                .zip(grid.weights())
                .map(|(&v, &w)| v as f64 * w as f64)
                .sum();
            prop_assert!((e.values()[c] as f64 - num / wsum).abs() < 1e-5);
        }
    }

    // A superset mask never yields a smaller resampled weight sum.
    #[test]
    fn resize_weight_sum_monotone_in_area(mask in arb_mask(10), extra in proptest::collection::vec(any::<bool>(), 100), th in 1usize..=6, tw in 1usize..=6) {
        let (h, w) = mask.dims();
        let superset: Vec<bool> = mask
            .cells()
            .iter()
            .zip(&extra[..h * w])
            .map(|(&a, &b)| a || b)
            .collect();
        let superset = InstanceMask::new(h, w, superset).unwrap();
        let small = resize_mask(&mask, (th, tw)).unwrap();
        let big = resize_mask(&superset, (th, tw)).unwrap();
        prop_assert!(big.sum() >= small.sum() - 1e-9);
    }

    #[test]
    fn l2_normalize_is_idempotent(values in proptest::collection::vec(-100.0f32..100.0, 1..32)) {
        prop_assume!(values.iter().any(|&v| v.abs() > 1e-3));
        let e = Embedding::new(values).unwrap();
        let once = l2_normalize(&e).unwrap();
        let twice = l2_normalize(&once).unwrap();
        prop_assert!(once.is_normalized());
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    // Exact search equals a brute-force full sort (same similarity, same tie
    // rule) on every random instance.
    #[test]
    fn exact_search_matches_full_sort(
        n in 1usize..120,
        dim in 2usize..12,
        k in 1usize..24,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut db = EmbeddingDatabase::create(dim).unwrap();
        db.register_class("c").unwrap();
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            prop_assume!(v.iter().any(|&x| x != 0.0));
            let e = Embedding::new(v).unwrap().l2_normalized().unwrap();
            db.insert(EmbeddingRecord::new(e, 0, i as u64)).unwrap();
        }
        let q_raw: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        prop_assume!(q_raw.iter().any(|&x| x != 0.0));
        let q = Embedding::new(q_raw).unwrap();

        let snap = db.snapshot();
        let index = ExactIndex::build(snap.clone());
        let hits = index.query(&q, k).unwrap();

        // Full-sort oracle with the same similarity definition and tie rule.
        let q_norm = q.norm();
        let mut oracle: Vec<(f32, usize)> = (0..snap.len())
            .map(|i| {
                let dot: f64 = snap.vector(i).iter().zip(q.values()).map(|(&a, &b)| a as f64 * b as f64).sum();
                ((dot / q_norm) as f32, i)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        oracle.truncate(k.min(n));

        prop_assert_eq!(hits.len(), k.min(n));
        for (hit, &(sim, idx)) in hits.iter().zip(&oracle) {
            prop_assert_eq!(hit.record_index, idx);
            prop_assert_eq!(hit.similarity.to_bits(), sim.to_bits());
        }
    }

    // Eq. 3 output is a distribution with strictly interior entries, and the
    // epsilon shift cancels.
    #[test]
    fn pseudo_logits_is_a_distribution(
        sims in proptest::collection::vec(-1.0f32..=1.0, 1..48),
        classes in proptest::collection::vec(0u32..8, 1..48),
        eps1 in -5.0f32..=5.0,
        eps2 in -5.0f32..=5.0,
    ) {
        let hits: Vec<RetrievalHit> = sims
            .iter()
            .zip(&classes)
            .map(|(&s, &c)| RetrievalHit { record_index: 0, class_id: c, similarity: s })
            .collect();
        let p1 = pseudo_logits(&hits, 8, eps1).unwrap();
        let p2 = pseudo_logits(&hits, 8, eps2).unwrap();
        let sum: f64 = p1.values().iter().map(|&v| v as f64).sum();
        prop_assert!((sum - 1.0).abs() < 1e-5);
        for (&a, &b) in p1.values().iter().zip(p2.values()) {
            prop_assert!(a > 0.0 && a < 1.0);
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    // Raising every hit of one class never lowers that class's probability.
    #[test]
    fn pseudo_logits_monotone_in_class_similarity(
        sims in proptest::collection::vec(-0.9f32..=0.9, 4..32),
        classes in proptest::collection::vec(0u32..5, 4..32),
        delta in 0.001f32..=0.1,
    ) {
        let n = sims.len().min(classes.len());
        let hits: Vec<RetrievalHit> = (0..n)
            .map(|i| RetrievalHit { record_index: 0, class_id: classes[i], similarity: sims[i] })
            .collect();
        let target = hits[0].class_id;
        let boosted: Vec<RetrievalHit> = hits
            .iter()
            .map(|h| {
                let mut h = *h;
                if h.class_id == target {
                    h.similarity += delta;
                }
                h
            })
            .collect();
        let before = pseudo_logits(&hits, 5, 0.0).unwrap();
        let after = pseudo_logits(&boosted, 5, 0.0).unwrap();
        prop_assert!(after.values()[target as usize] >= before.values()[target as usize] - 1e-7);
    }

    // Eq. 4 is a switch, never a blend, and the boundary routes to retrieval.
    #[test]
    fn fusion_gate_dichotomy(
        base in proptest::collection::vec(0.0f32..=1.0, 1..16),
        ret in proptest::collection::vec(0.0f32..=1.0, 1..16),
        threshold in 0.0f32..=1.0,
        lambda in 0.01f32..=5.0,
    ) {
        let len = base.len().min(ret.len());
        let p_base = ProbabilityVector::new(base[..len].to_vec(), false).unwrap();
        let p_ret = ProbabilityVector::new(ret[..len].to_vec(), false).unwrap();
        let out = fuse(&p_ret, &p_base, lambda, threshold).unwrap();

        let scaled: Vec<f32> = p_ret.values().iter().map(|&v| lambda * v).collect();
        let is_base = out.values() == p_base.values();
        let is_scaled = out.values() == scaled.as_slice();
        prop_assert!(is_base || is_scaled);
        if p_base.max() > threshold {
            prop_assert!(is_base);
        } else {
            prop_assert!(is_scaled);
        }
    }

    // λ never changes the within-branch argmax.
    #[test]
    fn lambda_preserves_argmax(values in proptest::collection::vec(0.0f32..=1.0, 1..16), lambda in 0.01f32..=8.0) {
        let p = ProbabilityVector::new(values, false).unwrap();
        prop_assert_eq!(p.scaled(lambda).argmax(), p.argmax());
    }

    // Append-only: previously returned indices and ids stay valid forever.
    #[test]
    fn database_is_append_only(names in proptest::collection::vec("[a-e]{1,3}", 1..24), axes in proptest::collection::vec(0usize..4, 1..24)) {
        let mut db = EmbeddingDatabase::create(4).unwrap();
        let mut seen_ids: Vec<(String, u32)> = Vec::new();
        let mut seen_records: Vec<(usize, u32)> = Vec::new();
        for (name, &axis) in names.iter().zip(&axes) {
            let id = db.register_class(name).unwrap();
            seen_ids.push((name.clone(), id));
            let mut v = vec![0.0f32; 4];
            v[axis] = 1.0;
            let idx = db
                .insert(EmbeddingRecord::new(Embedding::new(v).unwrap(), id, 0))
                .unwrap();
            seen_records.push((idx, id));

            for (n, i) in &seen_ids {
                prop_assert_eq!(db.registry().id_of(n), Some(*i));
            }
            for (idx, class) in &seen_records {
                prop_assert_eq!(db.record(*idx).unwrap().class_id, *class);
            }
        }
        let stats = db.stats();
        prop_assert_eq!(stats.per_class_counts.iter().sum::<u64>(), stats.total_records);
    }

    #[test]
    fn persistence_roundtrip_random(dim in 1usize..6, n in 0usize..20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut db = EmbeddingDatabase::with_normalized(dim, false).unwrap();
        db.register_class("a").unwrap();
        db.register_class("b").unwrap();
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-5.0f32..5.0)).collect();
            db.insert(EmbeddingRecord::new(
                Embedding::new(v).unwrap(),
                (i % 2) as u32,
                i as u64,
            ))
            .unwrap();
        }
        let mut bytes = Vec::new();
        db.save(&mut bytes).unwrap();
        let back = EmbeddingDatabase::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.records(), db.records());
        let mut bytes2 = Vec::new();
        back.save(&mut bytes2).unwrap();
        prop_assert_eq!(bytes, bytes2);
    }

    // mIoU is invariant under a consistent relabeling of the class ids.
    #[test]
    fn miou_relabel_invariance(
        labels in proptest::collection::vec((0u32..4, 0u32..4), 4..40),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let w = labels.len();
        let pred = SemanticMap::new(1, w, labels.iter().map(|&(p, _)| p).collect()).unwrap();
        let gt = SemanticMap::new(1, w, labels.iter().map(|&(_, g)| g).collect()).unwrap();

        let mut perm: Vec<u32> = (0..4).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed);
        perm.shuffle(&mut rng);

        let relabel = |m: &SemanticMap| {
            SemanticMap::new(
                1,
                w,
                m.labels().iter().map(|&l| perm[l as usize]).collect(),
            )
            .unwrap()
        };
        let a = miou(&pred, &gt, 4, true).unwrap();
        let b = miou(&relabel(&pred), &relabel(&gt), 4, true).unwrap();
        prop_assert!((a.mean - b.mean).abs() < 1e-12);
    }

    // Stitching non-overlapping predictions is order-independent.
    #[test]
    fn stitch_order_invariant_for_disjoint_masks(assign in proptest::collection::vec(0u8..3, 9), swap in any::<bool>()) {
        let build_mask = |owner: u8| -> Option<InstanceMask> {
            let cells: Vec<bool> = assign.iter().map(|&a| a == owner).collect();
            InstanceMask::new(3, 3, cells).ok()
        };
        let mut preds = Vec::new();
        for owner in 0..3u8 {
            if let Some(mask) = build_mask(owner) {
                preds.push(
                    MaskPrediction::new(mask, owner as u32, 0.5 + 0.1 * owner as f32, 0.9).unwrap(),
                );
            }
        }
        prop_assume!(!preds.is_empty());
        let forward = stitch_semantic_map(&preds, (3, 3), OverlapStrategy::Product).unwrap();
        let mut shuffled = preds.clone();
        if swap {
            shuffled.reverse();
        }
        let backward = stitch_semantic_map(&shuffled, (3, 3), OverlapStrategy::Product).unwrap();
        prop_assert_eq!(forward.labels(), backward.labels());
    }

    // Filtering returns a subsequence of its input.
    #[test]
    fn filter_returns_subsequence(scores in proptest::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 0..16), ct in 0.0f32..=1.0, mt in 0.0f32..=1.0) {
        let preds: Vec<MaskPrediction> = scores
            .iter()
            .enumerate()
            .map(|(i, &(c, m))| {
                MaskPrediction::new(InstanceMask::full(1, 1).unwrap(), i as u32, c, m).unwrap()
            })
            .collect();
        let kept = filter_confident_masks(preds.clone(), ct, mt);
        let ids: Vec<u32> = kept.iter().map(|p| p.class_id).collect();
        let mut last = None;
        for id in &ids {
            if let Some(prev) = last {
                prop_assert!(*id > prev);
            }
            last = Some(*id);
            prop_assert!(preds.iter().any(|p| p.class_id == *id));
        }
        for p in &kept {
            prop_assert!(p.class_confidence >= ct && p.mask_score >= mt);
        }
    }

    // Void ground-truth pixels never influence ignore_void scores.
    #[test]
    fn void_pixels_are_ignored(labels in proptest::collection::vec((0u32..3, 0u32..3), 4..30), void_at in proptest::collection::vec(any::<bool>(), 30)) {
        let w = labels.len();
        let pred = SemanticMap::new(1, w, labels.iter().map(|&(p, _)| p).collect()).unwrap();
        let gt_plain = SemanticMap::new(1, w, labels.iter().map(|&(_, g)| g).collect()).unwrap();
        // Replace the prediction under voided gt pixels too; if void pixels
        // leak into the counts this changes the score.
        let mut gt_voided = gt_plain.labels().to_vec();
        let mut pred_mangled = pred.labels().to_vec();
        for i in 0..w {
            if void_at[i % void_at.len()] {
                gt_voided[i] = VOID_LABEL;
                pred_mangled[i] = (pred_mangled[i] + 1) % 3;
            }
        }
        prop_assume!(gt_voided.iter().any(|&g| g != VOID_LABEL));
        let gt_voided = SemanticMap::new(1, w, gt_voided).unwrap();
        let pred_mangled = SemanticMap::new(1, w, pred_mangled).unwrap();

        let a = miou(&pred, &gt_voided, 3, true).unwrap();
        let b = miou(&pred_mangled, &gt_voided, 3, true).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    }
}
