use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use edgereg::baselines::{fit_baseline, BaselineKind, BaselineOptions};
use edgereg::edge_stream::{
    chronological_split, fraction_counts, ingest_reader, mask_new_nodes, InputFormat, SplitRequest, SplitSpec, TemporalGraph,
};
use edgereg::metrics::BucketSpec;
use edgereg::normalization::{NormMethod, NormalizerState};
use edgereg::sampling::{
    build_eval_samples, build_training_samples, EvalRegime, NodeScope, Sample, SamplingOptions, TrainingStrategy,
};
use edgereg::static_collapse::regroup;
use edgereg::temporal_model::{batch_gradients, Memory, ModelParams};

/// Random stream: `(nodes, timestamps, events)` with distinct `(s, d, t)`.
fn stream() -> impl Strategy<Value = TemporalGraph> {
    (2usize..7, 3usize..8)
        .prop_flat_map(|(n, t)| {
            let cell = (0..n as u32, 0..n as u32, 0..t as u64, 0.01f64..1e4);
            (Just(t), prop::collection::vec(cell, 1..60))
        })
        .prop_map(|(t, mut cells)| {
            // guarantee every timestamp is present
            for ts in 0..t as u64 {
                cells.push((0, 1, ts, 1.0 + ts as f64));
            }
            let mut seen = HashSet::new();
            let rows: Vec<(String, String, u64, f64)> = cells
                .into_iter()
                .filter(|&(s, d, ts, _)| seen.insert((s, d, ts)))
                .map(|(s, d, ts, w)| (format!("n{s}"), format!("n{d}"), ts, w))
                .collect();
            TemporalGraph::from_rows(rows).unwrap()
        })
}

fn split_of(g: &TemporalGraph) -> SplitSpec {
    let t = g.snapshot_count();
    let test = 1;
    let val = usize::from(t > 3);
    chronological_split(g, SplitRequest::Counts { train: t - test - val, val, test }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip_is_identical(g in stream()) {
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = ingest_reader(buf.as_slice(), InputFormat::Generic).unwrap();
        prop_assert_eq!(back.events(), g.events());
        prop_assert_eq!(back.nodes().labels(), g.nodes().labels());
        prop_assert_eq!(back.timestamps(), g.timestamps());
    }

    #[test]
    fn split_partitions_events(g in stream(), cut in 0.0f64..1.0) {
        let t = g.snapshot_count();
        let train = 1 + ((t - 2) as f64 * cut) as usize;
        let val = t - 1 - train;
        let s = chronological_split(&g, SplitRequest::Counts { train, val, test: 1 }).unwrap();
        let parts = [g.events_in(s.train()), g.events_in(s.val()), g.events_in(s.test())];
        prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), g.events().len());
        let joined: Vec<_> = parts.concat();
        prop_assert_eq!(joined.as_slice(), g.events());
        prop_assert_eq!(s.train().end, s.val().start);
        prop_assert_eq!(s.val().end, s.test().start);
    }

    #[test]
    fn fraction_counts_cover_total(total in 3usize..200, a in 0.05f64..1.0, b in 0.0f64..1.0, c in 0.05f64..1.0) {
        let sum = a + b + c;
        let (tr, va, te) = fraction_counts(total, a / sum, b / sum, c / sum).unwrap();
        prop_assert_eq!(tr + va + te, total);
    }

    #[test]
    fn masking_hides_new_nodes_from_training(g in stream(), seed in any::<u64>()) {
        let s = split_of(&g);
        let fraction = 1.0 / g.node_count() as f64;
        if let Ok((masked, ms)) = mask_new_nodes(&g, &s, fraction, seed) {
            prop_assert_eq!(ms.new_node_set.len(), 1);
            for e in masked.events_in(ms.train()) {
                prop_assert!(!ms.is_new(e.source) && !ms.is_new(e.destination));
            }
            prop_assert_eq!(masked.events_in(ms.val()), g.events_in(s.val()));
            prop_assert_eq!(masked.events_in(ms.test()), g.events_in(s.test()));
            let again = mask_new_nodes(&g, &s, fraction, seed).unwrap().1;
            prop_assert_eq!(again.new_node_set, ms.new_node_set);
        }
    }

    #[test]
    fn degree_shares_sum_to_one(g in stream()) {
        let s = split_of(&g);
        let norm = NormalizerState::fit(&g, &s, NormMethod::NodeDegree, 0.0, 1.0).unwrap();
        let mut sums: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for e in g.events_in(s.train()) {
            *sums.entry((e.source, e.timestamp)).or_default() += norm.apply(e).unwrap();
        }
        for v in sums.values() {
            prop_assert!((v - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn minmax_round_trip_and_range(g in stream(), a in -5.0f64..0.0, width in 0.5f64..10.0) {
        let s = split_of(&g);
        let b = a + width;
        if let Ok(norm) = NormalizerState::fit(&g, &s, NormMethod::Minmax, a, b) {
            for e in g.events_in(s.train()) {
                let y = norm.apply(e).unwrap();
                prop_assert!(y >= a && y <= b);
                let back = norm.invert(y, e.source, e.timestamp).unwrap();
                prop_assert!((back - e.weight).abs() <= 1e-9 * e.weight.max(1.0));
            }
        }
    }

    #[test]
    fn log_is_monotone_and_invertible(g in stream()) {
        let s = split_of(&g);
        let norm = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        let train = g.events_in(s.train());
        for (x, y) in train.iter().zip(train.iter().skip(1)) {
            let (nx, ny) = (norm.apply(x).unwrap(), norm.apply(y).unwrap());
            prop_assert_eq!(x.weight < y.weight, nx < ny);
            let back = norm.invert(nx, x.source, x.timestamp).unwrap();
            prop_assert!((back - x.weight).abs() <= 1e-9 * x.weight.max(1.0));
        }
    }

    #[test]
    fn regroup_is_linear(
        x in prop::collection::vec(-1e3f64..1e3, 1..16),
        y_seed in prop::collection::vec(-1e3f64..1e3, 16),
        q_pick in 0usize..16,
        alpha in -3.0f64..3.0,
    ) {
        let p = x.len();
        let q = 1 + q_pick % p;
        let y = &y_seed[..p];
        let mixed: Vec<f64> = x.iter().zip(y).map(|(a, b)| alpha * a + b).collect();
        let lhs = regroup(&mixed, q).unwrap();
        let (rx, ry) = (regroup(&x, q).unwrap(), regroup(y, q).unwrap());
        prop_assert_eq!(lhs.len(), q);
        for i in 0..q {
            prop_assert!((lhs[i] - (alpha * rx[i] + ry[i])).abs() <= 1e-9);
        }
        if p % q == 0 {
            let mean_x = x.iter().sum::<f64>() / p as f64;
            let mean_r = rx.iter().sum::<f64>() / q as f64;
            prop_assert!((mean_x - mean_r).abs() <= 1e-9);
        }
    }

    #[test]
    fn baseline_invariants(g in stream()) {
        let s = split_of(&g);
        let norm = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        let buckets = BucketSpec::covering(1e4, true);
        let opts = BaselineOptions::default();
        let mean = fit_baseline(BaselineKind::Mean, &g, &s, &norm, &buckets, opts).unwrap();
        let ha = fit_baseline(BaselineKind::HistoricalAverage, &g, &s, &norm, &buckets, opts).unwrap();
        let pers = fit_baseline(BaselineKind::Persistence, &g, &s, &norm, &buckets, opts).unwrap();
        let mut history: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
        for e in g.events_in(s.train()) {
            history.entry(e.pair()).or_default().push(norm.apply(e).unwrap());
        }
        for (&(u, v), values) in &history {
            let q = Sample::negative(u, v, s.test().start);
            let h = ha.predict(&q).unwrap();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(h >= lo - 1e-12 && h <= hi + 1e-12);
            prop_assert_eq!(mean.predict(&q).unwrap(), mean.global_mean);
            if values.len() == 1 {
                prop_assert_eq!(h, pers.predict(&q).unwrap());
            }
        }
        for ls in pers.last_seen.values() {
            prop_assert!(s.train().contains(&ls.timestamp));
        }
    }

    #[test]
    fn overall_eval_is_half_positive_and_collision_free(g in stream(), seed in any::<u64>()) {
        let s = split_of(&g);
        let norm = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        if let Ok(set) = build_eval_samples(&g, &s, EvalRegime::Overall, NodeScope::All, seed, &norm, SamplingOptions::default()) {
            prop_assert_eq!(set.positive_count(), set.negative_count());
            let mut seen = HashSet::new();
            for x in &set.samples {
                prop_assert!(seen.insert((x.source, x.destination, x.timestamp)));
                if !x.is_positive {
                    prop_assert!(!g.contains(x.source, x.destination, x.timestamp));
                    prop_assert!(x.source != x.destination);
                    prop_assert_eq!(x.target, 0.0);
                }
            }
        }
    }

    #[test]
    fn negative_sampling_respects_ratio(g in stream(), seed in any::<u64>(), ratio in 0.0f64..3.0) {
        let s = split_of(&g);
        let norm = NormalizerState::fit(&g, &s, NormMethod::Log, 0.0, 1.0).unwrap();
        if let Ok(set) = build_training_samples(&g, &s, TrainingStrategy::NegativeSampling, ratio, seed, &norm, SamplingOptions::default()) {
            let pos = set.positive_count();
            prop_assert_eq!(set.negative_count(), (ratio * pos as f64).floor() as usize);
            for x in &set.samples {
                prop_assert!(s.train().contains(&x.timestamp));
                if !x.is_positive {
                    prop_assert!(!g.contains(x.source, x.destination, x.timestamp));
                }
            }
            let again = build_training_samples(&g, &s, TrainingStrategy::NegativeSampling, ratio, seed, &norm, SamplingOptions::default()).unwrap();
            prop_assert_eq!(again.to_csv_bytes().unwrap(), set.to_csv_bytes().unwrap());
        }
    }

    #[test]
    fn gradients_commute_with_node_relabeling(
        seed in any::<u64>(),
        edges in prop::collection::vec((0u32..5, 0u32..5, -1.0f64..3.0), 1..12),
        rotate in 1u32..5,
    ) {
        use rand::SeedableRng;
        let nodes = 5usize;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::random(nodes, 3, 0.9, 0.5, &mut rng);
        let memory = Memory::new(nodes, 3);
        let batch: Vec<Sample> = edges
            .iter()
            .map(|&(s, d, y)| Sample { source: s, destination: d, timestamp: 0, target: y, is_positive: true, weight: 1.0 })
            .collect();
        let perm = |v: u32| (v + rotate) % nodes as u32;
        let mut moved = params.clone();
        for v in 0..nodes as u32 {
            let (src, dst) = (v as usize * 3, perm(v) as usize * 3);
            moved.embeddings[dst..dst + 3].copy_from_slice(&params.embeddings[src..src + 3]);
            moved.node_bias[perm(v) as usize] = params.node_bias[v as usize];
        }
        let moved_batch: Vec<Sample> = batch
            .iter()
            .map(|x| Sample { source: perm(x.source), destination: perm(x.destination), ..*x })
            .collect();
        let (l1, g1) = batch_gradients(&params, &memory, &batch);
        let (l2, g2) = batch_gradients(&moved, &memory, &moved_batch);
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        for v in 0..nodes {
            let w = perm(v as u32) as usize;
            prop_assert!((g1.node_bias[v] - g2.node_bias[w]).abs() <= 1e-12);
            for k in 0..3 {
                prop_assert!((g1.embeddings[v * 3 + k] - g2.embeddings[w * 3 + k]).abs() <= 1e-12);
            }
        }
    }
}
