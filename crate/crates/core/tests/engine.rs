use cdash::corruption::flip_rows;
use cdash::dataset::{partition_fixed, split_train_validation, ChunkPartition, Dataset, Split};
use cdash::model::{init_params, Architecture, MetricSpec};
use cdash::seeds;
use cdash::synth;
use cdash::valuation::{
    cdash_value, chunk_value, rank_chunks, select_subsets, CdashConfig, SubsetPool,
};
use ndarray::Array2;

fn blobs_setup(n: usize, chunk: usize, seed: u64) -> (Split, ChunkPartition, Architecture) {
    let ds = synth::two_class_blobs(n, 6, 3.0, seed).unwrap();
    let split = split_train_validation(&ds, 0.2, seed).unwrap();
    let part = partition_fixed(&split.train, chunk).unwrap();
    let arch = Architecture::for_dataset(&split.train, [16, 8]).unwrap();
    (split, part, arch)
}

fn traced(k: usize, iters: usize, seed: u64) -> CdashConfig {
    CdashConfig {
        subset_count: k,
        subset_chunks: Some(2),
        max_iters: iters,
        eps: 0.0,
        seed,
        record_trace: true,
        ..CdashConfig::default()
    }
}

#[test]
fn used_subsets_never_contain_the_valued_chunk() {
    let (split, part, arch) = blobs_setup(500, 40, 1);
    let r = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &traced(12, 3, 4),
    )
    .unwrap();
    assert_eq!(r.trace.iterations.len(), 3);
    for it in &r.trace.iterations {
        assert_eq!(it.used.len(), part.len());
        for (j, used) in it.used.iter().enumerate() {
            assert!(!used.is_empty());
            let any_free = it.pool.subsets.iter().any(|s| !s.contains(&j));
            if any_free {
                assert!(
                    used.iter().all(|&i| !it.pool.subsets[i].contains(&j)),
                    "chunk {j}"
                );
            } else {
                assert_eq!(used.len(), it.pool.len());
            }
        }
    }
}

#[test]
fn every_pool_respects_cap_and_gate() {
    let (split, part, arch) = blobs_setup(600, 40, 2);
    let m = MetricSpec::ACCURACY;
    let r = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        m,
        &traced(16, 4, 9),
    )
    .unwrap();
    for it in &r.trace.iterations {
        assert_eq!(it.pool.len(), 16);
        assert!(it.pool.cap_holds());
        assert!(it.pool.membership.iter().all(|&c| c <= 4));
        for (score, &flagged) in it.pool.scores.iter().zip(&it.pool.violations) {
            assert!(flagged || *score >= 0.5);
        }
    }
}

#[test]
fn pool_examples() {
    let (split, part, arch) = blobs_setup(1250, 50, 3);
    assert_eq!(part.len(), 20);
    let cfg = CdashConfig {
        subset_count: 50,
        subset_chunks: Some(2),
        ..CdashConfig::default()
    };
    let pool = select_subsets(
        &part,
        &split.train,
        &split.validation,
        &arch,
        MetricSpec::ACCURACY,
        &cfg,
    )
    .unwrap();
    assert_eq!(pool.len(), 50);
    assert!(pool.membership.iter().all(|&m| m <= 12));
    assert_eq!(pool.membership.iter().sum::<usize>(), 100);

    let (split, part, arch) = blobs_setup(100, 10, 3);
    assert_eq!(part.len(), 8);
    let cfg = CdashConfig {
        subset_count: 4,
        subset_chunks: Some(1),
        ..CdashConfig::default()
    };
    let pool = select_subsets(
        &part,
        &split.train,
        &split.validation,
        &arch,
        MetricSpec::ACCURACY,
        &cfg,
    )
    .unwrap();
    assert!(pool.membership.iter().all(|&m| m <= 1));
}

#[test]
fn gate_screens_out_noise_chunks() {
    // half of the chunks carry random labels
    let ds = synth::two_class_blobs(1250, 6, 4.0, 5).unwrap();
    let split = split_train_validation(&ds, 0.2, 5).unwrap();
    let part = partition_fixed(&split.train, 100).unwrap();
    let noisy: Vec<usize> = part.rows_of(&[0, 2, 4, 6, 8]);
    let mut rng = seeds::rng(77);
    let train = shuffle_labels(&split.train, &noisy, &mut rng);
    let arch = Architecture::for_dataset(&train, [16, 8]).unwrap();
    let cfg = CdashConfig {
        subset_count: 8,
        subset_chunks: Some(2),
        threshold: 0.5,
        eta: 0.01,
        ..CdashConfig::default()
    };
    let pool = select_subsets(
        &part,
        &train,
        &split.validation,
        &arch,
        MetricSpec::ACCURACY,
        &cfg,
    )
    .unwrap();
    assert!(!pool.any_violation());
    assert!(pool.threshold_holds(MetricSpec::ACCURACY));
    assert!(pool.scores.iter().all(|&s| s >= 0.5));
}

fn shuffle_labels(ds: &Dataset, rows: &[usize], rng: &mut seeds::Rng) -> Dataset {
    use rand::Rng as _;
    let mut out = ds.clone();
    for &r in rows {
        out.targets[r] = f64::from(u8::from(rng.random_bool(0.5)));
    }
    out
}

#[test]
fn doubling_the_constant_doubles_values() {
    let (split, part, arch) = blobs_setup(500, 40, 6);
    let base = traced(12, 2, 1);
    let twice = CdashConfig {
        constant: 2.0,
        ..base.clone()
    };
    let a = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &base,
    )
    .unwrap();
    let b = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &twice,
    )
    .unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!(
            (2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300),
            "{x} vs {y}"
        );
    }
    assert_eq!(rank_chunks(&a.values), rank_chunks(&b.values));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (split, part, arch) = blobs_setup(500, 40, 7);
    let cfg = traced(12, 2, 3);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            cdash_value(
                &split.train,
                &split.validation,
                &part,
                &arch,
                MetricSpec::ACCURACY,
                &cfg,
            )
            .unwrap()
        })
    };
    let one = run(1);
    let many = run(8);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one.values), bits(&many.values));
    assert_eq!(one.history, many.history);
    assert_eq!(one.trace, many.trace);
}

#[test]
fn zero_eps_stops_at_the_iteration_cap() {
    let (split, part, arch) = blobs_setup(300, 30, 8);
    for cap in [1, 3, 5] {
        let cfg = CdashConfig {
            subset_count: 8,
            subset_chunks: Some(2),
            eps: 0.0,
            max_iters: cap,
            ..CdashConfig::default()
        };
        let r = cdash_value(
            &split.train,
            &split.validation,
            &part,
            &arch,
            MetricSpec::ACCURACY,
            &cfg,
        )
        .unwrap();
        assert_eq!(r.iterations_run, cap);
        assert_eq!(r.history.len(), cap);
        assert!(!r.converged);
    }
}

#[test]
fn constant_metric_gives_zero_values() {
    // zero inputs with every label 0: the hidden units stay dead, the head
    // only ever favours class 0, so validation accuracy is always 1
    let single = Dataset::classification(Array2::zeros((400, 4)), &vec![0; 400], 2).unwrap();
    let split = split_train_validation(&single, 0.2, 9).unwrap();
    let part = partition_fixed(&split.train, 32).unwrap();
    let arch = Architecture::for_dataset(&split.train, [8, 4]).unwrap();
    let r = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &traced(8, 2, 0),
    )
    .unwrap();
    assert!(r.values.iter().all(|&v| v == 0.0), "{:?}", r.values);
}

#[test]
fn identical_chunks_get_identical_values() {
    // chunks 0 and 1 hold the same rows; neither appears in the pool
    let base = synth::two_class_blobs(400, 4, 3.0, 10).unwrap();
    let mut order: Vec<usize> = (0..40).collect();
    order.extend(0..40);
    order.extend(40..320);
    let train = base.select(&order);
    let validation = base.select(&(320..400).collect::<Vec<_>>());
    let part = partition_fixed(&train, 40).unwrap();
    let arch = Architecture::for_dataset(&train, [8, 4]).unwrap();
    let pool = fixed_pool(&[&[2, 3], &[4, 5], &[6, 7], &[3, 8]], part.len());
    let cfg = CdashConfig {
        subset_count: 4,
        eta: 0.01,
        ..CdashConfig::default()
    };
    let w = init_params(&arch, 3).unwrap();
    let m = MetricSpec::ACCURACY;
    let v0 = chunk_value(&w, &train, &validation, &part, &pool, 0, m, &cfg).unwrap();
    let v1 = chunk_value(&w, &train, &validation, &part, &pool, 1, m, &cfg).unwrap();
    assert!((v0 - v1).abs() <= 1e-9);
    assert!(v0 != 0.0);
}

fn fixed_pool(subsets: &[&[usize]], chunks: usize) -> SubsetPool {
    let mut membership = vec![0; chunks];
    for s in subsets {
        for &c in *s {
            membership[c] += 1;
        }
    }
    SubsetPool {
        subsets: subsets.iter().map(|s| s.to_vec()).collect(),
        membership,
        threshold: 0.0,
        scores: vec![1.0; subsets.len()],
        attempts: vec![1; subsets.len()],
        violations: vec![false; subsets.len()],
    }
}

#[test]
fn null_chunks_at_a_stationary_point_are_worth_nothing() {
    // zero inputs and targets: the zero-bias init is already a stationary
    // point, so no step moves the model and every marginal vanishes
    let train = Dataset::regression(Array2::zeros((240, 3)), vec![0.0; 240]).unwrap();
    let val_x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 3 + j) as f64).sin());
    let validation =
        Dataset::regression(val_x, (0..40).map(|i| (i as f64).cos()).collect()).unwrap();
    let part = partition_fixed(&train, 20).unwrap();
    let arch = Architecture::for_dataset(&train, [8, 4]).unwrap();
    let cfg = CdashConfig {
        subset_count: 8,
        subset_chunks: Some(2),
        threshold: 10.0,
        max_iters: 2,
        ..CdashConfig::default()
    };
    let r = cdash_value(&train, &validation, &part, &arch, MetricSpec::RMSE, &cfg).unwrap();
    assert!(r.values.iter().all(|&v| v == 0.0), "{:?}", r.values);
}

#[test]
fn a_label_flipped_chunk_ranks_last() {
    let mut hits = 0;
    for seed in 0..5u64 {
        let ds = synth::two_class_blobs(1000, 20, 3.0, seed).unwrap();
        let split = split_train_validation(&ds, 0.2, seed).unwrap();
        let part = partition_fixed(&split.train, 100).unwrap();
        assert_eq!(part.len(), 8);
        let bad = (seed as usize * 3) % 8;
        let mut rng = seeds::rng(seed);
        let train = flip_rows(&split.train, &part.rows_of(&[bad]), &mut rng).unwrap();
        let arch = Architecture::for_dataset(&train, [64, 32]).unwrap();
        let cfg = CdashConfig {
            subset_count: 8,
            subset_chunks: Some(2),
            max_iters: 10,
            seed,
            ..CdashConfig::default()
        };
        let r = cdash_value(
            &train,
            &split.validation,
            &part,
            &arch,
            MetricSpec::ACCURACY,
            &cfg,
        )
        .unwrap();
        hits += usize::from(rank_chunks(&r.values)[0] == bad);
    }
    assert!(hits >= 4, "flipped chunk ranked last in {hits} of 5 seeds");
}
