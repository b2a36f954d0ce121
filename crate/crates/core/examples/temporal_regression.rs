//! Daily chunks over an hourly series with noise-corrupted days, valued
//! under RMSE.

use cdash::corruption::noise_rows;
use cdash::dataset::{partition_temporal, split_train_validation, Granularity};
use cdash::evaluation::{detection_recall, removal_curve, RemovalConfig};
use cdash::model::{evaluate_metric, init_params, sgd_step, Architecture, MetricSpec, TrainConfig};
use cdash::valuation::{cdash_value, CdashConfig};
use cdash::{seeds, synth};

fn main() -> cdash::Result<()> {
    let ds = synth::hourly_series(75, 0.3, 0)?;
    // timestamped data: the latest fifth is held out for validation
    let split = split_train_validation(&ds, 0.2, 0)?;
    let part = partition_temporal(&split.train, Granularity::Daily)?;
    let days = [2, 9, 14, 21, 27, 33, 40, 46, 51, 58];
    let rows = part.rows_of(&days);
    let train = noise_rows(&split.train, &rows, 3.0, &mut seeds::rng(5))?;

    let m = MetricSpec::RMSE;
    let arch = Architecture::for_dataset(&train, [64, 32])?;
    // gate at the RMSE one full-data step reaches
    let (x, y) = train.view();
    let stepped = sgd_step(&init_params(&arch, 0)?, x, y, 0.001)?;
    let threshold = m.raw(evaluate_metric(&stepped, &split.validation, m)?);
    let cfg = CdashConfig {
        subset_count: 20,
        subset_chunks: Some(2),
        threshold,
        max_iters: 10,
        ..CdashConfig::default()
    };
    let r = cdash_value(&train, &split.validation, &part, &arch, m, &cfg)?;

    let lambda = days.len() as f64 / part.len() as f64;
    println!("{} daily chunks, gate rmse {threshold:.3}", part.len());
    println!(
        "corrupted-day recall {:.2}",
        detection_recall(&r.values, &rows, &part, lambda)?
    );
    let rc = RemovalConfig {
        train: TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        },
        repeats: 3,
        seed: 0,
    };
    let curve = removal_curve(
        &train,
        &split.validation,
        &part,
        &r.values,
        &[0.0, lambda],
        &arch,
        m,
        &rc,
    )?;
    println!(
        "rmse {:.3} -> {:.3} after removal",
        m.raw(curve.mean_scores[0]),
        m.raw(curve.mean_scores[1])
    );
    Ok(())
}
