//! Retrain after dropping the lowest-valued chunks and compare against
//! dropping chunks at random.

use cdash::corruption::flip_rows;
use cdash::dataset::{partition_fixed, split_train_validation};
use cdash::evaluation::{random_values, removal_curve, RemovalConfig};
use cdash::model::{Architecture, MetricSpec, TrainConfig};
use cdash::valuation::{cdash_value, CdashConfig};
use cdash::{seeds, synth};

fn main() -> cdash::Result<()> {
    let ds = synth::two_class_blobs(2500, 20, 3.0, 1)?;
    let split = split_train_validation(&ds, 0.2, 1)?;
    let part = partition_fixed(&split.train, 100)?;
    let train = flip_rows(
        &split.train,
        &part.rows_of(&[0, 5, 9, 14]),
        &mut seeds::rng(1),
    )?;
    let arch = Architecture::for_dataset(&train, [64, 32])?;
    let m = MetricSpec::ACCURACY;

    let cfg = CdashConfig {
        subset_count: 20,
        subset_chunks: Some(2),
        max_iters: 15,
        ..CdashConfig::default()
    };
    let values = cdash_value(&train, &split.validation, &part, &arch, m, &cfg)?.values;

    let lambdas = [0.0, 0.1, 0.2, 0.3, 0.4];
    let rc = RemovalConfig {
        train: TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        },
        repeats: 3,
        seed: 1,
    };
    let ours = removal_curve(
        &train,
        &split.validation,
        &part,
        &values,
        &lambdas,
        &arch,
        m,
        &rc,
    )?;
    let rand = removal_curve(
        &train,
        &split.validation,
        &part,
        &random_values(part.len(), 1),
        &lambdas,
        &arch,
        m,
        &rc,
    )?;
    println!("lambda  lowest-first  random");
    for (i, l) in lambdas.iter().enumerate() {
        println!(
            "{l:6.1}  {:12.3}  {:6.3}",
            ours.mean_scores[i], rand.mean_scores[i]
        );
    }
    Ok(())
}
