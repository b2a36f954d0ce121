//! Flip the labels of a few chunks and check that they land at the bottom
//! of the ranking.

use cdash::corruption::flip_rows;
use cdash::dataset::{partition_fixed, split_train_validation};
use cdash::evaluation::{detection_recall, random_values};
use cdash::model::{Architecture, MetricSpec};
use cdash::valuation::{cdash_value, rank_chunks, CdashConfig};
use cdash::{seeds, synth};

fn main() -> cdash::Result<()> {
    let ds = synth::two_class_blobs(2500, 20, 3.0, 0)?;
    let split = split_train_validation(&ds, 0.2, 0)?;
    let part = partition_fixed(&split.train, 100)?;
    let bad = [3, 8, 11, 17];
    let rows = part.rows_of(&bad);
    let train = flip_rows(&split.train, &rows, &mut seeds::rng(7))?;

    let arch = Architecture::for_dataset(&train, [64, 32])?;
    let cfg = CdashConfig {
        subset_count: 20,
        subset_chunks: Some(2),
        max_iters: 15,
        ..CdashConfig::default()
    };
    let r = cdash_value(
        &train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &cfg,
    )?;

    println!("flipped chunks {bad:?}");
    println!("lowest five    {:?}", &rank_chunks(&r.values)[..5]);
    let ours = detection_recall(&r.values, &rows, &part, 0.2)?;
    let chance = detection_recall(&random_values(part.len(), 0), &rows, &part, 0.2)?;
    println!("recall at 20% removal: {ours:.2} (random values: {chance:.2})");
    Ok(())
}
