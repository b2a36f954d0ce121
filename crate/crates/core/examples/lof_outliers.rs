//! Plant one chunk of far outliers and watch mean |LOF| fall once the
//! lowest-valued chunks are removed.

use cdash::dataset::{partition_fixed, split_train_validation};
use cdash::evaluation::{lof_average_after_removal, lof_scores};
use cdash::model::{Architecture, MetricSpec};
use cdash::synth;
use cdash::valuation::{cdash_value, rank_chunks, CdashConfig};

fn main() -> cdash::Result<()> {
    let ds = synth::two_class_blobs(1250, 10, 3.0, 0)?;
    let split = split_train_validation(&ds, 0.2, 0)?;
    let part = partition_fixed(&split.train, 50)?;
    let planted = 3;
    let train = synth::plant_far_outliers(&split.train, &part.rows_of(&[planted]), 20.0, 0);

    let lof = lof_scores(train.features.view(), 20)?;
    let rows = part.chunk(planted);
    let inside = lof[rows.clone()].iter().sum::<f64>() / rows.len() as f64;
    println!("mean LOF inside the planted chunk {inside:.2}");

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
    let pos = rank_chunks(&r.values).iter().position(|&j| j == planted);
    println!("planted chunk ranks {pos:?} from the bottom");
    for lambda in [0.0, 0.05, 0.1, 0.2] {
        let avg = lof_average_after_removal(&train, &part, &r.values, lambda, 20)?;
        println!("lambda {lambda:4.2}: mean |LOF| {avg:.3}");
    }
    Ok(())
}
