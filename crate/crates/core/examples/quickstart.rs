//! Load a CSV, cut the training split into chunks and value each chunk.
//!
//! ```text
//! cargo run --release --example quickstart
//! ```

use cdash::dataset::{parse_table, partition_fixed, split_train_validation, Schema, Task};
use cdash::model::{Architecture, MetricSpec};
use cdash::synth;
use cdash::valuation::{cdash_value, rank_chunks, CdashConfig};

fn main() -> cdash::Result<()> {
    // any CSV with a target column works; here the table is built in memory
    let table = synth::to_table(&synth::two_class_blobs(1000, 8, 3.0, 0)?);
    let ds = parse_table(&table, &Schema::new("target", Task::Classification))?;

    let split = split_train_validation(&ds, 0.2, 0)?;
    let part = partition_fixed(&split.train, 50)?;
    let arch = Architecture::for_dataset(&split.train, [32, 16])?;
    let cfg = CdashConfig {
        subset_count: 16,
        subset_chunks: Some(2),
        max_iters: 10,
        ..CdashConfig::default()
    };
    let r = cdash_value(
        &split.train,
        &split.validation,
        &part,
        &arch,
        MetricSpec::ACCURACY,
        &cfg,
    )?;

    println!(
        "{} chunks, {} iterations, converged: {}",
        part.len(),
        r.iterations_run,
        r.converged
    );
    for j in rank_chunks(&r.values) {
        let rows = part.chunk(j);
        println!(
            "chunk {j:2} rows {:4}..{:4} value {:+.3e}",
            rows.start, rows.end, r.values[j]
        );
    }
    Ok(())
}
