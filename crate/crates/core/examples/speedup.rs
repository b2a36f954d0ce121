//! Time chunk valuation against per-row TMC on the same data.
//!
//! ```text
//! cargo run --release --example speedup -- 2000
//! ```

use cdash::baselines::{tmc_shapley, TmcConfig};
use cdash::dataset::{partition_fixed, split_train_validation};
use cdash::evaluation::measure_speedup;
use cdash::model::{Architecture, MetricSpec};
use cdash::synth;
use cdash::valuation::{cdash_value, CdashConfig};

fn main() -> cdash::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let ds = synth::two_class_blobs(n + n / 4, 20, 3.0, 0)?;
    let split = split_train_validation(&ds, 0.2, 0)?;
    let part = partition_fixed(&split.train, 250)?;
    let arch = Architecture::for_dataset(&split.train, [64, 32])?;
    let m = MetricSpec::ACCURACY;
    let cd = CdashConfig {
        subset_count: 48,
        subset_chunks: Some(2),
        max_iters: 2,
        ..CdashConfig::default()
    };
    let tmc = TmcConfig {
        max_permutations: 2,
        ..TmcConfig::default()
    };
    let report = measure_speedup(
        || tmc_shapley(&split.train, &split.validation, &arch, m, &tmc).map(|_| ()),
        || cdash_value(&split.train, &split.validation, &part, &arch, m, &cd).map(|_| ()),
        true,
    )?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialises")
    );
    Ok(())
}
