//! Write the demo CSV files used by the CLI walkthrough in the README.
//!
//! ```text
//! cargo run --release --example make_data -- demo
//! ```

use std::path::PathBuf;

use cdash::synth;

fn main() -> cdash::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    std::fs::create_dir_all(&dir).map_err(|source| cdash::Error::Io {
        path: dir.clone(),
        source,
    })?;

    let blobs = synth::two_class_blobs(2500, 20, 3.0, 0)?;
    synth::to_table(&blobs).write(&dir.join("blobs.csv"))?;

    let series = synth::hourly_series(75, 0.3, 0)?;
    synth::to_table(&series).write(&dir.join("hourly.csv"))?;

    println!("wrote {0}/blobs.csv and {0}/hourly.csv", dir.display());
    Ok(())
}
