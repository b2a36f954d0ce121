//! Truncated Monte-Carlo estimates converging on exact values for a
//! 1-nearest-neighbour game over eight training points.

use cdash::baselines::{exact_shapley, nearest_neighbor_game, tmc_players, tuple_units, TmcConfig};
use cdash::synth;

fn main() -> cdash::Result<()> {
    let train = synth::two_class_blobs(8, 2, 1.5, 1)?;
    let eval = synth::two_class_blobs(40, 2, 1.5, 2)?;
    let game = nearest_neighbor_game(&train, &eval, tuple_units(train.n_rows()))?;
    let exact = exact_shapley(&game)?;

    for perms in [10, 100, 1000, 10_000] {
        let cfg = TmcConfig {
            tolerance: None,
            max_permutations: perms,
            eps: None,
            ..TmcConfig::default()
        };
        let mc = tmc_players(&game, &cfg)?;
        let err = mc
            .values
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{perms:6} permutations: max abs error {err:.4}");
    }
    Ok(())
}
