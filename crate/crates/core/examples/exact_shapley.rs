//! Exact Shapley values of two small cooperative games.

use cdash::baselines::{exact_shapley, PlayerSet};

fn main() -> cdash::Result<()> {
    // one left glove (player 0) and two right gloves; a pair is worth 1
    let glove = PlayerSet::game(3, |s| {
        Ok(f64::from(u8::from(
            s.contains(&0) && (s.contains(&1) || s.contains(&2)),
        )))
    });
    println!("glove game: {:?}", exact_shapley(&glove)?);

    // weighted majority: weights 4, 3, 2, 1 with quota 6
    let weights = [4.0, 3.0, 2.0, 1.0];
    let vote = PlayerSet::game(4, move |s| {
        Ok(f64::from(u8::from(
            s.iter().map(|&i| weights[i]).sum::<f64>() >= 6.0,
        )))
    });
    let v = exact_shapley(&vote)?;
    println!("voting game: {v:?} (sum {})", v.iter().sum::<f64>());
    Ok(())
}
