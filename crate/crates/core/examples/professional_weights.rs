//! How the professional phase weighs the sampled annotations of a video and
//! how many it samples per epoch.
//!
//! Run with: cargo run --example professional_weights

use vnsgru::training::{professional_weights, sampling_size, Schedule, TrainConfig};

fn main() -> vnsgru::Result<()> {
    let losses = [1.0, 2.0];
    let lengths = [5.0, 7.0];
    for gamma in [0.0, 0.5, 0.8, 1.0] {
        let b = professional_weights(&losses, &lengths, 6.0, gamma)?;
        println!("gamma {gamma:.1}: beta = [{:.5}, {:.5}]", b[0], b[1]);
    }

    let absolute = TrainConfig::default();
    let relative = TrainConfig {
        schedule: Schedule::ExponentialRelative { base: 1, sigma: 8 },
        ..Default::default()
    };
    let fixed = TrainConfig {
        schedule: Schedule::Fixed { c: 16 },
        ..Default::default()
    };
    println!("\nepoch  absolute  relative  fixed");
    for e in [0, 15, 16, 24, 32, 48, 64, 79] {
        println!(
            "{e:>5}  {:>8}  {:>8}  {:>5}",
            sampling_size(e, &absolute),
            sampling_size(e, &relative),
            sampling_size(e, &fixed)
        );
    }
    Ok(())
}
