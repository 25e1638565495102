//! Comprehensive checkpoint selection: every metric is normalized by its
//! running best and the weighted sum decides which epoch is kept.
//!
//! Run with: cargo run --example selection

use vnsgru::selection::{MetricKind, SelectionConfig};
use vnsgru::{overall_score, MetricReport, SelectionState};

fn report(b4: f64, c: f64, m: f64, r: f64) -> MetricReport {
    MetricReport {
        bleu4: b4,
        cider: c,
        meteor: m,
        rouge_l: r,
        ..Default::default()
    }
}

fn main() -> vnsgru::Result<()> {
    // MSVD sampling-size sweep: n = 2 against the column bests
    let o = overall_score(&[64.0, 117.8, 41.4, 79.3], &[66.5, 121.5, 42.1, 79.7], &[0.25; 4])?;
    println!("n=2 overall {o:.3}\n");

    let epochs = [
        (report(40.0, 60.0, 30.0, 60.0), 2.10),
        (report(41.0, 55.0, 29.0, 58.0), 2.05),
        (report(44.0, 66.0, 31.0, 61.0), 1.98),
        (report(45.0, 60.0, 30.5, 61.0), 1.95),
        (report(43.0, 70.0, 31.5, 62.0), 1.97),
    ];
    let configs = [
        ("four metrics", SelectionConfig::default()),
        ("CIDEr only", SelectionConfig::single(MetricKind::Cider)),
        ("validation loss", SelectionConfig::loss_only()),
    ];
    for (name, cfg) in configs {
        let mut state = SelectionState::new(cfg)?;
        for (e, (rep, loss)) in epochs.iter().enumerate() {
            state.observe_report(rep, *loss, e)?;
        }
        println!("{name}: champion epoch {:?}", state.champion_epoch());
        print!("{}", state.history_tsv());
        println!();
    }
    Ok(())
}
