//! One seed of the real-only versus equal-scale comparison on the 90/10
//! toy dataset, at reduced training budgets.
//!
//! `cargo run --release --example fairness_experiment [out_dir]`

use maskdiff::experiment::{run_seed, ExperimentConfig, KvConfig};

const QUICK: &str = "\
diffusion.train_steps = 800
control.steps = 300
seg.epochs = 10
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fairness_example".into());
    let config = ExperimentConfig::from_kv(&KvConfig::parse(QUICK)?)?;
    let outcome = run_seed(&config, std::path::Path::new(&out))?;
    println!(
        "synthesized {} masks for the small group",
        outcome.plan.total_synthetic()
    );
    for (name, eval) in [
        ("real-only", &outcome.real_only),
        ("equal-scale", &outcome.combined),
    ] {
        let r = eval;
        println!(
            "{name:>11}: Dice {:.4}  ES-Dice {:.4}  group variance {:.6}",
            r.dice.overall, r.dice.essp, r.dice.variance
        );
    }
    println!(
        "variance change {:+.6}, fairness change {:+.6}",
        outcome.variance_delta(),
        outcome.fairness_delta()
    );
    println!("outputs in {out}");
    Ok(())
}
