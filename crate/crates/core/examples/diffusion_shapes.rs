//! Trains one point-cloud diffusion model per shape family and compares the
//! cup/disc ratios of decoded samples.
//!
//! `cargo run --release --example diffusion_shapes [train_steps]`

use maskdiff::codec::{decode_point_cloud, encode_mask};
use maskdiff::data::ShapeFamily;
use maskdiff::diffusion::{train_group_model, GroupTrainConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map_or(Ok(600), |s| s.parse())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = GroupTrainConfig {
        train: TrainConfig {
            steps,
            batch: 8,
            lr: 1e-3,
            train_points: Some(128),
        },
        ..Default::default()
    };
    for (group, ratio) in [("small_cup", 0.3), ("large_cup", 0.6)] {
        let family = ShapeFamily::with_ratio(ratio);
        let clouds = (0..30)
            .map(|_| encode_mask(&family.sample(64, &mut rng), 512, 0.3))
            .collect::<Result<Vec<_>, _>>()?;
        let (model, report) = train_group_model("family", group, &clouds, &cfg)?;
        let n = report.losses.len();
        println!(
            "{group}: loss {:.3} -> {:.3}",
            report.mean_loss(0..50),
            report.mean_loss(n - 50..n)
        );

        let mut ratios = Vec::new();
        for _ in 0..10 {
            let sample = model.sample(&mut rng)?;
            if let Some(q) = decode_point_cloud(&sample.cloud, 64, 64)?.cup_disc_ratio() {
                ratios.push(q);
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
        println!(
            "{group}: target ratio {ratio}, sampled mean {mean:.3} over {} masks",
            ratios.len()
        );
    }
    Ok(())
}
