//! Builds an imbalanced toy dataset, plans equal-scale rebalancing and
//! tops up the small group with diffusion-sampled masks rendered by an
//! untrained control block.

use maskdiff::control::{BaseNet, ControlBlock};
use maskdiff::data::{
    execute_plan, group_clouds, make_toy_dataset, plan_equal_scale, CombineConfig, Split,
    TargetPolicy, ToyDatasetSpec,
};
use maskdiff::diffusion::{train_group_models, DenoiserConfig, GroupTrainConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let manifest = make_toy_dataset(&ToyDatasetSpec::imbalanced(24, 6, 4), dir.path(), &mut rng)?;
    println!("before: {:?}", manifest.group_counts("group", Split::Train));

    let train: Vec<_> = manifest.split(Split::Train).cloned().collect();
    let plan = plan_equal_scale(&train, "group", TargetPolicy::Auto, 7)?;
    for g in &plan.groups {
        println!("group {}: {} real, {:?}", g.group, g.real, g.action);
    }

    let clouds = group_clouds(&manifest, "group", 128, 0.3)?;
    let cfg = GroupTrainConfig {
        denoiser: DenoiserConfig {
            hidden: 32,
            time_dim: 16,
            latent_dim: 0,
            encoder_hidden: 8,
        },
        steps: 20,
        train: TrainConfig {
            steps: 300,
            batch: 4,
            lr: 2e-3,
            train_points: Some(64),
        },
        ..Default::default()
    };
    let registry = train_group_models(&clouds, "group", &cfg)?;
    let block = ControlBlock::from_base(BaseNet::new(64, 64, &mut rng)?, &mut rng);
    let config = CombineConfig {
        max_attempts: 8,
        ..Default::default()
    };
    let combined = execute_plan(&manifest, &plan, &registry, &block, &config)?;
    println!("after: {:?}", combined.group_counts("group", Split::Train));
    let synthetic = combined
        .rows
        .iter()
        .filter(|r| r.id.starts_with("syn_"))
        .count();
    println!(
        "{synthetic} synthetic rows written under {}",
        dir.path().display()
    );
    Ok(())
}
