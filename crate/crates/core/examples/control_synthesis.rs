//! Pre-trains a frozen base network, attaches a control branch and renders
//! images from masks it has not seen.

use maskdiff::codec::{Ellipse, MaskImage};
use maskdiff::control::{make_toy_pairs, BaseNet, ControlBlock, ControlTrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let masks: Vec<MaskImage> = (0..40)
        .map(|_| {
            let r = rng.random_range(16.0..22.0);
            let c = 32.0 + rng.random_range(-3.0..3.0);
            let cup = r * rng.random_range(0.3..0.7);
            MaskImage::from_ellipses(
                64,
                64,
                &Ellipse::circle(c, 32.0, r),
                &Ellipse::circle(c, 32.0, cup),
            )
        })
        .collect();
    let pairs = make_toy_pairs(&masks, &mut rng);

    let mut base = BaseNet::new(64, 64, &mut rng)?;
    let images: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
    let pre = base.pretrain(&images, 100, 2e-3, &mut rng)?;
    println!(
        "base reconstruction loss {:.4} -> {:.4}",
        pre[0],
        pre[pre.len() - 1]
    );

    let mut block = ControlBlock::from_base(base, &mut rng);
    let frozen = block.base_checksum();
    let losses = block.train_control(
        &pairs,
        &ControlTrainConfig {
            steps: 300,
            ..Default::default()
        },
        &mut rng,
    )?;
    println!(
        "control loss {:.4} -> {:.4}",
        losses[0],
        losses[losses.len() - 1]
    );
    println!("base unchanged: {}", frozen == block.base_checksum());

    let out = std::env::temp_dir().join("maskdiff_control");
    std::fs::create_dir_all(&out)?;
    for (i, cup) in [6.0, 10.0, 14.0].into_iter().enumerate() {
        let mask = MaskImage::from_ellipses(
            64,
            64,
            &Ellipse::circle(32.0, 32.0, 19.0),
            &Ellipse::circle(32.0, 32.0, cup),
        );
        let image = block.synth_image(&mask)?;
        let path = out.join(format!("synth_{i}.png"));
        image.write_png(&path)?;
        println!(
            "cup radius {cup}: mean intensity {:.3}, wrote {}",
            image.mean(),
            path.display()
        );
    }
    Ok(())
}
