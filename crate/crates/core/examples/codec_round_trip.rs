//! Encodes an ellipse-pair mask as a boundary point cloud and decodes it back.

use maskdiff::codec::{decode_point_cloud, encode_mask, Ellipse, MaskImage};
use maskdiff::metrics::{dice, MetricClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let disc = Ellipse {
        cx: 31.0,
        cy: 33.0,
        a: 20.0,
        b: 16.0,
        angle: 0.4,
    };
    let cup = Ellipse {
        cx: 32.0,
        cy: 33.0,
        a: 9.0,
        b: 7.0,
        angle: 0.5,
    };
    let mask = MaskImage::from_ellipses(64, 64, &disc, &cup);

    let cloud = encode_mask(&mask, 512, 0.3)?;
    println!(
        "{} points: {} cup, {} disc",
        cloud.len(),
        cloud.cup_count(),
        cloud.disc_count()
    );
    println!(
        "frame: center ({:.2}, {:.2}), scale {:.2}",
        cloud.frame.cx, cloud.frame.cy, cloud.frame.scale
    );

    let decoded = decode_point_cloud(&cloud, 64, 64)?;
    for class in [MetricClass::Cup, MetricClass::Disc, MetricClass::Rim] {
        println!(
            "{:>4} Dice {:.4}",
            class.name(),
            dice(&decoded, &mask, class)?
        );
    }
    Ok(())
}
