//! Render dense maps for a synthetic sample, occlude them and warp both into UV space.
//!
//! `cargo run --example render_and_warp -- [sample index] [out dir]`

use bodyfuse::dense_maps::warp_image_to_uv;
use bodyfuse::io::{write_mask_png, RunConfig};
use bodyfuse::pipeline::{generate_sample, Context};

fn main() -> bodyfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let index: u64 = args.next().map(|s| s.parse().expect("index")).unwrap_or(0);
    let dir = args.next().map(Into::into).unwrap_or_else(std::env::temp_dir);
    let ctx = Context::new(&RunConfig::default())?;
    let s = generate_sample(&ctx, index)?;

    println!("camera scale {:.1} px/m, offset {:?}", s.camera.scale, s.camera.offset);
    println!("{} occluders: {:?}", s.occluders.len(), s.occluders);
    for (label, image) in [("clean", &s.image), ("occluded", &s.image_occluded)] {
        let (uv, stats) = warp_image_to_uv(image, &ctx.atlas);
        println!(
            "{label:>9}: {:5.1}% foreground, {} pixels scattered, {} valid texels of {}",
            100.0 * image.foreground_fraction(),
            stats.scattered,
            uv.valid_count(),
            s.uv_gt.valid_count()
        );
        write_mask_png(&image.mask, &dir.join(format!("mask_{label}.png")))?;
        write_mask_png(&uv.valid, &dir.join(format!("uv_valid_{label}.png")))?;
    }
    println!("masks written to {}", dir.display());
    Ok(())
}
