//! Aggregate per-part joint estimates from warped UV maps and show which parts the occluder hid.

use bodyfuse::body_model::LSP_NAMES;
use bodyfuse::dense_maps::warp_image_to_uv;
use bodyfuse::ik::aggregate_joints;
use bodyfuse::io::RunConfig;
use bodyfuse::pipeline::{generate_sample, Context};

fn main() -> bodyfuse::Result<()> {
    let ctx = Context::new(&RunConfig::default())?;
    let s = generate_sample(&ctx, 3)?;
    let (uv, _) = warp_image_to_uv(&s.image_occluded, &ctx.atlas);
    let agg = aggregate_joints(&uv, &ctx.seg, ctx.config.aggregate_min_texels)?;

    println!("{:>16}  {:>7}  {:>9}", "joint", "texels", "error mm");
    for k in 0..LSP_NAMES.len() {
        let err = if agg.j_initial.visible[k] {
            format!("{:9.3}", (agg.j_initial.joints[k] - s.joints.joints[k]).norm() * 1000.0)
        } else {
            "   hidden".to_string()
        };
        println!("{:>16}  {:7}  {err}", LSP_NAMES[k], agg.texel_counts[k]);
    }
    Ok(())
}
