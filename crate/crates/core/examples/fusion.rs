//! Fuse occluded dense-map evidence with a model-based reposing and compare the meshes.
//!
//! The IK solution here is numerical IK on the ground-truth joints, so the example needs no training.

use bodyfuse::body_model::{PoseParams, ShapeParams};
use bodyfuse::dense_maps::warp_image_to_uv;
use bodyfuse::ik::numerical_ik;
use bodyfuse::io::RunConfig;
use bodyfuse::losses::mpve;
use bodyfuse::pipeline::{generate_sample, Context};
use bodyfuse::uv_fusion::{
    distribute_joints_to_uv, fuse_uv_maps, infer_mesh_from_uv, naive_fill, repose_uv_from_ik, DEFAULT_BAND_WIDTH,
};

fn main() -> bodyfuse::Result<()> {
    let ctx = Context::new(&RunConfig::default())?;
    let s = generate_sample(&ctx, 11)?;
    let (uv_dmp, _) = warp_image_to_uv(&s.image_occluded, &ctx.atlas);

    let lm = numerical_ik(&ctx.model, &s.joints, (&PoseParams::default(), &ShapeParams::default()), &ctx.config.lm())?;
    let ik_uv = repose_uv_from_ik(&ctx.model, &ctx.atlas, &ctx.seg, &lm.pose, &lm.shape)?;
    let ik_mesh = ctx.model.skin(&lm.pose, &lm.shape);
    let uv_j = distribute_joints_to_uv(&s.joints, &ctx.seg)?;

    let fused = fuse_uv_maps(&uv_dmp, &ik_uv, &uv_j, &ctx.seg, DEFAULT_BAND_WIDTH)?;
    let [dmp, ik, blend, fill] = fused.source_counts();
    println!("texel sources: {dmp} dense maps, {ik} IK, {blend} blended, {fill} filled");

    let fused_mesh = infer_mesh_from_uv(&fused, &ctx.atlas, &ctx.model, &ik_mesh)?.mesh;
    let dmp_mesh = infer_mesh_from_uv(&naive_fill(&uv_dmp, &uv_j, &ctx.seg)?, &ctx.atlas, &ctx.model, &ik_mesh)?.mesh;
    let gt = &s.mesh.vertices;
    println!("MPVE fused      {:7.2} mm", mpve(&fused_mesh.vertices, gt)?);
    println!("MPVE IK only    {:7.2} mm", mpve(&ik_mesh.vertices, gt)?);
    println!("MPVE dense only {:7.2} mm", mpve(&dmp_mesh.vertices, gt)?);
    Ok(())
}
