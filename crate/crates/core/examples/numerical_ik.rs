//! Recover pose and shape from 3D joints with Levenberg-Marquardt, starting at the rest pose.
//!
//! `cargo run --release --example numerical_ik -- [seed] [limit scale]`

use bodyfuse::body_model::{sample_pose, sample_shape, BodyModel, JointSet, ModelConfig, PoseLimits, PoseParams, ShapeParams};
use bodyfuse::ik::{numerical_ik, LmConfig};
use bodyfuse::losses::mpjpe;

fn main() -> bodyfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let scale: f64 = args.next().map(|s| s.parse().expect("scale")).unwrap_or(0.3);

    let model = BodyModel::build(&ModelConfig::default())?;
    let pose = sample_pose(seed, &PoseLimits::default().scaled(scale))?;
    let shape = sample_shape(seed, 0.5);
    let target = JointSet::all_visible(model.posed_lsp_joints(&pose, &shape));

    let start = std::time::Instant::now();
    let res = numerical_ik(&model, &target, (&PoseParams::default(), &ShapeParams::default()), &LmConfig::default())?;
    println!("{} iterations in {:.2?}, converged: {}", res.iterations, start.elapsed(), res.converged);
    for (i, c) in res.cost_history.iter().enumerate().step_by(res.cost_history.len().div_ceil(10).max(1)) {
        println!("  iter {i:3}  cost {c:.3e}");
    }
    let got = model.posed_lsp_joints(&res.pose, &res.shape);
    println!("joint MPJPE {:.4} mm", mpjpe(&got, &target.joints)?);
    let verts = model.skin(&res.pose, &res.shape).vertices;
    println!("vertex MPVE {:.2} mm (pose/shape ambiguity shows up here)", mpjpe(&verts, &model.skin(&pose, &shape).vertices)?);
    Ok(())
}
