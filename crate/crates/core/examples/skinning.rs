//! Pose and shape the body model, then write the mesh as OBJ.
//!
//! `cargo run --example skinning -- [seed] [out.obj]`

use bodyfuse::body_model::{sample_pose, sample_shape, BodyModel, ModelConfig, PoseLimits, LSP_NAMES};
use bodyfuse::io::write_obj;

fn main() -> bodyfuse::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(7);
    let out = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("posed.obj"));

    let model = BodyModel::build(&ModelConfig::default())?;
    println!("{} vertices, {} faces, {} kinematic joints", model.num_vertices(), model.faces.len(), model.tree.len());

    let pose = sample_pose(seed, &PoseLimits::default())?;
    let shape = sample_shape(seed, 1.0);
    let mesh = model.skin(&pose, &shape);
    for (name, j) in LSP_NAMES.iter().zip(model.posed_lsp_joints(&pose, &shape)) {
        println!("{name:>16}  {:7.3} {:7.3} {:7.3}", j.x, j.y, j.z);
    }
    write_obj(&mesh, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
