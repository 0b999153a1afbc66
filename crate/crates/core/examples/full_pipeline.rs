//! Train small IK networks, then run the complete pipeline on clean and occluded samples.
//!
//! `cargo run --release --example full_pipeline -- [samples]`

use bodyfuse::ik::{train_ik_stage, MocapSet};
use bodyfuse::io::RunConfig;
use bodyfuse::pipeline::{evaluate, generate_samples, mean_metrics, predict_dense_maps, run_pipeline, Context, IkMethod};

fn main() -> bodyfuse::Result<()> {
    let count: usize = std::env::args().nth(1).map(|s| s.parse().expect("count")).unwrap_or(20);
    let cfg = RunConfig { train_epochs: 15, ..RunConfig::default() };
    let ctx = Context::new(&cfg)?;

    let mocap = MocapSet::synthesize(&ctx.model, 5000, 9, &cfg.pose_limits()?, cfg.shape_sigma)?;
    let nets = train_ik_stage(&ctx.model, &mocap, &cfg.train(), cfg.net_specs())?.nets;

    let samples = generate_samples(&ctx, 10_000, count)?;
    for method in [IkMethod::Gik, IkMethod::Numerical] {
        for occluded in [false, true] {
            let mut rows = Vec::new();
            for s in &samples {
                let image = if occluded { &s.image_occluded } else { &s.image };
                let out = run_pipeline(&ctx, &nets, &predict_dense_maps(&ctx, image, s.index)?, method)?;
                rows.push(evaluate(&out.joints.joints, &s.joints.joints, &out.mesh.vertices, &s.mesh.vertices)?);
            }
            let m = mean_metrics(&rows);
            println!(
                "{:<9} {:>8}: MPJPE {:6.1} mm  PA-MPJPE {:6.1} mm  MPVE {:6.1} mm",
                format!("{method:?}"),
                if occluded { "occluded" } else { "clean" },
                m.mpjpe,
                m.pa_mpjpe,
                m.mpve
            );
        }
    }
    Ok(())
}
