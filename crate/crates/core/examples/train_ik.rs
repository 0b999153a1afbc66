//! Train the inpaint/refine net and GIK-Net on synthetic mocap and compare with baselines.
//!
//! `cargo run --release --example train_ik -- [train samples] [epochs]`

use bodyfuse::body_model::{BodyModel, ModelConfig, PoseLimits};
use bodyfuse::ik::{evaluate_ik, train_ik_stage, AugmentConfig, IkNets, MocapSet, TrainConfig};

fn main() -> bodyfuse::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let samples = args.next().unwrap_or(5000);
    let epochs = args.next().unwrap_or(20);

    let model = BodyModel::build(&ModelConfig::default())?;
    let limits = PoseLimits::default();
    let train = MocapSet::synthesize(&model, samples, 1, &limits, 1.0)?;
    let held_out = MocapSet::synthesize(&model, 500, 2, &limits, 1.0)?;

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let start = std::time::Instant::now();
    let out = train_ik_stage(&model, &train, &cfg, IkNets::default_specs())?;
    println!("trained {} epochs on {samples} samples in {:.1?}", epochs, start.elapsed());

    let e = evaluate_ik(&model, &out.nets, &held_out, &AugmentConfig::default(), 3)?;
    println!("held-out MPJPE (mm)");
    println!("  skin(GIK(J_gt))       {:8.2}", e.gik_mpjpe);
    println!("  rest pose             {:8.2}", e.tpose_mpjpe);
    println!("  inpaint net           {:8.2}", e.inpaint_mpjpe);
    println!("  zero-filled input     {:8.2}", e.zero_fill_mpjpe);
    Ok(())
}
