use bodyfuse::body_model::{BodyModel, JointSet, ModelConfig, PoseLimits};
use bodyfuse::ik::{
    gik_batch, gik_forward, inpaint_features, inpaint_refine_batch, IkNets, MocapSet, GIK_OUTPUT_DIM, INPAINT_INPUT_DIM,
    JOINT_DIM,
};
use bodyfuse::nn::{AdamState, DropoutKey, Mlp, MlpSpec, Mode};
use bodyfuse::Vec3;
use ndarray::Array2;

fn mocap(count: usize, seed: u64) -> MocapSet {
    let model = BodyModel::build(&ModelConfig::default()).unwrap();
    MocapSet::synthesize(&model, count, seed, &PoseLimits::default(), 1.0).unwrap()
}

#[test]
fn io_layout() {
    assert_eq!(INPAINT_INPUT_DIM, 14 * 3 + 14);
    assert_eq!(JOINT_DIM, 42);
    assert_eq!(GIK_OUTPUT_DIM, 72 + 10);
    let (a, b) = IkNets::default_specs();
    assert_eq!((a.input_dim, a.output_dim), (INPAINT_INPUT_DIM, JOINT_DIM));
    assert_eq!((b.input_dim, b.output_dim), (JOINT_DIM, GIK_OUTPUT_DIM));
}

#[test]
fn inpaint_net_learns_to_copy_visible_joints() {
    let data = mocap(100, 5);
    let inputs: Vec<JointSet> = data.joints.clone();
    let x = Array2::from_shape_fn((inputs.len(), INPAINT_INPUT_DIM), |(i, c)| inpaint_features(&inputs[i])[c]);
    let spec = MlpSpec {
        input_dim: INPAINT_INPUT_DIM,
        output_dim: JOINT_DIM,
        hidden_dim: 64,
        num_blocks: 1,
        dropout_rate: 0.0,
        use_batchnorm: true,
    };
    let mut net = Mlp::new(spec, 9).unwrap();
    net.scale_head(0.01);
    let mut adam = AdamState::new(net.num_params(), 1e-3);
    for step in 0..600 {
        let (out, cache) = net.forward(x.view(), DropoutKey { seed: 1, step }).unwrap();
        // with a skip connection the identity target for the correction is zero
        let g = out.mapv(|v| 2.0 * v) / out.len() as f64;
        let (grads, _) = net.backward(&cache, g.view()).unwrap();
        net.update_running_stats(&cache);
        adam.step(&mut net.params, &grads).unwrap();
        net.steps += 1;
    }
    net.set_mode(Mode::Eval);
    let refined = inpaint_refine_batch(&net, &inputs).unwrap();
    let mut worst: f64 = 0.0;
    for (r, j) in refined.iter().zip(&inputs) {
        for k in 0..14 {
            worst = worst.max((r.joints[k] - j.joints[k]).norm());
        }
    }
    assert!(worst < 0.01, "worst copy error {worst} m");
}

#[test]
fn fully_occluded_input_gives_finite_output() {
    let mut nets = IkNets::new(IkNets::default_specs().0, IkNets::default_specs().1, 3).unwrap();
    nets.inpaint.steps = 1;
    nets.gik.steps = 1;
    nets.set_mode(Mode::Eval);
    let hidden = JointSet { joints: [Vec3::zeros(); 14], visible: [false; 14] };
    let refined = inpaint_refine_batch(&nets.inpaint, &[hidden]).unwrap();
    assert!(refined[0].joints.iter().all(|j| j.iter().all(|v| v.is_finite())));
    let (pose, shape) = gik_forward(&nets.gik, &refined[0]).unwrap();
    assert!(pose.to_flat().iter().chain(shape.beta.iter()).all(|v| v.is_finite()));
}

#[test]
fn frozen_gik_is_bitwise_deterministic() {
    let mut nets = IkNets::new(IkNets::default_specs().0, IkNets::default_specs().1, 4).unwrap();
    nets.gik.steps = 1;
    nets.set_mode(Mode::Eval);
    let data = mocap(16, 6);
    let first = gik_batch(&nets.gik, &data.joints).unwrap();
    for _ in 0..3 {
        assert_eq!(gik_batch(&nets.gik, &data.joints).unwrap(), first);
    }
    let single = gik_forward(&nets.gik, &data.joints[3]).unwrap();
    assert_eq!(single, first[3]);
}
