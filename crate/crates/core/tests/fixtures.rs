//! Pinned values recomputed outside this crate from exported checkpoints
//! (plain matrix products over the little-endian weight file).

use treerpo_core::flow::{ode_step, pretrain, PretrainConfig};
use treerpo_core::nnet::{MlpConfig, VelocityField};
use treerpo_core::toy::ToyTask;

fn close(got: &[f64], want: &[f64]) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn seed_zero_initialization_forward() {
    let f = VelocityField::new_random(MlpConfig::default(), 0).unwrap();
    close(
        &f.forward(&[0.0, 0.0], 0.5, 0).unwrap(),
        &[0.08853662405679547, 0.1581068169921193],
    );
}

#[test]
fn short_pretraining_then_one_euler_step() {
    let mut f = VelocityField::new_random(MlpConfig::default(), 0).unwrap();
    let data = ToyTask::default().generate(256, 0);
    let cfg = PretrainConfig {
        steps: 200,
        batch_size: 64,
        ..PretrainConfig::default()
    };
    pretrain(&mut f, &data, &cfg, |_, _| {}).unwrap();
    close(
        &ode_step(&f, &[0.5, -1.0], 0.6, -0.04, 2).unwrap(),
        &[0.36336953961050733, -0.9640390042177073],
    );
}
