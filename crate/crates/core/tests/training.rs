use treerpo_core::harness::{metrics_csv, TrainConfig};
use treerpo_core::{Trainer, Variant, VelocityField};

fn small_run() -> TrainConfig {
    TrainConfig::default()
        .with_overrides(&["prompts_per_iter=4".into(), "iterations=2".into()])
        .unwrap()
}

fn start() -> VelocityField {
    VelocityField::new_random(small_run().mlp_config(), 3).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let cfg = small_run().with_overrides(&["lr=0".into()]).unwrap();
    let setup = cfg.rl_setup(Variant::DynamicTree).unwrap();
    let field = start();
    let mut trainer = Trainer::new(field.clone());
    let row = trainer.train_iteration(&setup, 0).unwrap();
    assert_eq!(trainer.field.params(), field.params());
    assert!(row.reward_mean.is_finite() && row.nfe_cum > 0);
}

#[test]
fn identical_leaves_give_no_signal() {
    let cfg = small_run()
        .with_overrides(&["a=0".into(), "weight_decay=0".into(), "lr=0.1".into()])
        .unwrap();
    let setup = cfg.rl_setup(Variant::DynamicTree).unwrap();
    let field = start();
    let mut trainer = Trainer::new(field.clone());
    let row = trainer.train_iteration(&setup, 0).unwrap();
    assert_eq!(row.group_dispersion, 0.0);
    assert_eq!(row.loss_total, 0.0);
    assert_eq!(trainer.field.params(), field.params());
}

#[test]
fn reruns_are_bit_identical_for_every_variant() {
    let cfg = small_run().with_overrides(&["lr=1e-3".into()]).unwrap();
    for v in Variant::ALL {
        let run = || {
            let setup = cfg.rl_setup(v).unwrap();
            let mut t = Trainer::new(start());
            let rows: Vec<_> = (0..cfg.iterations).map(|i| t.train_iteration(&setup, i).unwrap()).collect();
            (metrics_csv(&rows), t.field.params().to_le_bytes())
        };
        assert_eq!(run(), run(), "{v}");
    }
}

#[test]
fn variants_differ_only_where_intended() {
    let cfg = small_run();
    let flat = cfg.rl_setup(Variant::FlatTree).unwrap();
    assert_eq!(flat.variant.sde_config(&flat.sde).beta, 0.0);
    let tree = cfg.rl_setup(Variant::DynamicTree).unwrap();
    assert_eq!(tree.variant.sde_config(&tree.sde).beta, 0.7);
    let field = start();
    let mut a = Trainer::new(field.clone());
    let mut b = Trainer::new(field);
    let ra = a.train_iteration(&tree, 0).unwrap();
    let rb = b.train_iteration(&flat, 0).unwrap();
    // same evaluation budget, different noise scale
    assert_eq!(ra.nfe_cum, rb.nfe_cum);
    assert!(ra.group_dispersion > rb.group_dispersion);
}
