//! The benchmark's reason to exist: the default domain pair must be
//! learnable on source yet show a real shift on target. A source model has
//! to clear 95% on held-out source data and stay at or below 85% on the
//! target domain, across five seeds.

use spm_core::model::ModelConfig;
use spm_core::trainer::{evaluate, experiment_datasets, train_source, ExperimentConfig, SourceConfig};

#[test]
fn source_target_gap_holds_over_five_seeds() {
    let exp = ExperimentConfig::default();
    for seed in 1..=5u64 {
        let [src_train, src_eval, _, tgt_eval] = experiment_datasets(&exp, seed).unwrap();
        let (theta, _) = train_source(
            &src_train,
            None,
            &SourceConfig::default(),
            &ModelConfig::default(),
            seed,
        )
        .unwrap();
        let on_source = evaluate(&theta, &src_eval).unwrap().mean;
        let on_target = evaluate(&theta, &tgt_eval).unwrap().mean;
        println!("seed {seed}: source holdout {on_source:.4}, target {on_target:.4}");
        assert!(on_source >= 0.95, "seed {seed}: source holdout {on_source:.4} < 0.95");
        assert!(on_target <= 0.85, "seed {seed}: target {on_target:.4} > 0.85");
    }
}
