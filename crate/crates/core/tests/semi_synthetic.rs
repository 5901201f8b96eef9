use selective_labels::eval::TestSet;
use selective_labels::experiment::{run_experiment, ExperimentConfig, MODEL_AUGMENTED, MODEL_OBSERVED};
use selective_labels::SemiSyntheticConfig;

fn lowest_decile_mean(report: &selective_labels::EvalReport, model: &str) -> f64 {
    report
        .agreement
        .iter()
        .find(|a| a.model == model)
        .and_then(|a| a.table.lowest_decile_mean())
        .unwrap()
}

#[test]
fn augmentation_agrees_with_confident_screen_outs() {
    let mut majority = 0;
    for seed in 1..=5u64 {
        let config = ExperimentConfig {
            seed: Some(seed),
            semi_synthetic: Some(SemiSyntheticConfig::default()),
            ..ExperimentConfig::default()
        };
        let run = run_experiment(&config).unwrap();
        let r = &run.report;

        if lowest_decile_mean(r, MODEL_OBSERVED) > lowest_decile_mean(r, MODEL_AUGMENTED) {
            majority += 1;
        }

        let aug = r.model(MODEL_AUGMENTED).unwrap();
        let on_observed = aug.curve(TestSet::Observed).unwrap().auc;
        let on_augmented = aug.curve(TestSet::Augmented).unwrap().auc;
        assert!(
            on_augmented >= on_observed - 0.01,
            "seed {seed}: augmented model drops from {on_observed} to {on_augmented}"
        );
    }
    assert!(majority >= 3, "only {majority}/5 seeds in the expected direction");
}
