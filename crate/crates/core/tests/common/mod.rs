#![allow(dead_code)]

use carenet::dataset::SpectraSet;
use carenet::evaluation::predict_set;
use carenet::model::Head;
use carenet::pipeline::{
    make_split, patient_subtypes, preprocess_panel, train_fold, FoldOutcome, PreprocessConfig,
    SplitPlan, TrainConfig,
};
use carenet::synth::{gen_panel, SynthConfig};

/// Desk-scale training: short runs on capped cores.
pub const DESK_EPOCHS: usize = 6;
pub const DESK_BATCH: usize = 32;
pub const DESK_CAP: usize = 24;

pub fn desk_train(head: Head, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        batch: DESK_BATCH,
        ..TrainConfig::new(head, seed)
    }
}

/// Generates and preprocesses a panel, `cap` spectra per core.
pub fn panel_spectra(cfg: &SynthConfig, cap: usize) -> SpectraSet {
    let panel = gen_panel(cfg).expect("panel");
    let pcfg = PreprocessConfig {
        max_spectra_per_core: Some(cap),
        seed: cfg.seed,
        ..PreprocessConfig::default()
    };
    let out = preprocess_panel(&panel, &pcfg).expect("preprocess");
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    out.spectra
}

pub fn split_for(set: &SpectraSet, seed: u64) -> SplitPlan {
    make_split(&patient_subtypes(set).expect("subtypes"), seed).expect("split")
}

pub struct FoldResult {
    pub outcome: FoldOutcome,
    /// Patient-level accuracy of the best-dev model on the held-out test patients.
    pub test_patient_accuracy: f64,
}

pub fn train_and_test(
    set: &SpectraSet,
    split: &SplitPlan,
    cfg: &TrainConfig,
    folds: &[usize],
) -> Vec<FoldResult> {
    let test = split.test_set(set, cfg.head);
    folds
        .iter()
        .map(|&k| {
            let (train, dev) = split.fold_sets(set, k, cfg.head).expect("fold");
            let outcome = train_fold(&cfg.for_fold(k), &train, &dev, Some(k), None).expect("train");
            let patients = predict_set(&outcome.best, &test)
                .unwrap()
                .patient_predictions()
                .unwrap();
            let hits = patients.iter().filter(|p| p.class == p.truth).count();
            FoldResult {
                outcome,
                test_patient_accuracy: hits as f64 / patients.len() as f64,
            }
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
