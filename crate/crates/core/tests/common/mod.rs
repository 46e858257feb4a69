#![allow(dead_code)]

use psp_core::features::{prepare_dataset, Dataset, SPLIT_RATIOS};
use psp_core::setting::HyperparameterSetting;
use psp_core::synthlog::{generate, ProcessSpec};
use psp_core::trainer::{fit, FitOptions, TrainConfig};
use psp_core::ulstm::{Model, LOGVAR_CLAMP};

pub fn setting(id: u8, hidden: usize) -> HyperparameterSetting {
    HyperparameterSetting::preset(id).unwrap().with_hidden(hidden)
}

/// A small synthetic repair dataset.
pub fn repair_dataset(n_cases: usize, seed: u64, setting: &HyperparameterSetting) -> Dataset {
    let log = generate(&ProcessSpec::repair(n_cases, seed)).unwrap();
    prepare_dataset(&log, SPLIT_RATIOS, seed, setting, 5).unwrap()
}

/// Briefly trained model turned into a near noise-free sampler rig. Training
/// first gives hidden states large enough for clear logit margins.
pub fn degenerate_rig(setting_id: u8, hidden: usize, n_cases: usize, seed: u64) -> (Dataset, Model) {
    let setting = setting(setting_id, hidden);
    let ds = repair_dataset(n_cases, seed, &setting);
    let cfg = TrainConfig::new(setting, 3, 32, 5e-3, seed);
    let fitted = fit(&ds.train, &ds.validation, &ds.encoding, &cfg, FitOptions::default()).unwrap();
    let model = fitted.model.degenerate(1e6, -LOGVAR_CLAMP as f32);
    (ds, model)
}
