#![allow(dead_code)]

use romforge::config::RunConfig;
use romforge::fem::FemModel;
use romforge::snapshots::{generate_dataset, generate_split, DatasetSplit, SnapshotSet};

/// A configuration small enough to run the whole pipeline in seconds.
pub fn tiny_config() -> RunConfig {
    let mut cfg: RunConfig = serde_json::from_str(
        r#"{
            "fem": {"nx": 8, "ny": 2},
            "sampling": {"train": 24, "validation": 8, "test": 6, "extrapolation": 4},
            "pod": {"n": 2, "n_bar": 4},
            "ann": {"hidden_layers": [8, 8], "batch_size": 4},
            "training": {
                "s_loss": {"epochs": 6},
                "r_loss": {"epochs": 2},
                "q_loss": {"epochs": 4}
            },
            "eval": {
                "n_values": [2, 3],
                "latent_total": 6,
                "appendix_n_values": [2, 3],
                "reduced_train_samples": 12,
                "appendix_c_n": 3,
                "appendix_c_variants": [
                    {"hidden_layers": [8], "batch_size": 4},
                    {"hidden_layers": [8, 8], "batch_size": 8}
                ]
            },
            "bench": {"solve_cases": 3, "naive_batches": 1, "train_n": 2, "prom_n": [2, 3], "pod_n": [2, 4]}
        }"#,
    )
    .unwrap();
    cfg.validate().unwrap();
    cfg.output_dir = "unused".into();
    cfg
}

pub struct TinyData {
    pub cfg: RunConfig,
    pub model: FemModel,
    pub data: DatasetSplit,
    pub extrapolation: SnapshotSet,
}

pub fn tiny_data() -> TinyData {
    let cfg = tiny_config();
    let model = cfg.fem.build().unwrap();
    let data = generate_split(&model, &cfg.sampling, &cfg.newton).unwrap();
    let extrapolation = generate_dataset(
        &model,
        &cfg.sampling.extrapolation_params(),
        cfg.sampling.mu_res,
        &cfg.newton,
    )
    .unwrap()
    .set;
    TinyData {
        cfg,
        model,
        data,
        extrapolation,
    }
}

/// Tiny dataset generated once per test binary.
pub fn shared() -> &'static TinyData {
    static DATA: std::sync::OnceLock<TinyData> = std::sync::OnceLock::new();
    DATA.get_or_init(tiny_data)
}
