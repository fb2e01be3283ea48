mod common;

use mtp_core::gradcheck::{grad_check_seeded, DEFAULT_STEP};
use mtp_core::rvsa::{init_layer, LayerOp, RvsaConfig};
use mtp_core::{Rng, Tensor};

#[test]
fn sample_window_matches_tent_oracle() {
    let worst = common::sample_window_worst(2024, 1000);
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn zero_predictor_is_bit_equal_to_window_attention() {
    assert_eq!(common::identity_mismatches(100), 0);
}

#[test]
fn rvsa_layer_gradients_match_finite_differences() {
    let spec = common::small_spec();
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed);
        let mut params = init_layer("layer01", &spec, &mut rng);
        // Move off the identity lattice so sample points avoid bilinear kinks.
        params.insert("layer01.attn.winparams.weight", Tensor::randn(&[8, 10], 0.2, &mut rng));
        params.insert("layer01.attn.winparams.bias", Tensor::randn(&[10], 0.2, &mut rng));
        for (name, t) in params.iter_mut() {
            if name.ends_with("weight") && !name.contains("winparams") {
                *t = t.map(|v| v * 10.0);
            }
        }
        let x = Tensor::randn(&[8, 4, 4], 1.0, &mut rng);
        let op = LayerOp::new("layer01", spec, &params);
        let inputs = op.inputs(&x, &params).unwrap();
        let report = grad_check_seeded(&op, &inputs, DEFAULT_STEP, seed).unwrap();
        assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
    }
}

#[test]
fn preset_layer_placement() {
    let b = RvsaConfig::vitb_rvsa();
    assert_eq!((b.depth, b.embed_dim, b.heads), (12, 768, 12));
    let l = RvsaConfig::vitl_rvsa();
    assert_eq!((l.depth, l.embed_dim, l.heads), (24, 1024, 16));
    assert_eq!(common::placement_errors(), Vec::<String>::new());
}
