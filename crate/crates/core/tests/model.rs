mod common;

use common::*;
use rand::Rng;
use ssmixnet::complexity::{complexity, count_flops, count_macs, count_params};
use ssmixnet::model::{param_layout, Model, ModelConfig};
use ssmixnet::{Graph, Tensor};

fn zero_fc2(model: &mut Model<f64>) {
    for p in model.params_mut() {
        if p.name.contains(".fc2.") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
}

fn stem_shaped_input(cfg: &ModelConfig, batch: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    random_tensor(
        &mut r,
        &[batch, cfg.patch_size, cfg.patch_size, cfg.pca_dims, cfg.channels],
        1.0,
    )
}

#[test]
fn zeroed_mixer_output_layers_are_identity() {
    let mut r = rng(100);
    for _ in 0..5 {
        let cfg = ModelConfig {
            use_spectral: true,
            use_spatial: true,
            ..random_config(&mut r, true)
        };
        let mut model = Model::<f64>::build(cfg.clone()).unwrap();
        zero_fc2(&mut model);
        let x = stem_shaped_input(&cfg, 2, r.gen());
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let spe = model.spectral_mixer(&mut g, &vars, &xv).unwrap();
        let spa = model.spatial_mixer(&mut g, &vars, &xv).unwrap();
        assert_eq!(spe.value(), &x);
        assert_eq!(spa.value(), &x);
    }
}

/// Output positions whose value moved when one input element was perturbed.
fn changed(before: &Tensor<f64>, after: &Tensor<f64>) -> Vec<Vec<usize>> {
    let shape = before.shape().to_vec();
    let mut out = Vec::new();
    for (flat, (a, b)) in before.data().iter().zip(after.data()).enumerate() {
        if a != b {
            let mut idx = vec![0; shape.len()];
            let mut rem = flat;
            for d in (0..shape.len()).rev() {
                idx[d] = rem % shape[d];
                rem /= shape[d];
            }
            out.push(idx);
        }
    }
    out
}

#[test]
fn spectral_mixer_stays_within_a_pixel_and_channel() {
    let cfg = ModelConfig {
        patch_size: 3,
        pca_dims: 5,
        channels: 3,
        hidden: 4,
        blocks: 2,
        stem_filters: 2,
        ..ModelConfig::new(3)
    };
    let model = Model::<f64>::build(cfg.clone()).unwrap();
    let x = stem_shaped_input(&cfg, 1, 1);
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let xv = g.constant(x.clone());
        model.spectral_mixer(&mut g, &vars, &xv).unwrap().value().clone()
    };
    let base = run(&x);
    let mut y = x.clone();
    let off = y.offset(&[0, 1, 2, 3, 1]);
    y.data_mut()[off] += 0.5;
    let moved = changed(&base, &run(&y));
    assert!(!moved.is_empty());
    for idx in moved {
        assert_eq!((idx[1], idx[2], idx[4]), (1, 2, 1), "leak to {idx:?}");
    }
}

#[test]
fn spatial_mixer_stays_within_a_band_and_channel() {
    let cfg = ModelConfig {
        patch_size: 3,
        pca_dims: 5,
        channels: 3,
        hidden: 4,
        blocks: 2,
        stem_filters: 2,
        ..ModelConfig::new(3)
    };
    let model = Model::<f64>::build(cfg.clone()).unwrap();
    let x = stem_shaped_input(&cfg, 1, 2);
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let xv = g.constant(x.clone());
        model.spatial_mixer(&mut g, &vars, &xv).unwrap().value().clone()
    };
    let base = run(&x);
    let mut y = x.clone();
    let off = y.offset(&[0, 0, 1, 2, 2]);
    y.data_mut()[off] -= 0.5;
    let moved = changed(&base, &run(&y));
    assert!(moved.len() > 1);
    for idx in moved {
        assert_eq!((idx[3], idx[4]), (2, 2), "leak to {idx:?}");
    }
}

#[test]
fn built_parameter_count_matches_closed_form() {
    let mut r = rng(200);
    for _ in 0..100 {
        let cfg = random_config(&mut r, false);
        let model = Model::<f32>::build(cfg.clone()).unwrap();
        let counted = count_params(&cfg).unwrap();
        assert_eq!(model.num_params() as u64, counted, "{cfg:?}");
        let layout: usize = param_layout(&cfg).iter().map(|s| s.numel()).sum();
        assert_eq!(layout as u64, counted);
    }
}

#[test]
fn default_breakdown_sums_to_total() {
    let c = complexity(&ModelConfig::new(18)).unwrap();
    assert_eq!(c.total_params, 140_914);
    assert_eq!(c.layers.iter().map(|l| l.params).sum::<u64>(), c.total_params);
    assert_eq!(c.layers.iter().map(|l| l.macs).sum::<u64>(), c.total_macs);
    assert_eq!(c.layers.iter().map(|l| l.flops).sum::<u64>(), c.total_flops);
}

#[test]
fn instrumented_forward_matches_closed_form_counts() {
    let mut r = rng(300);
    for _ in 0..10 {
        let mut cfg = random_config(&mut r, true);
        cfg.blocks = r.gen_range(0..=2);
        let model = Model::<f64>::build(cfg.clone()).unwrap();
        let x = random_tensor(&mut r, &[1, cfg.patch_size, cfg.patch_size, cfg.pca_dims], 1.0);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, false);
        let xv = g.constant(x);
        model.forward(&mut g, &vars, &xv).unwrap();
        let counted = g.counter();
        assert_eq!(counted.macs, count_macs(&cfg).unwrap(), "{cfg:?}");
        assert_eq!(counted.flops, count_flops(&cfg).unwrap(), "{cfg:?}");
    }
}

#[test]
fn logits_do_not_depend_on_batch_composition() {
    let mut r = rng(400);
    let cfg = ModelConfig {
        init_seed: 4,
        ..random_config(&mut r, true)
    };
    let model = Model::<f64>::build(cfg.clone()).unwrap();
    let x = random_tensor(&mut r, &[5, cfg.patch_size, cfg.patch_size, cfg.pca_dims], 1.0);
    let all = model.logits(&x).unwrap();
    for i in 0..5 {
        let one = model.logits(&x.gather_rows(&[i])).unwrap();
        for (a, b) in one.data().iter().zip(&all.data()[i * cfg.classes..(i + 1) * cfg.classes]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn ablated_models_drop_their_parameters() {
    let full = ModelConfig::new(5);
    let names = |cfg: &ModelConfig| -> Vec<String> { param_layout(cfg).into_iter().map(|s| s.name).collect() };
    let bare = ModelConfig {
        use_spectral: false,
        use_spatial: false,
        use_attention: false,
        ..full.clone()
    };
    assert!(names(&full).iter().any(|n| n.starts_with("spectral.3")));
    assert!(names(&full).iter().any(|n| n.starts_with("attention")));
    assert_eq!(
        names(&bare),
        ["stem.conv1.kernel", "stem.conv1.bias", "stem.conv2.kernel", "stem.conv2.bias", "head.weight", "head.bias"]
    );
    let bare_model = Model::<f64>::build(bare.clone()).unwrap();
    let x = Tensor::zeros(&[2, 9, 9, 15]);
    assert_eq!(bare_model.logits(&x).unwrap().shape(), &[2, 5]);
}

#[test]
fn build_is_seed_deterministic() {
    let cfg = ModelConfig::new(4);
    assert_eq!(Model::<f32>::build(cfg.clone()).unwrap(), Model::<f32>::build(cfg.clone()).unwrap());
    let other = ModelConfig { init_seed: 1, ..cfg.clone() };
    assert_ne!(Model::<f32>::build(cfg).unwrap(), Model::<f32>::build(other).unwrap());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let model = Model::<f64>::build(tiny_config()).unwrap();
    let err = model.logits(&Tensor::zeros(&[1, 3, 3, 5])).unwrap_err();
    assert!(matches!(err, ssmixnet::Error::Dimension { .. }));
    assert!(Model::<f64>::build(ModelConfig { patch_size: 4, ..tiny_config() }).is_err());
}
