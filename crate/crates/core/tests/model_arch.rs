mod common;

use pqd_core::model::{Bottleneck, Gsresnet, Layer, ModelConfig, SeBlock};
use pqd_core::tensor::conv::param_count as conv_params;
use pqd_core::tensor::{ActivationKind, Mode, Tensor};
use rand::Rng;

fn bn(c: usize) -> usize {
    2 * c
}

/// Weights of a bias-free `k x k` convolution with `g` groups. Every
/// convolution in the network feeds batch norm, so none carries a bias.
fn conv(cin: usize, cout: usize, k: usize, g: usize) -> usize {
    cout * (cin / g) * k * k
}

fn bottleneck(cin: usize, width: usize, stride: usize, g: usize, r: usize, se: bool) -> usize {
    let inner = width / 2;
    let hidden = inner / r;
    let mut n = conv(cin, inner, 1, 1) + bn(inner) + conv(inner, inner, 3, g) + bn(inner) + conv(inner, width, 1, 1) + bn(width);
    if se {
        n += inner * hidden + hidden + hidden * inner + inner;
    }
    if stride != 1 || cin != width {
        n += conv(cin, width, 1, 1) + bn(width);
    }
    n
}

fn closed_form(cfg: &ModelConfig) -> usize {
    let mut total = conv(cfg.in_channels, cfg.stem_width, 3, 1) + bn(cfg.stem_width);
    let mut cin = cfg.stem_width;
    for (s, (&w, &blocks)) in cfg.stage_widths.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for b in 0..blocks {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            total += bottleneck(cin, w, stride, cfg.groups, cfg.se_reduction, cfg.se);
            cin = w;
        }
    }
    total + cin * cfg.num_classes + cfg.num_classes
}

#[test]
fn desk_parameter_count_matches_closed_form() {
    let cfg = ModelConfig::desk();
    let model = Gsresnet::<f32>::build(&cfg, 0).unwrap();
    assert_eq!(closed_form(&cfg), 22_286);
    assert_eq!(model.param_count(), 22_286);
    let summed: usize = model.params().iter().map(|p| p.numel()).sum();
    assert_eq!(summed, 22_286);
}

#[test]
fn other_configs_match_closed_form() {
    for cfg in [ModelConfig::tiny(), ModelConfig { se: false, ..ModelConfig::desk() }, ModelConfig { groups: 2, ..ModelConfig::desk() }] {
        let model = Gsresnet::<f64>::build(&cfg, 1).unwrap();
        assert_eq!(model.param_count(), closed_form(&cfg), "{cfg:?}");
    }
}

#[test]
fn grouped_kernels_hold_one_gth_of_the_dense_weights() {
    let cfg = ModelConfig::desk();
    let model = Gsresnet::<f32>::build(&cfg, 0).unwrap();
    assert_eq!(model.blocks.len(), 6);
    for block in &model.blocks {
        let shape = block.grouped.weight.value.shape().to_vec();
        let (cout, cin_g, k) = (shape[0], shape[1], shape[2]);
        let cin = cout;
        let dense = cout * cin * k * k;
        assert_eq!(dense % cfg.groups, 0);
        assert_eq!(block.grouped.weight.numel(), dense / cfg.groups, "{}", block.grouped.weight.id);
        assert_eq!(cin_g * cfg.groups, cin);
        assert_eq!(conv_params(cin, cout, 3, cfg.groups), dense / cfg.groups + cout);
    }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = common::rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

#[test]
fn saturated_excitation_is_nearly_identity() {
    let mut se = SeBlock::<f64>::new("se", 8, 4, &mut common::rng(3));
    se.fc2.weight.value.fill(0.0);
    se.fc2.bias.value.fill(20.0);
    let x = random_input(&[2, 8, 5, 5], 4);
    let y = se.infer(&x).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() <= 2.1e-9 * b.abs(), "{a} vs {b}");
    }
}

#[test]
fn zero_excitation_halves_the_input() {
    let mut se = SeBlock::<f64>::new("se", 8, 2, &mut common::rng(5));
    se.fc2.weight.value.fill(0.0);
    se.fc2.bias.value.fill(0.0);
    let x = random_input(&[3, 8, 4, 4], 6);
    for mode in [Mode::Train, Mode::Infer] {
        let y = se.forward(&x, mode).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }
}

fn copy_convs(from: &Bottleneck<f64>, to: &mut Bottleneck<f64>) {
    to.reduce = from.reduce.clone();
    to.grouped = from.grouped.clone();
    to.expand = from.expand.clone();
    to.shortcut = from.shortcut.clone();
}

#[test]
fn bypassed_excitation_equals_a_plain_block() {
    for (cin, width, stride) in [(8, 8, 1), (8, 16, 2)] {
        let mut with_se = Bottleneck::<f64>::new("b", cin, width, stride, 2, Some(2), ActivationKind::HSwish, &mut common::rng(7));
        let mut plain = Bottleneck::<f64>::new("b", cin, width, stride, 2, None, ActivationKind::HSwish, &mut common::rng(8));
        copy_convs(&with_se, &mut plain);
        with_se.se.as_mut().unwrap().bypass = true;
        let x = random_input(&[2, cin, 6, 6], 9);
        assert_eq!(with_se.forward(&x, Mode::Train).unwrap(), plain.forward(&x, Mode::Train).unwrap());
        assert_eq!(with_se.infer(&x).unwrap(), plain.infer(&x).unwrap());
        let dy = random_input(&[2, width, 6 / stride, 6 / stride], 10);
        assert_eq!(with_se.backward(&dy).unwrap(), plain.backward(&dy).unwrap());

        with_se.se.as_mut().unwrap().bypass = false;
        assert_ne!(with_se.infer(&x).unwrap(), plain.infer(&x).unwrap());
    }
}

#[test]
fn whole_network_bypass_toggles_every_block() {
    let cfg = ModelConfig::tiny();
    let mut a = Gsresnet::<f64>::build(&cfg, 2).unwrap();
    let x = random_input(&[2, 3, 8, 8], 11);
    let before = a.infer(&x).unwrap();
    a.set_se_bypass(true);
    assert!(a.blocks.iter().all(|b| b.se.as_ref().unwrap().bypass));
    assert_ne!(a.infer(&x).unwrap(), before);
    a.set_se_bypass(false);
    assert_eq!(a.infer(&x).unwrap(), before);
}

#[test]
fn spatial_size_halves_per_downsampling_stage() {
    let cfg = ModelConfig::desk();
    let mut model = Gsresnet::<f32>::build(&cfg, 0).unwrap();
    let x = Tensor::filled(&[2, 3, 64, 64], 0.5f32);
    let logits = model.forward(&x, Mode::Train).unwrap();
    assert_eq!(logits.shape(), &[2, 18]);
    assert_eq!(cfg.output_px(), 16);
    let dx = model.backward(&Tensor::filled(&[2, 18], 0.1f32)).unwrap();
    assert_eq!(dx.shape(), x.shape());
}
