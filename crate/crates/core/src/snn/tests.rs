use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{ActivationKind, PlifParams, Var};
use crate::error::Error;
use crate::nn::{Ctx, ParamStore};
use crate::tensor::Tensor;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| f64::from(rng.gen_bool(p))).collect()).unwrap()
}

fn shape4(ctx: &Ctx, v: Var) -> (usize, usize, usize) {
    let s = ctx.graph.shape(v);
    (s[1], s[2], s[3])
}

/// Toy backbone whose taps land at 30x38, 15x19, 7x9 and 4x5 for 240x304.
fn event_backbone() -> BackboneConfig {
    BackboneConfig {
        in_channels: 2,
        stem_channels: 4,
        stem_stride: 2,
        stages: vec![StageConfig { layers: 1, growth: 4 }; 4],
        compression: 0.5,
        tap_stages: vec![1, 2, 3],
        extras: vec![ExtraConfig {
            mid_channels: 4,
            out_channels: 6,
        }],
        plif: PlifParams::default(),
    }
}

#[test]
fn plif_quiescent_without_input() {
    let mut store = ParamStore::new();
    let mut n = PlifNeuron::new(&mut store, "p", PlifParams::default());
    let mut ctx = Ctx::new(&mut store, 6, true);
    let x = ctx.graph.input(Tensor::zeros(&[6, 4]));
    let s = n.forward(&mut ctx, x).unwrap();
    assert!(ctx.graph.value(s).data().iter().all(|&v| v == 0.0));
}

#[test]
fn plif_constant_two_fires_every_step() {
    let mut store = ParamStore::new();
    let mut n = PlifNeuron::new(&mut store, "p", PlifParams::default());
    assert!((n.tau(&store) - 2.0).abs() < 1e-12);
    let mut ctx = Ctx::new(&mut store, 5, true);
    let x = ctx.graph.input(Tensor::full(&[5, 1], 2.0));
    let s = n.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(s).data(), &[1.0; 5]);
    assert_eq!(n.membrane().unwrap().data(), &[0.0]);
}

#[test]
fn plif_fused_sequence_matches_primitive_steps() {
    let mut r = rng();
    let steps = 6;
    let x = Tensor::from_vec(&[steps * 2, 3], (0..steps * 6).map(|_| r.gen_range(-1.0..3.0)).collect()).unwrap();
    let mut store = ParamStore::new();
    let mut fused = PlifNeuron::with_tau(&mut store, "p", PlifParams::default(), 3.0);
    let mut stepped = fused.clone();

    let mut ctx = Ctx::new(&mut store, steps, true);
    let xv = ctx.graph.leaf(x.clone());
    let s = fused.forward(&mut ctx, xv).unwrap();
    let l = ctx.graph.sum(s);
    let fused_out = ctx.graph.value(s).clone();
    ctx.backward(l).unwrap();
    let fused_gx = ctx.graph.grad(xv).unwrap().clone();
    let fused_gw = store.grad(fused.w).data()[0];

    store.zero_grad();
    let mut ctx = Ctx::new(&mut store, 1, true);
    let xv = ctx.graph.leaf(x);
    let mut outs = Vec::new();
    for t in 0..steps {
        let xt = ctx.graph.slice(xv, 0, 2 * t, 2).unwrap();
        outs.push(stepped.step(&mut ctx, xt).unwrap());
    }
    let s = ctx.graph.concat(&outs, 0).unwrap();
    let l = ctx.graph.sum(s);
    assert_eq!(ctx.graph.value(s).data(), fused_out.data());
    ctx.backward(l).unwrap();
    let gx = ctx.graph.grad(xv).unwrap();
    for (a, b) in gx.data().iter().zip(fused_gx.data()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert!((store.grad(stepped.w).data()[0] - fused_gw).abs() < 1e-10);
    assert_eq!(fused.counter(), stepped.counter());
}

#[test]
fn plif_step_rejects_shape_change() {
    let mut store = ParamStore::new();
    let mut n = PlifNeuron::new(&mut store, "p", PlifParams::default());
    let mut ctx = Ctx::new(&mut store, 1, true);
    let a = ctx.graph.input(Tensor::zeros(&[1, 3]));
    n.step(&mut ctx, a).unwrap();
    let b = ctx.graph.input(Tensor::zeros(&[1, 4]));
    assert!(matches!(n.step(&mut ctx, b), Err(Error::StateShape { .. })));
    n.reset_state();
    n.step(&mut ctx, b).unwrap();
}

#[test]
fn reset_clears_membrane_and_counters() {
    let mut store = ParamStore::new();
    let mut n = PlifNeuron::new(&mut store, "p", PlifParams::default());
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(Tensor::full(&[2, 3], 0.8));
    n.forward(&mut ctx, x).unwrap();
    assert!(n.membrane().unwrap().data().iter().all(|&v| v != 0.0));
    assert_eq!(n.counter().slots, 6);
    n.reset_state();
    assert!(n.membrane().is_none());
    assert_eq!(n.counter(), SpikeCounter::default());
}

#[test]
fn conv_bn_plif_zero_in_zero_out_and_recount() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let mut b = ConvBnPlif::new(&mut store, "b", 2, 4, 3, 1, 1, PlifParams::default(), &mut r);
    let mut ctx = Ctx::new(&mut store, 3, true);
    let z = ctx.graph.input(Tensor::zeros(&[3, 2, 5, 5]));
    let s = b.forward(&mut ctx, z).unwrap();
    assert!(ctx.graph.value(s).data().iter().all(|&v| v == 0.0));
    b.plif.reset_state();
    let x = ctx.graph.input(binary(&mut r, &[3, 2, 5, 5], 0.5));
    let s = b.forward(&mut ctx, x).unwrap();
    let out = ctx.graph.value(s);
    assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
    let ones = out.data().iter().filter(|&&v| v == 1.0).count() as u64;
    assert_eq!(b.plif.counter().spikes, ones);
    assert_eq!(b.plif.counter().slots, out.numel() as u64);
}

#[test]
fn dense_block_channel_formula() {
    let mut r = rng();
    for _ in 0..10 {
        let (cin, layers, growth) = (r.gen_range(1..6), r.gen_range(1..4), r.gen_range(1..6));
        let mut store = ParamStore::new();
        let mut d = DenseBlock::new(&mut store, "d", cin, layers, growth, PlifParams::default(), &mut r);
        assert_eq!(d.out_channels(), cin + layers * growth);
        let mut ctx = Ctx::new(&mut store, 2, true);
        let x = ctx.graph.input(binary(&mut r, &[2, cin, 4, 4], 0.4));
        let y = d.forward(&mut ctx, x).unwrap();
        assert_eq!(shape4(&ctx, y), (cin + layers * growth, 4, 4));
        assert!(ctx.graph.value(y).data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn sew_block_with_zero_body_is_identity() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let mut b = SewResBlock::new(&mut store, "res", 3, PlifParams::default(), &mut r);
    for id in [b.conv1.conv.weight, b.conv2.conv.weight] {
        store.value_mut(id).data_mut().fill(0.0);
    }
    let input = binary(&mut r, &[2, 3, 4, 4], 0.5);
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(input.clone());
    let y = b.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.value(y).data(), input.data());
    assert_eq!(b.non_binary.spikes, 0);
}

#[test]
fn sew_block_outputs_and_channel_check() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let mut b = SewResBlock::new(&mut store, "res", 3, PlifParams::default(), &mut r);
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(binary(&mut r, &[2, 3, 6, 6], 0.6));
    let y = b.forward(&mut ctx, x).unwrap();
    let vals = ctx.graph.value(y);
    assert!(vals.data().iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
    let twos = vals.data().iter().filter(|&&v| v == 2.0).count() as u64;
    assert_eq!(b.non_binary.spikes, twos);
    let bad = ctx.graph.input(Tensor::zeros(&[2, 4, 6, 6]));
    assert!(b.forward(&mut ctx, bad).is_err());
}

#[test]
fn extra_block_ceil_halving() {
    let mut r = rng();
    for (hw, want) in [((7, 9), (4, 5)), ((30, 38), (15, 19))] {
        let mut store = ParamStore::new();
        let mut e = ExtraBlock::new(&mut store, "e", 3, 2, 5, PlifParams::default(), &mut r);
        let mut ctx = Ctx::new(&mut store, 1, true);
        let x = ctx.graph.input(binary(&mut r, &[1, 3, hw.0, hw.1], 0.5));
        let y = e.forward(&mut ctx, x).unwrap();
        assert_eq!(shape4(&ctx, y), (5, want.0, want.1));
        assert!(ctx.graph.value(y).data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn deconv_block_reaches_target() {
    let mut r = rng();
    for (hw, cin) in [((15, 19), 7), ((7, 9), 3), ((30, 38), 5)] {
        let mut store = ParamStore::new();
        let mut d = DeconvBlock::new(&mut store, "d", cin, 6, hw, (30, 38), PlifParams::default(), &mut r).unwrap();
        assert_eq!(d.out_channels(), 6);
        let mut ctx = Ctx::new(&mut store, 1, true);
        let x = ctx.graph.input(binary(&mut r, &[1, cin, hw.0, hw.1], 0.5));
        let y = d.forward(&mut ctx, x).unwrap();
        assert_eq!(shape4(&ctx, y), (6, 30, 38));
    }
    let same = solve_upsample(9, 9).unwrap();
    assert_eq!((same.stride, same.kernel, same.pad), (1, 3, 1));
    assert!(solve_upsample(10, 5).is_err());
    let mut store = ParamStore::new();
    assert!(DeconvBlock::new(&mut store, "d", 1, 1, (8, 8), (4, 4), PlifParams::default(), &mut r).is_err());
}

#[test]
fn upsample_solver_hits_every_target() {
    for input in 1..20 {
        for target in input..80 {
            let a = solve_upsample(input, target).unwrap();
            let out = crate::autograd::conv_transpose_output_len(input, a.kernel, a.stride, a.pad, a.output_padding);
            assert_eq!(out, Some(target));
        }
    }
}

#[test]
fn fusion_concat_width_at_event_scales() {
    let mut r = rng();
    let taps = [(8, (30, 38)), (8, (15, 19)), (8, (7, 9))];
    let spec = FusionSpec {
        spes_variant: SpesVariant::Basic,
        pyramid_levels: 1,
        ..FusionSpec::default()
    };
    let mut store = ParamStore::new();
    let mut f = SpikingFusion::new(&mut store, "f", &spec, &taps, PlifParams::default(), &mut r).unwrap();
    let mut ctx = Ctx::new(&mut store, 1, false);
    let xs: Vec<Var> = taps
        .iter()
        .map(|&(c, (h, w))| ctx.graph.input(binary(&mut r, &[1, c, h, w], 0.3)))
        .collect();
    let maps = f.transform(&mut ctx, &xs).unwrap();
    let fused = f.fuse(&mut ctx, &maps).unwrap();
    assert_eq!(shape4(&ctx, fused), (192, 30, 38));
}

#[test]
fn spes_level_shapes() {
    let mut r = rng();
    let mut shapes = Vec::new();
    for variant in [SpesVariant::Basic, SpesVariant::ResEnhanced, SpesVariant::DenseEnhanced] {
        let spec = FusionSpec {
            fused_channels: 4,
            spes_variant: variant,
            ..FusionSpec::default()
        };
        let mut store = ParamStore::new();
        let mut s = Spes::new(&mut store, "s", 8, &spec, PlifParams::default(), &mut r);
        let mut ctx = Ctx::new(&mut store, 1, true);
        let x = ctx.graph.input(binary(&mut r, &[1, 8, 30, 38], 0.3));
        let levels = s.forward(&mut ctx, x).unwrap();
        shapes.push(levels.iter().map(|&v| shape4(&ctx, v)).collect::<Vec<_>>());
    }
    assert_eq!(shapes[0], vec![(4, 30, 38), (4, 15, 19), (4, 8, 10)]);
    assert!(shapes.iter().all(|s| *s == shapes[0]));
}

#[test]
fn single_branch_identity_fusion_keeps_shape() {
    let mut r = rng();
    let spec = FusionSpec {
        fuse_layers: vec![0],
        fused_channels: 3,
        spes_variant: SpesVariant::Basic,
        pyramid_levels: 1,
        ..FusionSpec::default()
    };
    let mut store = ParamStore::new();
    let mut f = SpikingFusion::new(&mut store, "f", &spec, &[(3, (9, 11))], PlifParams::default(), &mut r).unwrap();
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(binary(&mut r, &[2, 3, 9, 11], 0.5));
    let out = f.forward(&mut ctx, &[x]).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(ctx.graph.shape(out[0]), ctx.graph.shape(x));
}

#[test]
fn fusion_equals_manual_composition() {
    let mut r = rng();
    let taps = [(4, (8, 8)), (6, (4, 4)), (6, (2, 2)), (5, (1, 1))];
    let spec = FusionSpec {
        fused_channels: 4,
        ..FusionSpec::default()
    };
    let mut store = ParamStore::new();
    let mut f = SpikingFusion::new(&mut store, "f", &spec, &taps, PlifParams::default(), &mut r).unwrap();
    let mut g = f.clone();
    let inputs: Vec<Tensor> = taps.iter().map(|&(c, (h, w))| binary(&mut r, &[2, c, h, w], 0.5)).collect();

    let mut store2 = store.clone();
    let mut ctx = Ctx::new(&mut store, 2, true);
    let xs: Vec<Var> = inputs.iter().map(|t| ctx.graph.input(t.clone())).collect();
    let whole = f.forward(&mut ctx, &xs).unwrap();
    let whole: Vec<Tensor> = whole.iter().map(|&v| ctx.graph.value(v).clone()).collect();

    let mut ctx = Ctx::new(&mut store2, 2, true);
    let xs: Vec<Var> = inputs[..3].iter().map(|t| ctx.graph.input(t.clone())).collect();
    let mut maps = Vec::new();
    for (b, &x) in g.branches.iter_mut().zip(&xs) {
        maps.push(b.forward(&mut ctx, x).unwrap());
    }
    let cat = ctx.graph.concat(&maps, 1).unwrap();
    let parts = g.spes.forward(&mut ctx, cat).unwrap();
    assert_eq!(parts.len(), whole.len());
    for (p, w) in parts.iter().zip(&whole) {
        assert_eq!(ctx.graph.value(*p), w);
    }
    assert_eq!(store.entries().len(), store2.entries().len());
    for (a, b) in store.entries().iter().zip(store2.entries()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn fusion_rejects_wrong_tap_count() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let spec = FusionSpec::default();
    assert!(SpikingFusion::new(&mut store, "f", &spec, &[(2, (4, 4))], PlifParams::default(), &mut r).is_err());
    let empty = FusionSpec {
        fuse_layers: vec![],
        ..FusionSpec::default()
    };
    assert!(empty.validate().is_err());
}

#[test]
fn classifier_emits_per_step_class_spikes() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let cfg = ClassifierConfig::toy(4, 3);
    let mut m = build_classifier(&mut store, &cfg, &mut r).unwrap();
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(binary(&mut r, &[2 * 2, 4, 64, 64], 0.05));
    let out = m.forward(&mut ctx, x).unwrap();
    assert_eq!(ctx.graph.shape(out.spikes), &[4, 3]);
    assert_eq!(ctx.graph.shape(out.currents), &[4, 3]);
}

#[test]
fn backbone_taps_at_event_camera_scale() {
    let cfg = event_backbone();
    let hw: Vec<_> = cfg.tap_shapes((240, 304)).unwrap().into_iter().map(|t| t.1).collect();
    assert_eq!(hw, vec![(30, 38), (15, 19), (7, 9), (4, 5)]);
    let mut r = rng();
    let mut store = ParamStore::new();
    let mut b = Backbone::new(&mut store, "b", &cfg, &mut r).unwrap();
    let mut ctx = Ctx::new(&mut store, 1, false);
    let x = ctx.graph.input(binary(&mut r, &[1, 2, 240, 304], 0.02));
    let out = b.forward(&mut ctx, x).unwrap();
    let got: Vec<_> = out.taps.iter().map(|&v| (ctx.graph.shape(v)[2], ctx.graph.shape(v)[3])).collect();
    assert_eq!(got, hw);
}

#[test]
fn detector_fusion_targets_at_event_camera_scale() {
    let mut r = rng();
    let cfg = DetectorConfig {
        backbone: event_backbone(),
        input_hw: (240, 304),
        fusion_mode: FusionMode::Four,
        fusion: FusionSpec {
            fused_channels: 4,
            ..FusionSpec::default()
        },
        head_taps: vec![0, 1, 2],
    };
    let mut store = ParamStore::new();
    let d = build_detector_backbone(&mut store, &cfg, &mut r).unwrap();
    let f = d.fusion.as_ref().unwrap();
    assert_eq!(f.branches.len(), 4);
    assert!(f.branches.iter().all(|b| b.target == (30, 38)));
    let hw: Vec<_> = d.pyramid_shapes().unwrap().into_iter().map(|t| t.1).collect();
    assert_eq!(hw, vec![(30, 38), (15, 19), (8, 10)]);
}

fn toy_detector(mode: FusionMode, r: &mut ChaCha8Rng) -> (ParamStore, DetectorBackbone) {
    let mut cfg = DetectorConfig::toy(4, mode);
    cfg.input_hw = (64, 64);
    let mut store = ParamStore::new();
    let d = build_detector_backbone(&mut store, &cfg, r).unwrap();
    (store, d)
}

#[test]
fn network_activations_are_binary_except_sew() {
    let mut r = rng();
    let (mut store, mut d) = toy_detector(FusionMode::Three, &mut r);
    let mut ctx = Ctx::new(&mut store, 3, true);
    let x = ctx.graph.input(binary(&mut r, &[3 * 2, 4, 64, 64], 0.2));
    d.forward(&mut ctx, x).unwrap();
    let mut spikes = 0;
    let mut sew = 0;
    for (v, kind, t) in ctx.graph.activations() {
        match kind {
            ActivationKind::Spike => {
                spikes += usize::from(ctx.graph.is_firing(v));
                assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
            ActivationKind::SewAdd => {
                sew += 1;
                assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
            }
        }
    }
    assert_eq!(spikes, d.all_neurons().len());
    assert_eq!(sew, d.sew_blocks().len());
}

#[test]
fn firing_counters_match_recount() {
    let mut r = rng();
    let (mut store, mut d) = toy_detector(FusionMode::Three, &mut r);
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(binary(&mut r, &[2, 4, 64, 64], 0.3));
    d.forward(&mut ctx, x).unwrap();
    let (mut ones, mut slots) = (0u64, 0u64);
    for (v, _, t) in ctx.graph.activations() {
        if ctx.graph.is_firing(v) {
            ones += t.data().iter().filter(|&&v| v == 1.0).count() as u64;
            slots += t.numel() as u64;
        }
    }
    let (s, n) = d
        .all_neurons()
        .iter()
        .fold((0, 0), |(s, n), p| (s + p.counter().spikes, n + p.counter().slots));
    assert_eq!((s, n), (ones, slots));
    for p in d.all_neurons() {
        let rate = p.counter().rate().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn reset_isolates_samples() {
    let mut r = rng();
    let (mut store, mut d) = toy_detector(FusionMode::Three, &mut r);
    let a = binary(&mut r, &[2, 4, 64, 64], 0.3);
    let b = binary(&mut r, &[2, 4, 64, 64], 0.3);
    let run = |d: &mut DetectorBackbone, store: &mut ParamStore, t: &Tensor| {
        let mut ctx = Ctx::new(store, 2, true);
        let x = ctx.graph.input(t.clone());
        let out = d.forward(&mut ctx, x).unwrap();
        out.iter().map(|&v| ctx.graph.value(v).clone()).collect::<Vec<_>>()
    };
    let first = run(&mut d, &mut store, &a);
    d.reset_all();
    for p in d.all_neurons() {
        assert_eq!(p.counter(), SpikeCounter::default());
    }
    assert_eq!(d.non_binary(), SpikeCounter::default());
    let again = run(&mut d, &mut store, &a);
    assert_eq!(first, again);

    d.reset_all();
    run(&mut d, &mut store, &b);
    let leaked = run(&mut d, &mut store, &a);
    assert_ne!(first, leaked);
}

#[test]
fn gradients_reach_every_parameter() {
    let mut r = rng();
    let (mut store, mut d) = toy_detector(FusionMode::Four, &mut r);
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(binary(&mut r, &[2 * 2, 4, 64, 64], 0.3));
    let maps = d.forward(&mut ctx, x).unwrap();
    let means: Vec<Var> = maps.iter().map(|&m| ctx.graph.mean(m)).collect();
    let cat = ctx.graph.concat(&means, 0).unwrap();
    let loss = ctx.graph.sum(cat);
    ctx.backward(loss).unwrap();
    for e in store.entries().iter().filter(|e| e.trainable) {
        assert!(e.grad.max_abs() > 0.0, "{} has no gradient", e.name);
    }
    let plifs = d.all_neurons().len();
    let with_w = store.entries().iter().filter(|e| e.name.ends_with(".plif.w")).count();
    assert_eq!(plifs, with_w);
}

#[test]
fn classifier_gradients_reach_every_parameter() {
    let mut r = rng();
    let mut store = ParamStore::new();
    let mut m = build_classifier(&mut store, &ClassifierConfig::toy(2, 2), &mut r).unwrap();
    let mut ctx = Ctx::new(&mut store, 2, true);
    let x = ctx.graph.input(binary(&mut r, &[2 * 2, 2, 32, 32], 0.3));
    let out = m.forward(&mut ctx, x).unwrap();
    let a = ctx.graph.mean(out.spikes);
    let b = ctx.graph.mean(out.currents);
    let loss = ctx.graph.add(a, b).unwrap();
    ctx.backward(loss).unwrap();
    for e in store.entries().iter().filter(|e| e.trainable) {
        assert!(e.grad.max_abs() > 0.0, "{} has no gradient", e.name);
    }
}

#[test]
fn checkpoint_round_trip() {
    let mut r = rng();
    let (store, _) = toy_detector(FusionMode::Three, &mut r);
    let manifest = serde_json::json!({"kind": "test"});
    let mut buf = Vec::new();
    checkpoint::write_checkpoint(&mut buf, &manifest, &store).unwrap();
    let ck = checkpoint::read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(ck.manifest, manifest);
    let (mut other, _) = toy_detector(FusionMode::Three, &mut ChaCha8Rng::seed_from_u64(99));
    ck.apply(&mut other).unwrap();
    for (a, b) in store.entries().iter().zip(other.entries()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn checkpoint_rejects_mismatch_and_corruption() {
    let mut r = rng();
    let (store, _) = toy_detector(FusionMode::Three, &mut r);
    let mut buf = Vec::new();
    checkpoint::write_checkpoint(&mut buf, &serde_json::json!({}), &store).unwrap();
    let ck = checkpoint::read_checkpoint(buf.as_slice()).unwrap();
    let (mut other, _) = toy_detector(FusionMode::None, &mut r);
    assert!(matches!(ck.apply(&mut other), Err(Error::CheckpointMismatch(_))));
    assert!(matches!(
        checkpoint::read_checkpoint(&buf[..buf.len() - 3]),
        Err(Error::Truncated(_))
    ));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::read_checkpoint(bad.as_slice()), Err(Error::BadMagic)));
    let mut ver = buf;
    ver[4] = 9;
    assert!(matches!(checkpoint::read_checkpoint(ver.as_slice()), Err(Error::UnsupportedVersion(9))));
}

proptest! {
    #[test]
    fn tau_exceeds_one(w in -700.0f64..700.0) {
        let mut store = ParamStore::new();
        let n = PlifNeuron::new(&mut store, "p", PlifParams::default());
        store.value_mut(n.w).data_mut()[0] = w;
        prop_assert!(n.tau(&store) > 1.0);
    }

    #[test]
    fn fusion_mode_round_trips(i in 0usize..3) {
        let m = [FusionMode::None, FusionMode::Three, FusionMode::Four][i];
        prop_assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
    }
}
