mod common;

use common::{random_classes, random_cond, randomize, reference_config, with_context};
use proptest::prelude::*;
use wavenet::model::{
    ClassifierConfig, ConditioningInput, ContextStackConfig, GlobalConditioning, LocalConditioning,
    ModelConfig, UpsampleMode, WaveNetModel,
};
use wavenet::rng::Rng64;
use wavenet::tensor_ops::{causal_conv, conv1x1, relu, sigmoid, softmax_row, ConvKernel, Tensor2D};
use wavenet::training::nll_loss;
use wavenet::Error;

type Model = WaveNetModel<f32>;

fn random_model(cfg: ModelConfig, seed: u64, scale: f64) -> Model {
    let mut m = Model::new(cfg, seed).unwrap();
    randomize(&mut m, seed, scale);
    m
}

/// Copies every kernel of `src` whose name exists in `dst`.
fn copy_shared(src: &Model, dst: &mut Model) {
    let names: Vec<String> = dst.kernel_names().map(str::to_owned).collect();
    for name in names {
        if let Some(k) = src.kernel(&name) {
            *dst.kernel_mut(&name).unwrap() = k.clone();
        }
    }
}

fn zero(m: &mut Model, name: &str) {
    m.kernel_mut(name).unwrap_or_else(|| panic!("no kernel {name}")).fill_zero();
}

#[test]
fn one_layer_fixture_matches_hand_computation() {
    let mut cfg = ModelConfig::new(1, 1, 1, 1);
    cfg.num_classes = 3;
    let mut m = Model::zeroed(cfg).unwrap();
    m.kernel_mut("embedding").unwrap().weights = vec![-1.0, 0.0, 1.0];
    // lag 0 then lag 1
    m.kernel_mut("layer0.filter").unwrap().weights = vec![0.5, -0.25];
    m.kernel_mut("layer0.gate").unwrap().weights = vec![1.0, 1.0];
    m.kernel_mut("layer0.skip").unwrap().weights = vec![2.0];
    m.kernel_mut("head.hidden").unwrap().weights = vec![1.0];
    m.kernel_mut("head.out").unwrap().weights = vec![1.0, -1.0, 0.5];

    // x = [1, -1, 0]
    // t0: f = 0.5,   g = 1  -> z = tanh(0.5) sigmoid(1)  = 0.33783471214704114
    // t1: f = -0.75, g = 0  -> z < 0, cut by the relu
    // t2: f = 0.25,  g = -1 -> z = tanh(0.25) sigmoid(-1) = 0.06586877318689152
    let expect = [
        [0.6756694242940823, -0.6756694242940823, 0.33783471214704114],
        [0.0, 0.0, 0.0],
        [0.13173754637378304, -0.13173754637378304, 0.06586877318689152],
    ];
    let logits = m.forward(&[2, 0, 1], &ConditioningInput::none()).unwrap();
    for (t, row) in expect.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            assert!((logits.get(t, c) as f64 - v).abs() < 1e-6, "t{t} c{c}: {}", logits.get(t, c));
        }
    }
}

#[test]
fn zero_parameters_give_uniform_predictions() {
    let cfg = with_context(reference_config());
    let m = Model::zeroed(cfg.clone()).unwrap();
    let mut rng = Rng64::new(1);
    let classes = random_classes(&mut rng, 64, 256);
    let logits = m.forward(&classes, &random_cond(&cfg, &mut rng, 64)).unwrap();
    assert!(logits.data().iter().all(|&v| v == 0.0));
    let nll = nll_loss(&logits.slice_rows(0, 63), &classes[1..]).unwrap();
    assert!((nll - 256f64.ln()).abs() < 1e-9, "{nll}");
}

#[test]
fn distributions_sum_to_one() {
    let m = random_model(reference_config(), 2, 0.5);
    let mut rng = Rng64::new(2);
    let classes = random_classes(&mut rng, 32, 256);
    let logits = m.forward(&classes, &random_cond(m.config(), &mut rng, 32)).unwrap();
    for t in 0..32 {
        let p: Vec<f64> = softmax_row(logits.row(t));
        let sum32: f32 = p.iter().map(|&v| v as f32).sum();
        assert!((sum32 - 1.0).abs() < 1e-6);
    }
}

fn small_configs() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..4,
        prop::collection::vec(1usize..5, 1..4),
        2usize..4,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(r, dilations, fw, global, local, context)| {
            let mut cfg = ModelConfig::new(r, r + 1, 1, 1);
            cfg.num_classes = 16;
            cfg.filter_width = fw;
            cfg.dilation_schedule = dilations;
            if global {
                cfg.conditioning.global = Some(GlobalConditioning { dim: 2 });
            }
            if local {
                cfg.conditioning.local = Some(LocalConditioning {
                    dim: 2,
                    upsample_factor: 2,
                    mode: UpsampleMode::Transposed,
                });
            }
            if context {
                cfg.context_stacks.push(ContextStackConfig {
                    dilation_schedule: vec![1, 2],
                    channels: 2,
                    pool_factor: 3,
                });
            }
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn earlier_logits_ignore_later_inputs(cfg in small_configs(), seed in any::<u64>(), t in 0usize..24) {
        let m = random_model(cfg.clone(), seed, 0.5);
        let mut rng = Rng64::new(seed);
        let classes = random_classes(&mut rng, 24, 16);
        let cond = random_cond(&cfg, &mut rng, 24);
        let base = m.forward(&classes, &cond).unwrap();
        let mut changed = classes.clone();
        for c in &mut changed[t..] {
            *c = (*c + 1 + rng.below(15) as u16) % 16;
        }
        let after = m.forward(&changed, &cond).unwrap();
        prop_assert_eq!(&base.data()[..t * 16], &after.data()[..t * 16]);
    }

    #[test]
    fn receptive_field_is_tight(cfg in small_configs(), seed in any::<u64>()) {
        let mut cfg = cfg;
        cfg.context_stacks.clear();
        let rf = cfg.receptive_field();
        let n = rf + 8;
        let t = n - 1;
        let mut m = random_model(cfg.clone(), seed, 0.8);
        // Keep both head relus active so no path is cut off at the probe.
        m.kernel_mut("layer0.skip").unwrap().bias.fill(5.0);
        m.kernel_mut("head.hidden").unwrap().bias.fill(5.0);
        // The longest path multiplies several small derivatives; in single
        // precision its effect can round away against logits of order one.
        let m = m.cast::<f64>();
        let mut rng = Rng64::new(seed ^ 1);
        let classes = random_classes(&mut rng, n, 16);
        let cond = random_cond(&cfg, &mut rng, n - n % 2);
        let classes = &classes[..n - n % 2];
        let t = t.min(classes.len() - 1);
        let base = m.forward(classes, &cond).unwrap();
        let probe = |pos: usize| {
            let mut c = classes.to_vec();
            c[pos] = (c[pos] + 5) % 16;
            m.forward(&c, &cond).unwrap().row(t).to_vec()
        };
        prop_assert_ne!(probe(t + 1 - rf), base.row(t).to_vec());
        if t >= rf {
            prop_assert_eq!(probe(t - rf), base.row(t).to_vec());
        }
    }
}

#[test]
fn parameter_count_follows_the_config() {
    let (r, s) = (5, 7);
    let cfg = ModelConfig::new(r, s, 4, 1);
    let layers = 3;
    let expect = (256 * r + r) + layers * (2 * (2 * r * r + r) + (r * r + r) + (r * s + s)) + (s * s + s) + (s * 256 + 256);
    let a = Model::new(cfg.clone(), 1).unwrap();
    let b = Model::new(cfg, 2).unwrap();
    assert_eq!(a.num_params(), expect);
    assert_eq!(b.num_params(), expect);
}

fn global_config(dim: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(4, 4, 4, 1);
    cfg.conditioning.global = Some(GlobalConditioning { dim });
    cfg
}

#[test]
fn zero_global_vector_matches_unconditioned_model() {
    let mut cond_model = random_model(global_config(3), 3, 0.4);
    for k in 0..3 {
        for p in ["filter", "gate"] {
            cond_model.kernel_mut(&format!("layer{k}.global.{p}")).unwrap().bias.fill(0.0);
        }
    }
    let mut plain = Model::zeroed(ModelConfig::new(4, 4, 4, 1)).unwrap();
    copy_shared(&cond_model, &mut plain);
    let classes = random_classes(&mut Rng64::new(3), 40, 256);
    let h0 = ConditioningInput {
        global: Some(vec![0.0; 3]),
        local: None,
    };
    assert_eq!(
        cond_model.forward(&classes, &h0).unwrap(),
        plain.forward(&classes, &ConditioningInput::none()).unwrap()
    );
}

#[test]
fn distinct_speakers_differ_everywhere() {
    let m = random_model(global_config(2), 4, 0.4);
    let classes = random_classes(&mut Rng64::new(4), 40, 256);
    let a = m.forward(&classes, &ConditioningInput::global_one_hot(0, 2).unwrap()).unwrap();
    let b = m.forward(&classes, &ConditioningInput::global_one_hot(1, 2).unwrap()).unwrap();
    for t in 0..40 {
        assert_ne!(a.row(t), b.row(t), "t = {t}");
    }
}

#[test]
fn permuting_h_with_projection_rows_is_equivariant() {
    let m = random_model(global_config(3), 5, 0.4);
    let perm = [2, 0, 1];
    let mut permuted = m.clone();
    for k in 0..3 {
        for p in ["filter", "gate"] {
            let name = format!("layer{k}.global.{p}");
            let src = m.kernel(&name).unwrap().clone();
            let dst = permuted.kernel_mut(&name).unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                for o in 0..src.c_out {
                    dst.set_w(0, pi, o, src.w(0, i, o));
                }
            }
        }
    }
    let h = vec![0.3, -0.7, 1.1];
    let mut hp = vec![0.0; 3];
    for (i, &pi) in perm.iter().enumerate() {
        hp[pi] = h[i];
    }
    let classes = random_classes(&mut Rng64::new(5), 32, 256);
    let cond = |v: Vec<f32>| ConditioningInput {
        global: Some(v),
        local: None,
    };
    let a = m.forward(&classes, &cond(h)).unwrap();
    let b = permuted.forward(&classes, &cond(hp)).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
}

fn local_config(mode: UpsampleMode, factor: usize, dim: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(4, 4, 4, 1);
    cfg.conditioning.local = Some(LocalConditioning {
        dim,
        upsample_factor: factor,
        mode,
    });
    cfg
}

#[test]
fn zero_local_series_matches_unconditioned_model() {
    let mut m = random_model(local_config(UpsampleMode::Transposed, 4, 2), 6, 0.4);
    m.kernel_mut("local.upsampler").unwrap().bias.fill(0.0);
    for k in 0..3 {
        for p in ["filter", "gate"] {
            m.kernel_mut(&format!("layer{k}.local.{p}")).unwrap().bias.fill(0.0);
        }
    }
    let mut plain = Model::zeroed(ModelConfig::new(4, 4, 4, 1)).unwrap();
    copy_shared(&m, &mut plain);
    let classes = random_classes(&mut Rng64::new(6), 32, 256);
    let cond = ConditioningInput::none().with_local(Tensor2D::zeros(8, 2));
    assert_eq!(
        m.forward(&classes, &cond).unwrap(),
        plain.forward(&classes, &ConditioningInput::none()).unwrap()
    );
}

#[test]
fn constant_local_series_equals_global_vector() {
    let local = random_model(local_config(UpsampleMode::Repeat, 4, 3), 7, 0.4);
    let mut global = Model::zeroed(global_config(3)).unwrap();
    copy_shared(&local, &mut global);
    for k in 0..3 {
        for p in ["filter", "gate"] {
            let src = local.kernel(&format!("layer{k}.local.{p}")).unwrap().clone();
            *global.kernel_mut(&format!("layer{k}.global.{p}")).unwrap() = src;
        }
    }
    let h = vec![0.5f32, -0.25, 0.75];
    let rows: Vec<Vec<f32>> = vec![h.clone(); 10];
    let classes = random_classes(&mut Rng64::new(7), 40, 256);
    let a = local
        .forward(&classes, &ConditioningInput::none().with_local(Tensor2D::from_rows(&rows).unwrap()))
        .unwrap();
    let b = global
        .forward(&classes, &ConditioningInput { global: Some(h), local: None })
        .unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn transposed_upsampler_starts_as_repetition() {
    let transposed = Model::new(local_config(UpsampleMode::Transposed, 4, 2), 8).unwrap();
    let mut randomized = transposed.clone();
    for k in 0..3 {
        for p in ["filter", "gate"] {
            let mut rng = Rng64::new(k);
            randomized
                .kernel_mut(&format!("layer{k}.local.{p}"))
                .unwrap()
                .values_mut()
                .for_each(|v| *v = rng.uniform(-0.5, 0.5) as f32);
        }
    }
    let mut repeat = Model::zeroed(local_config(UpsampleMode::Repeat, 4, 2)).unwrap();
    copy_shared(&randomized, &mut repeat);
    let mut rng = Rng64::new(8);
    let classes = random_classes(&mut rng, 32, 256);
    let cond = random_cond(transposed.config(), &mut rng, 32);
    let a = randomized.forward(&classes, &cond).unwrap();
    assert!(a.max_abs_diff(&repeat.forward(&classes, &cond).unwrap()) < 1e-6);
    randomized.kernel_mut("local.upsampler").unwrap().weights[0] += 0.5;
    assert!(randomized.forward(&classes, &cond).unwrap().max_abs_diff(&a) > 1e-4);
}

#[test]
fn local_length_mismatch_is_a_shape_error() {
    let m = Model::new(local_config(UpsampleMode::Repeat, 4, 2), 9).unwrap();
    let cond = ConditioningInput::none().with_local(Tensor2D::zeros(7, 2));
    assert!(matches!(m.forward(&[1; 32], &cond), Err(Error::Shape(_))));
}

#[test]
fn conditioning_modes_must_match_the_config() {
    let g = Model::new(global_config(2), 1).unwrap();
    assert!(matches!(g.forward(&[1; 4], &ConditioningInput::none()), Err(Error::Config(_))));
    let wrong_dim = ConditioningInput::global_one_hot(0, 3).unwrap();
    assert!(matches!(g.forward(&[1; 4], &wrong_dim), Err(Error::Config(_))));
    let plain = Model::new(ModelConfig::new(2, 2, 2, 1), 1).unwrap();
    let extra = ConditioningInput::global_one_hot(0, 2).unwrap();
    assert!(matches!(plain.forward(&[1; 4], &extra), Err(Error::Config(_))));
}

fn context_config() -> ModelConfig {
    let mut cfg = global_config(2);
    cfg.context_stacks.push(ContextStackConfig {
        dilation_schedule: vec![1, 2, 4],
        channels: 3,
        pool_factor: 4,
    });
    cfg
}

#[test]
fn silenced_context_matches_plain_forward_on_window() {
    let mut m = random_model(context_config(), 10, 0.4);
    for k in 0..3 {
        zero(&mut m, &format!("layer{k}.context0.filter"));
        zero(&mut m, &format!("layer{k}.context0.gate"));
    }
    let mut plain = Model::zeroed(global_config(2)).unwrap();
    copy_shared(&m, &mut plain);
    let classes = random_classes(&mut Rng64::new(10), 80, 256);
    let cond = ConditioningInput::global_one_hot(1, 2).unwrap();
    let windowed = m.forward_with_context(&classes, &cond, 16).unwrap();
    assert_eq!(windowed, plain.forward(&classes[64..], &cond).unwrap());
}

#[test]
fn context_requirements_are_enforced() {
    let m = Model::new(context_config(), 11).unwrap();
    let cond = ConditioningInput::global_one_hot(0, 2).unwrap();
    // stack receptive field 8 frames of 4 samples
    assert_eq!(m.config().context_requirement(), 32);
    assert!(matches!(m.forward_with_context(&[1; 31], &cond, 8), Err(Error::Data(_))));
    assert!(m.forward_with_context(&[1; 32], &cond, 8).is_ok());
    let plain = Model::new(global_config(2), 11).unwrap();
    assert!(matches!(plain.forward_with_context(&[1; 32], &cond, 8), Err(Error::Config(_))));
}

#[test]
fn unpooled_single_layer_context_is_extra_local_conditioning() {
    let mut cfg = ModelConfig::new(4, 4, 2, 1);
    cfg.context_stacks.push(ContextStackConfig {
        dilation_schedule: vec![3],
        channels: 2,
        pool_factor: 1,
    });
    let ctx = random_model(cfg, 12, 0.4);
    let classes = random_classes(&mut Rng64::new(12), 30, 256);

    // The stack's output computed directly from its kernels.
    let onehot = {
        let mut t = Tensor2D::zeros(30, 256);
        for (i, &c) in classes.iter().enumerate() {
            t.set(i, c as usize, 1.0);
        }
        t
    };
    let k = |n: &str| -> &ConvKernel<f32> { ctx.kernel(n).unwrap() };
    let x = conv1x1(&onehot, k("context0.input")).unwrap();
    let f = causal_conv(&x, k("context0.layer0.filter")).unwrap();
    let g = causal_conv(&x, k("context0.layer0.gate")).unwrap();
    let z_data: Vec<f32> = f.data().iter().zip(g.data()).map(|(&a, &b)| a.tanh() * sigmoid(b)).collect();
    let z = Tensor2D::from_vec(30, 2, z_data).unwrap();
    let mut y = conv1x1(&z, k("context0.layer0.residual")).unwrap();
    y.add_assign(&x);

    let mut lcfg = local_config(UpsampleMode::Repeat, 1, 2);
    lcfg.dilation_schedule = vec![1, 2];
    let mut local = Model::zeroed(lcfg).unwrap();
    copy_shared(&ctx, &mut local);
    for l in 0..2 {
        for p in ["filter", "gate"] {
            let src = ctx.kernel(&format!("layer{l}.context0.{p}")).unwrap().clone();
            *local.kernel_mut(&format!("layer{l}.local.{p}")).unwrap() = src;
        }
    }
    let a = ctx.forward(&classes, &ConditioningInput::none()).unwrap();
    let b = local.forward(&classes, &ConditioningInput::none().with_local(y)).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6, "{}", a.max_abs_diff(&b));
}

#[test]
fn context_stack_extends_the_receptive_field() {
    let m = random_model(context_config(), 13, 0.5);
    let main_rf = m.receptive_field();
    let cond = ConditioningInput::global_one_hot(0, 2).unwrap();
    let classes = random_classes(&mut Rng64::new(13), 64, 256);
    let t = 63;
    let base = m.forward(&classes, &cond).unwrap();
    let far = t - main_rf - 10;
    let mut changed = classes.clone();
    changed[far] = (changed[far] + 100) % 256;
    let after = m.forward(&changed, &cond).unwrap();
    assert_ne!(base.row(t), after.row(t), "position {far} should reach t={t} through the context stack");

    let mut plain = Model::zeroed(global_config(2)).unwrap();
    copy_shared(&m, &mut plain);
    let pb = plain.forward(&classes, &cond).unwrap();
    let pa = plain.forward(&changed, &cond).unwrap();
    assert_eq!(pb.row(t), pa.row(t));
}

#[test]
fn classifier_frames_and_errors() {
    let mut cfg = ModelConfig::new(2, 2, 2, 1);
    cfg.classifier = Some(ClassifierConfig {
        num_labels: 4,
        pool_factor: 160,
    });
    let m = Model::new(cfg, 14).unwrap();
    let classes = random_classes(&mut Rng64::new(14), 16_000, 256);
    let (frames, logits) = m.classify_frames(&classes, &ConditioningInput::none()).unwrap();
    assert_eq!(frames.shape(), (100, 4));
    assert_eq!(logits.shape(), (16_000, 256));
    let (trimmed, _) = m.classify_frames(&classes[..15_999], &ConditioningInput::none()).unwrap();
    assert_eq!(trimmed.timesteps(), 99);
    let plain = Model::new(ModelConfig::new(2, 2, 2, 1), 14).unwrap();
    assert!(matches!(plain.classify_frames(&classes, &ConditioningInput::none()), Err(Error::Config(_))));
}

#[test]
fn residual_projection_at_init_passes_inputs_through() {
    let mut cfg = ModelConfig::new(3, 4, 4, 1);
    cfg.num_classes = 32;
    let m = Model::new(cfg, 15).unwrap();
    let classes = random_classes(&mut Rng64::new(15), 20, 32);
    let mut onehot = Tensor2D::zeros(20, 32);
    for (i, &c) in classes.iter().enumerate() {
        onehot.set(i, c as usize, 1.0);
    }
    // Every layer sees the embedding unchanged when residual projections are zero.
    let x = conv1x1(&onehot, m.kernel("embedding").unwrap()).unwrap();
    let mut skip = Tensor2D::zeros(20, 4);
    for l in 0..3 {
        let f = causal_conv(&x, m.kernel(&format!("layer{l}.filter")).unwrap()).unwrap();
        let g = causal_conv(&x, m.kernel(&format!("layer{l}.gate")).unwrap()).unwrap();
        let z: Vec<f32> = f.data().iter().zip(g.data()).map(|(&a, &b)| a.tanh() * sigmoid(b)).collect();
        let z = Tensor2D::from_vec(20, 3, z).unwrap();
        skip.add_assign(&conv1x1(&z, m.kernel(&format!("layer{l}.skip")).unwrap()).unwrap());
    }
    let hidden = relu(&conv1x1(&relu(&skip), m.kernel("head.hidden").unwrap()).unwrap());
    let expect = conv1x1(&hidden, m.kernel("head.out").unwrap()).unwrap();
    assert!(m.forward(&classes, &ConditioningInput::none()).unwrap().max_abs_diff(&expect) < 1e-6);
}

#[test]
fn backward_requires_a_fresh_saved_pass() {
    let mut m = random_model(reference_config(), 16, 0.3);
    let mut rng = Rng64::new(16);
    let classes = random_classes(&mut rng, 32, 256);
    let cond = random_cond(m.config(), &mut rng, 32);
    let mut tape = m.new_tape();

    let pass = m.forward_pass(&classes, &cond, 0, true).unwrap();
    let zero_logits = Tensor2D::zeros(32, 256);
    let zero_frames = Tensor2D::zeros(4, 3);
    m.backward(&pass, &zero_logits, Some(&zero_frames), &mut tape).unwrap();
    assert!(tape.is_all_zero());

    let unsaved = m.forward_pass(&classes, &cond, 0, false).unwrap();
    assert!(matches!(
        m.backward(&unsaved, &zero_logits, Some(&zero_frames), &mut tape),
        Err(Error::State(_))
    ));
    m.kernel_mut("head.out").unwrap().bias[0] += 1.0;
    assert!(matches!(
        m.backward(&pass, &zero_logits, Some(&zero_frames), &mut tape),
        Err(Error::State(_))
    ));
}

#[test]
fn residual_connection_carries_gradient_past_a_closed_layer() {
    let mut cfg = ModelConfig::new(2, 2, 2, 1);
    cfg.num_classes = 8;
    let mut m = random_model(cfg, 17, 0.5);
    // Layer 0 contributes nothing, so its output is its input and the
    // embedding can only receive gradient through that identity.
    for k in ["layer0.filter", "layer0.gate", "layer0.residual", "layer0.skip"] {
        zero(&mut m, k);
    }
    let classes = [1u16, 5, 2, 7, 3, 3];
    let pass = m.forward_pass(&classes, &ConditioningInput::none(), 0, true).unwrap();
    let mut grad = Tensor2D::zeros(6, 8);
    grad.set(5, 2, 1.0);
    let mut tape = m.new_tape();
    m.backward(&pass, &grad, None, &mut tape).unwrap();
    let emb = m.kernel_index("embedding").unwrap();
    assert!(tape.kernels()[emb].values().any(|&v| v != 0.0));
}
