use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use wavenet::audio_io::{read_wav, synth, write_wav, SyntheticSpec};
use wavenet::codec::{dequantize, mulaw_compand, mulaw_expand, quantize, CompandingParams};
use wavenet::model::{
    load_checkpoint, ClassifierConfig, ConditioningInput, GlobalConditioning, LocalConditioning, ModelConfig,
    UpsampleMode, WaveNetModel,
};
use wavenet::rng::Rng64;
use wavenet::sampler::{generate as sample, GenerationRequest, SampleMode};
use wavenet::tensor_ops::{Real, Tensor2D};
use wavenet::training::{gradient_check, train as fit, GradCheckOptions, Segment};

use crate::failure::{Context, Failure};
use crate::run_config::{read_features, RunConfig};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn train(
    config: &Path,
    seed: Option<u64>,
    steps: Option<usize>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut run = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.train.seed = s;
    }
    if let Some(n) = steps {
        run.train.max_steps = n;
    }
    let out_dir = out.unwrap_or_else(|| run.output_dir.clone());
    run.train.validate(run.model.receptive_field()).usage("train")?;
    let mut model = match &checkpoint {
        Some(path) => {
            let m = load_checkpoint(path).usage(path.display())?;
            if m.config() != &run.model {
                return Err(Failure::Usage(format!(
                    "{}: checkpoint model differs from [model] in {}",
                    path.display(),
                    config.display()
                )));
            }
            m
        }
        None => WaveNetModel::<f32>::new(run.model.clone(), run.train.seed)?,
    };
    let data = run.dataset()?;

    fs::create_dir_all(&out_dir).usage(out_dir.display())?;
    let report_path = out_dir.join("report.jsonl");
    let ckpt_path = out_dir.join("checkpoint.bin");
    let mut report = fs::File::create(&report_path).usage(report_path.display())?;
    let every = (run.train.max_steps / 20).max(1);
    let mut write_err = None;
    let result = fit(&mut model, &data, &run.train, Some(&ckpt_path), |r| {
        let line = serde_json::to_string(r).expect("records serialize");
        if let Err(e) = writeln!(report, "{line}") {
            write_err.get_or_insert(e);
        }
        if r.step % every == 0 || r.step == run.train.max_steps {
            match r.val_loss {
                Some(v) => eprintln!("step {:>6}  loss {:.4}  val {:.4}", r.step, r.loss, v),
                None => eprintln!("step {:>6}  loss {:.4}", r.step, r.loss),
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(Failure::Runtime(format!("{}: {e}", report_path.display())));
    }
    if let Some(last) = result.records.last() {
        println!("final loss {:.6} nats/sample after {} steps", last.loss, last.step);
    }
    println!("report {}", report_path.display());
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub samples: usize,
    pub seed: u64,
    pub global_class: Option<usize>,
    pub local: Option<PathBuf>,
    pub primer: Option<PathBuf>,
    pub temperature: f64,
    pub argmax: bool,
    pub sample_rate: u32,
}

pub fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let model = load_checkpoint(&args.checkpoint).usage(args.checkpoint.display())?;
    let cfg = model.config();
    let params = CompandingParams::new(255, cfg.num_classes).usage("checkpoint")?;
    let mut cond = match (cfg.conditioning.global, args.global_class) {
        (Some(g), Some(c)) => ConditioningInput::global_one_hot(c, g.dim).usage("--global-class")?,
        (Some(g), None) => {
            return Err(Failure::Usage(format!(
                "--global-class: the model is conditioned on {} classes, pick one",
                g.dim
            )))
        }
        (None, Some(_)) => return Err(Failure::Usage("--global-class: the model has no global conditioning".into())),
        (None, None) => ConditioningInput::none(),
    };
    match (cfg.conditioning.local, &args.local) {
        (Some(_), Some(p)) => cond.local = Some(read_features(p)?),
        (Some(_), None) => return Err(Failure::Usage("--local: the model needs a local feature file".into())),
        (None, Some(_)) => return Err(Failure::Usage("--local: the model has no local conditioning".into())),
        (None, None) => {}
    }
    let primer = match &args.primer {
        Some(p) => Some(quantize(&read_wav(p).usage(p.display())?, &params).usage(p.display())?),
        None => None,
    };
    let request = GenerationRequest {
        num_samples: args.samples,
        conditioning: cond,
        temperature: args.temperature,
        mode: if args.argmax { SampleMode::Argmax } else { SampleMode::Sample },
        seed: args.seed,
        primer,
        sample_rate_hz: args.sample_rate,
    };
    let out = sample(&model, &request)?;
    let wave = dequantize(&out.waveform, &params)?;
    write_wav(&wave, &args.out).runtime(args.out.display())?;
    println!("mean NLL {:.6} nats/sample over {} samples", out.mean_nll, args.samples);
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Two layers of four channels with global and local conditioning and a
/// frame classifier.
fn gradcheck_model() -> ModelConfig {
    ModelConfig {
        dilation_schedule: vec![1, 2],
        conditioning: wavenet::model::ConditioningConfig {
            global: Some(GlobalConditioning { dim: 2 }),
            local: Some(LocalConditioning {
                dim: 3,
                upsample_factor: 4,
                mode: UpsampleMode::Transposed,
            }),
        },
        classifier: Some(ClassifierConfig {
            num_labels: 3,
            pool_factor: 8,
        }),
        ..ModelConfig::new(4, 4, 1, 1)
    }
}

fn model_from(config: Option<&Path>, fallback: ModelConfig) -> Result<ModelConfig, Failure> {
    match config {
        Some(p) => Ok(RunConfig::load(p)?.model),
        None => Ok(fallback),
    }
}

fn randomized<S: Real>(cfg: ModelConfig, seed: u64, scale: f64) -> Result<WaveNetModel<S>, Failure> {
    let mut m = WaveNetModel::<S>::new(cfg, seed)?;
    let mut rng = Rng64::with_stream(seed, 2);
    for k in m.kernels_mut() {
        k.values_mut().for_each(|v| *v = S::lit(rng.uniform(-scale, scale)));
    }
    Ok(m)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Random input, targets and conditioning of at least `min_len` samples,
/// rounded up to whole control and classifier frames.
fn random_segment(cfg: &ModelConfig, min_len: usize, rng: &mut Rng64) -> Segment {
    let align = [
        cfg.conditioning.local.map(|l| l.upsample_factor),
        cfg.classifier.map(|c| c.pool_factor),
    ]
    .into_iter()
    .flatten()
    .fold(1, |a, b| a / gcd(a, b) * b);
    let t = min_len.div_ceil(align) * align;
    let all: Vec<u16> = (0..=t).map(|_| rng.below(cfg.num_classes) as u16).collect();
    let mut cond = ConditioningInput::none();
    if let Some(g) = cfg.conditioning.global {
        cond = ConditioningInput::global_one_hot(rng.below(g.dim), g.dim).expect("class in range");
    }
    if let Some(l) = cfg.conditioning.local {
        let frames = t / l.upsample_factor;
        let data = (0..frames * l.dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        cond.local = Some(Tensor2D::from_vec(frames, l.dim, data).expect("finite features"));
    }
    let frame_labels = cfg
        .classifier
        .map(|c| (0..t / c.pool_factor).map(|_| rng.below(c.num_labels)).collect());
    Segment {
        input: all[..t].to_vec(),
        targets: all[1..].to_vec(),
        cond,
        frame_labels,
    }
}

pub fn gradcheck(config: Option<&Path>, seed: u64) -> Result<(), Failure> {
    let cfg = model_from(config, gradcheck_model())?;
    let model = randomized::<f64>(cfg.clone(), seed, 0.5)?;
    let seg = random_segment(&cfg, 32, &mut Rng64::with_stream(seed, 3));
    let report = gradient_check(&model, &seg, GradCheckOptions::default())?;
    for g in &report.groups {
        println!(
            "{:<28} {:>7} params  max rel {:.3e}  max abs {:.3e}",
            g.name, g.params, g.max_rel_error, g.max_abs_error
        );
    }
    let worst = report.max_rel_error();
    if report.passed(GRADCHECK_TOLERANCE) {
        println!("PASS max relative error {worst:.3e} < {GRADCHECK_TOLERANCE:e}");
        Ok(())
    } else {
        println!("FAIL max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        Err(Failure::Runtime("gradient check failed".into()))
    }
}

pub fn probe_rf(config: Option<&Path>, seed: u64) -> Result<(), Failure> {
    let mut cfg = model_from(config, ModelConfig::new(2, 2, 512, 1))?;
    if !cfg.context_stacks.is_empty() {
        println!("context stacks are left out of the probe");
        cfg.context_stacks.clear();
    }
    let rf = cfg.receptive_field();
    println!("receptive field (formula) {rf}");

    let mut model = randomized::<f32>(cfg.clone(), seed, 0.8)?;
    // Keep the head relus active so every path reaches the logits.
    for name in ["layer0.skip", "head.hidden"] {
        model.kernel_mut(name).expect("always present").bias.fill(5.0);
    }
    let model = model.cast::<f64>();
    let mut rng = Rng64::with_stream(seed, 4);
    let seg = random_segment(&cfg, rf + 8, &mut rng);
    let t = seg.input.len() - 1;
    let base = model.forward(&seg.input, &seg.cond)?;
    let mut earliest = t;
    for pos in 0..=t {
        let mut changed = seg.input.clone();
        changed[pos] = ((changed[pos] as usize + 1 + rng.below(cfg.num_classes - 1)) % cfg.num_classes) as u16;
        if model.forward(&changed, &seg.cond)?.row(t) != base.row(t) {
            earliest = pos;
            break;
        }
    }
    let probed = t - earliest + 1;
    println!("receptive field (probe) {probed}");
    if probed == rf {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Runtime(format!("probed receptive field {probed} differs from {rf}")))
    }
}

pub fn codec_roundtrip(points: usize) -> Result<(), Failure> {
    if points < 2 {
        return Err(Failure::Usage("--samples: need at least 2 grid points".into()));
    }
    let p = CompandingParams::default();
    let mut round_trip: f64 = 0.0;
    for i in 0..points {
        let x = -1.0 + 2.0 * i as f64 / (points - 1) as f64;
        round_trip = round_trip.max((mulaw_expand(mulaw_compand(x, &p)?, &p)? - x).abs());
    }
    let sine = synth(&SyntheticSpec::sine(440.0, 1.0, 1.0, 16_000))?;
    let back = dequantize(&quantize(&sine, &p)?, &p)?;
    let quant = sine
        .samples
        .iter()
        .zip(&back.samples)
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    let exact = mulaw_compand(0.0, &p)? == 0.0 && mulaw_compand(1.0, &p)? == 1.0 && mulaw_compand(-1.0, &p)? == -1.0;
    println!("compand/expand round trip over {points} points: max error {round_trip:.3e} (bound 1e-6)");
    println!("quantize/dequantize of a full-scale sine: max error {quant:.4} (bound 0.04)");
    println!("f(0) = 0, f(1) = 1, f(-1) = -1 exactly: {exact}");
    if round_trip <= 1e-6 && quant < 0.04 && exact {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Runtime("codec sweep out of bounds".into()))
    }
}
