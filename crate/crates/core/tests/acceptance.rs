//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Training criteria use the tiny preset on 32x32 scenes so the whole run
//! fits a single CPU core; see the README for the protocol.

use std::collections::BTreeMap;
use std::time::Instant;

use jnmr::ablation::{variants, Suite};
use jnmr::data::{Dataset, Family, GenerateConfig, SceneSampler, Split, Trajectory};
use jnmr::infer::interpolate_with;
use jnmr::losses::{charbonnier_loss, deformation_loss, deformation_var, psnr, ssim, total_loss_var, LossWeights, PerceptualConfig, PerceptualExtractor};
use jnmr::model::{count_parameters, ForwardOptions, Model, ModelConfig, Preset};
use jnmr::motion_model::{
    blend_occlusion, regress_backward_motion, regress_forward_motion, FrameTensor, MotionField, MotionSet, OcclusionMap, Ref,
    RegressedMotions,
};
use jnmr::rdfl::MotionVars;
use jnmr::train::{run_training, CheckpointManifest, TrainConfig, Trained, Trainer};
use jnmr::warp::{deformable_warp, warp_tensors, warp_var};
use jnmr_tensor::gradcheck::{numeric_gradient, relative_error};
use jnmr_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn max_offset_diff(a: &MotionField<f64>, b: &MotionField<f64>) -> f64 {
    [
        a.alpha().max_abs_diff(b.alpha()),
        a.beta().max_abs_diff(b.beta()),
        a.weights().max_abs_diff(b.weights()),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn centre(m: &MotionField<f64>, p: usize) -> (f64, f64) {
    let plane = m.height() * m.width();
    let c = m.taps() / 2;
    (m.alpha().data()[c * plane + p], m.beta().data()[c * plane + p])
}

fn single_sprite(traj: Trajectory) -> jnmr::data::KinematicScene {
    jnmr::data::KinematicScene {
        height: 32,
        width: 32,
        family: Family::Quadratic,
        background_seed: 4,
        background_cell: 8.0,
        sprites: vec![jnmr::data::Sprite {
            shape: jnmr::data::Shape::Rect,
            half_size: [5.0, 5.0],
            texture_seed: 9,
            cell: 3.0,
            trajectory: traj,
        }],
    }
}

fn closed_form_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let sampler = SceneSampler::default();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for family in Family::ALL {
        for _ in 0..200 {
            let scene = match sampler.sample(&mut rng, family, 32, 32) {
                Ok(s) => s,
                Err(e) => return outcome(false, format!("sampling failed: {e}")),
            };
            let g = scene.generate(3, 1).expect("sampled scenes are valid");
            let m = g.motions.motions();
            let f = regress_forward_motion(&m[0], &m[1], &m[2]).unwrap();
            let b = regress_backward_motion(&m[3], &m[2], &m[1]).unwrap();
            worst = worst.max(max_offset_diff(&f, &g.regressed.forward));
            worst = worst.max(max_offset_diff(&b, &g.regressed.backward));
            count += 1;
        }
    }
    let p = 16 * 32 + 16;
    let cv = single_sprite(Trajectory { p0: [16.0, 16.0], v0: [0.0, 1.0], accel: [0.0; 2], stage: None })
        .generate(3, 1)
        .unwrap();
    let cm = cv.motions.motions();
    let cv_f = centre(&regress_forward_motion(&cm[0], &cm[1], &cm[2]).unwrap(), p);
    let cv_b = centre(&regress_backward_motion(&cm[3], &cm[2], &cm[1]).unwrap(), p);
    let acc = single_sprite(Trajectory { p0: [16.0, 16.0], v0: [0.0; 2], accel: [1.0, 0.0], stage: None })
        .generate(3, 1)
        .unwrap();
    let am = acc.motions.motions();
    let acc_f = centre(&regress_forward_motion(&am[0], &am[1], &am[2]).unwrap(), p);
    let special = [cv_f.0, cv_f.1, cv_b.0, cv_b.1, acc_f.0 - 1.0, acc_f.1]
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && special <= 1e-5 && secs < 60.0,
        format!(
            "{count} scenes, max |err| {worst:.2e} px; constant velocity -> ({:.1e}, {:.1e}), acceleration a=1 -> {:.6}; {secs:.1}s",
            cv_f.0, cv_f.1, acc_f.0
        ),
    )
}

fn warp_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let frame = FrameTensor::from_fn(3, 17, 23, |_, _, _| rng.random_range(0.0..1.0));
    let mut identity_exact = true;
    for (k, d) in [(1, 1), (3, 1), (5, 2)] {
        let out = deformable_warp(&frame, &MotionField::identity(k, d, 17, 23)).unwrap();
        identity_exact &= out == frame;
    }
    let sampler = SceneSampler::default();
    let mut worst = f64::INFINITY;
    let mut warps = 0;
    for family in Family::ALL {
        for _ in 0..20 {
            let scene = sampler.sample(&mut rng, family, 48, 48).unwrap();
            let g = scene.generate(1, 1).unwrap();
            let plane = 48 * 48;
            for r in Ref::ALL {
                let warped = deformable_warp(&g.inputs[r.index()], g.motions.get(r)).unwrap();
                let valid = &g.valid[r.index()];
                let (mut se, mut n) = (0.0, 0usize);
                for c in 0..3 {
                    for p in (0..plane).filter(|&p| valid[p]) {
                        let d = warped.tensor().data()[c * plane + p] - g.target.tensor().data()[c * plane + p];
                        se += d * d;
                        n += 1;
                    }
                }
                worst = worst.min(10.0 * (n as f64 / se.max(1e-30)).log10());
                warps += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        identity_exact && worst >= 40.0 && secs < 60.0,
        format!("identity bit-exact: {identity_exact}; worst oracle-warp PSNR {worst:.2} dB over {warps} warps (occlusion-free pixels); {secs:.1}s"),
    )
}

fn gradcheck_warp() -> f64 {
    let (n, c, h, w, k) = (1, 2, 5, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.random_range(lo..hi));
    let frame = rand(&[n, c, h, w], 0.0, 1.0);
    let weights = rand(&[n, k * k, h, w], 0.0, 1.0);
    let off = |t: Tensor<f64>| t.map(|v| v.floor() + 0.1 + 0.8 * (v - v.floor()));
    let alpha = off(rand(&[n, k * k, h, w], -2.5, 2.5));
    let beta = off(rand(&[n, k * k, h, w], -2.5, 2.5));
    let probe = rand(&[n, c, h, w], -1.0, 1.0);
    let inputs = [frame, weights, alpha, beta];
    let eval = |xs: &[Tensor<f64>]| warp_tensors(&xs[0], &xs[1], &xs[2], &xs[3], k, 1).unwrap().mul(&probe).sum();
    let mut g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = warp_var(&mut g, vars[0], vars[1], vars[2], vars[3], k, 1);
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p);
    let loss = g.sum(prod);
    let grads = g.backward(loss);
    (0..4)
        .map(|i| {
            let numeric = numeric_gradient(
                |x| {
                    let mut xs = inputs.to_vec();
                    xs[i] = x.clone();
                    eval(&xs)
                },
                &inputs[i],
                1e-6,
                None,
            );
            relative_error(grads.get(vars[i]).unwrap(), &numeric, None)
        })
        .fold(0.0, f64::max)
}

fn gradcheck_deformation() -> f64 {
    let shape = [2, 9, 5, 6];
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    let a0 = Tensor::from_fn(&shape, |_| rng.random_range(-2.0..2.0));
    let b0 = Tensor::from_fn(&shape, |_| rng.random_range(-2.0..2.0));
    let eval = |a: &Tensor<f64>, b: &Tensor<f64>| {
        let mut g = Graph::new();
        let m = MotionVars {
            weights: g.constant(Tensor::zeros(&shape)),
            alpha: g.constant(a.clone()),
            beta: g.constant(b.clone()),
        };
        let l = deformation_var(&mut g, &[m]).unwrap();
        g.value(l).data()[0]
    };
    let mut g = Graph::new();
    let (av, bv) = (g.leaf(a0.clone()), g.leaf(b0.clone()));
    let m = MotionVars {
        weights: g.constant(Tensor::zeros(&shape)),
        alpha: av,
        beta: bv,
    };
    let l = deformation_var(&mut g, &[m]).unwrap();
    let grads = g.backward(l);
    let na = numeric_gradient(|a| eval(a, &b0), &a0, 1e-6, None);
    let nb = numeric_gradient(|b| eval(&a0, b), &b0, 1e-6, None);
    relative_error(grads.get(av).unwrap(), &na, None).max(relative_error(grads.get(bv).unwrap(), &nb, None))
}

/// Loss of the desk model and the parameter gradients, in f64.
fn gradcheck_model() -> (f64, usize) {
    let cfg = ModelConfig::desk();
    let (model, mut ps) = Model::new::<f64>(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(305);
    let (h, w) = (16, 16);
    let frames: [Tensor<f64>; 4] = [0; 4].map(|_| Tensor::from_fn(&[1, 3, h, w], |_| rng.random_range(0.1..0.9)));
    let target = Tensor::from_fn(&[1, 3, h, w], |_| rng.random_range(0.1..0.9));
    let weights = LossWeights::default();
    let extractor = PerceptualExtractor::<f64>::new(&PerceptualConfig::default()).unwrap();
    let loss_of = |ps: &jnmr::nn::ParamStore<f64>, trainable: bool| {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, trainable);
        let fv = frames.clone().map(|f| g.constant(f));
        let tv = g.constant(target.clone());
        let out = model.forward(&mut g, &p, fv, ForwardOptions::default()).unwrap();
        let mut fields: Vec<MotionVars> = Vec::new();
        fields.extend(out.regressed.forward);
        fields.extend(out.regressed.backward);
        for c in &out.coarse {
            fields.extend(c.regressed.forward);
            fields.extend(c.regressed.backward);
        }
        fields.extend(out.motions.motions);
        let lv = total_loss_var(&mut g, out.output, tv, &fields, &weights, &extractor);
        (g, p, lv.total)
    };
    let (g, p, loss) = loss_of(&ps, true);
    let mut grads = g.backward(loss);
    let analytic: Vec<Tensor<f64>> = p
        .vars()
        .iter()
        .zip(ps.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut a = Vec::new();
    let mut nmr = Vec::new();
    for i in 0..ps.len() {
        let len = ps.tensors()[i].len();
        let picks: Vec<usize> = (0..2.min(len)).map(|_| rng.random_range(0..len)).collect();
        for &j in &picks {
            let orig = ps.tensors()[i].data()[j];
            let step = 1e-6;
            let eval = |v: f64, ps: &mut jnmr::nn::ParamStore<f64>| {
                ps.tensors_mut()[i].data_mut()[j] = v;
                let (g, _, l) = loss_of(ps, false);
                g.value(l).data()[0]
            };
            let up = eval(orig + step, &mut ps);
            let down = eval(orig - step, &mut ps);
            ps.tensors_mut()[i].data_mut()[j] = orig;
            a.push(analytic[i].data()[j]);
            nmr.push((up - down) / (2.0 * step));
        }
    }
    let n = a.len();
    let at = Tensor::from_vec(&[n], a).unwrap();
    let nt = Tensor::from_vec(&[n], nmr).unwrap();
    (relative_error(&at, &nt, None), n)
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let warp = gradcheck_warp();
    let deform = gradcheck_deformation();
    let (model, n) = gradcheck_model();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        warp <= 1e-3 && deform <= 1e-3 && model <= 1e-2 && secs < 300.0,
        format!("relative error: warp {warp:.2e}, deformation {deform:.2e}, desk model {model:.2e} over {n} parameters; {secs:.1}s"),
    )
}

fn parameter_budget() -> Outcome {
    let n = count_parameters(&ModelConfig::full()).unwrap();
    let rel = (n as f64 - 5.7e6) / 5.7e6;
    outcome(rel.abs() <= 0.10, format!("full preset {n} parameters ({:+.1}% vs 5.7M)", rel * 100.0))
}

fn loss_units() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let a = FrameTensor::<f64>::from_fn(3, 24, 20, |_, _, _| rng.random_range(0.0..1.0));
    let ch = charbonnier_loss(&a, &a, 1e-3).unwrap();
    let b = FrameTensor::<f64>::from_fn(3, 24, 20, |_, _, _| 0.5);
    let c = FrameTensor::<f64>::from_fn(3, 24, 20, |_, _, _| 0.6);
    let p = psnr(&b, &c).unwrap();
    let s = ssim(&a, &a).unwrap();
    let constant = MotionField::translation(3, 1, 8, 9, 1.25, -0.5);
    let regressed = RegressedMotions::new(constant.clone(), constant, Tensor::full(&[1, 8, 9], 0.5)).unwrap();
    let d = deformation_loss(&regressed);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (ch - 1e-3).abs() <= 1e-15 && (p - 20.0).abs() <= 1e-6 && (s - 1.0).abs() <= 1e-8 && d == 0.0 && secs < 1.0,
        format!("charbonnier {ch:e}, PSNR {p:.9} dB, SSIM {s:.12}, deformation {d}; {secs:.3}s"),
    )
}

fn random_set(rng: &mut ChaCha8Rng, h: usize, w: usize) -> MotionSet<f64> {
    let field = |rng: &mut ChaCha8Rng| {
        let mut m = MotionField::zeros(3, 1, h, w);
        m.alpha_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-4.0..4.0));
        m.beta_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-4.0..4.0));
        let plane = h * w;
        let raw: Vec<f64> = (0..9 * plane).map(|_| rng.random_range(0.01..1.0)).collect();
        let wd = m.weights_mut().data_mut();
        for p in 0..plane {
            let s: f64 = (0..9).map(|t| raw[t * plane + p]).sum();
            for t in 0..9 {
                wd[t * plane + p] = raw[t * plane + p] / s;
            }
        }
        m
    };
    let motions = [field(rng), field(rng), field(rng), field(rng)];
    let occ = Tensor::from_fn(&[1, h, w], |_| rng.random_range(0.0..1.0));
    MotionSet::new(motions, OcclusionMap::new(occ).unwrap()).unwrap()
}

fn symmetry_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut duality, mut swap): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
        let set = random_set(&mut rng, h, w);
        let b = regress_backward_motion(set.get(Ref::Plus2), set.get(Ref::Plus1), set.get(Ref::Minus1)).unwrap();
        let rev = set.time_reversed();
        let f = regress_forward_motion(rev.get(Ref::Minus2), rev.get(Ref::Minus1), rev.get(Ref::Plus1)).unwrap();
        duality = duality.max(max_offset_diff(&b, &f));
        let frames: Vec<FrameTensor<f64>> = (0..4).map(|_| FrameTensor::from_fn(3, h, w, |_, _, _| rng.random_range(0.0..1.0))).collect();
        let x = blend_occlusion(&frames[..2], &frames[2..], set.occlusion()).unwrap();
        let y = blend_occlusion(&frames[2..], &frames[..2], &set.occlusion().complement()).unwrap();
        swap = swap.max(x.tensor().max_abs_diff(y.tensor()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        duality <= 1e-5 && swap <= 1e-5 && secs < 60.0,
        format!("100 random motion sets: time-reversal max |diff| {duality:.2e}, occlusion swap {swap:.2e}; {secs:.2}s"),
    )
}

/// Shared desk-scale training protocol.
struct Protocol {
    train: Dataset,
    test: Dataset,
    base: TrainConfig,
    runs: BTreeMap<String, Run>,
}

#[derive(Clone)]
struct Run {
    psnr: f64,
    ssim: f64,
    seconds: f64,
    trained: Option<std::rc::Rc<Trained>>,
}

impl Protocol {
    fn new() -> Self {
        let data = GenerateConfig {
            seed: 1,
            train: 400,
            test: 96,
            height: 32,
            width: 32,
            sampler: SceneSampler {
                span: 2,
                ..SceneSampler::default()
            },
        };
        let mut base = TrainConfig::for_preset(Preset::Tiny);
        base.seed = 7;
        Protocol {
            train: Dataset::generate(&data, Split::Train).unwrap(),
            test: Dataset::generate(&data, Split::Test).unwrap(),
            base,
            runs: BTreeMap::new(),
        }
    }

    fn train(&self, model: &ModelConfig) -> Run {
        let cfg = TrainConfig {
            model: model.clone(),
            ..self.base.clone()
        };
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let record = run_training(&mut trainer, &self.train, Some(&self.test), None).unwrap();
        let m = record.final_metric().unwrap();
        let manifest = CheckpointManifest {
            config: cfg,
            epoch: trainer.epochs_done(),
            optimizer_steps: 0,
            parameter_count: record.parameter_count,
        };
        let trained = Trained {
            model: trainer.model().clone(),
            params: trainer.params().clone(),
            manifest,
        };
        Run {
            psnr: m.psnr,
            ssim: m.ssim,
            seconds: record.wall_clock_seconds,
            trained: Some(std::rc::Rc::new(trained)),
        }
    }

    /// Trains `model` under `key` once; later calls reuse the result.
    fn run(&mut self, key: &str, model: &ModelConfig) -> Run {
        if let Some(r) = self.runs.get(key) {
            return r.clone();
        }
        let r = self.train(model);
        eprintln!("  trained {key:<34} PSNR {:.4} SSIM {:.5} ({:.0}s)", r.psnr, r.ssim, r.seconds);
        self.runs.insert(key.to_string(), r.clone());
        r
    }
}

fn full_model(protocol: &Protocol) -> ModelConfig {
    protocol.base.model.clone()
}

fn regression_ordering(protocol: &mut Protocol) -> Outcome {
    let start = Instant::now();
    let table = variants(Suite::RegressionModes, &protocol.base.model);
    let pick = |label: &str| table.iter().find(|v| v.label == label).unwrap().model.clone();
    let linear = protocol.run("regression/Linear", &pick("Linear"));
    let quadratic = protocol.run("regression/Quadratic", &pick("Quadratic"));
    let joint = protocol.run("full", &full_model(protocol));
    let secs = start.elapsed().as_secs_f64();
    let ok = joint.psnr >= quadratic.psnr && quadratic.psnr >= linear.psnr && joint.psnr - linear.psnr >= 0.1 && secs < 45.0 * 60.0;
    outcome(
        ok,
        format!(
            "PSNR joint {:.3} / quadratic {:.3} / linear {:.3} dB (joint - linear {:+.3}); {secs:.0}s",
            joint.psnr,
            quadratic.psnr,
            linear.psnr,
            joint.psnr - linear.psnr
        ),
    )
}

fn component_ordering(protocol: &mut Protocol) -> Outcome {
    let table = variants(Suite::Components, &protocol.base.model);
    let mut psnr = BTreeMap::new();
    for v in &table {
        let key = if v.model == protocol.base.model { "full".to_string() } else { format!("components/{}", v.label) };
        psnr.insert(v.label, protocol.run(&key, &v.model).psnr);
    }
    let base = psnr["Baseline"];
    let full = psnr["JNMR (Full)"];
    let ok = psnr["Baseline w/ JNMR"] >= base && psnr["Baseline w/ CFSE"] >= base && psnr.values().all(|&p| full >= p);
    let detail = table.iter().map(|v| format!("{} {:.3}", v.label, psnr[v.label])).collect::<Vec<_>>().join(", ");
    outcome(ok, format!("PSNR {detail}"))
}

fn determinism(protocol: &mut Protocol) -> Outcome {
    let first = protocol.run("full", &full_model(protocol));
    let second = protocol.train(&full_model(protocol));
    let diff = (first.psnr - second.psnr).abs();
    let dir = tempfile::tempdir().unwrap();
    let sample = &protocol.test.samples[0];
    let paths: Vec<_> = (0..4).map(|i| dir.path().join(format!("in{i}.png"))).collect();
    for (p, f) in paths.iter().zip(&sample.inputs) {
        jnmr::data::write_png(p, f).unwrap();
    }
    let inputs = [&*paths[0], &*paths[1], &*paths[2], &*paths[3]];
    let trained = first.trained.as_ref().unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    interpolate_with(trained, &inputs, &a).unwrap();
    interpolate_with(trained, &inputs, &b).unwrap();
    let identical = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    outcome(
        diff <= 1e-3 && identical,
        format!("repeated seed-7 runs: PSNR {:.6} vs {:.6} dB (|diff| {diff:.2e}); interpolate bit-identical: {identical}", first.psnr, second.psnr),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a filter
    // argument that names no criterion skips the run.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string() || f == "acceptance");
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} [{n}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    if wanted(1) {
        report(1, "closed-form regression oracle", closed_form_oracle());
    }
    if wanted(2) {
        report(2, "warp identity and oracle-warp consistency", warp_consistency());
    }
    if wanted(3) {
        report(3, "gradient checks", gradient_checks());
    }
    if wanted(6) {
        report(6, "parameter budget", parameter_budget());
    }
    if wanted(7) {
        report(7, "loss unit values", loss_units());
    }
    if wanted(8) {
        report(8, "time-reversal and occlusion-swap invariants", symmetry_invariants());
    }
    if wanted(4) || wanted(5) || wanted(9) {
        let mut protocol = Protocol::new();
        if wanted(4) {
            report(4, "regression-mode ordering", regression_ordering(&mut protocol));
        }
        if wanted(5) {
            report(5, "component ordering", component_ordering(&mut protocol));
        }
        if wanted(9) {
            report(9, "determinism", determinism(&mut protocol));
        }
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s{}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if !failed.is_empty() && std::env::var_os("JNMR_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
