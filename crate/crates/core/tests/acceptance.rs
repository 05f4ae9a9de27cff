//! Acceptance criteria 1-10. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing the test harness capture) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvcn::cli::{self, GenDataArgs, TrainArgs};
use mvcn::dataset::{make_perturbed_partial, make_sample, PerturbParams, Sample};
use mvcn::fusion::{fuse, radius_outlier_removal, FusionParams};
use mvcn::geometry::{build_rig, normalize_shape, render_rig, Pixel};
use mvcn::metrics::{chamfer, mean_avg_l1};
use mvcn::net::gradcheck::{input_grad_error, param_grad_error, scalar_grad_error, TOLERANCE};
use mvcn::net::layers::{Act, Activation, BatchNorm2d, Conv2d, ConvGeom, ConvTranspose2d, Dropout, Param, ParamVisitor};
use mvcn::net::loss::{bce, loss_cgan, reconstruction, Reconstruction};
use mvcn::net::memory::view_pool;
use mvcn::net::{complete_shape, Adam, AdamConfig, Module, NetConfig, Pooling, Tensor, TrainConfig, TrainState, TrainingShape};
use mvcn::shapes::{box_surface, fibonacci_sphere, HoledBox};
use mvcn::{PointCloud, Vec3};

fn report(n: u32, name: &str, ok: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "{} criterion {n} ({name}): {detail} [{:.2}s]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn warn(msg: &str) {
    let _ = std::io::stderr().write_all(format!("WARN {msg}\n").as_bytes());
}

fn brute_chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
    let one_way = |a: &PointCloud, b: &PointCloud| {
        a.iter()
            .map(|p| b.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    };
    0.5 * (one_way(x, y) + one_way(y, x))
}

fn brute_outliers(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> Vec<Vec3> {
    let pts = &cloud.points;
    pts.iter()
        .enumerate()
        .filter(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|(j, q)| j != i && (*p - *q).norm() <= radius)
                .count()
                >= min_neighbors
        })
        .map(|(_, p)| *p)
        .collect()
}

#[test]
fn criterion_01_projection_round_trip() {
    let t0 = Instant::now();
    let rig = build_rig(0.4, 256, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for cam in &rig.cameras {
        for _ in 0..100_000 {
            let px = Pixel {
                x: rng.random_range(0.0..cam.width as f64),
                y: rng.random_range(0.0..cam.height as f64),
                depth: rng.random_range(rig.range.near..rig.range.far),
            };
            let back = cam.project(&cam.back_project(px).unwrap()).unwrap();
            worst = worst
                .max((back.x - px.x).abs())
                .max((back.y - px.y).abs())
                .max((back.depth - px.depth).abs());
        }
    }
    let elapsed = t0.elapsed();
    let ok = worst < 1e-9 && elapsed < Duration::from_secs(1);
    report(1, "projection round trip", ok, elapsed, &format!("8 cameras x 1e5 samples, max error {worst:.3e} (< 1e-9, < 1 s)"));
    assert!(ok);
}

#[test]
fn criterion_02_pipeline_fidelity() {
    let t0 = Instant::now();
    let rig = build_rig(0.4, 256, 8).unwrap();
    let params = FusionParams::for_rig(&rig);
    assert_eq!((params.threshold, params.radius, params.min_neighbors), (7, 0.006, 6));
    let bound = 2.0 * rig.pixel_footprint();
    let shapes = [
        ("sphere", fibonacci_sphere(60_000, 1.0)),
        ("cube", box_surface(Vec3::new(1.0, 1.0, 1.0), 105.0)),
    ];
    let mut details = vec![format!("bound 2 x footprint = {bound:.6}")];
    let mut ok = true;
    for (name, cloud) in &shapes {
        assert!(cloud.len() >= 50_000, "{name}: {}", cloud.len());
        let (normalized, _) = normalize_shape(cloud).unwrap();
        let maps = render_rig(&normalized, &rig);
        let fused = fuse(&maps, &rig, &params).unwrap();
        let cd = if fused.is_empty() { f64::INFINITY } else { chamfer(&fused, &normalized).unwrap() };
        ok &= cd < bound;
        details.push(format!("{name} {} pts -> {} fused, cd {cd:.6}", cloud.len(), fused.len()));
    }
    let elapsed = t0.elapsed();
    ok &= elapsed < Duration::from_secs(30);
    report(2, "pipeline fidelity", ok, elapsed, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_03_brute_force_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_cd: f64 = 0.0;
    let mut sets_equal = true;
    for _ in 0..50 {
        let cloud = |rng: &mut ChaCha8Rng| -> PointCloud {
            let n = rng.random_range(1..=2000);
            let s = rng.random_range(0.02..0.2);
            (0..n)
                .map(|_| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)))
                .collect()
        };
        let x = cloud(&mut rng);
        let y = cloud(&mut rng);
        worst_cd = worst_cd.max((chamfer(&x, &y).unwrap() - brute_chamfer(&x, &y)).abs());
        let radius = rng.random_range(0.002..0.03);
        let k = rng.random_range(1..10);
        sets_equal &= radius_outlier_removal(&x, radius, k).unwrap().points == brute_outliers(&x, radius, k);
    }
    let elapsed = t0.elapsed();
    let ok = worst_cd <= 1e-12 && sets_equal && elapsed < Duration::from_secs(60);
    report(
        3,
        "brute-force equivalence",
        ok,
        elapsed,
        &format!("50 clouds, max chamfer diff {worst_cd:.3e}, outlier sets identical: {sets_equal}"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_gradient_checks() {
    let t0 = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut results: Vec<(String, f64)> = Vec::new();

    let x = Tensor::randn(&[1, 4, 4, 8], 1.0, &mut r);
    let mut conv = Conv2d::new(4, 3, ConvGeom::DOWN, &mut r);
    let (f, b) = (|c: &mut Conv2d, t: &Tensor| c.forward(t), |c: &mut Conv2d, g: &Tensor| c.backward(g));
    results.push(("conv input".into(), input_grad_error(&x, &mut r, &mut conv, f, b).unwrap()));
    results.push(("conv weight".into(), param_grad_error(&x, &mut r, &mut conv, |c| &mut c.weight, f, b).unwrap()));
    results.push(("conv bias".into(), param_grad_error(&x, &mut r, &mut conv, |c| &mut c.bias, f, b).unwrap()));

    let xs = Tensor::randn(&[1, 4, 2, 4], 1.0, &mut r);
    let mut convt = ConvTranspose2d::new(4, 3, ConvGeom::DOWN, &mut r);
    let (f, b) = (
        |c: &mut ConvTranspose2d, t: &Tensor| c.forward(t),
        |c: &mut ConvTranspose2d, g: &Tensor| c.backward(g),
    );
    results.push(("convT input".into(), input_grad_error(&xs, &mut r, &mut convt, f, b).unwrap()));
    results.push(("convT weight".into(), param_grad_error(&xs, &mut r, &mut convt, |c| &mut c.weight, f, b).unwrap()));
    results.push(("convT bias".into(), param_grad_error(&xs, &mut r, &mut convt, |c| &mut c.bias, f, b).unwrap()));

    for train in [true, false] {
        let mut bn = BatchNorm2d::new(4, &mut r);
        // move the running statistics off their initial values
        bn.forward(&Tensor::randn(&[2, 4, 4, 8], 2.0, &mut r), true).unwrap();
        let xb = Tensor::randn(&[2, 4, 2, 4], 1.0, &mut r);
        let f = |m: &mut BatchNorm2d, t: &Tensor| m.forward(t, train);
        let b = |m: &mut BatchNorm2d, g: &Tensor| m.backward(g);
        let mode = if train { "train" } else { "eval" };
        results.push((format!("bn[{mode}] input"), input_grad_error(&xb, &mut r, &mut bn, f, b).unwrap()));
        results.push((format!("bn[{mode}] gamma"), param_grad_error(&xb, &mut r, &mut bn, |m| &mut m.gamma, f, b).unwrap()));
        results.push((format!("bn[{mode}] beta"), param_grad_error(&xb, &mut r, &mut bn, |m| &mut m.beta, f, b).unwrap()));
    }

    for kind in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid] {
        let mut act = Act::new(kind);
        let err = input_grad_error(&x, &mut r, &mut act, |a, t| Ok(a.forward(t)), |a, g| a.backward(g)).unwrap();
        results.push((format!("{kind:?}"), err));
    }

    // fixed mask: reseed before every forward so the finite differences see the same dropout
    let mut drop = (Dropout::new(0.5), 0u64);
    let err = input_grad_error(
        &x,
        &mut r,
        &mut drop,
        |d, t| Ok(d.0.forward(t, true, &mut ChaCha8Rng::seed_from_u64(d.1))),
        |d, g| d.0.backward(g),
    )
    .unwrap();
    results.push(("dropout".into(), err));

    let scores = Tensor::uniform(&[1, 1, 4, 8], 0.05, 0.95, &mut r);
    for positive in [true, false] {
        results.push((format!("bce[{positive}]"), scalar_grad_error(&scores, |s| bce(s, positive)).unwrap()));
    }
    let target = Tensor::uniform(&[1, 1, 4, 8], -1.0, 1.0, &mut r);
    let pred = Tensor::uniform(&[1, 1, 4, 8], -1.0, 1.0, &mut r);
    for kind in [Reconstruction::L1, Reconstruction::L2] {
        results.push((
            format!("recon {}", kind.name()),
            scalar_grad_error(&pred, |p| reconstruction(p, &target, kind)).unwrap(),
        ));
    }

    let elapsed = t0.elapsed();
    let (worst_name, worst) = results
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    let failing: Vec<&str> = results.iter().filter(|(_, e)| *e >= TOLERANCE).map(|(n, _)| n.as_str()).collect();
    let ok = failing.is_empty() && elapsed < Duration::from_secs(120);
    report(
        4,
        "gradient correctness",
        ok,
        elapsed,
        &format!("{} checks, worst {worst:.3e} ({worst_name}), failing {failing:?}", results.len()),
    );
    assert!(ok);
}

struct OneParam(Param);

impl Module for OneParam {
    fn visit_params(&mut self, f: &mut ParamVisitor) {
        f("p", &mut self.0);
    }
}

#[test]
fn criterion_05_loss_anchors() {
    let t0 = Instant::now();
    let half = Tensor::full(&[2, 1, 7, 7], 0.5);
    let l = loss_cgan(&half, &half).unwrap();
    let cgan_err = (l.loss_d - 2.0 * std::f64::consts::LN_2).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lr = 2e-4;
    let mut m = OneParam(Param::new(Tensor::randn(&[64], 1.0, &mut rng)));
    m.0.grad = Tensor::randn(&[64], 1.0, &mut rng);
    let before = m.0.value.clone();
    Adam::new(AdamConfig::new(lr, 0.5, 0.999)).step(&mut m).unwrap();
    let adam_err = (0..64)
        .map(|j| ((m.0.value.data[j] - before.data[j]) + lr * m.0.grad.data[j].signum()).abs())
        .fold(0.0, f64::max);

    let ok = cgan_err <= 1e-12 && adam_err <= 1e-6 * lr;
    report(
        5,
        "loss anchors",
        ok,
        t0.elapsed(),
        &format!("|loss_cgan(0.5) - 2 ln 2| = {cgan_err:.3e}; max |adam step + lr sign(g)| = {:.3e} lr", adam_err / lr),
    );
    assert!(ok);
}

#[test]
fn criterion_06_view_pooling_properties() {
    use rand::seq::SliceRandom;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = true;
    for _ in 0..1000 {
        let len = rng.random_range(1..=8);
        let mut slots: Vec<Option<Tensor>> = (0..len)
            .map(|_| rng.random_bool(0.7).then(|| Tensor::randn(&[1, 4, 2, 2], 3.0, &mut rng)))
            .collect();
        if slots.iter().all(Option::is_none) {
            slots[0] = Some(Tensor::randn(&[1, 4, 2, 2], 3.0, &mut rng));
        }
        let d = view_pool(&slots, Pooling::Max).unwrap();
        let mut shuffled = slots.clone();
        shuffled.shuffle(&mut rng);
        ok &= view_pool(&shuffled, Pooling::Max).unwrap() == d;
        ok &= view_pool(&[Some(d.clone()), Some(d.clone())], Pooling::Max).unwrap() == d;
        let mut raised = slots.clone();
        for t in raised.iter_mut().flatten() {
            t.data.iter_mut().for_each(|v| *v += rng.random_range(0.0..1.0));
        }
        let d2 = view_pool(&raised, Pooling::Max).unwrap();
        ok &= d.data.iter().zip(&d2.data).all(|(a, b)| b >= a);
        let single = slots.iter().flatten().next().unwrap().clone();
        for pooling in [Pooling::Max, Pooling::Mean] {
            ok &= view_pool(&[None, Some(single.clone())], pooling).unwrap() == single;
        }
    }
    report(6, "view-pooling properties", ok, t0.elapsed(), "1000 random slot sets: permutation, idempotence, monotonicity, single slot");
    assert!(ok);
}

fn toy_shape(seed: u64) -> (Sample, TrainingShape) {
    let rig = build_rig(0.4, 32, 8).unwrap();
    let sample = make_sample(&format!("box{seed}"), &HoledBox::random(seed).sample(60.0), &rig, seed).unwrap();
    let shape = TrainingShape::from_sample(&sample);
    (sample, shape)
}

fn eval_l1(state: &mut TrainState, samples: &[&Sample]) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let done = complete_shape(&mut state.generator, &s.partial_maps).unwrap();
        total += mean_avg_l1(&done.maps, &s.truth_maps).unwrap();
    }
    total / samples.len() as f64
}

#[test]
fn criterion_07_toy_overfit() {
    let t0 = Instant::now();
    let (sample, shape) = toy_shape(1);
    let config = TrainConfig {
        seed: 1,
        lambda: 1.0,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&config).unwrap();
    let start = eval_l1(&mut state, &[&sample]);
    let mut reached = None;
    let mut last = start;
    while state.step < 500 {
        state.train_epoch(std::slice::from_ref(&shape), |_, _| {}).unwrap();
        if state.step % 25 == 0 {
            last = eval_l1(&mut state, &[&sample]);
            if last < 0.1 * start {
                reached = Some(state.step);
                break;
            }
        }
    }
    let elapsed = t0.elapsed();
    let ok = reached.is_some() && elapsed < Duration::from_secs(600);
    report(
        7,
        "toy overfit",
        ok,
        elapsed,
        &format!(
            "avg_l1 {start:.3} at step 0 -> {last:.3} ({:.1}%) at step {}",
            100.0 * last / start,
            state.step
        ),
    );
    assert!(ok);
}

fn comparison_config(seed: u64, shape_memory: bool) -> TrainConfig {
    let mut c = TrainConfig {
        seed,
        epochs: 40,
        ..TrainConfig::default()
    };
    c.net = NetConfig {
        channels: vec![8, 16, 32, 64, 64],
        disc_channels: 8,
        shape_memory,
        ..NetConfig::default()
    };
    c
}

#[test]
fn criterion_08_mvcn_vs_vcn() {
    let t0 = Instant::now();
    let all: Vec<(Sample, TrainingShape)> = (0..20).map(|i| toy_shape(100 + i)).collect();
    let train: Vec<TrainingShape> = all[..16].iter().map(|(_, t)| t.clone()).collect();
    let test: Vec<&Sample> = all[16..].iter().map(|(s, _)| s).collect();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let mut scores = [0.0; 2];
        for (k, memory) in [true, false].into_iter().enumerate() {
            let config = comparison_config(seed, memory);
            let mut state = TrainState::new(&config).unwrap();
            for _ in 0..config.epochs {
                state.train_epoch(&train, |_, _| {}).unwrap();
            }
            scores[k] = eval_l1(&mut state, &test);
        }
        if scores[0] <= scores[1] {
            wins += 1;
        }
        rows.push(format!("seed {seed}: mvcn {:.3} vcn {:.3}", scores[0], scores[1]));
    }
    let ok = wins * 10 >= 5 * 7;
    report(8, "mvcn >= vcn", ok, t0.elapsed(), &format!("{wins}/5 seeds; {}", rows.join(", ")));
    assert!(ok);
}

#[test]
fn criterion_09_perturbation_grid() {
    let t0 = Instant::now();
    let rig = build_rig(0.4, 32, 8).unwrap();
    let (sample, shape) = toy_shape(9);
    let config = TrainConfig {
        seed: 9,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&config).unwrap();
    while state.step < 150 {
        state.train_epoch(std::slice::from_ref(&shape), |_, _| {}).unwrap();
    }
    let gt = HoledBox::random(9).sample(60.0);
    let (normalized, _) = normalize_shape(&gt).unwrap();
    assert_eq!(render_rig(&normalized, &rig), sample.truth_maps);
    let params = FusionParams::scaled_for(&rig);
    let mut cd = std::collections::BTreeMap::new();
    let mut rows = Vec::new();
    for mu in [1.0, 0.5] {
        for occ in [0.0, 0.10] {
            for eta in [0.0, 0.01] {
                let p = PerturbParams {
                    eta,
                    mu,
                    occlusion_fraction: occ,
                };
                let partial = make_perturbed_partial(&normalized, &rig, &p, 9).unwrap();
                let done = complete_shape(&mut state.generator, &render_rig(&partial, &rig)).unwrap();
                let fused = fuse(&done.maps, &rig, &params).unwrap();
                let value = if fused.is_empty() { f64::INFINITY } else { chamfer(&fused, &normalized).unwrap() };
                rows.push(format!("eta {eta} mu {mu} occ {occ}: cd {value:.5}"));
                cd.insert((mu.to_bits(), occ.to_bits(), eta.to_bits()), value);
            }
        }
    }
    let mut monotone = true;
    for mu in [1.0f64, 0.5] {
        for occ in [0.0f64, 0.10] {
            let a = cd[&(mu.to_bits(), occ.to_bits(), 0f64.to_bits())];
            let b = cd[&(mu.to_bits(), occ.to_bits(), 0.01f64.to_bits())];
            if b < a {
                monotone = false;
                warn(&format!("criterion 9: cd decreases with eta at mu {mu}, occ {occ}: {a:.5} -> {b:.5}"));
            }
        }
    }
    // the grid itself must run; monotonicity is an expectation only
    report(
        9,
        "perturbation grid",
        true,
        t0.elapsed(),
        &format!("monotone in eta: {monotone}; {}", rows.join("; ")),
    );
}

#[test]
fn criterion_10_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("m.txt"), "train a\ntrain b\ntest c\n").unwrap();
    std::fs::write(root.join("rig.txt"), "resolution = 16\nV = 3\n").unwrap();
    std::fs::write(
        root.join("train.txt"),
        "resolution = 16\nlevels = 4\nchannels = 4,8,8,8\ndisc_channels = 4\nV = 3\nbatch = 2\nepochs = 3\nseed = 11\n",
    )
    .unwrap();
    let rig_path = root.join("rig.txt");
    let rig_cfg = mvcn::geometry::RigConfig::read(&rig_path).unwrap();
    cli::cmd_gen_data(
        &GenDataArgs {
            manifest: root.join("m.txt"),
            out: root.join("data"),
            density: None,
        },
        &rig_cfg,
        11,
    )
    .unwrap();
    let run = |name: &str| -> Vec<u8> {
        let out = root.join(name);
        cli::cmd_train(
            &TrainArgs {
                data: root.join("data"),
                train_config: Some(root.join("train.txt")),
                out: out.clone(),
                log: None,
            },
            None,
            None,
        )
        .unwrap();
        std::fs::read(out).unwrap()
    };
    let a = run("a.ckpt");
    let b = run("b.ckpt");
    let logs_equal = std::fs::read(root.join("a.csv")).unwrap() == std::fs::read(root.join("b.csv")).unwrap();
    let ok = a == b && logs_equal;
    report(
        10,
        "determinism",
        ok,
        t0.elapsed(),
        &format!("two training runs: checkpoints {} bytes, identical: {}, logs identical: {logs_equal}", a.len(), a == b),
    );
    assert!(ok);
}
