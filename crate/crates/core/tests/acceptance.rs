//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use objfield::assign::hungarian;
use objfield::dataset::{corrupt_labels, generate_dataset, render_view_exact};
use objfield::evaluate::{evaluate_field, EvalOptions, EvalReport};
use objfield::geometry::{stratified_samples, RaySamples};
use objfield::losses::{
    ces_cost, ces_grad, loss_2d_obj, loss_3d_empty, loss_3d_obj, photometric_loss, siou_cost, siou_grad,
    total_object_loss, MaskMatrix,
};
use objfield::manipulate::{render_manipulated_view, ManipulationSpec};
use objfield::nn::{evaluate_batch, BatchSettings, FieldNetwork, FineSamples, NetworkConfig, ObjectTask, RayBatch, TrainConfig, Trainer};
use objfield::render::{render_pixel, render_view, DepthEstimator, RenderOptions, SurfaceScores};
use objfield::{Aabb, AnalyticScene, Camera, Ray, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between `grad` and central differences of `f` at `x`.
fn fd_check(x: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + step;
        let up = f(&p);
        p[i] = x[i] - step;
        let down = f(&p);
        p[i] = x[i];
        worst = worst.max(rel_err((up - down) / (2.0 * step), grad[i]));
    }
    worst
}

fn softmax_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> MaskMatrix {
    let mut m = MaskMatrix::zeros(rows, cols);
    for r in 0..rows {
        let logits: Vec<f64> = (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..cols {
            m.data[r * cols + c] = logits[c].exp() / z;
        }
    }
    m
}

fn random_ray(rng: &mut ChaCha8Rng) -> Ray {
    let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let origin = dir.normalized() * 4.0;
    let target = Vec3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
    Ray::new(origin, (target - origin).normalized(), 0.0, f64::INFINITY).unwrap()
}

fn renderer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = RenderOptions { k_coarse: 256, k_fine: 256, jitter: true, seed: 0 };
    let (mut color_err, mut rays) = (0.0, 0usize);
    let (mut depth_err, mut depth_max, mut hits) = (0.0, 0.0f64, 0usize);
    for s in 0..5u64 {
        let scene = AnalyticScene::random(100 + s, 4);
        for i in 0..200u64 {
            let ray = random_ray(&mut rng);
            let out = render_pixel(&scene, &ray, &RenderOptions { seed: i, ..opts }).unwrap();
            let exact = scene.analytic_pixel(&ray);
            let d = out.color - exact.color;
            color_err += (d.x.abs() + d.y.abs() + d.z.abs()) / 3.0;
            rays += 1;
            if exact.residual < 1e-6 {
                let e = (out.depth - exact.depth).abs();
                depth_err += e;
                depth_max = depth_max.max(e);
                hits += 1;
            }
        }
    }
    let color = color_err / rays as f64;
    let depth = depth_err / hits.max(1) as f64;
    outcome(
        color <= 1e-3 && depth <= 1e-2 && hits > 0,
        format!("{rays} rays, mean |color| {color:.2e}, mean |depth| {depth:.2e} m over {hits} opaque hits (max {depth_max:.2e})"),
    )
}

fn tiny_net(rng: &mut ChaCha8Rng, seed: u64) -> FieldNetwork {
    let config = NetworkConfig { h: 2, l_pos: 1, l_dir: 1, width: 6, depth: 2, color_width: 5, object_width: 4 };
    let mut net = FieldNetwork::new(config, Aabb { min: Vec3::splat(-1.0), max: Vec3::splat(1.0) }, Vec3::new(0.2, 0.3, 0.4), seed).unwrap();
    let l = net.layout();
    for d in l.backbone.iter().chain([&l.density, &l.color_hidden, &l.color_out]) {
        for b in &mut net.shared[d.offset + d.fan_in * d.fan_out..d.end()] {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    for d in [&l.object_hidden, &l.object_out] {
        for b in &mut net.object[d.offset + d.fan_in * d.fan_out..d.end()] {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    net.shared[l.density.end() - 1] = rng.gen_range(0.0..2.0);
    net
}

fn chain_batch(rng: &mut ChaCha8Rng, n: usize) -> (RayBatch, Vec<Option<RaySamples>>) {
    let bounds = Aabb { min: Vec3::splat(-1.0), max: Vec3::splat(1.0) };
    let mut batch = RayBatch { rays: vec![], colors: vec![], labels: vec![vec![]], groups: vec![0..n / 2, n / 2..n] };
    let mut coarse = vec![];
    for _ in 0..n {
        let origin = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 3.0);
        let dir = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), -1.0).normalized();
        let ray = Ray::new(origin, dir, 0.0, f64::INFINITY).unwrap();
        coarse.push(Some(stratified_samples(&ray.clipped(&bounds).unwrap(), 2, true, rng.gen()).unwrap()));
        batch.rays.push(ray);
        batch.colors.push(Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        batch.labels[0].push(rng.gen_range(0..=2));
    }
    (batch, coarse)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for _ in 0..100 {
        let n = rng.gen_range(3..12);
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let gt: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        record("siou", fd_check(&pred, &siou_grad(&pred, &gt), |p| siou_cost(p, &gt)));
        record("ces", fd_check(&pred, &ces_grad(&pred, &gt), |p| ces_cost(p, &gt)));

        let (h, t, rows) = (rng.gen_range(2..5), rng.gen_range(1..3), rng.gen_range(6..14));
        let preds: Vec<MaskMatrix> = (0..2).map(|_| softmax_rows(&mut rng, rows, h + 1)).collect();
        let gts: Vec<MaskMatrix> = (0..2)
            .map(|_| {
                let labels: Vec<u16> = (0..rows).map(|_| rng.gen_range(0..=t as u16)).collect();
                MaskMatrix::from_labels(&labels, &(1..=t as u16).collect::<Vec<_>>())
            })
            .collect();
        let base = loss_2d_obj(&preds, &gts).unwrap();
        let flat: Vec<f64> = preds.iter().flat_map(|p| p.data.clone()).collect();
        let grad: Vec<f64> = base.grads.iter().flat_map(|g| g.data.clone()).collect();
        let len = rows * (h + 1);
        record(
            "loss_2d",
            fd_check(&flat, &grad, |x| {
                let ps: Vec<MaskMatrix> = (0..2).map(|i| MaskMatrix { rows, cols: h + 1, data: x[i * len..(i + 1) * len].to_vec() }).collect();
                loss_2d_obj(&ps, &gts).unwrap().value
            }),
        );

        let k = rng.gen_range(4..16);
        let empty_codes: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..0.99)).collect();
        let scores = SurfaceScores {
            surface: (0..k).map(|_| rng.gen_range(0.0..1.0)).collect(),
            empty: (0..k).map(|_| rng.gen_range(0.0..1.0)).collect(),
        };
        let (_, g) = loss_3d_empty(&empty_codes, &scores);
        record("loss_3d_empty", fd_check(&empty_codes, &g, |x| loss_3d_empty(x, &scores).0));

        let codes: Vec<Vec<f64>> = (0..k).map(|_| softmax_rows(&mut rng, 1, h + 1).data).collect();
        let (_, g) = loss_3d_obj(&codes, &scores.empty, h);
        let flat: Vec<f64> = codes.concat();
        record(
            "loss_3d_obj",
            fd_check(&flat, &g.concat(), |x| {
                let cs: Vec<Vec<f64>> = x.chunks(h + 1).map(<[f64]>::to_vec).collect();
                loss_3d_obj(&cs, &scores.empty, h).0
            }),
        );

        let parts = [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)];
        record("total", fd_check(&parts, &[1.0; 3], |x| total_object_loss(x[0], x[1], x[2])));

        let rendered: Vec<Vec3> = (0..k).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let target: Vec<Vec3> = (0..k).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let (_, g) = photometric_loss(&rendered, &target).unwrap();
        let flat: Vec<f64> = rendered.iter().flat_map(|v| v.to_array()).collect();
        let gflat: Vec<f64> = g.iter().flat_map(|v| v.to_array()).collect();
        record(
            "photometric",
            fd_check(&flat, &gflat, |x| {
                let r: Vec<Vec3> = x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
                photometric_loss(&r, &target).unwrap().0
            }),
        );
    }

    let settings = BatchSettings { photometric: true, heads: vec![(true, true)], delta_d: 0.05, depth_estimator: DepthEstimator::ExpectedDistance };
    for inst in 0..100 {
        let net = tiny_net(&mut rng, inst);
        let (batch, coarse) = chain_batch(&mut rng, 4);
        let fine = FineSamples::Fixed(vec![vec![]; 4]);
        let eval = |n: &FieldNetwork| {
            evaluate_batch(n, &[&n.object], &settings, &batch, &coarse, &fine, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
        };
        let base = eval(&net);
        let shared = fd_check(&net.shared, &base.shared_grad, |x| eval(&FieldNetwork { shared: x.to_vec(), ..net.clone() }).photometric);
        let object = fd_check(&net.object, &base.object_grads[0], |x| {
            eval(&FieldNetwork { object: x.to_vec(), ..net.clone() }).objects[0].total()
        });
        record("chain_shared", shared);
        record("chain_object", object);
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(max <= 1e-4, format!("100 instances each, worst relative error: {detail}"))
}

fn brute_force(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
    if row == cost.len() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.min(cost[row][c] + brute_force(cost, row + 1, used));
            used[c] = false;
        }
    }
    best
}

fn assignment_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_cost: f64 = 0.0;
    for _ in 0..200 {
        let h = rng.gen_range(1..=8);
        let t = rng.gen_range(1..=h.min(6));
        let cost: Vec<Vec<f64>> = (0..t).map(|_| (0..h).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let a = hungarian(&cost).unwrap();
        let sum: f64 = a.pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        worst_cost = worst_cost.max((sum - brute_force(&cost, 0, &mut vec![false; h])).abs());
    }
    let mut worst_perm: f64 = 0.0;
    for _ in 0..200 {
        let (h, rows) = (rng.gen_range(2..=8), rng.gen_range(8..24));
        let t = rng.gen_range(1..=h.min(6));
        let pred = softmax_rows(&mut rng, rows, h + 1);
        let labels: Vec<u16> = (0..rows).map(|_| rng.gen_range(0..=t as u16)).collect();
        let gt = MaskMatrix::from_labels(&labels, &(1..=t as u16).collect::<Vec<_>>());
        let mut perm: Vec<usize> = (0..h).collect();
        for i in (1..h).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        perm.push(h);
        let a = loss_2d_obj(std::slice::from_ref(&pred), std::slice::from_ref(&gt)).unwrap().value;
        let b = loss_2d_obj(&[pred.permute_columns(&perm)], &[gt]).unwrap().value;
        worst_perm = worst_perm.max((a - b).abs());
    }
    outcome(
        worst_cost <= 1e-9 && worst_perm <= 1e-12,
        format!("200 instances: max |hungarian - exhaustive| {worst_cost:.1e}; 200 permutations: max loss change {worst_perm:.1e}"),
    )
}

fn editing_camera(res: u32) -> Camera {
    Camera::look_at(Vec3::new(0.6, 3.2, 3.0), Vec3::new(0.1, 0.1, 0.0), 45.0, res, res).unwrap()
}

fn mask_iou(a: &[u16], b: &[u16], id: u16) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x == id && **y == id).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x == id || **y == id).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn manipulation_conjugacy() -> Outcome {
    let scene = AnalyticScene::toy3();
    let cam = editing_camera(64);
    let opts = RenderOptions { k_coarse: 256, k_fine: 256, jitter: true, seed: 0 };
    let z = Vec3::new(0.0, 0.0, 1.0);
    let cases = [
        ("translate sphere (0.3, 0, 0)", ManipulationSpec::translation(3, Vec3::new(0.3, 0.0, 0.0)).unwrap(), true),
        ("rotate sphere 90 deg about z", ManipulationSpec::rotation_about(3, z, FRAC_PI_2, Vec3::new(0.15, 0.6, 0.45)).unwrap(), true),
        ("rotate box 90 deg about z", ManipulationSpec::rotation_about(2, z, FRAC_PI_2, Vec3::new(0.4, 0.05, -0.2)).unwrap(), false),
        ("scale sphere 0.8", ManipulationSpec::scaling_about(3, 0.8, Vec3::new(0.0, 0.6, 0.45)).unwrap(), true),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (name, spec, free_space) in cases {
        let moved = scene.transform_object(spec.target, &spec.transform).unwrap();
        let exact = render_view_exact(&moved, &cam).unwrap();
        let view = render_manipulated_view(&scene, &cam, &[spec], &opts).unwrap();
        let err = view
            .color
            .iter()
            .zip(&exact.color)
            .map(|(a, b)| ((a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()) / 3.0)
            .sum::<f64>()
            / view.color.len() as f64;
        let iou = mask_iou(&view.labels, &exact.mask, spec.target as u16);
        let ok = iou >= 0.95 && err <= 2e-3 && (!free_space || view.collisions.is_empty());
        pass &= ok;
        details.push(format!("{name}: IoU {iou:.4}, color {err:.1e}"));
    }
    let plain = render_view(&scene, &cam, &opts).unwrap();
    let identity = ManipulationSpec::new(3, objfield::SimilarityTransform::IDENTITY).unwrap();
    let view = render_manipulated_view(&scene, &cam, &[identity], &opts).unwrap();
    let id_err = plain.iter().zip(&view.color).map(|(p, c)| (p.color - *c).norm()).fold(0.0, f64::max);
    pass &= id_err <= 1e-9;
    details.push(format!("identity max {id_err:.1e}"));
    outcome(pass, details.join("; "))
}

fn collision() -> Outcome {
    let scene = AnalyticScene::toy3();
    let cam = editing_camera(48);
    let opts = RenderOptions { k_coarse: 64, k_fine: 64, jitter: true, seed: 0 };
    let into_box = Vec3::new(0.35, -0.45, -0.45);
    let colliding = ManipulationSpec::translation(3, into_box).unwrap();
    let shortened = ManipulationSpec::translation(3, into_box * 0.15).unwrap();
    let a = render_manipulated_view(&scene, &cam, &[colliding], &opts).unwrap();
    let again = render_manipulated_view(&scene, &cam, &[colliding], &opts).unwrap();
    let b = render_manipulated_view(&scene, &cam, &[shortened], &opts).unwrap();
    let names_box = !a.collisions.is_empty() && a.collisions.iter().all(|c| c.target == 3 && c.occupying == 2);
    let deterministic = a.collisions == again.collisions && a.color == again.color;
    outcome(
        names_box && deterministic && b.collisions.is_empty(),
        format!(
            "overlapping edit: {} colliding pixels, occupying object {:?}; shortened edit: {} colliding pixels; deterministic {deterministic}",
            a.collisions.len(),
            a.collisions.first().map(|c| c.occupying),
            b.collisions.len()
        ),
    )
}

struct TrainedHeads {
    clean: EvalReport,
    no_3d: EvalReport,
    noisy: EvalReport,
    iterations: usize,
    seconds: f64,
}

fn train_heads() -> TrainedHeads {
    let seed = 0;
    let iterations = 3000;
    let scene = AnalyticScene::toy3();
    let (train, test) = generate_dataset(&scene, 32, 8, 64, seed).unwrap();
    let mut config = TrainConfig::compact(scene.h, iterations);
    config.seed = seed;
    let clean = train.masks();
    let noisy = corrupt_labels(&clean, scene.h, 0.5, seed + 1).unwrap();
    let tasks = vec![
        ObjectTask { masks: clean.clone(), object_2d: true, object_3d: true },
        ObjectTask { masks: clean, object_2d: true, object_3d: false },
        ObjectTask { masks: noisy, object_2d: true, object_3d: true },
    ];
    let start = Instant::now();
    let mut trainer = Trainer::with_tasks(&train, config, tasks).unwrap();
    trainer.run().unwrap();
    let opts = EvalOptions::default();
    let nets = trainer.networks();
    let eval = |i: usize| evaluate_field(&nets[i], &test, &opts).unwrap();
    TrainedHeads { clean: eval(0), no_3d: eval(1), noisy: eval(2), iterations, seconds: start.elapsed().as_secs_f64() }
}

fn desk_training(t: &TrainedHeads) -> Outcome {
    let ap = t.clean.ap_at(0.75).unwrap();
    outcome(
        t.clean.psnr >= 25.0 && ap >= 90.0,
        format!(
            "{} iterations in {:.0} s (3 heads): held-out PSNR {:.2} dB, SSIM {:.3}, AP75 {ap:.1}%",
            t.iterations,
            t.seconds,
            t.clean.psnr,
            t.clean.ssim.unwrap_or(f64::NAN)
        ),
    )
}

fn empty_space(t: &TrainedHeads) -> Outcome {
    let with = t.clean.empty_space.fraction();
    let without = t.no_3d.empty_space.fraction();
    outcome(
        with >= 0.9 && without < with,
        format!(
            "deep-empty samples coded empty: {:.3} with l3d, {:.3} without ({} samples)",
            with, without, t.clean.empty_space.deep_empty
        ),
    )
}

fn noise_robustness(t: &TrainedHeads) -> Outcome {
    let clean = t.clean.ap_at(0.75).unwrap();
    let noisy = t.noisy.ap_at(0.75).unwrap();
    outcome(noisy >= 0.8 * clean, format!("AP75 clean {clean:.1}%, 50% corrupted labels {noisy:.1}%"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, run: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id} {name}: {} ({}) [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "renderer matches analytic oracle", &renderer_oracle);
    report(2, "gradients match finite differences", &gradient_suite);
    report(3, "assignment matches exhaustive search", &assignment_oracle);
    report(5, "manipulation conjugacy", &manipulation_conjugacy);
    report(6, "collision detection", &collision);
    let trained = train_heads();
    report(4, "desk-scale training", &|| desk_training(&trained));
    report(7, "empty-space supervision", &|| empty_space(&trained));
    report(8, "label-noise robustness", &|| noise_robustness(&trained));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
