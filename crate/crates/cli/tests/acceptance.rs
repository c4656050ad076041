//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one line, and exits non-zero if any of them fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, Matrix2x6, RowVector2, RowVector6, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nightrider_cli::{cmd_localize, LocalizeArgs, ScenarioArgs};
use nightrider_core::association::{angle_gradients, associate, pair_score, projection_pose_jacobian, ScoreParams, NO_MATCH_FLOOR};
use nightrider_core::camera::{back_project, camera_h, BoxSource, CamExtrinsics, CameraIntrinsics, CameraRig, DetectionBox, Matrix3x15};
use nightrider_core::filter::ErrorCovariance;
use nightrider_core::hungarian::{assignment_value, hungarian};
use nightrider_core::lie::{adjoint_se23, se23_exp, se23_log, so3_exp, so3_log, TangentXi, Vector9};
use nightrider_core::map::{build_map, dbscan, MapBuildParams, StreetlightCluster};
use nightrider_core::{ExtendedPose, FilterState};
use nightrider_sim::montecarlo::monte_carlo;
use nightrider_sim::trajectory::path_length;
use nightrider_sim::{compute_ate, presets, run_pipeline, run_with_options, PipelineOptions, RunArtifacts, Scenario, World};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn worst(errors: impl Iterator<Item = f64>) -> f64 {
    errors.fold(0.0, f64::max)
}

fn jacobians() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let g = Vector3::new(0.0, 0.0, -9.81);
    let mut errs = [0.0f64; 4];
    for _ in 0..100 {
        let truth = random_state(&mut rng);
        let omega = uniform3(&mut rng, 0.5);
        let accel = uniform3(&mut rng, 3.0) - truth.pose.rotation.inverse_transform(&g);
        errs[0] = errs[0].max(rel_err(&fd_error_dynamics(&truth, &omega, &accel, &g), &analytic_error_dynamics(&truth, &g)));

        let rig = random_rig(&mut rng);
        let (state, c) = random_visible_point(&mut rng, &rig, 0.5);
        let lin = camera_h(&state, &c, &rig.extrinsics).ok_or("point behind camera")?;
        let eps = 1e-6;
        let mut fd = Matrix3x15::zeros();
        for k in 0..9 {
            let z_at = |s: f64| {
                let mut e = Vector9::zeros();
                e[k] = s;
                let mut truth = state;
                truth.pose = se23_exp(&TangentXi::from_vector(&e)).compose(&state.pose);
                camera_h(&truth, &c, &rig.extrinsics).unwrap().predicted - lin.predicted
            };
            fd.set_column(k, &((z_at(eps) - z_at(-eps)) / (2.0 * eps)));
        }
        errs[1] = errs[1].max(rel_err(&fd, &lin.h));

        let j = projection_pose_jacobian(&state, &c, &rig).ok_or("projection failed")?;
        let perturbed = |d: &nalgebra::Vector6<f64>| perturb_pose(&state.pose, &d.fixed_rows::<3>(0).into(), &d.fixed_rows::<3>(3).into());
        let mut fd = Matrix2x6::zeros();
        for k in 0..6 {
            let mut d = nalgebra::Vector6::zeros();
            d[k] = eps;
            fd.set_column(k, &((rig.project(&c, &perturbed(&d)).unwrap() - rig.project(&c, &perturbed(&-d)).unwrap()) / (2.0 * eps)));
        }
        errs[2] = errs[2].max(rel_err(&fd, &j));

        let pixel = rig.project(&c, &state.pose).unwrap() + Vector2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let grad = angle_gradients(&state, &pixel, &c, &rig).ok_or("gradient failed")?;
        let cos_of = |px: &Vector2<f64>, pose: &ExtendedPose| back_project(px, &rig.intrinsics).normalize().dot(&rig.point_in_camera(&c, pose).normalize());
        let mut fd_px = RowVector2::zeros();
        for k in 0..2 {
            let mut d = Vector2::zeros();
            d[k] = 1e-3;
            fd_px[k] = (cos_of(&(pixel + d), &state.pose) - cos_of(&(pixel - d), &state.pose)) / 2e-3;
        }
        let mut fd_pose = RowVector6::zeros();
        for k in 0..6 {
            let mut d = nalgebra::Vector6::zeros();
            d[k] = eps;
            fd_pose[k] = (cos_of(&pixel, &perturbed(&d)) - cos_of(&pixel, &perturbed(&-d))) / (2.0 * eps);
        }
        errs[3] = errs[3].max(rel_err(&fd_px, &grad.d_pixel.fixed_columns::<2>(0).into_owned())).max(rel_err(&fd_pose, &grad.d_pose));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        errs.iter().all(|e| *e < 1e-5) && secs < 10.0,
        format!("max relative error A {:.1e}, H {:.1e}, projection {:.1e}, angle {:.1e} over 100 configurations in {secs:.2} s", errs[0], errs[1], errs[2], errs[3]),
    )
}

fn lie_group() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut roundtrip, mut series, mut adjoint) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let phi = gaussian3(&mut rng, 1.0).normalize() * rng.random_range(1e-6..std::f64::consts::PI - 1e-3);
        roundtrip = roundtrip.max((so3_log(&so3_exp(&phi)).map_err(|e| e.to_string())? - phi).norm());
        let r = random_rotation(&mut rng);
        roundtrip = roundtrip.max((so3_exp(&so3_log(r.matrix()).map_err(|e| e.to_string())?) - r.matrix()).amax());
    }
    for _ in 0..1000 {
        let x = random_pose(&mut rng);
        let back = se23_exp(&se23_log(&x));
        roundtrip = roundtrip.max((back.to_matrix() - x.to_matrix()).amax());

        let xi = TangentXi { rot: gaussian3(&mut rng, 0.5), vel: gaussian3(&mut rng, 0.5), pos: gaussian3(&mut rng, 0.5) };
        let small = TangentXi::from_vector(&(xi.to_vector() / xi.norm().max(1.0)));
        series = series.max((se23_exp(&small).to_matrix() - series_exp5(&small.hat(), 20)).amax());

        let m = x.to_matrix() * xi.hat() * x.to_matrix().try_inverse().ok_or("singular pose")?;
        let expected = TangentXi::vee(&m).to_vector();
        adjoint = adjoint.max((adjoint_se23(&x) * xi.to_vector() - expected).amax() / (1.0 + expected.amax()));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        roundtrip < 1e-9 && series < 1e-10 && adjoint < 1e-10 && secs < 5.0,
        format!("exp/log roundtrip {roundtrip:.1e}, series {series:.1e}, adjoint {adjoint:.1e} in {secs:.2} s"),
    )
}

fn assignment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(n..=6);
        let s = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0));
        let a = hungarian(&s, true).map_err(|e| e.to_string())?;
        let best = brute_force_assignment(&s, true);
        if (assignment_value(&s, &a) - best).abs() > 1e-9 {
            return Err(format!("hungarian {} vs enumeration {best}", assignment_value(&s, &a)));
        }
    }
    let rig = CameraRig { intrinsics: CameraIntrinsics::default(), extrinsics: CamExtrinsics::forward_looking(Vector3::new(0.0, 0.0, 1.0), 0.25) };
    let state = FilterState::new(ExtendedPose::identity(), 0.0);
    let cov = ErrorCovariance::from_std(0.01, 0.1, 0.3, 1e-3, 1e-2);
    let params = ScoreParams::default();
    for _ in 0..1000 {
        let m = rng.random_range(0..=6);
        let clusters: Vec<_> = (0..m)
            .map(|j| StreetlightCluster::from_points(j, vec![Vector3::new(rng.random_range(8.0..40.0), rng.random_range(-10.0..10.0), rng.random_range(4.0..8.0))]))
            .collect();
        let dets: Vec<_> = (0..rng.random_range(0..=6))
            .map(|i| {
                let base = match clusters.get(i).and_then(|c| rig.project(&c.center, &state.pose)) {
                    Some(p) if rng.random_bool(0.7) => p,
                    _ => Vector2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0)),
                };
                DetectionBox::new(base + Vector2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)), Vector2::new(8.0, 8.0), BoxSource::Detector)
            })
            .collect();
        let ms = associate(&dets, &clusters, &state, &cov, &rig, &params);
        let cs = DMatrix::from_fn(dets.len(), m, |i, j| pair_score(&dets[i], &clusters[j], &state, &cov, &rig, &params));
        let nm: Vec<f64> = (0..dets.len()).map(|i| (1.0 - cs.row(i).sum()).max(NO_MATCH_FLOOR)).collect();
        let best = brute_force_association(&cs, &nm);
        let total: f64 = ms.pairs.iter().map(|p| p.cluster.map_or(nm[p.detection], |id| cs[(p.detection, id)])).sum();
        if !ms.is_one_to_one() || (total - best).abs() > 1e-9 * best.abs().max(1.0) {
            return Err(format!("association {total} vs enumeration {best}"));
        }
    }

    let clusters: Vec<_> = (0..20)
        .map(|j| StreetlightCluster::from_points(j, vec![Vector3::new(rng.random_range(8.0..45.0), rng.random_range(-12.0..12.0), 6.0)]))
        .collect();
    let dets: Vec<_> = (0..10)
        .map(|j| DetectionBox::new(rig.project(&clusters[j].center, &state.pose).unwrap() + Vector2::new(1.0, -1.0), Vector2::new(8.0, 8.0), BoxSource::Detector))
        .collect();
    let mut times: Vec<f64> = (0..101)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(associate(&dets, &clusters, &state, &cov, &rig, &params));
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median_ms = 1e3 * times[50];
    check(median_ms < 5.0, format!("1000 + 1000 instances equal enumeration; 10x20 association median {median_ms:.3} ms"))
}

fn consistency() -> Verdict {
    let start = Instant::now();
    let summary = monte_carlo(&presets::figure_eight(), 100).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        (10.1..=20.9).contains(&summary.mean_nees) && summary.max_final_position_error < 5.0 && secs < 300.0,
        format!("100 runs: mean NEES {:.2}, worst final error {:.3} m, {secs:.1} s", summary.mean_nees, summary.max_final_position_error),
    )
}

fn ate(world: &World, out: &RunArtifacts) -> f64 {
    compute_ate(&out.estimate_poses(), &world.truth_poses()).map_or(f64::INFINITY, |a| a.translation_rmse)
}

fn ablation() -> Verdict {
    let world = World::generate(&presets::long_road()).map_err(|e| e.to_string())?;
    let length = path_length(&world.truth);
    let full = ate(&world, &run_pipeline(&world));
    let no_vision = ate(&world, &run_with_options(&world, PipelineOptions { vision: false, ..PipelineOptions::default() }));
    let no_ext = ate(&world, &run_with_options(&world, PipelineOptions { extension: false, ..PipelineOptions::default() }));
    let lamps = world.map.len();
    check(
        lamps == 20 && length > 490.0 && full < 0.005 * length && no_vision >= 5.0 * full && no_ext > full,
        format!("{lamps} lamps over {length:.1} m: ATE full {full:.3} m ({:.3}%), no vision {no_vision:.3} m ({:.1}x), no extension {no_ext:.3} m", 100.0 * full / length, no_vision / full),
    )
}

/// Mean |z| error over the five seconds after the path has turned 45 degrees.
fn corner_z_error(world: &World, out: &RunArtifacts) -> f64 {
    let yaw0 = world.truth[0].pose.rotation.yaw();
    let corner = world.truth.iter().find(|s| (s.pose.rotation.yaw() - yaw0).abs() > std::f64::consts::FRAC_PI_4).map_or(f64::INFINITY, |s| s.timestamp);
    let z: Vec<f64> = out.position_errors(world).iter().filter(|(t, _)| *t > corner && *t <= corner + 5.0).map(|(_, e)| e.z.abs()).collect();
    z.iter().sum::<f64>() / z.len().max(1) as f64
}

fn degeneration() -> Verdict {
    let (mut on, mut off) = (0.0, 0.0);
    let seeds = 16;
    for seed in 0..seeds {
        let world = World::generate(&Scenario { seed, ..presets::corridor() }).map_err(|e| e.to_string())?;
        on += corner_z_error(&world, &run_pipeline(&world));
        off += corner_z_error(&world, &run_with_options(&world, PipelineOptions { degeneration: false, ..PipelineOptions::default() }));
    }
    let (on, off) = (on / seeds as f64, off / seeds as f64);
    check(on < 0.5 * off, format!("{seeds} seeds: mean |z| after the corner {on:.3} m with handling vs {off:.3} m without (ratio {:.2})", on / off))
}

fn recovery() -> Verdict {
    let seeds = 30;
    let mut passed = 0;
    let mut ratios = Vec::new();
    for seed in 0..seeds {
        let scenario = Scenario { seed, ..presets::blackout() };
        let window = scenario.detections.blackouts[0];
        let world = World::generate(&scenario).map_err(|e| e.to_string())?;
        let out = run_pipeline(&world);
        let errors = out.position_errors(&world);
        let before: Vec<f64> = errors.iter().filter(|(t, _)| *t >= window.start - 10.0 && *t < window.start).map(|(_, e)| e.norm_squared()).collect();
        let pre = (before.iter().sum::<f64>() / before.len() as f64).sqrt();
        let Some(rec) = out.events.iter().find(|e| e.kind == "recovered" && e.t >= window.end) else {
            continue;
        };
        let best = errors.iter().filter(|(t, _)| *t >= rec.t - 1e-9).take(3).map(|(_, e)| e.norm()).fold(f64::INFINITY, f64::min);
        ratios.push(best / pre);
        if best < 2.0 * pre {
            passed += 1;
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios.get(ratios.len() / 2).copied().unwrap_or(f64::INFINITY);
    check(
        passed * 5 >= seeds * 4,
        format!("{passed}/{seeds} seeds back below 2x the pre-blackout error within 3 frames of recovery (need 80%); median ratio {median:.2}"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let args = LocalizeArgs {
            scenario: ScenarioArgs { scenario: None, preset: Some("figure-eight".into()), seed: Some(42) },
            map: None,
            out: dir.path().join(name),
            no_vision: false,
            no_extension: false,
            no_degeneration: false,
            no_recovery: false,
            runs: 1,
        };
        cmd_localize(&args).map_err(|e| e.to_string())?;
        std::fs::read(dir.path().join(name).join("trajectory.csv")).map_err(|e| e.to_string())
    };
    let (a, b) = (run("a")?, run("b")?);
    check(a == b && !a.is_empty(), format!("two localize runs, seed 42: {} bytes each, identical: {}", a.len(), a == b))
}

fn map_builder() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for case in 0..100 {
        let n = rng.random_range(1..=200);
        let blobs = rng.random_range(1..6);
        let centers: Vec<_> = (0..blobs).map(|_| uniform3(&mut rng, 15.0)).collect();
        let points: Vec<_> = (0..n)
            .map(|_| {
                if rng.random_bool(0.8) {
                    let spread = rng.random_range(0.2..1.2);
                    centers[rng.random_range(0..blobs)] + gaussian3(&mut rng, spread)
                } else {
                    uniform3(&mut rng, 20.0)
                }
            })
            .collect();
        let eps = rng.random_range(0.5..2.0);
        let min_pts = rng.random_range(1..8);
        dbscan_matches_reference(&points, eps, min_pts, &dbscan(&points, eps, min_pts)).map_err(|e| format!("cloud {case}: {e}"))?;
    }
    let lamps: Vec<_> = (0..20)
        .map(|i| Vector3::new(10.0 * (i % 10) as f64 + rng.random_range(-1.0..1.0), if i < 10 { -8.0 } else { 8.0 }, 6.0))
        .collect();
    let mut cloud = Vec::new();
    for c in &lamps {
        for _ in 0..rng.random_range(30..60) {
            cloud.push(c + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.15..0.15)));
        }
    }
    for _ in 0..15 {
        cloud.push(Vector3::new(rng.random_range(-50.0..250.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..10.0)));
    }
    let map = build_map(&cloud, &MapBuildParams::default());
    let offset = worst(lamps.iter().map(|l| map.clusters.iter().map(|c| (c.center - l).norm()).fold(f64::INFINITY, f64::min)));
    check(
        map.len() == 20 && offset < 0.1,
        format!("100 clouds match the quadratic reference; {} of 20 lamps recovered, worst center offset {offset:.3} m", map.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("jacobians", jacobians),
        ("lie group", lie_group),
        ("assignment", assignment),
        ("filter consistency", consistency),
        ("ablation trend", ablation),
        ("degeneration", degeneration),
        ("recovery", recovery),
        ("determinism", determinism),
        ("map builder", map_builder),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {status} ({detail}) [{:.1} s]", i + 1, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
