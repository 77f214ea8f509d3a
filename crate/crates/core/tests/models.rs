use histosynth::gan::*;
use histosynth::nets::images_to_tensor;
use histosynth::phantom::flat_patch;
use histosynth::task::{TaskConfig, TaskKind, TaskModel, TaskTarget};
use histosynth_nn::{Adam, ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

fn small_refiner(residual_init: f64) -> RefinerModel {
    RefinerModel::new(RefinerConfig {
        width: 4,
        wide: 6,
        residual_init,
        ..Default::default()
    })
}

fn small_disc(use_reference: bool) -> DiscriminatorModel {
    DiscriminatorModel::new(DiscriminatorConfig {
        width: 4,
        wide: 6,
        use_reference,
        ..Default::default()
    })
}

fn small_task() -> TaskModel {
    TaskModel::new(TaskConfig {
        width: 4,
        wide: 6,
        ..Default::default()
    })
}

#[test]
fn layer_counts_match_defaults() {
    let g = RefinerModel::new(RefinerConfig::default());
    assert_eq!((g.arch.conv_count(), g.arch.pool_count()), (21, 2));
    assert_eq!(g.arch.branch("texture.").conv_count(), 6);
    assert_eq!(g.arch.branch("refine.").conv_count(), 15);
    let d = DiscriminatorModel::new(DiscriminatorConfig::default());
    assert_eq!((d.arch.conv_count(), d.arch.pool_count()), (15, 3));
    let r = TaskModel::new(TaskConfig::default());
    assert_eq!((r.arch.conv_count(), r.arch.pool_count()), (15, 2));
    let c = TaskModel::new(TaskConfig {
        task: TaskKind::Classification { classes: 3 },
        ..Default::default()
    });
    assert_eq!(c.arch.conv_count(), 11);
}

#[test]
fn untrained_refiner_is_identity() {
    let g = small_refiner(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for size in [8, 13, 20] {
        let i = random_tensor(&mut rng, [2, 3, size, size]);
        let s = random_tensor(&mut rng, [2, 3, size, size]);
        assert_eq!(g.refine_batch(&i, &s).unwrap(), i);
    }
}

#[test]
fn refiner_output_in_range_and_shape() {
    let g = small_refiner(3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (h, w) in [(8, 8), (11, 9), (17, 24)] {
        let i = random_tensor(&mut rng, [1, 3, h, w]);
        let s = random_tensor(&mut rng, [1, 3, h, w]);
        let out = g.refine_batch(&i, &s).unwrap();
        assert_eq!(out.dims(), i.dims());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(out, i);
    }
    let bad = random_tensor(&mut rng, [1, 3, 9, 8]);
    let i = random_tensor(&mut rng, [1, 3, 8, 8]);
    assert!(g.refine_batch(&i, &bad).is_err());
}

#[test]
fn discriminator_outputs_probabilities() {
    let d = small_disc(true);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, [3, 3, 12, 12]);
    let s = random_tensor(&mut rng, [3, 3, 12, 12]);
    let p = d.score(&x, &s).unwrap();
    assert_eq!(p.len(), 3);
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn zero_head_gives_half_probability() {
    let mut r = small_task();
    for name in ["dec1.head.weight", "dec1.head.bias"] {
        let id = r.params.find(name).unwrap();
        r.params.get_mut(id).data_mut().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, [2, 3, 15, 11]);
    let maps = r.predict(&x).unwrap();
    assert_eq!(maps.len(), 2);
    for m in maps {
        assert_eq!(m.len(), 15 * 11);
        assert!(m.iter().all(|&v| v == 0.5));
    }
}

#[test]
fn class_probabilities_sum_to_one() {
    let r = TaskModel::new(TaskConfig {
        task: TaskKind::Classification { classes: 4 },
        width: 4,
        wide: 6,
        ..Default::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, [3, 3, 12, 12]);
    for row in r.predict(&x).unwrap() {
        assert_eq!(row.len(), 4);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn losses_are_order_invariant() {
    let d = [0.1, 0.7, 0.3, 0.95];
    let rev: Vec<f64> = d.iter().rev().copied().collect();
    assert!((real_loss(&d).0 - real_loss(&rev).0).abs() < 1e-15);
    assert!((disc_loss(&d, &[0.2, 0.4]).0 - disc_loss(&rev, &[0.4, 0.2]).0).abs() < 1e-15);
    let pred = [0.2, 0.9, 0.4];
    let gt = [0.0, 1.0, 1.0];
    let a = bce_loss(&pred, &gt).unwrap().0;
    let b = bce_loss(&[0.4, 0.2, 0.9], &[1.0, 0.0, 1.0]).unwrap().0;
    assert!((a - b).abs() < 1e-15);
}

#[test]
fn disc_loss_grid_minimum_at_perfect_scores() {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &r in &grid {
        for &f in &grid {
            let v = disc_loss(&[r], &[f]).0;
            if v < best.0 {
                best = (v, r, f);
            }
        }
    }
    assert_eq!((best.1, best.2), (1.0, 0.0));
}

#[test]
fn real_loss_decreases_in_score() {
    let mut prev = f64::INFINITY;
    for i in 0..=100 {
        let v = real_loss(&[i as f64 / 100.0]).0;
        assert!(v <= prev);
        prev = v;
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-8)
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_tensor(&mut rng, [4, 3, 3, 3]);
    let b = random_tensor(&mut rng, [4, 3, 3, 3]);
    let lg = reg_loss(&a, &b, 0.3, 0.7).unwrap();
    for k in [0, 17, 50, 107] {
        let f = |v: f64| {
            let mut bb = b.clone();
            bb.data_mut()[k] = v;
            reg_loss(&a, &bb, 0.3, 0.7).unwrap().value
        };
        assert!(rel_close(
            lg.grad.data()[k],
            central_diff(f, b.data()[k], 1e-6),
            1e-4
        ));
    }
    let d: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
    let (_, gd) = real_loss(&d);
    let (_, gr, gf) = disc_loss(&d, &d[..3]);
    let pred: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
    let gt = [0.0, 1.0, 1.0, 0.0];
    let (_, gb) = bce_loss(&pred, &gt).unwrap();
    for k in 0..4 {
        let set = |v: f64, src: &[f64]| {
            let mut c = src.to_vec();
            c[k] = v;
            c
        };
        assert!(rel_close(
            gd[k],
            central_diff(|v| real_loss(&set(v, &d)).0, d[k], 1e-6),
            1e-4
        ));
        assert!(rel_close(
            gr[k],
            central_diff(|v| disc_loss(&set(v, &d), &d[..3]).0, d[k], 1e-6),
            1e-4
        ));
        if k < 3 {
            assert!(rel_close(
                gf[k],
                central_diff(|v| disc_loss(&d, &set(v, &d[..3])).0, d[k], 1e-6),
                1e-4
            ));
        }
        assert!(rel_close(
            gb[k],
            central_diff(|v| bce_loss(&set(v, &pred), &gt).unwrap().0, pred[k], 1e-6),
            1e-4
        ));
    }
}

/// Perturb one parameter entry and re-evaluate `f`.
fn fd_param(store: &ParamStore, id: ParamId, k: usize, f: impl Fn(&ParamStore) -> f64) -> f64 {
    let h = 1e-6;
    let mut plus = store.clone();
    plus.get_mut(id).data_mut()[k] += h;
    let mut minus = store.clone();
    minus.get_mut(id).data_mut()[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[test]
fn refiner_chain_gradients_match_finite_differences() {
    let g = small_refiner(0.5);
    let d = small_disc(true);
    let r = small_task();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let i = random_tensor(&mut rng, [4, 3, 8, 8]);
    let s = random_tensor(&mut rng, [4, 3, 8, 8]);
    let mask = Tensor::from_vec(
        [4, 1, 8, 8],
        (0..256).map(|k| ((k / 3) % 2) as f64).collect(),
    )
    .unwrap();
    let target = TaskTarget::Masks(mask);
    let w = LossWeights {
        alpha: 1.0,
        beta: 0.7,
        gamma: 0.5,
        lambda1: 0.01,
        lambda2: 0.1,
    };
    for objective in [
        RefinerObjective::Reg,
        RefinerObjective::Adversarial,
        RefinerObjective::Full,
    ] {
        let eval =
            refiner_gradients(&g, &d, Some(&r), &w, objective, &i, &s, Some(&target)).unwrap();
        let mut checked = 0;
        for name in [
            "refine.residual.weight",
            "refine.conv3.weight",
            "texture.conv2.weight",
            "refine.residual.bias",
        ] {
            let id = g.params.find(name).unwrap();
            for k in [0, 2] {
                let analytic = eval.grads.get(id).map(|t| t.data()[k]).unwrap_or(0.0);
                let numeric = fd_param(&g.params, id, k, |p| {
                    let mut gm = g.clone();
                    gm.params = p.clone();
                    refiner_gradients(&gm, &d, Some(&r), &w, objective, &i, &s, Some(&target))
                        .unwrap()
                        .loss
                });
                assert!(
                    rel_close(analytic, numeric, 1e-4) || (analytic - numeric).abs() < 1e-9,
                    "{objective:?} {name}[{k}]: {analytic} vs {numeric}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 8);
    }
}

#[test]
fn discriminator_and_task_gradients_match_finite_differences() {
    let d = small_disc(true);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let real = random_tensor(&mut rng, [4, 3, 8, 8]);
    let refr = random_tensor(&mut rng, [4, 3, 8, 8]);
    let fake = random_tensor(&mut rng, [4, 3, 8, 8]);
    let eval = discriminator_gradients(&d, &real, &refr, &fake, &refr).unwrap();
    for name in [
        "trunk.conv3.weight",
        "reference.conv4.weight",
        "trunk.score.bias",
    ] {
        let id = d.params.find(name).unwrap();
        let analytic = eval.grads.get(id).unwrap().data()[0];
        let numeric = fd_param(&d.params, id, 0, |p| {
            let mut dm = d.clone();
            dm.params = p.clone();
            discriminator_gradients(&dm, &real, &refr, &fake, &refr)
                .unwrap()
                .loss
        });
        assert!(
            rel_close(analytic, numeric, 1e-4),
            "{name}: {analytic} vs {numeric}"
        );
    }

    let r = TaskModel::new(TaskConfig {
        task: TaskKind::Classification { classes: 3 },
        width: 4,
        wide: 6,
        ..Default::default()
    });
    let target = TaskTarget::Labels(vec![0, 2, 1, 2]);
    let ev = r.evaluate(&real, &target, true).unwrap();
    for name in ["block1.conv1.weight", "head.bias"] {
        let id = r.params.find(name).unwrap();
        let analytic = ev.params.get(id).unwrap().data()[1.min(r.params.get(id).len() - 1)];
        let numeric = fd_param(&r.params, id, 1.min(r.params.get(id).len() - 1), |p| {
            let mut rm = r.clone();
            rm.params = p.clone();
            rm.loss(&real, &target).unwrap()
        });
        assert!(
            rel_close(analytic, numeric, 1e-4),
            "{name}: {analytic} vs {numeric}"
        );
    }
    let gi = ev.input_grad.unwrap();
    let numeric = central_diff(
        |v| {
            let mut x = real.clone();
            x.data_mut()[10] = v;
            r.loss(&x, &target).unwrap()
        },
        real.data()[10],
        1e-6,
    );
    assert!(rel_close(gi.data()[10], numeric, 1e-4));
}

#[test]
fn zero_gamma_removes_task_feedback() {
    let g = small_refiner(0.5);
    let d = small_disc(true);
    let r = small_task();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let i = random_tensor(&mut rng, [2, 3, 8, 8]);
    let s = random_tensor(&mut rng, [2, 3, 8, 8]);
    let target = TaskTarget::Masks(Tensor::zeros([2, 1, 8, 8]));
    let w0 = LossWeights {
        gamma: 0.0,
        ..Default::default()
    };
    let full = refiner_gradients(
        &g,
        &d,
        Some(&r),
        &w0,
        RefinerObjective::Full,
        &i,
        &s,
        Some(&target),
    )
    .unwrap();
    let adv = refiner_gradients(
        &g,
        &d,
        None,
        &w0,
        RefinerObjective::Adversarial,
        &i,
        &s,
        None,
    )
    .unwrap();
    for (id, _) in g.params.iter() {
        assert_eq!(
            full.grads.get(id).map(|t| t.data().to_vec()),
            adv.grads.get(id).map(|t| t.data().to_vec())
        );
    }
    // doubling gamma doubles the task contribution
    let wa = LossWeights { gamma: 0.3, ..w0 };
    let wb = LossWeights { gamma: 0.6, ..w0 };
    let ga = refiner_gradients(
        &g,
        &d,
        Some(&r),
        &wa,
        RefinerObjective::Full,
        &i,
        &s,
        Some(&target),
    )
    .unwrap();
    let gb = refiner_gradients(
        &g,
        &d,
        Some(&r),
        &wb,
        RefinerObjective::Full,
        &i,
        &s,
        Some(&target),
    )
    .unwrap();
    let id = g.params.find("refine.residual.weight").unwrap();
    for k in 0..5 {
        let base = adv.grads.get(id).unwrap().data()[k];
        let da = ga.grads.get(id).unwrap().data()[k] - base;
        let db = gb.grads.get(id).unwrap().data()[k] - base;
        assert!((db - 2.0 * da).abs() <= 1e-9 * db.abs().max(1e-12) + 1e-15);
    }
}

#[test]
fn one_discriminator_step_lowers_its_loss() {
    let mut d = small_disc(true);
    let red = flat_patch([0.8, 0.2, 0.2], 8, 0.01, 1).unwrap();
    let blue = flat_patch([0.2, 0.2, 0.8], 8, 0.01, 2).unwrap();
    let real = images_to_tensor(&[&red, &red]).unwrap();
    let fake = images_to_tensor(&[&blue, &blue]).unwrap();
    let before = discriminator_gradients(&d, &real, &real, &fake, &real).unwrap();
    let mut opt = Adam::new(&d.params, 1e-3);
    opt.step(&mut d.params, &before.grads);
    let after = discriminator_gradients(&d, &real, &real, &fake, &real).unwrap();
    assert!(after.loss < before.loss);
}
