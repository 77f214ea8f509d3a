use histosynth_nn::{init, Graph, ParamGrads, ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Net {
    c1: (ParamId, ParamId),
    c2: (ParamId, ParamId),
    c3: (ParamId, ParamId),
    head: (ParamId, ParamId),
}

fn build(rng: &mut ChaCha8Rng) -> (ParamStore, Net) {
    let mut ps = ParamStore::new();
    let mut conv = |ps: &mut ParamStore, name: &str, cout, cin, k| {
        let w = ps.add(
            format!("{name}.w"),
            init::conv_weight(rng, cout, cin, k, 1.0),
        );
        let mut b = init::bias(cout);
        for v in b.data_mut() {
            *v = 0.05;
        }
        let b = ps.add(format!("{name}.b"), b);
        (w, b)
    };
    let c1 = conv(&mut ps, "c1", 4, 2, 3);
    let c2 = conv(&mut ps, "c2", 3, 4, 3);
    let c3 = conv(&mut ps, "c3", 2, 4 + 3, 1);
    let head = conv(&mut ps, "head", 2, 2, 3);
    (ps, Net { c1, c2, c3, head })
}

/// Exercises every op: conv, leaky relu, pool, global pool, upsample,
/// concat, add, scale, sigmoid and clamp. Returns a weighted-sum objective
/// with its input and parameter gradients.
fn forward(ps: &ParamStore, net: &Net, x: &Tensor) -> (f64, Tensor, ParamGrads) {
    let mut g = Graph::new(ps);
    let xi = g.input(x.clone(), true);
    let a = g.conv2d(xi, net.c1.0, net.c1.1).unwrap();
    let a = g.leaky_relu(a, 0.2);
    let p = g.max_pool2(a);
    let b = g.conv2d(p, net.c2.0, net.c2.1).unwrap();
    let v = g.global_avg_pool(b);
    let vb = g.upsample(v, x.h(), x.w());
    let cat = g.concat(a, vb).unwrap();
    let c = g.conv2d(cat, net.c3.0, net.c3.1).unwrap();
    let s = g.scale(c, 0.5);
    let r = g.add(s, xi).unwrap();
    let h = g.conv2d(r, net.head.0, net.head.1).unwrap();
    let sg = g.sigmoid(h);
    let cl = g.clamp_unit(r);
    let out = g.add(sg, cl).unwrap();
    let wts: Vec<f64> = (0..g.value(out).len())
        .map(|i| ((i * 13) % 7) as f64 - 3.0)
        .collect();
    let val: f64 = g
        .value(out)
        .data()
        .iter()
        .zip(&wts)
        .map(|(a, b)| a * b)
        .sum();
    let seed = Tensor::from_vec(g.value(out).dims(), wts).unwrap();
    let grads = g.backward(out, &seed).unwrap();
    let dx = grads.node(xi).unwrap().clone();
    (val, dx, grads.into_params())
}

fn objective(ps: &ParamStore, net: &Net, x: &Tensor) -> f64 {
    forward(ps, net, x).0
}

fn close(a: f64, n: f64) -> bool {
    (a - n).abs() <= 1e-6 * a.abs().max(n.abs()) + 1e-8
}

#[test]
fn parameter_and_input_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (ps, net) = build(&mut rng);
    let x = Tensor::from_vec(
        [2, 2, 6, 5],
        (0..120).map(|_| rng.random_range(0.2..0.8)).collect(),
    )
    .unwrap();

    let (_, dx, pgrads) = forward(&ps, &net, &x);

    let h = 1e-6;
    let mut checked = 0;
    for (id, p) in ps.iter() {
        let grad = pgrads.get(id).expect("every parameter is reached");
        for i in (0..p.value.len()).step_by(5) {
            let mut plus = ps.clone();
            plus.get_mut(id).data_mut()[i] += h;
            let mut minus = ps.clone();
            minus.get_mut(id).data_mut()[i] -= h;
            let num = (objective(&plus, &net, &x) - objective(&minus, &net, &x)) / (2.0 * h);
            let ana = grad.data()[i];
            assert!(
                close(ana, num),
                "{} [{i}]: analytic {ana} numeric {num}",
                p.name
            );
            checked += 1;
        }
    }
    assert!(checked > 20);

    for i in (0..x.len()).step_by(7) {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let num = (objective(&ps, &net, &xp) - objective(&ps, &net, &xm)) / (2.0 * h);
        assert!(
            close(dx.data()[i], num),
            "input [{i}]: {} vs {num}",
            dx.data()[i]
        );
    }
}

#[test]
fn untracked_inputs_report_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (ps, net) = build(&mut rng);
    let x = Tensor::full([1, 2, 4, 4], 0.5);
    let mut g = Graph::new(&ps);
    let xi = g.input(x, false);
    let a = g.conv2d(xi, net.c1.0, net.c1.1).unwrap();
    let seed = Tensor::full(g.value(a).dims(), 1.0);
    let grads = g.backward(a, &seed).unwrap();
    assert!(grads.node(xi).is_none());
    assert!(grads.params().get(net.c1.0).is_some());
    assert!(grads.params().get(net.c2.0).is_none());
}
