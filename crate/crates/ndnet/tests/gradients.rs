use ndnet::{
    check_param_grads, clip_global_norm, grad_check, AdamConfig, AdamState, GradSet, Linear,
    LstmCell, ParamStore, Result, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-4;

/// Checks d(loss)/d(input) where `build` maps an input vector to a scalar.
fn check_input_grad(x0: &[f64], build: impl Fn(&mut Tape<'_, f64>, Var) -> Result<Var>) -> f64 {
    let store = ParamStore::<f64>::new();
    let report = grad_check(
        |x| {
            let mut t = Tape::new(&store);
            let v = t.input_vec(x)?;
            let l = build(&mut t, v)?;
            let g = t.backward(l)?;
            let grad = g
                .wrt(v)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; x.len()]);
            Ok((t.scalar(l), grad))
        },
        x0,
        EPS,
    )
    .unwrap();
    report.max_rel_error
}

fn weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn every_primitive_passes_finite_differences() {
    let x = [0.3, -0.7, 1.1, 0.05, -1.4, 0.6];
    let w = weights(6, 9);
    type Build = fn(&mut Tape<'_, f64>, Var, &[f64]) -> Result<Var>;
    let cases: Vec<(&str, Build)> = vec![
        ("sigmoid", |t, v, w| {
            let y = t.sigmoid(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("tanh", |t, v, w| {
            let y = t.tanh(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("elu1p", |t, v, w| {
            let y = t.elu1p(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("exp", |t, v, w| {
            let y = t.exp(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("ln", |t, v, _| {
            let y = t.square(v)?;
            let y = t.add_scalar(y, 0.5)?;
            let y = t.ln(y)?;
            t.sum(y)
        }),
        ("relu", |t, v, w| {
            let y = t.relu(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("softmax", |t, v, w| {
            let y = t.softmax(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("log_softmax", |t, v, w| {
            let y = t.log_softmax(v)?;
            let c = t.input_vec(w)?;
            t.dot(y, c)
        }),
        ("log_sum_exp", |t, v, _| t.log_sum_exp(v)),
        ("mean", |t, v, _| {
            let y = t.square(v)?;
            t.mean(y)
        }),
        ("mul_div_sub", |t, v, w| {
            let c = t.input_vec(w)?;
            let a = t.mul(v, c)?;
            let d = t.exp(v)?;
            let q = t.div(a, d)?;
            let s = t.sub(q, v)?;
            let s = t.scale(s, 0.7)?;
            let s = t.neg(s)?;
            t.sum(s)
        }),
        ("slice_concat_pick", |t, v, _| {
            let a = t.slice(v, 1, 3)?;
            let b = t.slice(v, 0, 2)?;
            let c = t.concat(&[a, b, a])?;
            let c = t.square(c)?;
            let p = t.pick(c, 2)?;
            let s = t.sum(c)?;
            t.add(p, s)
        }),
        ("matvec_vecmat", |t, v, w| {
            let m = t.input(Tensor::new(vec![2, 3], w.to_vec())?)?;
            let m = t.reshape(m, &[3, 2])?;
            let head = t.slice(v, 0, 2)?;
            let tail = t.slice(v, 2, 3)?;
            let a = t.matvec(m, head)?;
            let b = t.vecmat(tail, m)?;
            let a = t.tanh(a)?;
            let b = t.tanh(b)?;
            let sa = t.sum(a)?;
            let sb = t.sum(b)?;
            t.add(sa, sb)
        }),
        ("stack_row_sum_row", |t, v, _| {
            let a = t.slice(v, 0, 3)?;
            let b = t.slice(v, 3, 3)?;
            let sb = t.sigmoid(b)?;
            let m = t.stack_rows(&[a, sb])?;
            let rs = t.row_sum(m)?;
            let r = t.row(m, 1)?;
            let x = t.dot(rs, rs)?;
            let y = t.dot(r, a)?;
            t.add(x, y)
        }),
        ("bce_logits", |t, v, _| {
            let tgt = t.input_vec(&[0.0, 1.0, 0.3, 0.9, 0.5, 0.1])?;
            t.bce_logits(v, tgt)
        }),
    ];
    for (name, build) in cases {
        let err = check_input_grad(&x, |t, v| build(t, v, &w));
        assert!(err < TOL, "{name}: rel err {err}");
    }
}

#[test]
fn convolutions_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let conv = ndnet::Conv2d::new(&mut store, "c", 2, 3, 3, 2, 1, &mut rng).unwrap();
    let deconv = ndnet::ConvTranspose2d::new(&mut store, "d", 3, 2, 3, 2, 1, &mut rng).unwrap();
    let img: Vec<f64> = (0..2 * 6 * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let report = check_param_grads(&store, EPS, None, &mut rng, |t| {
        let x = t.input(Tensor::new(vec![2, 6, 6], img.clone())?)?;
        let h = conv.forward(t, x)?;
        let h = t.tanh(h)?;
        let y = deconv.forward(t, h, (6, 6))?;
        let tgt = t.input(Tensor::new(vec![2, 6, 6], img.clone())?)?;
        t.bce_logits(y, tgt)
    })
    .unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn two_layer_perceptron_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let l1 = Linear::new(&mut store, "l1", 5, 8, &mut rng).unwrap();
    let l2 = Linear::new(&mut store, "l2", 8, 3, &mut rng).unwrap();
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let report = check_param_grads(&store, EPS, None, &mut rng, |t| {
        let xv = t.input_vec(&x)?;
        let h = l1.forward(t, xv)?;
        let h = t.tanh(h)?;
        let y = l2.forward(t, h)?;
        let lp = t.log_softmax(y)?;
        let p = t.pick(lp, 1)?;
        t.neg(p)
    })
    .unwrap();
    assert_eq!(report.coords_checked, store.num_scalars());
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn lstm_three_unrolled_steps_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng).unwrap();
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let report = check_param_grads(&store, EPS, None, &mut rng, |t| {
        let mut s = cell.zero_state(t)?;
        for x in &xs {
            let xv = t.input_vec(x)?;
            s = cell.step(t, xv, s)?;
        }
        let h2 = t.square(s.h)?;
        let c = t.sum(s.c)?;
        let h = t.sum(h2)?;
        t.add(h, c)
    })
    .unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn lstm_zero_params_zero_state_gives_zero_hidden() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng).unwrap();
    let zeros: Vec<(String, Tensor<f32>)> = store
        .iter()
        .map(|(_, n, t)| (n.to_string(), Tensor::zeros(t.shape().to_vec())))
        .collect();
    for (n, z) in zeros {
        store.set(&n, z).unwrap();
    }
    let mut t = Tape::new(&store);
    let s = cell.zero_state(&mut t).unwrap();
    let x = t.input_vec(&[0.4, -2.0, 9.0]).unwrap();
    let s = cell.step(&mut t, x, s).unwrap();
    assert!(t.value(s.h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_hidden_stays_inside_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f32>::new();
    let cell = LstmCell::new(&mut store, "lstm", 6, 16, &mut rng).unwrap();
    let mut t = Tape::new(&store);
    let mut s = cell.zero_state(&mut t).unwrap();
    for _ in 0..20 {
        let x: Vec<f32> = (0..6).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let xv = t.input_vec(&x).unwrap();
        s = cell.step(&mut t, xv, s).unwrap();
        let max = t
            .value(s.h)
            .data()
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(max < 1.0);
    }
}

#[test]
fn clip_global_norm_examples() {
    let mut g = GradSet::from_tensors(vec![Tensor::from_vec(vec![3.0f32, 4.0])]);
    clip_global_norm(&mut g, 10.0);
    assert_eq!(g.tensors()[0].data(), &[3.0, 4.0]);
    clip_global_norm(&mut g, 1.0);
    let d = g.tensors()[0].data();
    assert!((d[0] - 0.6).abs() < 1e-6 && (d[1] - 0.8).abs() < 1e-6);
    let mut z = GradSet::from_tensors(vec![Tensor::<f32>::zeros(vec![3])]);
    clip_global_norm(&mut z, 1.0);
    assert!(z.tensors()[0].data().iter().all(|&v| v == 0.0));
    let mut empty = GradSet::<f32>::from_tensors(vec![]);
    assert_eq!(clip_global_norm(&mut empty, 1.0), 0.0);
}

fn one_param_store(values: Vec<f32>) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.add("p", Tensor::from_vec(values)).unwrap();
    s
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut store = one_param_store(vec![1.0, -2.0]);
    let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
    adam.m[0] = Tensor::from_vec(vec![0.5, 0.5]);
    let g = GradSet::zeros_like(&store);
    adam.step(&mut store, &g).unwrap();
    // moments decay, params move only by the stale first moment
    assert!((adam.m[0].data()[0] - 0.45).abs() < 1e-6);
    let mut fresh = one_param_store(vec![1.0, -2.0]);
    let mut adam = AdamState::new(&fresh, AdamConfig::with_lr(0.1));
    let zero = GradSet::zeros_like(&fresh);
    adam.step(&mut fresh, &zero).unwrap();
    assert_eq!(fresh.tensors()[0].data(), &[1.0, -2.0]);
    assert_eq!(adam.step, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // t = 1: m̂ = g, v̂ = g², so Δ = −α g / (|g| + ε)
    for &g in &[0.003f64, -2.5, 40.0] {
        let lr = 1e-3;
        let mut store = ParamStore::<f64>::new();
        store.add("p", Tensor::from_vec(vec![0.0])).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(lr));
        let grads = GradSet::from_tensors(vec![Tensor::from_vec(vec![g])]);
        adam.step(&mut store, &grads).unwrap();
        let expected = -lr * g / (g.abs() + 1e-8);
        assert!((store.tensors()[0].data()[0] - expected).abs() < 1e-12);
    }
}

#[test]
fn adam_identical_gradients_identical_updates() {
    let mut store = one_param_store(vec![0.5, 0.5]);
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let g = GradSet::from_tensors(vec![Tensor::from_vec(vec![0.2f32, 0.2])]);
    for _ in 0..5 {
        adam.step(&mut store, &g).unwrap();
    }
    let d = store.tensors()[0].data();
    assert_eq!(d[0], d[1]);
}

#[test]
fn adam_shape_mismatch_rejected() {
    let mut store = one_param_store(vec![0.5, 0.5]);
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let g = GradSet::from_tensors(vec![Tensor::from_vec(vec![0.2f32])]);
    assert!(adam.step(&mut store, &g).is_err());
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f32>::new();
    let l = Linear::new(&mut store, "l", 7, 5, &mut rng).unwrap();
    let x: Vec<f32> = (0..7).map(|i| i as f32 * 0.3 - 1.0).collect();
    let run = || {
        let mut t = Tape::new(&store);
        let xv = t.input_vec(&x).unwrap();
        let y = l.forward(&mut t, xv).unwrap();
        let y = t.softmax(y).unwrap();
        t.value(y).data().to_vec()
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #[test]
    fn log_sum_exp_finite_when_max_finite(v in proptest::collection::vec(-1e30f64..1e30, 1..12)) {
        let r = ndnet::log_sum_exp_slice(&v);
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.is_finite());
        prop_assert!(r >= m);
    }

    #[test]
    fn elu1p_strictly_positive(x in -1e3f64..1e3) {
        prop_assert!(ndnet::elu1p(x) > 0.0);
    }

    #[test]
    fn clip_is_idempotent(v in proptest::collection::vec(-100f64..100.0, 1..10), max in 0.01f64..50.0) {
        let mut once = GradSet::from_tensors(vec![Tensor::from_vec(v)]);
        clip_global_norm(&mut once, max);
        prop_assert!(once.global_norm() <= max + 1e-6);
        let mut twice = once.clone();
        clip_global_norm(&mut twice, max);
        for (a, b) in once.tensors()[0].data().iter().zip(twice.tensors()[0].data()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn softmax_is_a_simplex(v in proptest::collection::vec(-50f64..50.0, 1..10)) {
        let p = ndnet::softmax_slice(&v);
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }
}
