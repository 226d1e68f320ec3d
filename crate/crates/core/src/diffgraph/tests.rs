use super::*;
use crate::error::Error;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
    Tensor::matrix(rows, cols, v.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Entries bounded away from zero, for relu checks.
fn random_off_kink(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces a node to a scalar with fixed random weights so adjoints are not
/// checked only along the all-ones direction.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> crate::Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let n = tape.value(v).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap();
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

#[test]
fn cos_of_zero_is_one() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 4]));
    let y = tape.cos(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0; 4]);
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(t(1, 3, &[2.5, 2.5, 2.5]));
    let g = tape.leaf(Tensor::filled(&[3], 1.0));
    let b = tape.leaf(Tensor::zeros(&[3]));
    let y = tape.layer_norm(x, g, b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 3]);
}

#[test]
fn matmul_hand_example() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(t(2, 2, &[1., 2., 3., 4.]));
    let b = tape.leaf(t(2, 1, &[1., 1.]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).shape(), &[2, 1]);
    assert_eq!(tape.value(c).data(), &[3., 7.]);
}

#[test]
fn shape_mismatch_is_a_config_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(t(2, 3, &[0.; 6]));
    let b = tape.leaf(t(2, 2, &[0.; 4]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Config(_))));
    assert!(matches!(tape.add(a, b), Err(Error::Config(_))));
}

#[test]
fn non_finite_output_names_the_op() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(t(1, 1, &[1000.0]));
    match tape.exp(a) {
        Err(Error::Numeric { op, .. }) => assert_eq!(op, "exp"),
        other => panic!("expected numeric error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::row(vec![1., 2., 3.]));
    let sq = tape.square(x).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(&tape, x).data(), &[2., 4., 6.]);
}

#[test]
fn backward_of_cos_at_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let y = tape.cos(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(&tape, x).item(), 0.0);
}

#[test]
fn non_scalar_seed_is_a_usage_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::row(vec![1., 2.]));
    let y = tape.square(x).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
}

#[test]
fn unused_leaves_get_zero_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::row(vec![1., 2.]));
    let unused = tape.leaf(t(2, 2, &[1., 2., 3., 4.]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    let gu = g.get(&tape, unused);
    assert_eq!(gu.shape(), &[2, 2]);
    assert!(gu.data().iter().all(|&v| v == 0.0));
}

#[test]
fn constants_receive_no_gradient_but_leaves_do() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::row(vec![1., 2.]));
    let c = tape.constant(Tensor::row(vec![3., 4.]));
    let p = tape.mul(x, c).unwrap();
    let s = tape.sum(p).unwrap();
    assert!(!tape.requires_grad(c));
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(&tape, x).data(), &[3., 4.]);
    assert_eq!(g.get(&tape, c).data(), &[0., 0.]);
}

fn mlp(tape: &mut Tape<f64>, v: &[Var]) -> crate::Result<Var> {
    // v = [x, w1, b1, w2, b2, w3, b3]
    let mut h = v[0];
    for layer in 0..3 {
        let w = v[1 + 2 * layer];
        let b = v[2 + 2 * layer];
        let z = tape.matmul(h, w)?;
        let z = tape.add_row_broadcast(z, b)?;
        h = if layer < 2 { tape.relu(z)? } else { z };
    }
    tape.sum(h)
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let point = vec![
            random(&mut rng, 5, 3, -1.0, 1.0),
            random(&mut rng, 3, 6, -1.0, 1.0),
            random(&mut rng, 1, 6, -0.5, 0.5),
            random(&mut rng, 6, 4, -1.0, 1.0),
            random(&mut rng, 1, 4, -0.5, 0.5),
            random(&mut rng, 4, 1, -1.0, 1.0),
            random(&mut rng, 1, 1, -0.5, 0.5),
        ];
        let step = 1e-5;
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = point.iter().map(|p| tape.leaf(p.clone())).collect();
        mlp(&mut tape, &vars).unwrap();
        // Skip draws with a pre-activation close enough to a kink to be crossed.
        if tape.min_relu_margin().unwrap() < 1e-3 {
            continue;
        }
        let err = grad_check(mlp, &point, step).unwrap();
        assert!(err <= 1e-5, "trial {trial}: rel err {err}");
    }
}

#[test]
fn quadratic_form_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, 4, 4, -1.0, 1.0);
    let x = random(&mut rng, 4, 1, 0.5, 2.0);
    let f = move |tape: &mut Tape<f64>, v: &[Var]| {
        let ac = tape.constant(a.clone());
        let ax = tape.matmul(ac, v[0])?;
        let p = tape.mul(ax, v[0])?;
        tape.sum(p)
    };
    let err = grad_check(f, &[x], 1e-4).unwrap();
    assert!(err <= 1e-9, "rel err {err}");
}

type Case = (&'static str, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> crate::Result<Var>>, Vec<(usize, usize)>);

fn primitive_cases() -> Vec<Case> {
    vec![
        ("matmul", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.matmul(v[0], v[1])?; project(t, y, 1) }), vec![(3, 4), (4, 2)]),
        ("add", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.add(v[0], v[1])?; project(t, y, 2) }), vec![(3, 4), (3, 4)]),
        ("sub", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.sub(v[0], v[1])?; project(t, y, 3) }), vec![(3, 4), (3, 4)]),
        ("mul", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.mul(v[0], v[1])?; project(t, y, 4) }), vec![(3, 4), (3, 4)]),
        ("scale", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.scale(v[0], -1.7)?; project(t, y, 5) }), vec![(2, 3)]),
        ("add_scalar", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.add_scalar(v[0], 0.3)?; let y = t.square(y)?; project(t, y, 6) }), vec![(2, 3)]),
        ("relu", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.relu(v[0])?; project(t, y, 7) }), vec![(3, 5)]),
        ("cos", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.cos(v[0])?; project(t, y, 8) }), vec![(3, 5)]),
        ("sin", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.sin(v[0])?; project(t, y, 9) }), vec![(3, 5)]),
        ("square", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.square(v[0])?; project(t, y, 10) }), vec![(3, 5)]),
        ("exp", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.exp(v[0])?; project(t, y, 11) }), vec![(3, 5)]),
        ("sigmoid", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.sigmoid(v[0])?; project(t, y, 12) }), vec![(3, 5)]),
        ("layer_norm", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.layer_norm(v[0], v[1], v[2])?; project(t, y, 13) }), vec![(4, 6), (1, 6), (1, 6)]),
        ("sum", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.square(v[0])?; t.sum(y) }), vec![(3, 3)]),
        ("mean", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.square(v[0])?; t.mean(y) }), vec![(3, 3)]),
        ("sum_rows", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.sum_rows(v[0])?; let y = t.square(y)?; project(t, y, 14) }), vec![(5, 3)]),
        ("add_row_broadcast", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.add_row_broadcast(v[0], v[1])?; let y = t.square(y)?; project(t, y, 15) }), vec![(4, 3), (1, 3)]),
        ("concat_cols", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.concat_cols(&[v[0], v[1]])?; let y = t.square(y)?; project(t, y, 16) }), vec![(3, 2), (3, 4)]),
        ("slice_cols", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.slice_cols(v[0], 1, 3)?; let y = t.square(y)?; project(t, y, 17) }), vec![(3, 4)]),
        ("pairwise_sq_dist", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.pairwise_sq_dist(v[0], v[1])?; project(t, y, 18) }), vec![(4, 3), (5, 3)]),
        ("trig_sums", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.trig_sums(v[0])?; let y = t.square(y)?; project(t, y, 20) }), vec![(5, 3)]),
        ("pairwise_sq_dist_self", Box::new(|t: &mut Tape<f64>, v: &[Var]| { let y = t.pairwise_sq_dist(v[0], v[0])?; let y = t.scale(y, -0.5)?; let y = t.exp(y)?; project(t, y, 19) }), vec![(4, 3)]),
    ]
}

#[test]
fn every_primitive_adjoint_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (name, f, shapes) in primitive_cases() {
        for point_idx in 0..10 {
            let point: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|&(r, c)| random_off_kink(&mut rng, r, c))
                .collect();
            let err = grad_check(&f, &point, 1e-5).unwrap();
            assert!(err <= 1e-6, "{name} point {point_idx}: rel err {err}");
        }
    }
}

#[test]
fn backward_is_linear_on_shared_leaves() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = random(&mut rng, 3, 4, -1.0, 1.0);
    let (a, b) = (0.7, -2.3);
    let build_f = |tape: &mut Tape<f64>, x: Var| {
        let c = tape.cos(x).unwrap();
        tape.sum(c).unwrap()
    };
    let build_g = |tape: &mut Tape<f64>, x: Var| {
        let s = tape.square(x).unwrap();
        let s = tape.sin(s).unwrap();
        tape.sum(s).unwrap()
    };
    let grad_of = |which: u8| {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x0.clone());
        let out = match which {
            0 => build_f(&mut tape, x),
            1 => build_g(&mut tape, x),
            _ => {
                let f = build_f(&mut tape, x);
                let g = build_g(&mut tape, x);
                let fa = tape.scale(f, a).unwrap();
                let gb = tape.scale(g, b).unwrap();
                tape.add(fa, gb).unwrap()
            }
        };
        tape.backward(out).unwrap().get(&tape, x)
    };
    let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
    for k in 0..gc.len() {
        let expect = a * gf.data()[k] + b * gg.data()[k];
        assert!((gc.data()[k] - expect).abs() <= 1e-12, "coord {k}");
    }
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let point = vec![
        random(&mut rng, 5, 3, -1.0, 1.0),
        random(&mut rng, 3, 6, -1.0, 1.0),
        random(&mut rng, 1, 6, -0.5, 0.5),
        random(&mut rng, 6, 4, -1.0, 1.0),
        random(&mut rng, 1, 4, -0.5, 0.5),
        random(&mut rng, 4, 1, -1.0, 1.0),
        random(&mut rng, 1, 1, -0.5, 0.5),
    ];
    let run = || {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = point.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = mlp(&mut tape, &vars).unwrap();
        let g = tape.backward(out).unwrap();
        vars.iter().map(|&v| g.get(&tape, v)).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn f32_tape_agrees_with_f64() {
    let mut t64 = Tape::<f64>::new();
    let mut t32 = Tape::<f32>::new();
    let x64 = t64.leaf(Tensor::row(vec![0.3, -1.2, 2.0]));
    let x32 = t32.leaf(Tensor::row(vec![0.3f32, -1.2, 2.0]));
    let y64 = t64.sin(x64).unwrap();
    let y64 = t64.sum(y64).unwrap();
    let y32 = t32.sin(x32).unwrap();
    let y32 = t32.sum(y32).unwrap();
    let g64 = t64.backward(y64).unwrap().get(&t64, x64);
    let g32 = t32.backward(y32).unwrap().get(&t32, x32);
    for (a, b) in g64.data().iter().zip(g32.data()) {
        assert!((a - f64::from(*b)).abs() < 1e-6);
    }
}
