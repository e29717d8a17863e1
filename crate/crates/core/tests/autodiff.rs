mod oracles;

use anticipatr::tensorkit::{Primitive, Tape, Tensor, Var};
use oracles::{fd_grad, max_rel_err, random_vec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Builds `Σ c ⊙ op(leaves)` on a fresh tape and returns (value, grads).
fn run(op: Primitive, inputs: &[Tensor], weights: &Tensor) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = tape.apply(op, &leaves).unwrap();
    let out = if tape.value(y).is_scalar() {
        y
    } else {
        let c = tape.constant(weights.clone());
        let weighted = tape.mul(y, c).unwrap();
        tape.sum(weighted)
    };
    let grads = tape.backward(out).unwrap();
    (
        tape.value(out).item().unwrap(),
        leaves.iter().map(|&l| grads.get(l).to_vec()).collect(),
    )
}

fn check_primitive(op: Primitive, shapes: &[Vec<usize>], positive: bool, rng: &mut ChaCha8Rng) {
    let sample = |shape: &Vec<usize>, rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                // Stay clear of the ReLU kink and of log's domain edge.
                let mag = rng.random_range(0.2..1.5);
                if positive || rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        Tensor::new(shape.clone(), data).unwrap()
    };
    let inputs: Vec<Tensor> = shapes.iter().map(|s| sample(s, rng)).collect();
    let out_len = {
        let mut tape = Tape::new();
        let l: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = tape.apply(op, &l).unwrap();
        tape.value(y).shape().to_vec()
    };
    let weights = Tensor::new(out_len.clone(), random_vec(out_len.iter().product(), 1.0, rng)).unwrap();
    let (_, analytic) = run(op, &inputs, &weights);

    for (which, input) in inputs.iter().enumerate() {
        let f = |x: &[f64]| {
            let mut probe = inputs.clone();
            probe[which] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            run(op, &probe, &weights).0
        };
        let numeric = fd_grad(f, input.data(), H);
        let err = max_rel_err(&analytic[which], &numeric, 1e-3);
        assert!(err < TOL, "{} operand {which}: relative error {err:e}", op.name());
    }
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        check_primitive(Primitive::MatVec, &[vec![3, 4], vec![4]], false, &mut rng);
        check_primitive(Primitive::Add, &[vec![5], vec![5]], false, &mut rng);
        check_primitive(Primitive::Mul, &[vec![5], vec![5]], false, &mut rng);
        check_primitive(Primitive::Sigmoid, &[vec![6]], false, &mut rng);
        check_primitive(Primitive::Tanh, &[vec![6]], false, &mut rng);
        check_primitive(Primitive::Relu, &[vec![6]], false, &mut rng);
        check_primitive(Primitive::Exp, &[vec![6]], false, &mut rng);
        check_primitive(Primitive::Log, &[vec![6]], true, &mut rng);
        check_primitive(Primitive::Sum, &[vec![2, 3]], false, &mut rng);
        check_primitive(Primitive::Mean, &[vec![2, 3]], false, &mut rng);
    }
}

/// A random five-operation graph over two vector leaves and one matrix leaf.
fn random_graph(seed: u64, leaves: &[Tensor]) -> (f64, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let w = vars[2];
    let mut pool = vec![vars[0], vars[1]];
    for _ in 0..5 {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let next = match rng.random_range(0..7) {
            0 => tape.add(a, b).unwrap(),
            1 => tape.mul(a, b).unwrap(),
            2 => tape.sigmoid(a),
            3 => tape.tanh(a),
            4 => tape.matvec(w, a).unwrap(),
            5 => {
                let s = tape.sigmoid(a);
                tape.log(s).unwrap()
            }
            _ => {
                let t = tape.tanh(a);
                tape.exp(t)
            }
        };
        pool.push(next);
    }
    let last = *pool.last().unwrap();
    let out = tape.sum(last);
    let grads = tape.backward(out).unwrap();
    (
        tape.value(out).item().unwrap(),
        vars.iter().map(|&v| grads.get(v).to_vec()).collect(),
    )
}

#[test]
fn random_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..40 {
        let leaves = vec![
            Tensor::vector(random_vec(4, 1.0, &mut rng)).unwrap(),
            Tensor::vector(random_vec(4, 1.0, &mut rng)).unwrap(),
            Tensor::matrix(4, 4, random_vec(16, 0.8, &mut rng)).unwrap(),
        ];
        let (_, analytic) = random_graph(seed, &leaves);
        for which in 0..leaves.len() {
            let f = |x: &[f64]| {
                let mut probe = leaves.clone();
                probe[which] = Tensor::new(leaves[which].shape().to_vec(), x.to_vec()).unwrap();
                random_graph(seed, &probe).0
            };
            let numeric = fd_grad(f, leaves[which].data(), H);
            let err = max_rel_err(&analytic[which], &numeric, 1e-3);
            assert!(err < TOL, "graph {seed} leaf {which}: relative error {err:e}");
        }
    }
}

#[test]
fn composites_lower_to_primitives() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, -2.0]).unwrap());
    let before = tape.len();
    let s = tape.scale(a, 3.0);
    // One constant plus one mul.
    assert_eq!(tape.len(), before + 2);
    assert_eq!(tape.value(s).data(), &[3.0, -6.0]);

    let b = tape.leaf(Tensor::vector(vec![3.0, 4.0]).unwrap());
    let c = tape.leaf(Tensor::vector(vec![5.0, 0.0]).unwrap());
    let pooled = tape.avgpool(&[a, b, c]).unwrap();
    assert_eq!(tape.value(pooled).data(), &[3.0, 2.0 / 3.0]);
    let out = tape.sum(pooled);
    let g = tape.backward(out).unwrap();
    for v in [a, b, c] {
        for &x in g.get(v).data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn backward_needs_scalar_output() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let e = tape.exp(a);
    assert!(tape.backward(e).is_err());
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let b = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
    assert!(tape.add(a, b).is_err());
    let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
    assert!(tape.matvec(w, b).is_err());
}

#[test]
fn constants_get_no_gradient() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let k = tape.constant(Tensor::vector(vec![3.0, 4.0]).unwrap());
    let m = tape.mul(a, k).unwrap();
    let out = tape.sum(m);
    let g = tape.backward(out).unwrap();
    assert_eq!(g.get(a).data(), &[3.0, 4.0]);
    assert!(!g.reached(k));
}

proptest! {
    #[test]
    fn sum_gradient_is_ones(data in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let mut tape = Tape::new();
        let n = data.len();
        let a = tape.leaf(Tensor::vector(data).unwrap());
        let out = tape.sum(a);
        let g = tape.backward(out).unwrap();
        prop_assert_eq!(g.get(a).to_vec(), vec![1.0; n]);
    }

    #[test]
    fn mean_gradient_is_uniform(data in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        let mut tape = Tape::new();
        let n = data.len();
        let a = tape.leaf(Tensor::vector(data).unwrap());
        let out = tape.mean(a);
        let g = tape.backward(out).unwrap();
        for x in g.get(a).to_vec() {
            prop_assert!((x - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_is_linear_in_output_scale(data in prop::collection::vec(-3.0f64..3.0, 1..10), c in 0.1f64..5.0) {
        let grad_of = |scale: f64| {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::vector(data.clone()).unwrap());
            let t = tape.tanh(a);
            let s = tape.sum(t);
            let out = tape.scale(s, scale);
            tape.backward(out).unwrap().get(a).to_vec()
        };
        let base = grad_of(1.0);
        let scaled = grad_of(c);
        for (b, s) in base.iter().zip(&scaled) {
            prop_assert!((b * c - s).abs() < 1e-12);
        }
    }
}
