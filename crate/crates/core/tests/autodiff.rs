use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ritini::autodiff::{gradient_check, Tape, Tensor, Var};
use ritini::Result;

const H: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

/// Reduces `v` to a scalar through a fixed random weighting so every
/// entry of `v` gets a distinct upstream gradient.
fn weigh(t: &Tape, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = t.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = t.constant(random_tensor(&mut rng, r, c, -1.0, 1.0));
    Ok(t.sum(t.mul(v, w)?))
}

#[derive(Clone, Copy, Debug)]
enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    LinComb,
    Tanh,
    Exp,
    Sqrt,
    Abs,
    MaskedSoftmax,
    Softmax,
    ConcatRows,
    ConcatCols,
    Transpose,
    Reshape,
    GatherRows,
    Sum,
    SquaredNorm,
}

const OPS: [Op; 20] = [
    Op::MatMul,
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::AddRow,
    Op::Scale,
    Op::LinComb,
    Op::Tanh,
    Op::Exp,
    Op::Sqrt,
    Op::Abs,
    Op::MaskedSoftmax,
    Op::Softmax,
    Op::ConcatRows,
    Op::ConcatCols,
    Op::Transpose,
    Op::Reshape,
    Op::GatherRows,
    Op::Sum,
    Op::SquaredNorm,
];

/// Inputs and a scalar-valued function exercising `op` once.
fn case(op: Op, r: usize, c: usize, seed: u64) -> (Vec<Tensor>, Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_tensor(&mut rng, r, c, -2.0, 2.0);
    let b = random_tensor(&mut rng, r, c, -2.0, 2.0);
    match op {
        Op::MatMul => {
            let k = random_tensor(&mut rng, c, r + 1, -2.0, 2.0);
            (vec![a, k], Box::new(move |t, v| weigh(t, t.matmul(v[0], v[1])?, seed)))
        }
        Op::Add => (vec![a, b], Box::new(move |t, v| weigh(t, t.add(v[0], v[1])?, seed))),
        Op::Sub => (vec![a, b], Box::new(move |t, v| weigh(t, t.sub(v[0], v[1])?, seed))),
        Op::Mul => (vec![a, b], Box::new(move |t, v| weigh(t, t.mul(v[0], v[1])?, seed))),
        Op::AddRow => {
            let row = random_tensor(&mut rng, 1, c, -2.0, 2.0);
            (vec![a, row], Box::new(move |t, v| weigh(t, t.add_row(v[0], v[1])?, seed)))
        }
        Op::Scale => (vec![a], Box::new(move |t, v| weigh(t, t.scale(v[0], -1.7), seed))),
        Op::LinComb => (
            vec![a, b],
            Box::new(move |t, v| weigh(t, t.lincomb(&[(v[0], 0.3), (v[1], -2.0), (v[0], 1.1)])?, seed)),
        ),
        Op::Tanh => (vec![a], Box::new(move |t, v| weigh(t, t.tanh(v[0]), seed))),
        Op::Exp => (vec![a], Box::new(move |t, v| weigh(t, t.exp(v[0]), seed))),
        Op::Sqrt => {
            let pos = random_tensor(&mut rng, r, c, 0.5, 3.0);
            (vec![pos], Box::new(move |t, v| weigh(t, t.sqrt(v[0]), seed)))
        }
        Op::Abs => {
            // Keep entries away from the kink at zero.
            let away = a.map(|x| if x.abs() < 0.2 { x.signum() * 0.2 + x } else { x });
            (vec![away], Box::new(move |t, v| weigh(t, t.abs(v[0]), seed)))
        }
        Op::MaskedSoftmax => {
            let mut mask: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.6)).collect();
            for i in 0..r {
                mask[i * c + rng.random_range(0..c)] = true;
            }
            let mask = Rc::new(mask);
            (
                vec![a],
                Box::new(move |t, v| weigh(t, t.masked_softmax(v[0], mask.clone())?, seed)),
            )
        }
        Op::Softmax => (vec![a], Box::new(move |t, v| weigh(t, t.softmax(v[0])?, seed))),
        Op::ConcatRows => {
            let other = random_tensor(&mut rng, r + 1, c, -2.0, 2.0);
            (vec![a, other], Box::new(move |t, v| weigh(t, t.concat_rows(&[v[0], v[1], v[0]])?, seed)))
        }
        Op::ConcatCols => {
            let other = random_tensor(&mut rng, r, c + 2, -2.0, 2.0);
            (vec![a, other], Box::new(move |t, v| weigh(t, t.concat_cols(&[v[1], v[0]])?, seed)))
        }
        Op::Transpose => (vec![a], Box::new(move |t, v| weigh(t, t.transpose(v[0]), seed))),
        Op::Reshape => (vec![a], Box::new(move |t, v| weigh(t, t.reshape(v[0], c, r)?, seed))),
        Op::GatherRows => {
            let idx: Rc<Vec<usize>> = Rc::new((0..r + 3).map(|_| rng.random_range(0..r)).collect());
            (vec![a], Box::new(move |t, v| weigh(t, t.gather_rows(v[0], idx.clone())?, seed)))
        }
        Op::Sum => (vec![a], Box::new(move |t, v| Ok(t.scale(t.sum(v[0]), 0.7)))),
        Op::SquaredNorm => (vec![a], Box::new(move |t, v| Ok(t.squared_norm(v[0])))),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_op_matches_finite_differences(
        op in 0usize..OPS.len(), r in 1usize..4, c in 1usize..4, seed in any::<u64>()
    ) {
        let (point, f) = case(OPS[op], r, c, seed);
        let err = gradient_check(|t, v| f(t, v), &point, H).unwrap();
        prop_assert!(err < 1e-5, "{:?} {}x{}: {}", OPS[op], r, c, err);
    }

    #[test]
    fn gradients_are_linear(
        op_f in 0usize..OPS.len(), op_g in 0usize..OPS.len(), a in -3.0f64..3.0, b in -3.0f64..3.0,
        seed in any::<u64>()
    ) {
        // f and g read disjoint leaves; the combined gradient must be the
        // same combination of the separate ones.
        let (pf, f) = case(OPS[op_f], 2, 2, seed);
        let (pg, g) = case(OPS[op_g], 2, 2, seed.wrapping_add(1));
        let grads = |h: &dyn Fn(&Tape, &[Var], &[Var]) -> Result<Var>| {
            let t = Tape::new();
            let vf: Vec<Var> = pf.iter().map(|x| t.leaf(x.clone())).collect();
            let vg: Vec<Var> = pg.iter().map(|x| t.leaf(x.clone())).collect();
            let out = h(&t, &vf, &vg).unwrap();
            let gr = t.backward(out).unwrap();
            vf.iter().chain(&vg).map(|&v| gr.get(v)).collect::<Vec<_>>()
        };
        let gf = grads(&|t, vf, _| f(t, vf));
        let gg = grads(&|t, _, vg| g(t, vg));
        let gc = grads(&|t, vf, vg| {
            let x = f(t, vf)?;
            let y = g(t, vg)?;
            t.lincomb(&[(x, a), (y, b)])
        });
        for ((x, y), z) in gf.iter().zip(&gg).zip(&gc) {
            for ((p, q), s) in x.data().iter().zip(y.data()).zip(z.data()) {
                let want = a * p + b * q;
                prop_assert!((want - s).abs() <= 1e-12 * (1.0 + want.abs()), "{} vs {}", want, s);
            }
        }
    }

    #[test]
    fn masked_softmax_support_and_normalization(
        r in 1usize..6, c in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, r, c, -30.0, 30.0);
        let mut mask: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.5)).collect();
        for i in 0..r {
            mask[i * c + rng.random_range(0..c)] = true;
        }
        let t = Tape::new();
        let y = t.masked_softmax(t.leaf(x), Rc::new(mask.clone())).unwrap();
        let y = t.value(y);
        for i in 0..r {
            let mut total = 0.0;
            for j in 0..c {
                let v = y.get(i, j);
                if mask[i * c + j] {
                    prop_assert!(v >= 0.0);
                    total += v;
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn three_layer_tanh_network() {
    // 3 -> 4 -> 4 -> 1 with biases: 12 + 4 + 16 + 4 + 4 + 1 = 41 parameters,
    // plus a 3x3 trainable input batch makes 50.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shapes = [(3, 3), (3, 4), (1, 4), (4, 4), (1, 4), (4, 1), (1, 1)];
    let point: Vec<Tensor> = shapes
        .iter()
        .map(|&(r, c)| random_tensor(&mut rng, r, c, -1.0, 1.0))
        .collect();
    assert_eq!(point.iter().map(Tensor::len).sum::<usize>(), 9 + 12 + 4 + 16 + 4 + 4 + 1);
    let err = gradient_check(
        |t, v| {
            let h1 = t.tanh(t.add_row(t.matmul(v[0], v[1])?, v[2])?);
            let h2 = t.tanh(t.add_row(t.matmul(h1, v[3])?, v[4])?);
            let out = t.add_row(t.matmul(h2, v[5])?, v[6])?;
            Ok(t.squared_norm(t.tanh(out)))
        },
        &point,
        H,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn masked_softmax_attention_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 4;
    let mask = Rc::new(vec![
        true, true, false, false, //
        false, true, true, true, //
        true, false, true, false, //
        false, false, false, true,
    ]);
    let point = vec![
        random_tensor(&mut rng, n, 3, -1.0, 1.0),
        random_tensor(&mut rng, 3, n, -1.0, 1.0),
        random_tensor(&mut rng, n, 1, -1.0, 1.0),
    ];
    let err = gradient_check(
        |t, v| {
            let scores = t.tanh(t.matmul(v[0], v[1])?);
            let att = t.masked_softmax(scores, mask.clone())?;
            let agg = t.matmul(att, v[2])?;
            Ok(t.squared_norm(agg))
        },
        &point,
        H,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}
