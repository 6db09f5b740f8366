use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qfreq::graph::SparseMatrix;
use qfreq::tensor::{Tape, Tensor, Var};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// Scalar function of three parameter tensors touching every differentiable op.
fn composite<'a>(tape: &mut Tape<'a>, s: &'a SparseMatrix, p: &[Var]) -> Var {
    let (x, w, b) = (p[0], p[1], p[2]);
    let h = tape.matmul(x, w).unwrap();
    let h = tape.add_broadcast_row(h, b).unwrap();
    let t = tape.tanh(h);
    let sg = tape.sigmoid(h);
    let sp = tape.softplus(h);
    let prod = tape.mul(t, sg).unwrap();
    let pos = tape.add_scalar(sp, 0.5);
    let q = tape.div(prod, pos).unwrap();
    let lg = tape.ln(pos);
    let e = tape.exp(t);
    let mixed = tape.sub(q, lg).unwrap();
    let cat = tape.concat_cols(&[mixed, e]).unwrap();
    let prop = tape.sparse_matmul(s, cat).unwrap();
    let sm = tape.softmax_rows(prop);
    let g = tape.gather_rows(sm, &[2, 0, 2, 1]).unwrap();
    let sc = tape.scale(g, 1.7);
    let cl = tape.clamp(cat, -0.9, 0.9);
    let a = tape.mean_all(sc);
    let c = tape.sum_all(cl);
    let target = tape.constant(Tensor::full(3, 2, 0.1));
    let r = tape.relu(h);
    let m = tape.squared_error_mean(r, target).unwrap();
    let ac = tape.add(a, c).unwrap();
    tape.add(ac, m).unwrap()
}

fn eval(s: &SparseMatrix, params: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let out = composite(&mut tape, s, &vars);
    tape.value(out).item()
}

fn mixing() -> SparseMatrix {
    SparseMatrix::from_rows(3, vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.3), (1, 0.4), (2, 0.3)], vec![(1, 0.6), (2, 0.4)]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tape_gradients_match_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = mixing();
        let params = vec![random(&mut rng, 3, 2, -1.0, 1.0), random(&mut rng, 2, 2, -1.0, 1.0), random(&mut rng, 1, 2, -0.5, 0.5)];
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
        let out = composite(&mut tape, &s, &vars);
        let grads = tape.backward(out).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let g = grads.get(*v);
            for i in 0..params[k].len() {
                let h = 1e-6;
                let mut up = params.clone();
                up[k].data_mut()[i] += h;
                let mut dn = params.clone();
                dn[k].data_mut()[i] -= h;
                let (fu, f0, fd) = (eval(&s, &up), eval(&s, &params), eval(&s, &dn));
                // relu and clamp kinks inside the stencil show up as one-sided slopes that disagree
                let (fwd, bwd) = ((fu - f0) / h, (f0 - fd) / h);
                if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
                    continue;
                }
                let numeric = (fu - fd) / (2.0 * h);
                let analytic = g.data()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                prop_assert!(rel <= 1e-4, "param {k}[{i}]: tape {analytic}, numeric {numeric}, rel {rel}");
            }
        }
    }

    #[test]
    fn matmul_agrees_with_naive(seed in any::<u64>(), m in 1usize..7, k in 1usize..7, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, m, k, -2.0, 2.0);
        let b = random(&mut rng, k, n, -2.0, 2.0);
        let c = a.matmul(&b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|t| a.get(i, t) * b.get(t, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, rows, cols, -30.0, 30.0));
        let y = tape.softmax_rows(x);
        let out = tape.value(y);
        for r in 0..rows {
            let sum: f64 = out.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(out.row(r).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    assert!(tape.matmul(a, b).is_err());
    assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
}
