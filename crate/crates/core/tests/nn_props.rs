use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sidflow_core::nn::{self, fd, forward_tape, Activation, Mat, NetParams, NetSpec, Tape, Var};
use sidflow_core::param::Kind;
use sidflow_core::Error;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs `build` as a loss over a flat vector, once on the tape and once per
/// probe for central differences.
fn fd_check(x: &[f64], build: &dyn Fn(&Tape<f64>, Var) -> Var, seed: u64) -> f64 {
    let (_, g) = nn::grad(x, |t, p| Ok(build(t, p))).unwrap();
    let f = |y: &[f64]| {
        let t = Tape::new();
        let p = t.constant(Mat::new(1, y.len(), y.to_vec()));
        let out = build(&t, p);
        t.scalar_value(out)
    };
    let r = fd::check(f, x, &g, 100, 1e-5, &mut ChaCha8Rng::seed_from_u64(seed));
    r.max_rel_err
}

#[test]
fn quadratic_loss_gradient_is_the_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = normals(&mut rng, 50);
    let (v, g) = nn::grad(&x, |t, p| Ok(t.scale(t.sum(t.square(p)), 0.5))).unwrap();
    assert_eq!(g, x);
    assert!((v - 0.5 * x.iter().map(|a| a * a).sum::<f64>()).abs() < 1e-12);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // 6×4 matrix A, 4×3 matrix B, a 3-bias, a 6×3 matrix C and a 5×4 table.
    let x = normals(&mut rng, 24 + 12 + 3 + 18 + 20);
    let scales: Vec<f64> = (0..6).map(|i| 0.5 + i as f64 * 0.3).collect();
    let jac = normals(&mut rng, 6 * 2 * 3);
    let build = move |t: &Tape<f64>, p: Var| -> Var {
        let a = t.view(p, 0, 6, 4).unwrap();
        let b = t.view(p, 24, 4, 3).unwrap();
        let bias = t.view(p, 36, 1, 3).unwrap();
        let c = t.view(p, 39, 6, 3).unwrap();
        let table = t.view(p, 57, 5, 4).unwrap();
        let h = t.add_row(t.matmul(a, b).unwrap(), bias).unwrap();
        let s = t.silu(h);
        let sp = t.softplus(t.sub(c, s).unwrap());
        let m = t.mul(sp, t.add(h, c).unwrap()).unwrap();
        let r = t.scale_rows(m, &scales).unwrap();
        let g = t.gather_rows(table, &[4, 0, 0, 2, 3, 1]).unwrap();
        let cat = t.concat_cols(&[r, g]).unwrap();
        let sq = t.square(cat);
        let rs = t.sum_cols(sq);
        // Custom per-row linear map from 3 columns of `m` to 2 outputs.
        let mut val = Mat::zeros(6, 2);
        let mv = t.value(m);
        for i in 0..6 {
            for o in 0..2 {
                val.data[i * 2 + o] = (0..3).map(|q| jac[i * 6 + o * 3 + q] * mv.data[i * 3 + q]).sum();
            }
        }
        let rl = t.row_linear(m, val, jac.clone()).unwrap();
        let tail = t.sum(t.square(rl));
        let total = t.add(t.sum(rs), tail).unwrap();
        t.scale(total, 0.7)
    };
    let err = fd_check(&x, &build, 3);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn full_network_matches_finite_differences_in_params_and_inputs() {
    let spec = NetSpec {
        hidden: vec![16, 12],
        ..NetSpec::standard(2, Some(3), Kind::Vfm)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = NetParams::<f64>::init(&spec, &mut rng).unwrap();
    for v in p.values.iter_mut() {
        *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
    }
    let n = 5;
    let x = normals(&mut rng, n * 2);
    let t = [0.05, 0.3, 0.5, 0.8, 0.97];
    let c = [Some(0), None, Some(2), Some(1), None];
    let layout = p.layout.clone();
    let np = p.len();
    // Joint vector (params, inputs) so a single check covers both paths.
    let mut joint = p.values.clone();
    joint.extend(&x);
    let spec2 = spec.clone();
    let build = move |tape: &Tape<f64>, v: Var| -> Var {
        let pv = tape.view(v, 0, 1, np).unwrap();
        let xv = tape.view(v, np, n, 2).unwrap();
        let out = forward_tape(&spec2, &layout, tape, pv, xv, &t, &c).unwrap();
        tape.sum(tape.square(tape.sub(out, xv).unwrap()))
    };
    let (_, g) = nn::grad(&joint, |t, v| Ok(build(t, v))).unwrap();
    let f = |y: &[f64]| {
        let tape = Tape::new();
        let v = tape.constant(Mat::new(1, y.len(), y.to_vec()));
        tape.scalar_value(build(&tape, v))
    };
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let params = fd::check(f, &joint, &g, 100, 1e-5, &mut r);
    assert!(params.max_rel_err < 1e-4, "{params:?}");
    // Every input coordinate explicitly.
    for i in np..joint.len() {
        let mut up = joint.clone();
        up[i] += 1e-5;
        let mut dn = joint.clone();
        dn[i] -= 1e-5;
        let num = (f(&up) - f(&dn)) / 2e-5;
        assert!(fd::rel_err(g[i], num, 1e-6) < 1e-4, "input {i}: {} vs {num}", g[i]);
    }
}

#[test]
fn softplus_network_gradients() {
    let spec = NetSpec {
        hidden: vec![8, 8, 8],
        activation: Activation::Softplus,
        ..NetSpec::standard(1, None, Kind::X0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = NetParams::<f64>::init(&spec, &mut rng).unwrap();
    for v in p.values.iter_mut() {
        *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
    }
    let layout = p.layout.clone();
    let x = normals(&mut rng, 7);
    let t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
    let build = move |tape: &Tape<f64>, v: Var| -> Var {
        let xv = tape.constant(Mat::new(7, 1, x.clone()));
        let out = forward_tape(&spec, &layout, tape, v, xv, &t, &[]).unwrap();
        tape.sum(tape.square(out))
    };
    assert!(fd_check(&p.values, &build, 7) < 1e-4);
}

#[test]
fn unused_block_gets_zero_gradient() {
    let x = vec![1.0, 2.0, 3.0, 4.0];
    let (_, g) = nn::grad(&x, |t, p| {
        let a = t.view(p, 0, 1, 2)?;
        Ok(t.sum(t.square(a)))
    })
    .unwrap();
    assert_eq!(g, vec![2.0, 4.0, 0.0, 0.0]);
}

#[test]
fn stop_gradient_cuts_the_path() {
    let x = vec![0.3f64, -0.7];
    let (v, g) = nn::grad(&x, |t, p| Ok(t.sum(t.square(nn::stop_gradient(t, t.silu(p)))))).unwrap();
    assert_eq!(g, vec![0.0, 0.0]);
    assert!(v > 0.0);
    // Two chained maps: with sg the gradient only sees the outer stage.
    let chain = |sg: bool| {
        nn::grad(&x, |t, p| {
            let first = t.scale(p, 2.0);
            let inner = if sg { nn::stop_gradient(t, first) } else { first };
            let second = t.mul(inner, p)?;
            Ok(t.sum(second))
        })
        .unwrap()
        .1
    };
    let with = chain(true);
    let without = chain(false);
    assert_ne!(with, without);
    // d/dp Σ sg(2p)·p = 2p ; without sg it is 4p.
    for i in 0..2 {
        assert!((with[i] - 2.0 * x[i]).abs() < 1e-15);
        assert!((without[i] - 4.0 * x[i]).abs() < 1e-15);
    }
}

#[test]
fn non_scalar_loss_is_a_contract_error() {
    let r = nn::grad(&[1.0, 2.0], |t, p| Ok(t.square(p)));
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn forward_is_deterministic_given_seed() {
    let spec = NetSpec::standard(2, Some(2), Kind::X0);
    let a = NetParams::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = NetParams::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}
