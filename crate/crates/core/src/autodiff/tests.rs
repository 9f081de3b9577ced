use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent erf oracle: Maclaurin series, converges to machine precision
/// for the |x| <= 2 range used in tests.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn gelu_at_zero_is_zero() {
    assert_eq!(gelu_scalar(0.0), 0.0);
}

#[test]
fn gelu_is_identity_for_large_input() {
    assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-12);
}

#[test]
fn gelu_matches_erf_series_oracle() {
    for &x in &[1.0, -0.7, 0.3, 1.9] {
        let expected = 0.5 * x * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!(
            (gelu_scalar(x) - expected).abs() < 1e-12,
            "gelu({x}) = {} vs oracle {expected}",
            gelu_scalar(x)
        );
    }
}

#[test]
fn gelu_rejects_non_finite_input() {
    let mut tape = Tape::new();
    assert!(tape.leaf(Tensor::from_vec(vec![f64::NAN])).is_err());
    // Pushing infinity through the op surface is also rejected.
    assert!(tape.leaf(Tensor::from_vec(vec![f64::INFINITY])).is_err());
}

#[test]
fn rms_norm_of_ones_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 4], vec![1.0; 8]).unwrap()).unwrap();
    let g = tape.leaf(Tensor::from_vec(vec![1.0; 4])).unwrap();
    let y = tape.rms_norm(x, g, 0.0).unwrap();
    for v in tape.data(y).data() {
        assert!((v - 1.0).abs() < 1e-15);
    }
}

#[test]
fn rms_norm_is_scale_invariant() {
    let mut tape = Tape::new();
    let row = vec![0.3, -1.2, 2.5];
    let scaled: Vec<f64> = row.iter().map(|v| v * 37.5).collect();
    let x1 = tape.leaf(Tensor::new(vec![1, 3], row).unwrap()).unwrap();
    let x2 = tape.leaf(Tensor::new(vec![1, 3], scaled).unwrap()).unwrap();
    let g = tape.leaf(Tensor::from_vec(vec![1.0; 3])).unwrap();
    let y1 = tape.rms_norm(x1, g, 0.0).unwrap();
    let y2 = tape.rms_norm(x2, g, 0.0).unwrap();
    for (a, b) in tape.data(y1).data().iter().zip(tape.data(y2).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rms_norm_hand_oracle_row_3_4() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
    let g = tape.leaf(Tensor::from_vec(vec![1.0, 1.0])).unwrap();
    let y = tape.rms_norm(x, g, 0.0).unwrap();
    let r = 12.5f64.sqrt();
    assert!((tape.data(y).data()[0] - 3.0 / r).abs() < 1e-15);
    assert!((tape.data(y).data()[1] - 4.0 / r).abs() < 1e-15);
}

#[test]
fn rms_norm_unit_rms_property() {
    let mut r = rng(7);
    for _ in 0..10 {
        let mut tape = Tape::new();
        let d = 5;
        let x = tape.leaf(Tensor::uniform(&[3, d], -4.0, 4.0, &mut r)).unwrap();
        let g = tape.leaf(Tensor::from_vec(vec![1.0; d])).unwrap();
        let y = tape.rms_norm(x, g, 1e-30).unwrap();
        for row in tape.data(y).data().chunks(d) {
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
            assert!((rms - 1.0).abs() < 1e-9, "row rms {rms}");
        }
    }
}

#[test]
fn rms_norm_rejects_empty_axis() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 0], vec![]).unwrap()).unwrap();
    let g = tape.leaf(Tensor::from_vec(vec![])).unwrap();
    assert!(tape.rms_norm(x, g, 1e-6).is_err());
}

#[test]
fn huber_zero_residual() {
    assert_eq!(huber_scalar(2.0, 2.0, 1.0), 0.0);
}

#[test]
fn huber_quadratic_branch() {
    assert!((huber_scalar(1.5, 1.0, 1.0) - 0.125).abs() < 1e-15);
}

#[test]
fn huber_linear_branch_hand_oracle() {
    assert!((huber_scalar(4.0, 1.0, 1.0) - 2.5).abs() < 1e-15);
}

#[test]
fn huber_is_c1_at_the_knee() {
    let delta = 1.0;
    let h = 1e-7;
    // values meet
    let left = huber_scalar(delta - 1e-12, 0.0, delta);
    let right = huber_scalar(delta + 1e-12, 0.0, delta);
    assert!((left - right).abs() < 1e-9);
    // slopes meet
    let slope_left = (huber_scalar(delta, 0.0, delta) - huber_scalar(delta - h, 0.0, delta)) / h;
    let slope_right = (huber_scalar(delta + h, 0.0, delta) - huber_scalar(delta, 0.0, delta)) / h;
    assert!((slope_left - slope_right).abs() < 1e-6);
    assert!((slope_left - delta).abs() < 1e-6);
}

#[test]
fn backward_square_at_three() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
    let y = tape.mul(x, x).unwrap();
    tape.backward(y).unwrap();
    assert!((tape.grad(x).unwrap().data()[0] - 6.0).abs() < 1e-12);
}

#[test]
fn backward_constant_function_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let zero = tape.scale(x, 0.0).unwrap();
    let c = tape.leaf(Tensor::from_vec(vec![5.0, 5.0])).unwrap();
    let s = tape.add(zero, c).unwrap();
    let root = tape.sum_all(s).unwrap();
    tape.backward(root).unwrap();
    for v in tape.grad(x).unwrap().data() {
        assert_eq!(*v, 0.0);
    }
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    assert!(tape.backward(x).is_err());
}

#[test]
fn gradient_is_none_before_backward() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0)).unwrap();
    assert!(tape.grad(x).is_none());
}

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

/// Draw values bounded away from zero so kinked ops (relu, huber) are
/// checked off their non-differentiable points.
fn away_from_zero<R: Rng>(shape: &[usize], r: &mut R) -> Tensor {
    let mut t = Tensor::uniform(shape, -2.0, 2.0, r);
    for v in t.data_mut() {
        if v.abs() < 0.2 {
            *v += 0.25 * v.signum().max(0.0) * 2.0 - 0.25; // push off the kink
        }
        if v.abs() < 0.2 {
            *v = 0.3;
        }
    }
    t
}

#[test]
fn fd_elementwise_and_binary_ops() {
    let mut r = rng(11);
    for trial in 0..10 {
        let a = Tensor::uniform(&[2, 3], -2.0, 2.0, &mut r);
        let b = Tensor::uniform(&[2, 3], -2.0, 2.0, &mut r);
        let worst = check_gradients(&[a, b], FD_H, |t, ids| {
            let s = t.add(ids[0], ids[1])?;
            let d = t.sub(s, ids[1])?;
            let m = t.mul(d, ids[0])?;
            let n = t.neg(m)?;
            let sc = t.scale(n, 0.7)?;
            let e = t.exp(sc)?;
            t.sum_all(e)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_activations() {
    let mut r = rng(12);
    for trial in 0..10 {
        let x = away_from_zero(&[2, 4], &mut r);
        let worst = check_gradients(&[x], FD_H, |t, ids| {
            let g = t.gelu(ids[0])?;
            let s = t.silu(g)?;
            let sp = t.softplus(s)?;
            let rl = t.relu(sp)?; // softplus output > 0, so off the kink
            t.sum_all(rl)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_matmul_bias_and_gelu_chain() {
    let mut r = rng(13);
    for trial in 0..10 {
        let w = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut r);
        let x = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut r);
        let b = Tensor::uniform(&[4], -0.5, 0.5, &mut r);
        let worst = check_gradients(&[x, w, b], FD_H, |t, ids| {
            let y = t.matmul(ids[0], ids[1])?;
            let y = t.add_bias(y, ids[2])?;
            let y = t.gelu(y)?;
            t.sum_all(y)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_normalizations() {
    let mut r = rng(14);
    for trial in 0..10 {
        let x = Tensor::uniform(&[3, 5], -2.0, 2.0, &mut r);
        let gain = Tensor::uniform(&[5], 0.5, 1.5, &mut r);
        let bias = Tensor::uniform(&[5], -0.5, 0.5, &mut r);
        let worst = check_gradients(&[x, gain, bias], FD_H, |t, ids| {
            let a = t.rms_norm(ids[0], ids[1], 1e-5)?;
            let b = t.layer_norm(a, ids[1], ids[2], 1e-5)?;
            let c = t.softmax(b)?;
            t.sum_all(c)
        })
        .unwrap();
        // softmax rows sum to one so this composition needs a second head
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_softmax_weighted_readout() {
    let mut r = rng(15);
    for trial in 0..10 {
        let x = Tensor::uniform(&[2, 4], -2.0, 2.0, &mut r);
        let w = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut r);
        let worst = check_gradients(&[x, w], FD_H, |t, ids| {
            let s = t.softmax(ids[0])?;
            let m = t.mul(s, ids[1])?;
            t.sum_all(m)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_batch_norm_train_and_eval() {
    let mut r = rng(16);
    for trial in 0..10 {
        let x = Tensor::uniform(&[6, 3], -2.0, 2.0, &mut r);
        let gamma = Tensor::uniform(&[3], 0.5, 1.5, &mut r);
        let beta = Tensor::uniform(&[3], -0.5, 0.5, &mut r);
        let worst = check_gradients(&[x.clone(), gamma.clone(), beta.clone()], FD_H, |t, ids| {
            let (y, _, _) = t.batch_norm_train(ids[0], ids[1], ids[2], 1e-5)?;
            let y = t.silu(y)?;
            t.sum_all(y)
        })
        .unwrap();
        assert!(worst < FD_TOL, "train trial {trial}: rel err {worst}");

        let mean = vec![0.1, -0.2, 0.3];
        let var = vec![1.1, 0.9, 1.4];
        let worst = check_gradients(&[x.clone(), gamma, beta], FD_H, |t, ids| {
            let y = t.batch_norm_eval(ids[0], ids[1], ids[2], 1e-5, &mean, &var)?;
            let y = t.silu(y)?;
            t.sum_all(y)
        })
        .unwrap();
        assert!(worst < FD_TOL, "eval trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_concat_gather_reshape() {
    let mut r = rng(17);
    for trial in 0..10 {
        let a = Tensor::uniform(&[3, 2], -2.0, 2.0, &mut r);
        let b = Tensor::uniform(&[3, 3], -2.0, 2.0, &mut r);
        let worst = check_gradients(&[a, b], FD_H, |t, ids| {
            let c = t.concat(&[ids[0], ids[1]])?;
            let g = t.row_gather(c, &[2, 0, 0])?;
            let rs = t.reshape(g, &[5, 3])?;
            let e = t.gelu(rs)?;
            t.sum_all(e)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_huber_vector() {
    let mut r = rng(18);
    for trial in 0..10 {
        // residuals away from |r| = delta
        let mut pred = Tensor::uniform(&[5], -3.0, 3.0, &mut r);
        let target = vec![0.0; 5];
        for v in pred.data_mut() {
            if (v.abs() - 1.0).abs() < 0.1 {
                *v += 0.3;
            }
        }
        let worst = check_gradients(&[pred], FD_H, |t, ids| {
            let h = t.huber(ids[0], &target, 1.0)?;
            t.mean_all(h)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_mask_pool_mean() {
    let mut r = rng(19);
    for trial in 0..10 {
        let x = Tensor::uniform(&[2, 4, 3], -2.0, 2.0, &mut r);
        let mask = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let worst = check_gradients(&[x], FD_H, |t, ids| {
            let p = t.mask_pool_mean(ids[0], &mask)?;
            let e = t.silu(p)?;
            t.sum_all(e)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_ssm_scan() {
    let mut r = rng(20);
    for trial in 0..10 {
        let (bsz, t_len, ch, st) = (2, 3, 2, 2);
        let delta = Tensor::uniform(&[bsz, t_len, ch], 0.05, 0.8, &mut r);
        let a = Tensor::uniform(&[ch, st], -2.0, -0.2, &mut r);
        let b = Tensor::uniform(&[bsz, t_len, st], -1.0, 1.0, &mut r);
        let c = Tensor::uniform(&[bsz, t_len, st], -1.0, 1.0, &mut r);
        let x = Tensor::uniform(&[bsz, t_len, ch], -1.0, 1.0, &mut r);
        let worst = check_gradients(&[delta, a, b, c, x], FD_H, |t, ids| {
            let y = t.ssm_scan(ids[0], ids[1], ids[2], ids[3], ids[4])?;
            let e = t.silu(y)?;
            t.sum_all(e)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_segment_softmax() {
    let mut r = rng(21);
    for trial in 0..10 {
        let msg = Tensor::uniform(&[5, 3], -2.0, 2.0, &mut r);
        let beta = Tensor::scalar(r.gen_range(0.3..1.5));
        let dst = vec![0, 1, 1, 2, 1];
        let worst = check_gradients(&[msg, beta], FD_H, |t, ids| {
            let agg = t.segment_softmax(ids[0], ids[1], &dst, 4)?;
            let e = t.silu(agg)?;
            t.sum_all(e)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_row_scalars_and_scalar_elem() {
    let mut r = rng(22);
    for trial in 0..10 {
        let x = Tensor::uniform(&[4, 3], -2.0, 2.0, &mut r);
        let v = Tensor::uniform(&[3], 0.2, 1.5, &mut r);
        let scalars = vec![0.3, -0.7, 1.1, 0.0];
        let worst = check_gradients(&[x, v], FD_H, |t, ids| {
            let a = t.add_row_scalars(ids[0], &scalars)?;
            let soft = t.softmax(ids[1])?;
            let m = t.mul_scalar_elem(a, soft, 1)?;
            let e = t.gelu(m)?;
            t.sum_all(e)
        })
        .unwrap();
        assert!(worst < FD_TOL, "trial {trial}: rel err {worst}");
    }
}

#[test]
fn fd_sum_gelu_of_linear_map_matches_spec_example() {
    let mut r = rng(23);
    let w = Tensor::uniform(&[3, 3], -1.0, 1.0, &mut r);
    let x = Tensor::uniform(&[3, 1], -1.0, 1.0, &mut r);
    let worst = check_gradients(&[w, x], FD_H, |t, ids| {
        let y = t.matmul(ids[0], ids[1])?;
        let y = t.gelu(y)?;
        t.sum_all(y)
    })
    .unwrap();
    assert!(worst < FD_TOL, "rel err {worst}");
}

#[test]
fn optimizer_zero_gradient_leaves_params_unchanged() {
    let mut p = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
    let before = p.clone();
    let mut grads = vec![Tensor::zeros(&[3])];
    let mut state = AdamState::new(&[&p]);
    optimize_step(&mut [&mut p], &mut grads, &mut state, 0.1, 0.0, 1.0).unwrap();
    assert_eq!(p, before);
}

#[test]
fn clip_halves_gradients_at_twice_the_norm() {
    // global norm 4 (single tensor [4,0]) with clip 2 -> halved
    let mut grads = vec![Tensor::from_vec(vec![4.0, 0.0])];
    let norm = clip_global_norm(&mut grads, 2.0);
    assert!((norm - 4.0).abs() < 1e-12);
    assert!((grads[0].data()[0] - 2.0).abs() < 1e-12);
}

#[test]
fn clip_never_increases_norm() {
    let mut r = rng(29);
    for _ in 0..20 {
        let mut grads = vec![
            Tensor::uniform(&[3, 2], -2.0, 2.0, &mut r),
            Tensor::uniform(&[4], -2.0, 2.0, &mut r),
        ];
        let clip = r.gen_range(0.1..4.0);
        clip_global_norm(&mut grads, clip);
        let after: f64 = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(after <= clip + 1e-12, "norm {after} > clip {clip}");
    }
}

#[test]
fn adamw_scalar_trajectory_matches_hand_recurrence() {
    // Independent scalar AdamW recurrence, matched for three steps.
    let lr = 0.1;
    let wd = 0.01;
    let grads_seq = [0.5, -0.3, 0.8];
    let mut p = Tensor::scalar(1.0);
    let mut state = AdamState::new(&[&p]);

    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = 0.0;
    let mut v = 0.0;
    let mut p_ref = 1.0;
    for (i, &g) in grads_seq.iter().enumerate() {
        let t = (i + 1) as f64;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powf(t));
        let vhat = v / (1.0 - b2.powf(t));
        p_ref -= lr * (mhat / (vhat.sqrt() + eps) + wd * p_ref);

        let mut grads = vec![Tensor::scalar(g)];
        optimize_step(&mut [&mut p], &mut grads, &mut state, lr, wd, 0.0).unwrap();
        assert!(
            (p.data()[0] - p_ref).abs() < 1e-12,
            "step {i}: {} vs {p_ref}",
            p.data()[0]
        );
    }
}

#[test]
fn optimizer_rejects_shape_mismatch() {
    let mut p = Tensor::from_vec(vec![1.0, 2.0]);
    let mut grads = vec![Tensor::from_vec(vec![1.0])];
    let mut state = AdamState::new(&[&p]);
    assert!(optimize_step(&mut [&mut p], &mut grads, &mut state, 0.1, 0.0, 1.0).is_err());
}
