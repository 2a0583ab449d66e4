mod common;

use common::{assert_close, randn, t};
use maxvit::ops::{self, matmul, softmax_lastdim};
use maxvit::tensor::strides;
use maxvit::{grad_check, Graph, Tape, Tensor};

fn matmul_loops(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.get(&[i, p]) * b.get(&[p, j]);
            }
        }
    }
    out
}

#[test]
fn construction_checks_length_and_strides() {
    assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
    let x = Tensor::<f32>::zeros(&[2, 3, 4]);
    assert_eq!(x.len(), 24);
}

#[test]
fn matmul_examples() {
    let eye = Tensor::<f64>::eye(2);
    assert_eq!(matmul(&eye, &eye).unwrap(), eye);

    let a = t(&[2, 2], &[1., 2., 3., 4.]);
    let b = t(&[2, 1], &[5., 6.]);
    let y = matmul(&a, &b).unwrap();
    assert_eq!(y.data(), &matmul_loops(&a, &b)[..]);
    assert_eq!(y.data(), &[17., 39.]);

    let y = matmul(&randn(&[2, 3, 4], 1, 1.0), &randn(&[2, 4, 5], 2, 1.0)).unwrap();
    assert_eq!(y.shape(), &[2, 3, 5]);
}

#[test]
fn matmul_random_against_loops() {
    let (a, b) = (randn(&[7, 13], 3, 1.0), randn(&[13, 5], 4, 1.0));
    assert_close(matmul(&a, &b).unwrap().data(), &matmul_loops(&a, &b), 1e-12);
}

#[test]
fn softmax_examples() {
    let y = softmax_lastdim(&t(&[3], &[0., 0., 0.])).unwrap();
    assert_close(y.data(), &[1. / 3.; 3], 1e-12);

    let y = softmax_lastdim(&t(&[2], &[1000., 0.])).unwrap();
    assert!(y.all_finite());
    assert_close(y.data(), &[1., 0.], 1e-6);

    let (e1, e2) = (1f64.exp(), 2f64.exp());
    let y = softmax_lastdim(&t(&[2], &[1., 2.])).unwrap();
    assert_close(y.data(), &[e1 / (e1 + e2), e2 / (e1 + e2)], 1e-12);
    assert_close(y.data(), &[0.26894, 0.73106], 1e-5);
}

#[test]
fn swapaxes_examples() {
    let x = randn(&[2, 3, 4], 5, 1.0);
    assert!(x.swapaxes(1, 2).unwrap().swapaxes(1, 2).unwrap().bitwise_eq(&x));
    assert_eq!(x.swapaxes(0, 2).unwrap().shape(), &[4, 3, 2]);

    let m = t(&[2, 2], &[1., 2., 3., 4.]);
    let want: Vec<f64> = (0..4).map(|i| m.get(&[i % 2, i / 2])).collect();
    assert_eq!(m.swapaxes(0, 1).unwrap().data(), &want[..]);
    assert_eq!(want, vec![1., 3., 2., 4.]);
}

#[test]
fn forward_ops_stay_finite_on_extreme_inputs() {
    let x = t(&[2, 3], &[1e4, -1e4, 0., 700., -700., 30.]);
    assert!(ops::gelu(&x).all_finite());
    assert!(ops::sigmoid(&x).all_finite());
    assert!(ops::silu(&x).all_finite());
    assert!(softmax_lastdim(&x).unwrap().all_finite());
}

#[test]
fn grad_check_sum_of_squares() {
    let w = randn(&[3, 4], 6, 1.0);
    let rep = grad_check(&[w.clone()], 1e-5, |g, v| {
        let sq = g.mul(&v[0], &v[0])?;
        g.sum(&sq)
    })
    .unwrap();
    assert!(rep.max_rel_error < 1e-9, "{}", rep.max_rel_error);
    assert_close(rep.analytic[0].data(), &w.map(|x| 2.0 * x).to_vec(), 1e-12);
}

#[test]
fn grad_check_softmax_sum_is_flat() {
    let rep = grad_check(&[randn(&[2, 5], 7, 1.0)], 1e-5, |g, v| {
        let s = g.softmax(&v[0])?;
        g.sum(&s)
    })
    .unwrap();
    assert!(rep.max_abs_error < 1e-6);
    assert!(rep.analytic[0].data().iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn grad_check_two_layer_mlp_cross_entropy() {
    let x = randn(&[4, 6], 8, 1.0);
    let params = [randn(&[6, 8], 9, 0.5), randn(&[8], 10, 0.1), randn(&[8, 3], 11, 0.5), randn(&[3], 12, 0.1)];
    let rep = grad_check(&params, 1e-5, |g, v| {
        let x = g.leaf(x.clone());
        let h = g.linear(&x, &v[0], Some(&v[1]))?;
        let h = g.gelu(&h)?;
        let logits = g.linear(&h, &v[2], Some(&v[3]))?;
        g.cross_entropy(&logits, &[0, 2, 1, 2])
    })
    .unwrap();
    assert!(rep.max_rel_error < 1e-4, "{}", rep.max_rel_error);
}

#[test]
fn unused_leaves_get_exact_zero_gradient() {
    let mut g = Tape::<f64>::new();
    let a = g.leaf(randn(&[3], 13, 1.0));
    let unused = g.leaf(randn(&[2, 2], 14, 1.0));
    let sq = g.mul(&a, &a).unwrap();
    let out = g.sum(&sq).unwrap();
    let grads = g.backward(out).unwrap();
    assert!(grads.reached(a));
    assert!(!grads.reached(unused));
    assert_eq!(grads.wrt(unused), Tensor::zeros(&[2, 2]));
}

#[test]
fn grad_check_rejects_out_of_range_step() {
    assert!(grad_check(&[randn(&[2], 15, 1.0)], 1e-2, |g, v| g.sum(&v[0])).is_err());
}
