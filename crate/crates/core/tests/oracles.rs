//! Library results checked against independent, deliberately naive
//! implementations.

use std::f64::consts::PI;

use active_kspace::ddqn::{huber, td_loss, td_loss_and_gradient, TdBatch};
use active_kspace::metrics::{
    auc, mean_ci95, mse, nmse, paired_t_test, psnr, ssim, TTest, SSIM_K1, SSIM_K2, SSIM_WINDOW,
};
use active_kspace::nn::{adam_step, AdamConfig, AdamState, Mlp};
use active_kspace::transforms::{Complex, Dft2, Image, KSpace};
use approx::assert_relative_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image<f64> {
    Image::from_fn(h, w, |_| rng.random::<f64>()).unwrap()
}

/// `Y[u, v] = (HW)^-1/2 sum x[m, n] exp(-2 pi i ((u - H/2) m / H + (v - W/2) n / W))`.
fn naive_centered_dft(x: &Image<f64>) -> Array2<Complex<f64>> {
    let (h, w) = (x.height(), x.width());
    let scale = 1.0 / ((h * w) as f64).sqrt();
    Array2::from_shape_fn((h, w), |(u, v)| {
        let fu = u as f64 - (h / 2) as f64;
        let fv = v as f64 - (w / 2) as f64;
        let mut acc = Complex::new(0.0, 0.0);
        for m in 0..h {
            for n in 0..w {
                let phase = -2.0 * PI * (fu * m as f64 / h as f64 + fv * n as f64 / w as f64);
                acc += Complex::from_polar(x.pixels()[[m, n]], phase);
            }
        }
        acc * scale
    })
}

#[test]
fn dft_matches_naive_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(8..=13), 2 * rng.random_range(4..=7));
        let x = random_image(h, w, &mut rng);
        let fast = Dft2::new(h, w).forward(&x).unwrap();
        let naive = naive_centered_dft(&x);
        let err: f64 = fast
            .data()
            .iter()
            .zip(&naive)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let norm: f64 = naive.iter().map(|c| c.norm_sqr()).sum();
        assert!(
            (err / norm).sqrt() < 1e-12,
            "{h}x{w}: {}",
            (err / norm).sqrt()
        );
    }
}

#[test]
fn inverse_of_naive_spectrum_recovers_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_image(10, 12, &mut rng);
    let y = KSpace::new(naive_centered_dft(&x)).unwrap();
    let back = Dft2::new(10, 12).inverse(&y).unwrap();
    for (c, &v) in back.complex_image().iter().zip(x.pixels()) {
        assert!((c.re - v).abs() < 1e-12 && c.im.abs() < 1e-12);
    }
}

/// Direct per-window SSIM with sample (n - 1) variances.
fn naive_ssim(x: &Array2<f64>, y: &Array2<f64>, range: f64) -> f64 {
    let k = SSIM_WINDOW;
    let (h, w) = x.dim();
    let n = (k * k) as f64;
    let (c1, c2) = ((SSIM_K1 * range).powi(2), (SSIM_K2 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let px: Vec<f64> = (0..k * k).map(|t| x[[i + t / k, j + t % k]]).collect();
            let py: Vec<f64> = (0..k * k).map(|t| y[[i + t / k, j + t % k]]).collect();
            let mx = px.iter().sum::<f64>() / n;
            let my = py.iter().sum::<f64>() / n;
            let vx = px.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0);
            let vy = py.iter().map(|a| (a - my).powi(2)).sum::<f64>() / (n - 1.0);
            let cxy = px
                .iter()
                .zip(&py)
                .map(|(a, b)| (a - mx) * (b - my))
                .sum::<f64>()
                / (n - 1.0);
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_naive_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let (h, w) = (rng.random_range(8..=16), 2 * rng.random_range(4..=8));
        let truth = random_image(h, w, &mut rng);
        let recon = truth.pixels().mapv(|v| v + rng.random_range(-0.2..0.2));
        let range = truth.max();
        let fast = ssim(&recon, &truth, range).unwrap();
        assert_relative_eq!(
            fast,
            naive_ssim(&recon, truth.pixels(), range),
            max_relative = 1e-10
        );
    }
    let truth = random_image(9, 10, &mut rng);
    assert_relative_eq!(
        ssim(truth.pixels(), &truth, truth.max()).unwrap(),
        1.0,
        epsilon = 1e-12
    );
}

#[test]
fn pixel_metrics_by_hand() {
    let truth = Image::from_vec(8, 8, (0..64).map(|i| (i % 4) as f64 / 4.0).collect()).unwrap();
    let recon = truth.pixels().mapv(|v| v + 0.1);
    assert_relative_eq!(mse(&recon, &truth).unwrap(), 0.01, max_relative = 1e-12);
    // sum of squares: 16 copies of 0, 1/16, 4/16, 9/16.
    let norm = 16.0 * (0.0 + 1.0 + 4.0 + 9.0) / 16.0;
    assert_relative_eq!(
        nmse(&recon, &truth).unwrap(),
        0.64 / norm,
        max_relative = 1e-12
    );
    let expected = 10.0 * (0.75f64 * 0.75 / 0.01).log10();
    assert_relative_eq!(
        psnr(&recon, &truth, 0.75).unwrap(),
        expected,
        max_relative = 1e-12
    );
}

#[test]
fn statistics_by_hand() {
    assert_relative_eq!(auc(&[3.0, 1.0, 2.0]).unwrap(), 2.0 + 1.5);
    let (m, ci) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let sd = (5.0f64 / 3.0).sqrt();
    assert_relative_eq!(m, 2.5);
    assert_relative_eq!(ci, 1.96 * sd / 2.0, max_relative = 1e-12);

    // d = (1, 2, 6): mean 3, sd sqrt(7), t = 3 / (sqrt(7) / sqrt(3)).
    let t = paired_t_test(&[2.0, 4.0, 9.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_relative_eq!(
        t.t().unwrap(),
        3.0 / (7.0f64.sqrt() / 3.0f64.sqrt()),
        max_relative = 1e-12
    );
    assert_eq!(t.dof(), 2);
    assert!(matches!(
        paired_t_test(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
        TTest::ZeroVariance { dof: 1 }
    ));
}

fn naive_forward(net: &Mlp<f64>, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let (out, inp) = layer.weights.dim();
        a = (0..out)
            .map(|o| {
                let z = (0..inp).map(|i| layer.weights[[o, i]] * a[i]).sum::<f64>() + layer.bias[o];
                if l < last {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect();
    }
    a
}

#[test]
fn mlp_forward_matches_naive_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::<f64>::new(&[6, 9, 5, 3], &mut rng).unwrap();
    let inputs = Array2::from_shape_fn((7, 6), |_| rng.random_range(-1.0..1.0));
    let batch = net.forward_batch(&inputs).unwrap();
    for (i, row) in inputs.rows().into_iter().enumerate() {
        let expected = naive_forward(&net, row.as_slice().unwrap());
        let single = net.forward(row.as_slice().unwrap()).unwrap();
        for o in 0..3 {
            assert_relative_eq!(batch[[i, o]], expected[o], max_relative = 1e-12);
            assert_relative_eq!(single[o], expected[o], max_relative = 1e-12);
        }
    }
}

#[test]
fn single_layer_gradient_closed_form() {
    // f(x) = W x + b, objective sum_i <g_i, f(x_i)>: dW = sum_i g_i x_i^T, db = sum_i g_i.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = Mlp::<f64>::new(&[4, 3], &mut rng).unwrap();
    let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
    let g = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
    let grads = net.backward_batch(&x, &g).unwrap();
    let layer = &grads.layers()[0];
    for o in 0..3 {
        let db: f64 = (0..5).map(|i| g[[i, o]]).sum();
        assert_relative_eq!(layer.bias[o], db, max_relative = 1e-12);
        for k in 0..4 {
            let dw: f64 = (0..5).map(|i| g[[i, o]] * x[[i, k]]).sum();
            assert_relative_eq!(layer.weights[[o, k]], dw, max_relative = 1e-12);
        }
    }
}

fn finite_difference(net: &Mlp<f64>, f: impl Fn(&Mlp<f64>) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..net.param_count())
        .map(|k| {
            let mut p = net.clone();
            *p.params_mut().nth(k).unwrap() += h;
            let mut m = net.clone();
            *m.params_mut().nth(k).unwrap() -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

fn randomized(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp<f64> {
    let mut net = Mlp::<f64>::new(sizes, rng).unwrap();
    net.params_mut()
        .for_each(|p| *p = rng.random_range(-1.0..1.0));
    net
}

#[test]
fn deep_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = randomized(&[5, 8, 6, 4], &mut rng);
    let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
    let g = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
    let analytic: Vec<f64> = net
        .backward_batch(&x, &g)
        .unwrap()
        .params()
        .copied()
        .collect();
    let numeric = finite_difference(&net, |m| (m.forward_batch(&x).unwrap() * &g).sum());
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {n}");
    }
}

#[test]
fn huber_td_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = randomized(&[4, 10, 6], &mut rng);
    let states = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
    let actions: Vec<usize> = (0..8).map(|_| rng.random_range(0..6)).collect();
    // Spread targets so both the quadratic and the linear branch are hit.
    let targets: Vec<f64> = (0..8).map(|i| (i as f64 - 4.0) * 0.8).collect();
    let batch = TdBatch::new(states, actions, targets).unwrap();
    let (loss, grads) = td_loss_and_gradient(&net, &batch, 1.0).unwrap();
    assert_relative_eq!(
        loss,
        td_loss(&net, &batch, 1.0).unwrap(),
        max_relative = 1e-12
    );
    let numeric = finite_difference(&net, |m| td_loss(m, &batch, 1.0).unwrap());
    for (a, n) in grads.params().zip(&numeric) {
        assert!((a - n).abs() < 1e-7, "{a} vs {n}");
    }
}

#[test]
fn huber_piecewise() {
    assert_relative_eq!(huber(0.5, 1.0), 0.125);
    assert_relative_eq!(huber(-3.0, 1.0), 2.5);
    assert_relative_eq!(huber(2.0, 0.5), 0.5 * (2.0 - 0.25));
}

#[test]
fn adam_minimizes_convex_quadratic() {
    // loss = 0.5 * ||theta - theta*||^2 with theta stored in a network's parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = randomized(&[3, 4, 2], &mut rng);
    let target = randomized(&[3, 4, 2], &mut rng);
    let config = AdamConfig {
        learning_rate: 1e-2,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&net, config);
    let loss = |n: &Mlp<f64>| {
        n.params()
            .zip(target.params())
            .map(|(a, b)| 0.5 * (a - b).powi(2))
            .sum::<f64>()
    };
    let initial = loss(&net);
    for _ in 0..2000 {
        let mut grad = net.clone();
        grad.add_scaled(&target, -1.0).unwrap();
        adam_step(&mut net, &grad, &mut state).unwrap();
    }
    assert!(initial > 0.1);
    assert!(loss(&net) < 1e-6, "final loss {}", loss(&net));
}
