use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::GradCheck;
use super::*;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn rand64(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `sum(y * r)` for a fixed random `r`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = g.constant(rand64(g.shape(y), seed ^ 0x5eed));
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

/// Five random instances of one op, each under the 1e-4 gate.
fn gradcheck_op<F>(shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Copy,
{
    for seed in 0..5u64 {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| rand64(s, seed * 31 + i as u64))
            .collect();
        let report = GradCheck::default()
            .run(&inputs, |g, v| {
                let y = f(g, v)?;
                project(g, y, seed)
            })
            .unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "seed {seed}: rel error {:?}",
            report.per_input
        );
    }
}

// ---- conv2d ---------------------------------------------------------------

#[test]
fn conv2d_identity_kernel_is_identity() {
    let c = 3;
    let mut w = vec![0.0; c * c * 9];
    for i in 0..c {
        w[(i * c + i) * 9 + 4] = 1.0;
    }
    let mut g = Graph::new();
    let x = g.constant(rand64(&[c, 5, 4], 1));
    let w = g.constant(t64(&[c, c, 3, 3], &w));
    let b = g.constant(Tensor::zeros(&[c]));
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn conv2d_overlap_counts() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 3, 3]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn conv2d_zero_input_gives_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 4, 4]));
    let w = g.constant(rand64(&[3, 2, 3, 3], 2));
    let b = g.constant(t64(&[3], &[0.5, -1.0, 2.0]));
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    for (ch, want) in g.value(y).data().chunks(16).zip([0.5, -1.0, 2.0]) {
        assert!(ch.iter().all(|&v| v == want));
    }
}

#[test]
fn conv2d_channel_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(&[2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[3, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Dimension(_))));
}

#[test]
fn conv2d_gradients() {
    gradcheck_op(&[&[2, 5, 6], &[3, 2, 3, 3], &[3]], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1));
    gradcheck_op(&[&[2, 7, 6], &[4, 2, 3, 3], &[4]], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1));
    gradcheck_op(&[&[3, 4, 4], &[2, 3, 1, 1]], |g, v| g.conv2d(v[0], v[1], None, 1, 0));
}

// ---- depthwise ------------------------------------------------------------

#[test]
fn depthwise_identity_and_channel_independence() {
    let c = 3;
    let mut w = vec![0.0; c * 9];
    for i in 0..c {
        w[i * 9 + 4] = 1.0;
    }
    let x = rand64(&[c, 6, 5], 3);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(t64(&[c, 1, 3, 3], &w));
    let y = g.depthwise_conv2d(xv, wv).unwrap();
    assert_eq!(g.value(y), &x);

    let kern = rand64(&[c, 1, 3, 3], 4);
    let mut x2 = x.clone();
    x2.data_mut()[..30].iter_mut().for_each(|v| *v += 1.0);
    let run = |input: Tensor<f64>| {
        let mut g = Graph::new();
        let a = g.constant(input);
        let k = g.constant(kern.clone());
        let y = g.depthwise_conv2d(a, k).unwrap();
        g.value(y).clone()
    };
    let (y1, y2) = (run(x), run(x2));
    assert_ne!(y1.data()[..30], y2.data()[..30]);
    assert_eq!(y1.data()[30..], y2.data()[30..]);
}

#[test]
fn depthwise_constant_input_interior() {
    let kern = rand64(&[2, 1, 3, 3], 5);
    let sums: Vec<f64> = kern.data().chunks(9).map(|k| k.iter().sum()).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn(&[2, 5, 5], |i| if i < 25 { 2.0 } else { -3.0 }));
    let k = g.constant(kern);
    let y = g.depthwise_conv2d(x, k).unwrap();
    let out = g.value(y).data();
    for (ch, v) in [(0, 2.0), (1, -3.0)] {
        for yy in 1..4 {
            for xx in 1..4 {
                let got = out[ch * 25 + yy * 5 + xx];
                assert!((got - v * sums[ch]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn depthwise_channel_count_mismatch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::<f64>::zeros(&[2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
    assert!(matches!(g.depthwise_conv2d(x, w), Err(Error::Dimension(_))));
}

#[test]
fn depthwise_gradients() {
    gradcheck_op(&[&[3, 5, 4], &[3, 1, 3, 3]], |g, v| g.depthwise_conv2d(v[0], v[1]));
}

// ---- linear ---------------------------------------------------------------

#[test]
fn linear_examples() {
    let mut g = Graph::new();
    let x = g.constant(t64(&[2], &[1.0, 2.0]));
    let w = g.constant(t64(&[2, 2], &[1.0, 0.0, 0.0, 2.0]));
    let b = g.constant(t64(&[2], &[0.0, 1.0]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 5.0]);

    let z = g.constant(Tensor::zeros(&[3, 2]));
    let y = g.linear(z, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

    let eye = g.constant(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero_b = g.constant(Tensor::zeros(&[2]));
    let xin = g.constant(rand64(&[4, 2], 6));
    let y = g.linear(xin, eye, Some(zero_b)).unwrap();
    assert_eq!(g.value(y), g.value(xin));

    let bad = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.linear(xin, bad, None).is_err());
}

#[test]
fn linear_and_bmm_gradients() {
    gradcheck_op(&[&[2, 3, 4], &[4, 5], &[5]], |g, v| g.linear(v[0], v[1], Some(v[2])));
    gradcheck_op(&[&[2, 3, 4], &[2, 4, 5]], |g, v| g.bmm(v[0], v[1], false));
    gradcheck_op(&[&[2, 3, 4], &[2, 5, 4]], |g, v| g.bmm(v[0], v[1], true));
}

// ---- softmax / normalisation ---------------------------------------------

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t64(&[3, 2], &[0.0, 0.0, 1000.0, 1000.0, 0.0, 3f64.ln()]));
    let y = g.softmax(x).unwrap();
    assert_close(g.value(y).data(), &[0.5, 0.5, 0.5, 0.5, 0.25, 0.75], 1e-15);
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::ones(&[2]));
    let zeros = g.constant(Tensor::zeros(&[2]));
    let c = g.constant(t64(&[2], &[3.0, 3.0]));
    let y = g.layer_norm(c, ones, zeros, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    let x = g.constant(t64(&[2], &[-1.0, 1.0]));
    let y = g.layer_norm(x, ones, zeros, 1e-12).unwrap();
    assert_close(g.value(y).data(), &[-1.0, 1.0], 1e-9);

    let gz = g.constant(Tensor::zeros(&[2]));
    let b = g.constant(t64(&[2], &[0.7, 0.7]));
    let y = g.layer_norm(x, gz, b, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.7, 0.7]);
}

#[test]
fn activation_examples() {
    let mut g = Graph::new();
    let x = g.constant(t64(&[2], &[0.0, 3f64.ln()]));
    let s = g.sigmoid(x).unwrap();
    assert_close(g.value(s).data(), &[0.5, 0.75], 1e-15);
    let ge = g.gelu(x).unwrap();
    assert_eq!(g.value(ge).data()[0], 0.0);
}

#[test]
fn normalisation_and_activation_gradients() {
    gradcheck_op(&[&[3, 5]], |g, v| g.softmax(v[0]));
    gradcheck_op(&[&[3, 5]], |g, v| g.log_softmax(v[0]));
    gradcheck_op(&[&[2, 3, 6], &[6], &[6]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
    gradcheck_op(&[&[4, 7]], |g, v| g.l2_normalize(v[0], 1e-12));
    gradcheck_op(&[&[4, 7]], |g, v| g.gelu(v[0]));
    gradcheck_op(&[&[4, 7]], |g, v| g.sigmoid(v[0]));
    gradcheck_op(&[&[4, 7]], |g, v| g.leaky_relu(v[0], 0.1));
    gradcheck_op(&[&[4, 7]], |g, v| g.abs(v[0]));
}

#[test]
fn elementwise_and_reduction_gradients() {
    gradcheck_op(&[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
    gradcheck_op(&[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    gradcheck_op(&[&[3, 4, 2], &[3]], |g, v| g.mul_channel(v[0], v[1]));
    gradcheck_op(&[&[3, 4, 2], &[2]], |g, v| g.mul_last(v[0], v[1]));
    gradcheck_op(&[&[3, 4, 5]], |g, v| g.global_avg_pool(v[0]));
    gradcheck_op(&[&[3, 4]], |g, v| g.sum_last(v[0]));
    gradcheck_op(&[&[3, 4]], |g, v| g.mean(v[0]));
    gradcheck_op(&[&[2, 3], &[2, 4]], |g, v| g.concat(&[v[0], v[1]], 1));
    gradcheck_op(&[&[3, 4]], |g, v| g.scale(v[0], -2.5));
}

#[test]
fn structural_gradients() {
    gradcheck_op(&[&[8, 8, 3]], |g, v| g.window_partition(v[0], 4));
    gradcheck_op(&[&[4, 16, 3]], |g, v| g.window_reverse(v[0], 8, 8, 4));
    gradcheck_op(&[&[5, 6, 2]], |g, v| g.cyclic_shift(v[0], -2, 3));
    gradcheck_op(&[&[8, 3, 2]], |g, v| g.pixel_shuffle(v[0], 2));
    gradcheck_op(&[&[5, 6, 2]], |g, v| g.reflect_pad_hw(v[0], 3, 2));
    gradcheck_op(&[&[5, 6, 2]], |g, v| g.crop_hw(v[0], 3, 4));
    gradcheck_op(&[&[2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1]));
    gradcheck_op(&[&[3, 6]], |g, v| g.narrow_last(v[0], 2, 3));
}

// ---- layout ops -----------------------------------------------------------

#[test]
fn pixel_shuffle_examples() {
    let x = rand64(&[4, 2, 2], 7);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let same = g.pixel_shuffle(xv, 1).unwrap();
    assert_eq!(g.value(same), &x);
    let up = g.pixel_shuffle(xv, 2).unwrap();
    assert_eq!(g.shape(up), &[1, 4, 4]);
    let back = g.pixel_unshuffle(up, 2).unwrap();
    assert_eq!(g.value(back), &x);
    let odd = g.constant(Tensor::zeros(&[3, 2, 2]));
    assert!(g.pixel_shuffle(odd, 2).is_err());
}

#[test]
fn window_partition_examples() {
    let mut g = Graph::new();
    let x = g.constant(rand64(&[8, 8, 2], 8));
    let one = g.window_partition(x, 8).unwrap();
    assert_eq!(g.shape(one), &[1, 64, 2]);
    assert_eq!(g.value(one).data(), g.value(x).data());

    let x = g.constant(rand64(&[16, 16, 4], 9));
    let w = g.window_partition(x, 8).unwrap();
    assert_eq!(g.shape(w)[0], 4);
    let r = g.window_reverse(w, 16, 16, 8).unwrap();
    assert_eq!(g.value(r), g.value(x));
}

#[test]
fn cyclic_shift_examples() {
    let mut g = Graph::new();
    let x = g.constant(rand64(&[6, 5, 2], 10));
    let z = g.cyclic_shift(x, 0, 0).unwrap();
    assert_eq!(g.value(z), g.value(x));
    let full = g.cyclic_shift(x, 6, 0).unwrap();
    assert_eq!(g.value(full), g.value(x));
    let a = g.cyclic_shift(x, 2, -3).unwrap();
    assert_ne!(g.value(a), g.value(x));
    let b = g.cyclic_shift(a, -2, 3).unwrap();
    assert_eq!(g.value(b), g.value(x));
}

// ---- backward -------------------------------------------------------------

#[test]
fn backward_closed_forms() {
    let x0 = rand64(&[3, 4], 11);
    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let x = g.param(x0.clone());
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    let want: Vec<f64> = x0.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(grads.get(x).unwrap().data(), want.as_slice());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::<f64>::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Dimension(_))));
}

#[test]
fn unused_leaf_gets_zero_gradient_and_constants_none() {
    let mut g = Graph::new();
    let used = g.param(Tensor::<f64>::ones(&[2]));
    let unused = g.param(Tensor::ones(&[3]));
    let c = g.constant(Tensor::ones(&[2]));
    let p = g.mul(used, c).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(unused).unwrap().data(), &[0.0; 3]);
    assert!(grads.get(c).is_none());
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::randn(&[3, 8, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let w = g.constant(Tensor::randn(&[4, 3, 3, 3], 0.3, &mut ChaCha8Rng::seed_from_u64(2)));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.permute(y, &[1, 2, 0]).unwrap();
        let y = g.softmax(y).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(t64(&[3, 4], &vals));
        let y = g.softmax(x).unwrap();
        for row in g.value(y).data().chunks(4) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layout_roundtrips_are_exact(seed in 0u64..1000, m in 1usize..5, s in 1usize..4) {
        let (h, w) = (m * 2, m * 3);
        let x = rand64(&[h, w, 3], seed);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p = g.window_partition(xv, m).unwrap();
        let r = g.window_reverse(p, h, w, m).unwrap();
        prop_assert_eq!(g.value(r), &x);

        let c = g.constant(rand64(&[2 * s * s, 3, 2], seed));
        let up = g.pixel_shuffle(c, s).unwrap();
        let down = g.pixel_unshuffle(up, s).unwrap();
        prop_assert_eq!(g.value(down), g.value(c));
    }
}

#[test]
fn kink_guard_skips_stencils_across_a_breakpoint() {
    // 1e-5 sits inside the default step, so the central difference of |x| is 0.1, not 1.
    let x = Tensor::new(&[3], vec![1e-5, 0.5, -0.7]).unwrap();
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.abs(v[0])?;
        g.sum(y)
    };
    let plain = GradCheck::default().run(&[x.clone()], f).unwrap();
    assert!(plain.max_rel_error() > 0.5);
    assert_eq!(plain.coords_skipped, 0);

    let guarded = GradCheck { skip_kinks: true, ..GradCheck::default() }.run(&[x], f).unwrap();
    assert!(guarded.max_rel_error() < 1e-9);
    assert_eq!((guarded.coords_checked, guarded.coords_skipped), (2, 1));
}

#[test]
fn kink_guard_refills_the_sample() {
    let x = Tensor::new(&[4], vec![1e-5, -2e-5, 0.5, -0.7]).unwrap();
    let f = |g: &mut Graph<f64>, v: &[Var]| {
        let y = g.leaky_relu(v[0], 0.1)?;
        g.sum(y)
    };
    let rep = GradCheck { skip_kinks: true, ..GradCheck::sampled(2, 0) }.run(&[x], f).unwrap();
    assert_eq!(rep.coords_checked, 2);
    assert!(rep.max_rel_error() < 1e-9);
}
