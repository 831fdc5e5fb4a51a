use super::*;
use crate::error::Error;

// Reference cross-correlation: direct nested loops, independent of the
// im2col/GEMM path under test.
#[allow(clippy::too_many_arguments)]
fn conv2d_ref(
    input: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    f: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = bias[fi];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oi * stride + ki) as isize - pad as isize;
                                let iw = (oj * stride + kj) as isize - pad as isize;
                                if ih >= 0 && ih < h as isize && iw >= 0 && iw < w as isize {
                                    let iv = input
                                        [((ni * c + ci) * h + ih as usize) * w + iw as usize];
                                    let wv = weight[((fi * c + ci) * kh + ki) * kw + kj];
                                    acc += iv * wv;
                                }
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oi) * ow + oj] = acc;
                }
            }
        }
    }
    out
}

fn seeded_values(seed: u64, n: usize) -> Vec<f64> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

mod conv {
    use super::*;

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn ones_kernel_with_padding_sums_neighbourhood() {
        // Hand cross-correlation of [[1,0],[0,0]] with a 3x3 ones kernel,
        // pad 1: every output pixel sees the single 1.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 1.0, 1.0, 1.0]);
        let reference = conv2d_ref(&[1.0, 0.0, 0.0, 0.0], 1, 1, 2, 2, &[1.0; 9], 1, 3, 3, &[0.0], 1, 1);
        assert_eq!(y.to_vec(), reference);
    }

    #[test]
    fn zero_weight_yields_bias_everywhere() {
        let x = Tensor::from_vec(&[1, 2, 4, 4], seeded_values(3, 32)).unwrap();
        let w = Tensor::from_vec(&[3, 2, 3, 3], vec![0.0; 54]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        let out = y.to_vec();
        for fi in 0..3 {
            for v in &out[fi * 16..(fi + 1) * 16] {
                assert_eq!(*v, b.to_vec()[fi]);
            }
        }
    }

    #[test]
    fn matches_reference_over_stride_padding_grid() {
        for seed in 0..5u64 {
            for stride in [1usize, 2] {
                for pad in [0usize, 1] {
                    let (n, c, h, w, f, kh, kw) = (2, 3, 8, 6, 4, 3, 3);
                    if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
                        continue;
                    }
                    let xv = seeded_values(seed, n * c * h * w);
                    let wv = seeded_values(seed + 100, f * c * kh * kw);
                    let bv = seeded_values(seed + 200, f);
                    let x = Tensor::from_vec(&[n, c, h, w], xv.clone()).unwrap();
                    let wt = Tensor::from_vec(&[f, c, kh, kw], wv.clone()).unwrap();
                    let bt = Tensor::from_vec(&[f], bv.clone()).unwrap();
                    let y = conv2d(&x, &wt, &bt, stride, pad).unwrap();
                    let oh = (h + 2 * pad - kh) / stride + 1;
                    let ow = (w + 2 * pad - kw) / stride + 1;
                    assert_eq!(y.shape(), &[n, f, oh, ow]);
                    let reference = conv2d_ref(&xv, n, c, h, w, &wv, f, kh, kw, &bv, stride, pad);
                    for (got, want) in y.to_vec().iter().zip(reference.iter()) {
                        assert!((got - want).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let xv = seeded_values(9, 2 * 3 * 8 * 8);
        let wv = seeded_values(10, 4 * 3 * 9);
        let run = || {
            let x = Tensor::from_vec(&[2, 3, 8, 8], xv.clone()).unwrap();
            let w = Tensor::from_vec(&[4, 3, 3, 3], wv.clone()).unwrap();
            let b = Tensor::from_vec(&[4], vec![0.1; 4]).unwrap();
            conv2d(&x, &w, &b, 1, 1)
                .unwrap()
                .to_vec()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]); // channel mismatch
        let b = Tensor::<f64>::zeros(&[1]);
        assert!(matches!(
            conv2d(&x, &w, &b, 1, 1),
            Err(Error::ShapeMismatch { .. })
        ));

        let w = Tensor::<f64>::zeros(&[1, 2, 2, 2]); // even kernel
        assert!(conv2d(&x, &w, &b, 1, 0).is_err());

        let w = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&x, &w, &b, 2, 0).is_err()); // (4-3) % 2 != 0
    }
}

mod activations {
    use super::*;

    #[test]
    fn relu_clips_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_symmetry_and_ln3() {
        let x = Tensor::from_vec(&[2], vec![0.0, 3.0f64.ln()]).unwrap();
        let y = x.sigmoid().to_vec();
        assert_eq!(y[0], 0.5);
        // 1 / (1 + e^{-ln 3}) = 3/4
        assert!((y[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        let x = Tensor::from_vec(&[4], vec![-1e4f32, -40.0, 40.0, 1e4]).unwrap();
        for v in x.sigmoid().to_vec() {
            assert!(v > 0.0 && v < 1.0, "sigmoid produced {v}");
        }
    }

    #[test]
    fn both_monotone_nondecreasing() {
        let vals = seeded_values(17, 64);
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let t = Tensor::from_vec(&[64], sorted).unwrap();
        for out in [t.relu().to_vec(), t.sigmoid().to_vec()] {
            for pair in out.windows(2) {
                assert!(pair[0] <= pair[1]);
            }
        }
    }
}

mod pooling {
    use super::*;

    #[test]
    fn max_of_single_window() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.maxpool2x2().unwrap().to_vec(), vec![4.0]);
    }

    #[test]
    fn ramp_windows() {
        // Per-window max of the 4x4 row-major ramp 1..16.
        let x = Tensor::from_vec(&[1, 1, 4, 4], (1..=16).map(f64::from).collect()).unwrap();
        assert_eq!(x.maxpool2x2().unwrap().to_vec(), vec![6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn tie_routes_gradient_to_first_position() {
        let x = Tensor::param(&[1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let y = x.maxpool2x2().unwrap();
        assert_eq!(y.to_vec(), vec![5.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(Tensor::<f64>::zeros(&[1, 1, 3, 4]).maxpool2x2().is_err());
        assert!(Tensor::<f64>::zeros(&[1, 1, 4, 3]).maxpool2x2().is_err());
    }
}

mod upsampling {
    use super::*;

    #[test]
    fn replicates_blocks() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(
            x.upsample2x_nearest().unwrap().to_vec(),
            vec![1.0, 1.0, 1.0, 1.0]
        );
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(
            x.upsample2x_nearest().unwrap().to_vec(),
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]
        );
    }

    #[test]
    fn backward_sums_four_replicas() {
        let x = Tensor::param(&[1, 1, 1, 1], vec![3.0]).unwrap();
        x.upsample2x_nearest().unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }
}

mod concat {
    use super::*;

    #[test]
    fn stacks_channels() {
        let a = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        assert_eq!(a.concat_channels(&b).unwrap().shape(), &[1, 6, 4, 4]);
    }

    #[test]
    fn empty_channel_side_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], seeded_values(21, 8)).unwrap();
        let empty = Tensor::<f64>::zeros(&[1, 0, 2, 2]);
        let y = x.concat_channels(&empty).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let b = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(a.concat_channels(&b).is_err());
    }
}

mod losses {
    use super::*;

    #[test]
    fn bce_at_half_is_ln2() {
        let y = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let p = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let loss = bce_loss(&p, &y).unwrap().item().unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_averages_over_pixels() {
        let y = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let p = Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap();
        let loss = bce_loss(&p, &y).unwrap().item().unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_near_perfect_prediction() {
        let y = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let p = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap(); // clamped to 1-eps
        let loss = bce_loss(&p, &y).unwrap().item().unwrap();
        assert!(loss <= -(1.0f64 - BCE_EPS).ln() + 1e-18);
        assert!(loss < 2e-7);
    }

    #[test]
    fn bce_rejects_bad_inputs() {
        let y = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let p = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        assert!(bce_loss(&p, &y).is_err()); // target not binary
        let y2 = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        assert!(bce_loss(&p, &y2).is_err()); // shape mismatch
    }

    #[test]
    fn mse_values() {
        let a = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap().item().unwrap(), 0.5);

        let a = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap().item().unwrap(), 0.0625);

        let same = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(mse_loss(&same, &same).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn mse_does_not_backprop_into_second_argument() {
        let a = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::param(&[2], vec![0.0, 0.0]).unwrap();
        mse_loss(&a, &b).unwrap().backward().unwrap();
        assert!(a.grad().is_some());
        assert!(b.grad().is_none());
    }
}

mod backward {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::param(&[5], seeded_values(31, 5)).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn mse_against_zero_gives_two_x() {
        // d/dx mean((x-0)^2) = 2x/N with N=1.
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let zero = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        mse_loss(&x, &zero).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn linear_in_the_loss() {
        // grads of a*L1 + b*L2 == a*grad(L1) + b*grad(L2), elementwise in f64.
        let vals = seeded_values(41, 8);
        let (alpha, beta) = (0.7, -1.3);

        let make_losses = |x: &Tensor<f64>| {
            let zero = Tensor::from_vec(&[8], vec![0.0; 8]).unwrap();
            let l1 = mse_loss(x, &zero).unwrap();
            let l2 = x.relu().sum();
            (l1, l2)
        };

        let x1 = Tensor::param(&[8], vals.clone()).unwrap();
        let (l1, _) = make_losses(&x1);
        l1.backward().unwrap();
        let g1 = x1.grad().unwrap();

        let x2 = Tensor::param(&[8], vals.clone()).unwrap();
        let (_, l2) = make_losses(&x2);
        l2.backward().unwrap();
        let g2 = x2.grad().unwrap();

        let x3 = Tensor::param(&[8], vals).unwrap();
        let (l1, l2) = make_losses(&x3);
        let combined = l1.scale(alpha).add(&l2.scale(beta)).unwrap();
        combined.backward().unwrap();
        let g3 = x3.grad().unwrap();

        for i in 0..8 {
            assert!((g3[i] - (alpha * g1[i] + beta * g2[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 3]);
        x.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn shared_input_accumulates_from_both_uses() {
        // loss = sum(x) + sum(x) => grad 2 everywhere.
        let x = Tensor::param(&[4], vec![0.5; 4]).unwrap();
        let s = x.sum();
        s.add(&s).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(&[3], vec![1.0; 3]).unwrap();
        assert!(x.relu().backward().is_err());
    }

    #[test]
    fn detached_graph_rejected() {
        let x = Tensor::from_vec(&[3], vec![1.0; 3]).unwrap(); // no requires_grad
        assert!(x.sum().backward().is_err());
    }
}

mod gradcheck_spot {
    use super::*;

    #[test]
    fn linear_op_has_zero_error() {
        let x = Tensor::param(&[6], seeded_values(51, 6)).unwrap();
        let err = grad_check(|ins| Ok(ins[0].sum()), &[x], 1e-5).unwrap();
        assert!(err <= 1e-9, "sum rel err {err}");
    }

    #[test]
    fn bce_at_half_within_tolerance() {
        let p = Tensor::param(&[4], vec![0.5; 4]).unwrap();
        let y = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let err = grad_check(|ins| bce_loss(&ins[0], &y), &[p], 1e-5).unwrap();
        assert!(err <= 1e-6, "bce rel err {err}");
    }

    #[test]
    fn conv_chain_within_tolerance() {
        for seed in 0..3u64 {
            let x = Tensor::param(&[1, 2, 4, 4], seeded_values(seed, 32)).unwrap();
            let w = Tensor::param(&[2, 2, 3, 3], seeded_values(seed + 7, 36)).unwrap();
            let b = Tensor::param(&[2], seeded_values(seed + 13, 2)).unwrap();
            let err = grad_check(
                |ins| Ok(conv2d(&ins[0], &ins[1], &ins[2], 1, 1)?.relu().sum()),
                &[x, w, b],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "conv chain rel err {err}");
        }
    }
}
