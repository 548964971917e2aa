//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! The graph is rebuilt per training step (define-by-run); node order is the
//! topological order; gradient accumulation order is fixed, so values and
//! gradients are bit-identical run to run.

pub mod checkpoint;
pub mod fd;
mod gemm;
mod params;
mod tape;
mod tensor;

pub use gemm::{gemm_nn, gemm_nt, gemm_tn};
pub use params::{Binding, ParamId, Parameter, ParameterSet};
pub use tape::{SampleGrid, Tape, Value};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Real;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    #[test]
    fn sigmoid_symmetry() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::scalar(0.0));
        assert_eq!(t.item(t.sigmoid(x)), 0.5);
    }

    #[test]
    fn matmul_identity() {
        let t = Tape::<f64>::new();
        let eye = t.constant(Tensor::new(
            vec![3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ));
        let v = Tensor::new(vec![3, 1], vec![0.3, -1.7, 2.9]);
        let vn = t.constant(v.clone());
        let out = t.matmul(eye, vn);
        assert_eq!(t.value(out).data(), v.data());
    }

    #[test]
    fn gelu_exact_value() {
        // Oracle: x * Phi(x), Phi via erf in double precision.
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::scalar(1.0));
        let y = t.item(t.gelu(x));
        assert!((y - 0.8413447460685429).abs() < 1e-12, "{y}");
    }

    #[test]
    fn backward_sum_of_squares() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let sq = t.mul(x, x);
        let root = t.sum_all(sq);
        t.backward(root);
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_sigmoid_dot_at_zero_weights() {
        // root = sigmoid(w . x) at w = 0 -> grad_w = 0.25 * x
        let t = Tape::<f64>::new();
        let w = t.leaf(Tensor::new(vec![1, 3], vec![0.0; 3]));
        let x = t.constant(Tensor::new(vec![3, 1], vec![0.5, -1.0, 2.0]));
        let dot = t.matmul(w, x);
        let root = t.sigmoid(dot);
        t.backward(root);
        let g = t.grad(w).unwrap();
        for (gv, xv) in g.data().iter().zip([0.5, -1.0, 2.0]) {
            assert!((gv - 0.25 * xv).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_backward_root_rejected() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| t.backward(x)));
        assert!(r.is_err());
    }

    #[test]
    fn shape_mismatch_names_shapes_and_op() {
        let t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros(vec![2, 3]));
        let b = t.constant(Tensor::zeros(vec![4, 5]));
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| t.add(a, b)));
        let msg = *r.unwrap_err().downcast::<String>().unwrap();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn grads_accumulate_across_backwards_and_clear() {
        let mut params = ParameterSet::<f64>::new();
        let id = params.register("x", Tensor::new(vec![2], vec![1.0, 2.0]));
        let t = Tape::<f64>::new();
        let binding = Binding::bind_all(&t, &params);
        let x = binding.leaf(id);
        let root = t.sum_all(t.mul(x, x));
        t.backward(root);
        binding.accumulate_grads(&t, &mut params);
        t.backward(root);
        binding.accumulate_grads(&t, &mut params);
        assert_eq!(params.get(id).grad.data(), &[4.0, 8.0]); // summed twice
        params.clear_grads();
        assert_eq!(params.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn constants_never_accumulate_gradient() {
        let t = Tape::<f64>::new();
        let c = t.constant(Tensor::new(vec![2], vec![3.0, 4.0]));
        let x = t.leaf(Tensor::new(vec![2], vec![1.0, 1.0]));
        let root = t.sum_all(t.mul(c, x));
        t.backward(root);
        assert!(t.grad(c).is_none());
        assert!(t.grad(x).is_some());
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        // grad of (a*L1 + b*L2) == a*grad(L1) + b*grad(L2)
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));

            let build = |t: &Tape<f64>, x: Value| -> (Value, Value) {
                let l1 = t.sum_all(t.mul(x, x));
                let l2 = t.mean_all(t.exp(x));
                (l1, l2)
            };

            let t = Tape::<f64>::new();
            let x = t.leaf(Tensor::new(vec![4], xs.clone()));
            let (l1, l2) = build(&t, x);
            let combined = t.add(t.scale(l1, a), t.scale(l2, b));
            t.backward(combined);
            let g_combined = t.grad(x).unwrap();

            let t1 = Tape::<f64>::new();
            let x1 = t1.leaf(Tensor::new(vec![4], xs.clone()));
            let (l1, _) = build(&t1, x1);
            t1.backward(l1);
            let g1 = t1.grad(x1).unwrap();

            let t2 = Tape::<f64>::new();
            let x2 = t2.leaf(Tensor::new(vec![4], xs.clone()));
            let (_, l2) = build(&t2, x2);
            t2.backward(l2);
            let g2 = t2.grad(x2).unwrap();

            for i in 0..4 {
                let want = a * g1.data()[i] + b * g2.data()[i];
                assert!((g_combined.data()[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn determinism_same_seed_bit_identical() {
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut rng = StdRng::seed_from_u64(99);
            let xs: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ws: Vec<f64> = (0..64 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = Tape::<f64>::new();
            let x = t.constant(Tensor::new(vec![8, 8], xs.clone()));
            let w = t.leaf(Tensor::new(vec![8, 64], ws));
            let h = t.softplus(t.matmul(x, w));
            let root = t.mean_all(h);
            t.backward(root);
            (t.value(root).data().to_vec(), t.grad(w).unwrap().data().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn cumprod_exclusive_forward_and_segments() {
        let t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(vec![6, 1], vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let y = t.cumprod_exclusive(x, 3);
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 6.0, 1.0, 5.0, 30.0]);
    }

    #[test]
    fn tile_then_sum_segments_roundtrip() {
        let t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let tiled = t.tile_rows(x, 3);
        assert_eq!(t.shape(tiled), vec![6, 2]);
        let back = t.sum_segments(tiled, 3);
        let root = t.sum_all(back);
        t.backward(root);
        // each element contributes 3 times
        assert_eq!(t.grad(x).unwrap().data(), &[3.0; 4]);
    }

    /// Every primitive matches central finite differences (the module's
    /// gradient-check property, run over many random seeds in the
    /// acceptance-level suite; a smaller sweep lives here).
    #[test]
    fn primitive_gradients_match_finite_differences() {
        for seed in 0..25u64 {
            check_all_primitives(seed);
        }
    }

    pub(crate) fn check_all_primitives(seed: u64) {
        let mut rng = StdRng::seed_from_u64(seed);
        type BuildFn = Box<dyn Fn(&Tape<f64>, Value) -> Value>;
        // Keep inputs away from kinks of abs/relu/max and poles of ln/sqrt/recip.
        let safe = |rng: &mut StdRng, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(-2.0..2.0);
                    if v.abs() < 0.15 {
                        if v >= 0.0 {
                            v + 0.3
                        } else {
                            v - 0.3
                        }
                    } else {
                        v
                    }
                })
                .collect()
        };
        let positive = |rng: &mut StdRng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(0.2..2.5)).collect()
        };

        let cases: Vec<(&str, Vec<f64>, Vec<usize>, BuildFn)> = vec![
            ("neg", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.neg(x))),
            ("recip", positive(&mut rng, 6), vec![6], Box::new(|t, x| t.recip(x))),
            ("exp", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.exp(x))),
            ("ln", positive(&mut rng, 6), vec![6], Box::new(|t, x| t.ln(x))),
            ("sin", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.sin(x))),
            ("cos", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.cos(x))),
            ("sqrt", positive(&mut rng, 6), vec![6], Box::new(|t, x| t.sqrt(x))),
            ("sigmoid", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.sigmoid(x))),
            ("gelu", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.gelu(x))),
            ("softplus", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.softplus(x))),
            ("abs", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.abs(x))),
            ("relu", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.relu(x))),
            ("scale", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.scale(x, -1.7))),
            ("add_scalar", safe(&mut rng, 6), vec![6], Box::new(|t, x| t.add_scalar(x, 0.9))),
            ("norm2_rows", safe(&mut rng, 6), vec![2, 3], Box::new(|t, x| t.norm2_rows(x))),
            ("sum_segments", safe(&mut rng, 6), vec![6, 1], Box::new(|t, x| t.sum_segments(x, 3))),
            ("tile_rows", safe(&mut rng, 4), vec![2, 2], Box::new(|t, x| t.tile_rows(x, 3))),
            (
                "cumprod_exclusive",
                positive(&mut rng, 8),
                vec![8, 1],
                Box::new(|t, x| t.cumprod_exclusive(x, 4)),
            ),
            ("slice_cols", safe(&mut rng, 8), vec![2, 4], Box::new(|t, x| t.slice_cols(x, 1, 3))),
            ("slice_rows", safe(&mut rng, 8), vec![4, 2], Box::new(|t, x| t.slice_rows(x, 1, 3))),
            ("transpose", safe(&mut rng, 6), vec![2, 3], Box::new(|t, x| t.transpose(x))),
            ("rodrigues", safe(&mut rng, 3), vec![3], Box::new(|t, x| t.rodrigues(x))),
            (
                "gather_rows",
                safe(&mut rng, 8),
                vec![4, 2],
                Box::new(|t, x| t.gather_rows(x, Arc::new(vec![0, 2, 2, 3]))),
            ),
            (
                "concat_cols",
                safe(&mut rng, 6),
                vec![2, 3],
                Box::new(|t, x| {
                    let a = t.slice_cols(x, 0, 1);
                    t.concat_cols(&[a, x])
                }),
            ),
            (
                "concat_rows",
                safe(&mut rng, 6),
                vec![2, 3],
                Box::new(|t, x| {
                    let a = t.slice_rows(x, 0, 1);
                    t.concat_rows(&[a, x])
                }),
            ),
            (
                "max2",
                {
                    // keep a gap to the partner constants so FD never
                    // straddles the max kink
                    let consts = [0.5, -0.5, 1.9, -1.9, 0.7, -0.7];
                    (0..6)
                        .map(|i| loop {
                            let v: f64 = rng.gen_range(-2.0..2.0);
                            if (v - consts[i]).abs() > 0.05 {
                                break v;
                            }
                        })
                        .collect()
                },
                vec![6],
                Box::new(|t, x| {
                    let other = t.constant(Tensor::new(vec![6], vec![0.5, -0.5, 1.9, -1.9, 0.7, -0.7]));
                    t.maximum(x, other)
                }),
            ),
            (
                "add_broadcast_row",
                safe(&mut rng, 6),
                vec![2, 3],
                Box::new(|t, x| {
                    let row = t.slice_rows(x, 0, 1);
                    t.add(x, row)
                }),
            ),
            (
                "mul_broadcast_col",
                safe(&mut rng, 6),
                vec![2, 3],
                Box::new(|t, x| {
                    let col = t.slice_cols(x, 0, 1);
                    t.mul(x, col)
                }),
            ),
            (
                "matmul",
                safe(&mut rng, 6),
                vec![2, 3],
                Box::new(|t, x| {
                    let w = t.constant(Tensor::new(
                        vec![3, 2],
                        vec![0.3, -0.9, 1.1, 0.4, -0.6, 0.8],
                    ));
                    t.matmul(x, w)
                }),
            ),
            (
                "bilinear_sample",
                {
                    // interior coords with fractional part away from cell
                    // boundaries (derivative kinks)
                    (0..4)
                        .map(|_| loop {
                            let v: f64 = rng.gen_range(0.1..2.9);
                            let f = v.fract();
                            if f > 0.1 && f < 0.9 {
                                break v;
                            }
                        })
                        .collect()
                },
                vec![2, 2],
                Box::new(|t, x| {
                    let grid = Arc::new(SampleGrid {
                        channels: 2,
                        height: 4,
                        width: 4,
                        data: (0..32).map(|i| ((i * 7) % 13) as f64 * 0.31 - 1.9).collect(),
                    });
                    t.bilinear_sample(x, grid)
                }),
            ),
        ];

        for (name, x0, shape, build) in cases {
            let weights: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // scalarize the op output with fixed random weights so the FD
            // check exercises all output components
            let mut eval = |xs: &[f64]| -> f64 {
                let t = Tape::<f64>::new();
                let x = t.leaf(Tensor::new(shape.clone(), xs.to_vec()));
                let y = build(&t, x);
                let yv = t.value(y);
                yv.data()
                    .iter()
                    .zip(weights.iter())
                    .map(|(&v, &w)| v * w)
                    .sum()
            };
            let t = Tape::<f64>::new();
            let x = t.leaf(Tensor::new(shape.clone(), x0.clone()));
            let y = build(&t, x);
            let yv = t.value(y);
            let w = t.constant(Tensor::new(
                yv.shape().to_vec(),
                weights[..yv.numel()].to_vec(),
            ));
            let root = t.sum_all(t.mul(y, w));
            t.backward(root);
            let analytic = t.grad(x).unwrap();
            let coords: Vec<usize> = (0..x0.len()).collect();
            fd::check_gradient(
                &mut eval,
                &x0,
                analytic.data(),
                &coords,
                fd::FD_EPS,
                fd::FD_REL_TOL,
            )
            .unwrap_or_else(|e| panic!("primitive {name} (seed {seed}): {e}"));
        }
    }
}
