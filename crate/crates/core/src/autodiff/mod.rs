//! Reverse-mode automatic differentiation over dense float64 tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters enter as leaves via
//! [`Tape::param`], inputs and sampled noise via [`Tape::constant`], and
//! [`Tape::backward`] returns gradients for every node reachable from a scalar
//! root.

mod adam;
mod container;
pub mod finite_diff;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use container::{ContainerError, ParamBundle, MAGIC};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

#[cfg(test)]
mod tests {
    use super::finite_diff::{central_difference, max_relative_error};
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2, 3]));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y), &Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn affine_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.param(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(t(&[2], &[0.0, 0.0]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn minimum_elementwise() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[3.0, 1.0]));
        let b = tape.constant(t(&[2], &[2.0, 4.0]));
        let m = tape.minimum(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let err = tape.add(a, b).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::Shape {
                op: "add",
                shapes: vec![vec![2], vec![3]]
            }
        );
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let bias = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.affine(x, w, bias),
            Err(AutodiffError::Shape { op: "affine", .. })
        ));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[0.0]));
        assert_eq!(tape.log(x).unwrap_err(), AutodiffError::NonFinite { op: "log" });
        let big = tape.constant(t(&[1], &[1000.0]));
        assert!(tape.exp(big).is_err());
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = tape.square(x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).item(), 1.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let unused = tape.param(t(&[2, 2], &[1.0; 4]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert_eq!(tape.backward(x).err(), Some(AutodiffError::NonScalarRoot(vec![2])));
    }

    #[test]
    fn concat_along_last_axis() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 1], &[1.0, 2.0]));
        let b = tape.param(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 3]);
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    // Builds a scalar exercising every primitive once.
    fn every_primitive(tape: &mut Tape, p: &[Var]) -> Result<Var, AutodiffError> {
        let (x, w, b, y) = (p[0], p[1], p[2], p[3]);
        let h = tape.affine(x, w, b)?;
        let h = tape.tanh(h)?;
        let e = tape.exp(h)?;
        let sp = tape.softplus(y)?;
        let l = tape.log(sp)?;
        let cat = tape.concat(e, l)?;
        let sq = tape.square(cat)?;
        let neg = tape.neg(sq)?;
        let sc = tape.scale(neg, 0.7)?;
        let m = tape.mul(sc, cat)?;
        let d = tape.sub(m, cat)?;
        let mn = tape.minimum(d, cat)?;
        let a = tape.add(mn, sq)?;
        let s1 = tape.sum(a)?;
        let s2 = tape.mean(mn)?;
        tape.add(s1, s2)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let params = vec![
                random(&mut rng, &[3, 4], -1.0, 1.0),
                random(&mut rng, &[4, 2], -1.0, 1.0),
                random(&mut rng, &[2], -0.5, 0.5),
                random(&mut rng, &[3, 3], -2.0, 2.0),
            ];
            let f = |ps: &[Tensor]| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
                let r = every_primitive(&mut tape, &vars).unwrap();
                tape.value(r).item()
            };
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
            let root = every_primitive(&mut tape, &vars).unwrap();
            let grads = tape.backward(root).unwrap().wrt(&vars);
            let numeric = central_difference(&f, &params, 1e-5);
            let err = max_relative_error(&grads, &numeric);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn linearity_of_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random(&mut rng, &[2, 3], -1.0, 1.0);
        let grad_of = |a: f64, b: f64| {
            let mut tape = Tape::new();
            let x = tape.param(p.clone());
            let f = tape.tanh(x).unwrap();
            let f = tape.sum(f).unwrap();
            let g = tape.square(x).unwrap();
            let g = tape.mean(g).unwrap();
            let fa = tape.scale(f, a).unwrap();
            let gb = tape.scale(g, b).unwrap();
            let r = tape.add(fa, gb).unwrap();
            tape.backward(r).unwrap().get(x)
        };
        let (a, b) = (1.7, -0.4);
        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for i in 0..combined.numel() {
            let lin = a * gf.data()[i] + b * gg.data()[i];
            assert!((combined.data()[i] - lin).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn backward_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = vec![
                random(&mut rng, &[3, 4], -1.0, 1.0),
                random(&mut rng, &[4, 2], -1.0, 1.0),
                random(&mut rng, &[2], -0.5, 0.5),
                random(&mut rng, &[3, 3], -2.0, 2.0),
            ];
            let run = || {
                let mut tape = Tape::new();
                let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
                let root = every_primitive(&mut tape, &vars).unwrap();
                tape.backward(root).unwrap().wrt(&vars)
            };
            let (g1, g2) = (run(), run());
            for (a, b) in g1.iter().zip(&g2) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
