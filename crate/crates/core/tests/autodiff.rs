use dmaml::autodiff::{fd_grad, fd_hvp, grad, hvp, relative_error, Objective, ParamVars, ParamVector, Scalar, Tape, Var};
use dmaml::envs::{make_env, Family, Task};
use dmaml::policy::{Head, PolicyNet, DEFAULT_HIDDEN};
use dmaml::rl::{reinforce_objective, sample_batch, Advantages};
use dmaml::rng::StreamKey;
use dmaml::Result;
use proptest::prelude::*;

/// `Σ tanh(θW)² + Σ θ ⊙ tanh(θW)` for a constant 3×3 `W`.
struct Smooth;

const W: [f64; 9] = [0.5, -1.2, 0.3, 0.8, 0.1, -0.7, -0.4, 0.9, 1.1];

impl Objective for Smooth {
    fn build<S: Scalar>(&self, tape: &mut Tape<S>, p: &ParamVars) -> Result<Var> {
        let x = p.at(0);
        let w = tape.constant(3, 3, &W)?;
        let xw = tape.matmul(x, w)?;
        let y = tape.tanh(xw);
        let sq = tape.square(y);
        let a = tape.sum(sq);
        let xy = tape.mul(x, y)?;
        let b = tape.sum(xy);
        tape.add(a, b)
    }
}

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::from_slice(v)
}

#[test]
fn policy_gradients_match_finite_differences() {
    for (family, phi) in [(Family::CartPole, 9.0), (Family::Intersection, 8.0)] {
        let env = make_env(Task::new(family, phi).unwrap());
        let net = PolicyNet::new(env.state_dim(), &DEFAULT_HIDDEN, Head::for_actions(env.action_spec()));
        let root = StreamKey::root(3);
        let theta = net.init_params(&mut root.child(1).rng());
        let batch = sample_batch(&env, &net, &theta, 2, root.child(2)).unwrap();
        let obj = reinforce_objective(&net, &batch, 0.99, Advantages::Standardized).unwrap();
        let exact = grad(&obj, &theta).unwrap().gradient;
        let numeric = fd_grad(&obj, &theta, 1e-6).unwrap();
        let err = relative_error(&exact, &numeric).unwrap();
        assert!(err < 1e-6, "{family:?} grad error {err}");

        let v = theta.map(|x| (x * 37.0).sin()).unwrap();
        let exact = hvp(&obj, &theta, &v).unwrap().hvp;
        let numeric = fd_hvp(&obj, &theta, &v, 1e-5).unwrap();
        let err = relative_error(&exact, &numeric).unwrap();
        assert!(err < 1e-4, "{family:?} hvp error {err}");
    }
}

#[test]
fn hvp_value_and_gradient_agree_with_grad() {
    let x = pv(&[0.3, -0.8, 1.2]);
    let g = grad(&Smooth, &x).unwrap();
    let h = hvp(&Smooth, &x, &pv(&[1.0, 0.0, 0.0])).unwrap();
    assert_eq!(g.value.to_bits(), Smooth.value(&x).unwrap().to_bits());
    assert!(relative_error(&h.gradient, &g.gradient).unwrap() < 1e-14);
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 3)
}

proptest! {
    #[test]
    fn hessian_is_symmetric(x in vec3(), u in vec3(), v in vec3()) {
        let x = pv(&x);
        let hu = hvp(&Smooth, &x, &pv(&u)).unwrap().hvp;
        let hv = hvp(&Smooth, &x, &pv(&v)).unwrap().hvp;
        let a = pv(&v).dot(&hu).unwrap();
        let b = pv(&u).dot(&hv).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn hvp_is_linear(x in vec3(), u in vec3(), v in vec3(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = pv(&x);
        let combo = pv(&u).scale(a).unwrap().add(&pv(&v).scale(b).unwrap()).unwrap();
        let lhs = hvp(&Smooth, &x, &combo).unwrap().hvp;
        let hu = hvp(&Smooth, &x, &pv(&u)).unwrap().hvp;
        let hv = hvp(&Smooth, &x, &pv(&v)).unwrap().hvp;
        let rhs = hu.scale(a).unwrap().add(&hv.scale(b).unwrap()).unwrap();
        let err = lhs.sub(&rhs).unwrap().max_abs();
        prop_assert!(err <= 1e-10 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn smooth_gradient_matches_finite_differences(x in vec3()) {
        let x = pv(&x);
        let exact = grad(&Smooth, &x).unwrap().gradient;
        let numeric = fd_grad(&Smooth, &x, 1e-6).unwrap();
        prop_assert!(exact.sub(&numeric).unwrap().max_abs() < 1e-7);
    }
}
