mod common;

use common::*;
use dmaml::autodiff::{CallCounter, ParamVector};
use dmaml::envs::{make_env, Family, Task};
use dmaml::meta::{
    directed_prestep, fomaml_meta_gradient, inner_adapt, maml_meta_gradient, metasgd_step, reptile_step, Algorithm,
    Draw, MetaConfig, MetaState, StepSize, TaskSource, Trainer, MIN_RATE,
};
use dmaml::policy::checkpoint::Checkpoint;
use dmaml::policy::{Head, PolicyNet, DEFAULT_HIDDEN};
use dmaml::rl::{reinforce_objective, sample_batch, Advantages, PolicySurrogate, TrajectoryBatch};
use dmaml::rng::StreamKey;
use dmaml::Error;

const N: usize = 3;

fn quad_source(m: usize) -> QuadSource {
    QuadSource {
        tasks: (0..m)
            .map(|i| Quadratic {
                a: spd(N, 10 + i as u64),
                n: N,
            })
            .collect(),
    }
}

fn theta0() -> Vec<f64> {
    vec![0.4, -1.3, 0.9]
}

/// `θ' = (I − αA) θ` for the quadratic task.
fn adapted(a: &[f64], theta: &[f64], alpha: f64) -> Vec<f64> {
    axpy(-alpha, &mat_vec(a, theta), theta)
}

#[test]
fn inner_step_matches_closed_form() {
    let src = quad_source(1);
    let alpha = 0.1;
    let c = CallCounter::new();
    let th = ParamVector::from_slice(&theta0());
    let out = inner_adapt(&c, &src.tasks[0], &th, StepSize::Scalar(alpha)).unwrap();
    let expect = adapted(&src.tasks[0].a, &theta0(), alpha);
    assert!(max_abs_diff(out.params.values(), &expect) < 1e-12);
    let g: Vec<f64> = mat_vec(&src.tasks[0].a, &theta0()).iter().map(|x| -x).collect();
    assert!(max_abs_diff(out.gradient.values(), &g) < 1e-12);
    assert_eq!(c.counts().grads, 1);
}

#[test]
fn maml_matches_closed_form_on_quadratics() {
    let src = quad_source(4);
    let alpha = 0.05;
    let th = theta0();
    let c = CallCounter::new();
    let mg = maml_meta_gradient(&c, &src, &ParamVector::from_slice(&th), alpha).unwrap();
    // Σ_i (I − αA_i)(−A_i θ'_i)
    let mut expect = vec![0.0; N];
    for t in &src.tasks {
        let tp = adapted(&t.a, &th, alpha);
        let g: Vec<f64> = mat_vec(&t.a, &tp).iter().map(|x| -x).collect();
        let term = axpy(-alpha, &mat_vec(&t.a, &g), &g);
        expect = axpy(1.0, &term, &expect);
    }
    assert!(max_abs_diff(mg.total.values(), &expect) < 1e-6);
    assert_eq!(c.counts().grads, 8);
    assert_eq!(c.counts().hvps, 4);
}

#[test]
fn fomaml_differs_from_maml_by_the_hessian_term() {
    let src = quad_source(3);
    let alpha = 0.2;
    let th = theta0();
    let p = ParamVector::from_slice(&th);
    let c = CallCounter::new();
    let full = maml_meta_gradient(&c, &src, &p, alpha).unwrap();
    let first = fomaml_meta_gradient(&c, &src, &p, alpha).unwrap();
    // H_i = −A_i and g'_i = −A_i θ'_i, so α H_i g'_i = α A_i A_i θ'_i.
    let mut corr = vec![0.0; N];
    for t in &src.tasks {
        let tp = adapted(&t.a, &th, alpha);
        corr = axpy(alpha, &mat_vec(&t.a, &mat_vec(&t.a, &tp)), &corr);
    }
    let diff: Vec<f64> = full.total.values().iter().zip(first.total.values()).map(|(a, b)| a - b).collect();
    assert!(max_abs_diff(&diff, &corr) < 1e-10);
    assert!(first.correction.values().iter().all(|&x| x == 0.0));
}

#[test]
fn fomaml_uses_no_hessian_products() {
    let src = quad_source(5);
    let c = CallCounter::new();
    fomaml_meta_gradient(&c, &src, &ParamVector::from_slice(&theta0()), 0.1).unwrap();
    assert_eq!((c.counts().grads, c.counts().hvps), (10, 0));
}

#[test]
fn reptile_matches_hand_unrolled_steps() {
    let src = quad_source(3);
    let (alpha, beta) = (0.1, 0.3);
    let th = theta0();
    let c = CallCounter::new();
    let out = reptile_step(&c, &src, &ParamVector::from_slice(&th), alpha, beta, 3).unwrap();
    let mut shift = vec![0.0; N];
    for t in &src.tasks {
        let mut x = th.clone();
        for _ in 0..3 {
            x = adapted(&t.a, &x, alpha);
        }
        shift = axpy(1.0, &axpy(-1.0, &th, &x), &shift);
    }
    let expect = axpy(beta / 3.0, &shift, &th);
    assert!(max_abs_diff(out.values(), &expect) < 1e-10);
    assert_eq!((c.counts().grads, c.counts().hvps), (9, 0));
}

#[test]
fn maml_matches_finite_differences_of_the_bilevel_objective() {
    let src = bandit_source();
    let alpha = 0.7;
    let th = [0.3, -0.2];
    let c = CallCounter::new();
    let mg = maml_meta_gradient(&c, &src, &ParamVector::from_slice(&th), alpha).unwrap();
    let fd = central_diff(|x| bilevel_value(&src, x, &[alpha, alpha]), &th, 1e-5);
    let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(max_abs_diff(mg.total.values(), &fd) / scale < 1e-3);
    // The Hessian term is not negligible here, so first order alone must miss.
    assert!(max_abs_diff(mg.first_order.values(), &fd) / scale > 1e-2);
}

#[test]
fn metasgd_gradients_match_finite_differences() {
    let src = bandit_source();
    let th = [0.3, -0.2];
    let rates = [0.5, 0.9];
    let c = CallCounter::new();
    let beta = 0.01;
    let up = metasgd_step(
        &c,
        &src,
        &ParamVector::from_slice(&th),
        &ParamVector::from_slice(&rates),
        beta,
    )
    .unwrap();
    let fd_rates = central_diff(|r| bilevel_value(&src, &th, r), &rates, 1e-5);
    let scale = fd_rates.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(max_abs_diff(up.rate_gradient.values(), &fd_rates) / scale < 1e-3);
    let fd_theta = central_diff(|x| bilevel_value(&src, x, &rates), &th, 1e-5);
    let scale = fd_theta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(max_abs_diff(up.meta_gradient.total.values(), &fd_theta) / scale < 1e-3);
    for i in 0..2 {
        let r = (rates[i] + beta * up.rate_gradient.values()[i]).max(MIN_RATE);
        assert_eq!(up.rates.values()[i], r);
        assert_eq!(up.theta.values()[i], th[i] + beta * up.meta_gradient.total.values()[i]);
    }
}

#[test]
fn metasgd_rates_are_clamped_positive() {
    // Identity curvature with rate 3 overshoots: θ' = −2θ, so the rate
    // gradient is −2θ² and a large outer step drives the rates negative.
    let src = QuadSource {
        tasks: vec![Quadratic {
            a: vec![1.0, 0.0, 0.0, 1.0],
            n: 2,
        }],
    };
    let c = CallCounter::new();
    let up = metasgd_step(
        &c,
        &src,
        &ParamVector::from_slice(&[1.0, 1.0]),
        &ParamVector::from_slice(&[3.0, 3.0]),
        10.0,
    )
    .unwrap();
    assert!(max_abs_diff(up.rate_gradient.values(), &[-2.0, -2.0]) < 1e-12);
    assert_eq!(up.rates.values(), &[MIN_RATE, MIN_RATE]);
    let bad = metasgd_step(
        &c,
        &src,
        &ParamVector::from_slice(&[1.0, 1.0]),
        &ParamVector::from_slice(&[0.1, 0.0]),
        0.1,
    );
    assert!(matches!(bad, Err(Error::Validation { .. })));
}

#[test]
fn empty_task_set_is_rejected() {
    let src = QuadSource { tasks: vec![] };
    let c = CallCounter::new();
    let p = ParamVector::from_slice(&theta0());
    assert!(matches!(maml_meta_gradient(&c, &src, &p, 0.1), Err(Error::EmptyTaskSet)));
    assert!(matches!(fomaml_meta_gradient(&c, &src, &p, 0.1), Err(Error::EmptyTaskSet)));
    assert!(matches!(reptile_step(&c, &src, &p, 0.1, 0.1, 3), Err(Error::EmptyTaskSet)));
}

#[test]
fn prestep_is_one_first_order_step() {
    let src = quad_source(1);
    let c = CallCounter::new();
    let out = directed_prestep(&c, &src.tasks[0], &ParamVector::from_slice(&theta0()), 0.01).unwrap();
    assert!(max_abs_diff(out.params.values(), &adapted(&src.tasks[0].a, &theta0(), 0.01)) < 1e-12);
    assert_eq!((c.counts().grads, c.counts().hvps), (1, 0));
    let zero = directed_prestep(&c, &src.tasks[0], &ParamVector::from_slice(&theta0()), 0.0).unwrap();
    assert_eq!(zero.params.values(), theta0().as_slice());
}

fn small_config(algorithm: Algorithm, seed: u64) -> MetaConfig {
    MetaConfig {
        algorithm,
        seed,
        m_tasks: 2,
        k_trajs: 3,
        delta: 0.002,
        epochs: 10,
        ..MetaConfig::default()
    }
}

#[test]
fn directed_adds_one_gradient_and_k_rollouts() {
    for (base, directed) in [
        (Algorithm::Maml, Algorithm::DirectedMaml),
        (Algorithm::Fomaml, Algorithm::DirectedFomaml),
        (Algorithm::MetaSgd, Algorithm::DirectedMetaSgd),
    ] {
        let mut b = Trainer::new(small_config(base, 4)).unwrap();
        let mut d = Trainer::new(small_config(directed, 4)).unwrap();
        let mb = b.train_epoch().unwrap();
        let md = d.train_epoch().unwrap();
        assert_eq!(md.grad_calls, mb.grad_calls + 1, "{base}");
        assert_eq!(md.hvp_calls, mb.hvp_calls, "{base}");
        assert_eq!(md.rollouts, mb.rollouts + 3, "{base}");
        assert!(mb.prestep_grad_norm.is_none() && md.prestep_grad_norm.is_some());
    }
}

#[test]
fn epoch_call_counts() {
    let m = Trainer::new(small_config(Algorithm::Maml, 2)).unwrap().train_epoch().unwrap();
    assert_eq!((m.grad_calls, m.hvp_calls, m.rollouts), (4, 2, 12));
    let f = Trainer::new(small_config(Algorithm::Fomaml, 2)).unwrap().train_epoch().unwrap();
    assert_eq!((f.grad_calls, f.hvp_calls, f.rollouts), (4, 0, 12));
    let r = Trainer::new(small_config(Algorithm::Reptile, 2)).unwrap().train_epoch().unwrap();
    assert_eq!((r.grad_calls, r.hvp_calls, r.rollouts), (6, 0, 18));
}

#[test]
fn zero_prestep_is_neutral() {
    let mut base = Trainer::new(small_config(Algorithm::Maml, 9)).unwrap();
    let mut dir = Trainer::new(MetaConfig {
        delta: 0.0,
        ..small_config(Algorithm::DirectedMaml, 9)
    })
    .unwrap();
    for _ in 0..3 {
        let a = base.train_epoch().unwrap();
        let b = dir.train_epoch().unwrap();
        assert_eq!(a.eval_return.to_bits(), b.eval_return.to_bits());
        assert_eq!(base.state().theta, dir.state().theta);
    }
}

#[test]
fn training_is_deterministic() {
    for alg in [Algorithm::DirectedMaml, Algorithm::MetaSgd, Algorithm::Reptile] {
        let mut a = Trainer::new(small_config(alg, 11)).unwrap();
        let mut b = Trainer::new(small_config(alg, 11)).unwrap().with_parallel_rollouts(true);
        for _ in 0..3 {
            let x = a.train_epoch().unwrap();
            let y = b.train_epoch().unwrap();
            assert!(x.same_outcome(&y), "{alg}");
        }
        assert_eq!(a.state(), b.state());
    }
    let mut c = Trainer::new(small_config(Algorithm::DirectedMaml, 12)).unwrap();
    let mut a = Trainer::new(small_config(Algorithm::DirectedMaml, 11)).unwrap();
    c.train_epoch().unwrap();
    a.train_epoch().unwrap();
    assert_ne!(a.state().theta, c.state().theta);
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    for alg in [Algorithm::DirectedMetaSgd, Algorithm::Maml] {
        let mut cfg = small_config(alg, 5);
        cfg.learner = dmaml::meta::Learner::Ac;
        let mut full = Trainer::new(cfg.clone()).unwrap();
        let metrics: Vec<_> = (0..3).map(|_| full.train_epoch().unwrap()).collect();

        let mut first = Trainer::new(cfg.clone()).unwrap();
        first.train_epoch().unwrap();
        let bytes = first.state().to_checkpoint().to_bytes();
        let state = MetaState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let mut resumed = Trainer::from_state(cfg, state).unwrap();
        for m in &metrics[1..] {
            assert!(resumed.train_epoch().unwrap().same_outcome(m));
        }
        assert_eq!(resumed.state(), full.state());
    }
}

struct PointTasks {
    net: PolicyNet,
    batches: Vec<(TrajectoryBatch, TrajectoryBatch)>,
}

impl TaskSource for PointTasks {
    type Surrogate<'s> = PolicySurrogate<'s>;

    fn n_tasks(&self) -> usize {
        self.batches.len()
    }

    fn surrogate(&self, task: usize, draw: Draw, _params: &ParamVector) -> dmaml::Result<PolicySurrogate<'_>> {
        let b = match draw {
            Draw::Support(_) => &self.batches[task].0,
            Draw::Query => &self.batches[task].1,
        };
        reinforce_objective(&self.net, b, 0.99, Advantages::Standardized)
    }
}

#[test]
fn prestep_direction_agrees_with_maml_at_a_point_distribution() {
    // With every task equal to the medium one, the pre-step gradient and the
    // meta-gradient estimate the same ascent direction.
    let env = make_env(Task::new(Family::CartPole, 10.0).unwrap());
    let net = PolicyNet::new(4, &DEFAULT_HIDDEN, Head::for_actions(env.action_spec()));
    let mut dots = Vec::new();
    for s in 0..24u64 {
        let root = StreamKey::root(1000 + s);
        let theta = net.init_params(&mut root.child(1).rng());
        let med = sample_batch(&env, &net, &theta, 5, root.child(2)).unwrap();
        let med_obj = reinforce_objective(&net, &med, 0.99, Advantages::Standardized).unwrap();
        let c = CallCounter::new();
        let g_med = directed_prestep(&c, &med_obj, &theta, 0.0).unwrap().gradient;
        // Batches are drawn at θ, matching the small-α regime.
        let batches = (0..2u64)
            .map(|i| {
                (
                    sample_batch(&env, &net, &theta, 5, root.child(3).child(i)).unwrap(),
                    sample_batch(&env, &net, &theta, 5, root.child(4).child(i)).unwrap(),
                )
            })
            .collect();
        let src = PointTasks { net: net.clone(), batches };
        let mg = maml_meta_gradient(&c, &src, &theta, 0.001).unwrap();
        dots.push(g_med.dot(&mg.total).unwrap());
    }
    let n = dots.len() as f64;
    let mean = dots.iter().sum::<f64>() / n;
    let sd = (dots.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean + 3.0 * sd / n.sqrt() >= 0.0, "mean {mean}, sd {sd}");
}

#[test]
fn algebraic_reductions() {
    let src = quad_source(3);
    let th = theta0();
    let p = ParamVector::from_slice(&th);
    let c = CallCounter::new();

    let same = inner_adapt(&c, &src.tasks[0], &p, StepSize::Scalar(0.0)).unwrap();
    assert_eq!(same.params, p);

    // α = 0: no adaptation, and the Hessian term vanishes.
    let maml0 = maml_meta_gradient(&c, &src, &p, 0.0).unwrap();
    let fo0 = fomaml_meta_gradient(&c, &src, &p, 0.0).unwrap();
    let mut plain = vec![0.0; N];
    for t in &src.tasks {
        plain = axpy(-1.0, &mat_vec(&t.a, &th), &plain);
    }
    assert!(max_abs_diff(maml0.total.values(), &plain) < 1e-12);
    assert_eq!(maml0.total.values(), fo0.total.values());

    // One task, one inner step: Reptile is SGD with step βα.
    let one = QuadSource {
        tasks: vec![src.tasks[0].clone()],
    };
    let (alpha, beta) = (0.1, 0.5);
    let r = reptile_step(&c, &one, &p, alpha, beta, 1).unwrap();
    let g: Vec<f64> = mat_vec(&one.tasks[0].a, &th).iter().map(|x| -x).collect();
    assert!(max_abs_diff(r.values(), &axpy(beta * alpha, &g, &th)) < 1e-12);

    // Rates all equal to α: Meta-SGD's θ-update is MAML's.
    let alpha = 0.05;
    let rates = ParamVector::filled(p.layout().clone(), alpha);
    let up = metasgd_step(&c, &src, &p, &rates, beta).unwrap();
    let mg = maml_meta_gradient(&c, &src, &p, alpha).unwrap();
    assert!(max_abs_diff(up.theta.values(), p.add_scaled(beta, &mg.total).unwrap().values()) < 1e-14);
}

#[test]
fn first_metasgd_epoch_matches_maml() {
    let mut a = Trainer::new(small_config(Algorithm::MetaSgd, 21)).unwrap();
    let mut b = Trainer::new(small_config(Algorithm::Maml, 21)).unwrap();
    let ma = a.train_epoch().unwrap();
    let mb = b.train_epoch().unwrap();
    assert_eq!(ma.eval_return.to_bits(), mb.eval_return.to_bits());
    let diff = a.state().theta.sub(&b.state().theta).unwrap().max_abs();
    assert!(diff < 1e-12, "{diff}");
}
