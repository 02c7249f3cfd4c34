use warpadam::nn::InnerTask;
use warpadam::optim::HyperParams;
use warpadam::tensor::{Graph, Tensor, Var};
use warpadam::warp::{hypergrad, meta_update, MetaConfig, MetaState, WarpMatrix};
use warpadam::Result;

/// L(w) = (w - a)^2 / 2 on support, (w - b)^2 / 2 on query.
struct Quadratic {
    a: f64,
    b: f64,
}

fn half_square(g: &Graph, w: Var, target: f64) -> Result<Var> {
    let d = g.add_scalar(w, -target)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    g.mul_scalar(s, 0.5)
}

impl InnerTask for Quadratic {
    fn support_loss(&self, g: &Graph, p: &[Var]) -> Result<Var> {
        half_square(g, p[0], self.a)
    }
    fn query_loss(&self, g: &Graph, p: &[Var]) -> Result<Var> {
        half_square(g, p[0], self.b)
    }
}

fn scalar_p(p: f64) -> Vec<WarpMatrix> {
    vec![WarpMatrix::dense(1, vec![p]).unwrap()]
}

#[test]
fn one_step_sign_update_has_flat_hypergradient() {
    // with eps = 0 the first step is w0 - eta * sign(p * g), which no small
    // change of p can move
    let w0 = [Tensor::vector(vec![0.3])];
    for (p, a, b) in [(1.7, -0.4, 1.1), (-0.6, 2.0, 0.0), (0.05, 0.9, -3.0)] {
        let cfg = MetaConfig {
            inner_steps: 1,
            inner_hyper: HyperParams {
                eta: 0.1,
                epsilon: 0.0,
                ..HyperParams::default()
            },
            ..MetaConfig::default()
        };
        let h = hypergrad(&Quadratic { a, b }, &w0, &scalar_p(p), &cfg).unwrap();
        assert!(h.grads[0][0].abs() < 1e-12, "p={p}: {}", h.grads[0][0]);
        // the step itself did happen
        let w1 = 0.3 - 0.1 * (p * (0.3 - a)).signum();
        assert!((h.query_loss - 0.5 * (w1 - b) * (w1 - b)).abs() < 1e-15);
    }
}

/// The whole outer step as one expression in p: every task's K inner Adam
/// steps written out with the analytic gradient w - a, then the batch-mean
/// query loss differentiated once.
fn brute_force_outer_step(p0: f64, w0: f64, tasks: &[(f64, f64)], k: usize, inner: &HyperParams, outer: &HyperParams) -> f64 {
    let g = Graph::new();
    let p = g.leaf(Tensor::vector(vec![p0])).unwrap();
    let mut total: Option<Var> = None;
    for &(a, b) in tasks {
        let mut w = g.constant(Tensor::vector(vec![w0])).unwrap();
        let mut m = g.constant(Tensor::vector(vec![0.0])).unwrap();
        let mut v = g.constant(Tensor::vector(vec![0.0])).unwrap();
        for t in 1..=k {
            let grad = g.add_scalar(w, -a).unwrap();
            let pg = g.mul(p, grad).unwrap();
            let m_decay = g.mul_scalar(m, inner.beta1).unwrap();
            let m_new = g.mul_scalar(pg, 1.0 - inner.beta1).unwrap();
            m = g.add(m_decay, m_new).unwrap();
            let pg2 = g.mul(pg, pg).unwrap();
            let v_decay = g.mul_scalar(v, inner.beta2).unwrap();
            let v_new = g.mul_scalar(pg2, 1.0 - inner.beta2).unwrap();
            v = g.add(v_decay, v_new).unwrap();
            let m_hat = g.div_scalar(m, 1.0 - inner.beta1.powi(t as i32)).unwrap();
            let v_hat = g.div_scalar(v, 1.0 - inner.beta2.powi(t as i32)).unwrap();
            let den = g.add_scalar(v_hat, inner.epsilon).unwrap();
            let den = g.sqrt(den).unwrap();
            let ratio = g.div(m_hat, den).unwrap();
            let step = g.mul_scalar(ratio, inner.eta).unwrap();
            w = g.sub(w, step).unwrap();
        }
        let d = g.add_scalar(w, -b).unwrap();
        let q = g.mul(d, d).unwrap();
        let q = g.mul_scalar(q, 0.5).unwrap();
        total = Some(match total {
            None => q,
            Some(acc) => g.add(acc, q).unwrap(),
        });
    }
    let mean = g.div_scalar(total.unwrap(), tasks.len() as f64).unwrap();
    let loss = g.sum(mean).unwrap();
    let hg = g.grad_values(loss, &[p]).unwrap()[0].data()[0];
    // fresh outer Adam state: m_hat = hg, v_hat = hg^2
    p0 - outer.eta * hg / (hg * hg + outer.epsilon).sqrt()
}

#[test]
fn meta_update_matches_brute_force_single_graph() {
    let tasks = [(0.8, 1.0), (-0.5, -0.2), (1.5, 1.1), (0.1, 0.4)];
    let inner = HyperParams {
        eta: 0.05,
        ..HyperParams::default()
    };
    for (p0, k) in [(1.0, 1), (1.3, 3), (0.7, 5)] {
        let cfg = MetaConfig {
            inner_steps: k,
            inner_hyper: inner,
            outer_eta: 0.01,
            tod_lambda: 0.5, // a 1x1 warp has no off-diagonal to penalise
            ..MetaConfig::default()
        };
        let quads: Vec<_> = tasks.iter().map(|&(a, b)| Quadratic { a, b }).collect();
        let state = MetaState::from_warps(scalar_p(p0));
        let (next, _) = meta_update(&state, &quads, &[Tensor::vector(vec![0.2])], &cfg).unwrap();
        let got = next.warps[0].params()[0];
        let outer = HyperParams {
            eta: cfg.outer_eta,
            ..HyperParams::default()
        };
        let want = brute_force_outer_step(p0, 0.2, &tasks, k, &inner, &outer);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "p0={p0} K={k}: {got} vs {want}"
        );
        assert_ne!(got, p0);
    }
}

#[test]
fn hypergradient_matches_finite_differences_on_quadratics() {
    let task = Quadratic { a: 1.2, b: 0.7 };
    let w0 = [Tensor::vector(vec![-0.4])];
    let cfg = MetaConfig {
        inner_steps: 4,
        inner_hyper: HyperParams {
            eta: 0.2,
            epsilon: 1e-3,
            ..HyperParams::default()
        },
        ..MetaConfig::default()
    };
    let p = 0.9;
    let h = hypergrad(&task, &w0, &scalar_p(p), &cfg).unwrap();
    let eps = 1e-5;
    let up = hypergrad(&task, &w0, &scalar_p(p + eps), &cfg).unwrap().query_loss;
    let down = hypergrad(&task, &w0, &scalar_p(p - eps), &cfg).unwrap().query_loss;
    let fd = (up - down) / (2.0 * eps);
    let got = h.grads[0][0];
    assert!((got - fd).abs() <= 1e-6 * fd.abs().max(1e-8), "{got} vs {fd}");
}
