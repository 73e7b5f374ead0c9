//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::module::{Module, ParamRef};
use crate::tensor::Tensor;

/// Largest relative error found, with the location it occurred at.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor for [`rel_err`]. Central differences at `eps = 1e-5`
/// carry roundoff near `1e-11 * |loss|`, so gradients that are exactly zero
/// (for example an attention key bias, which softmax cancels) would
/// otherwise report errors of order one.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn nudge<M: Module>(module: &mut M, target: usize, delta: f64) {
    let mut seen = 0usize;
    module.visit_mut("", &mut |_, t, kind| {
        if kind != ParamRef::Weight || !t.requires_grad() {
            return;
        }
        if target >= seen && target < seen + t.len() {
            t.data_mut()[target - seen] += delta;
        }
        seen += t.len();
    });
}

/// Compares backward gradients of every trainable weight in `module` and
/// every tensor in `inputs` against central differences.
///
/// `build` must return a scalar. The graph is reseeded with `graph_seed`
/// before every evaluation so stochastic layers see identical masks.
pub fn check<M, F>(
    module: &mut M,
    inputs: &mut [Tensor],
    eps: f64,
    graph_seed: u64,
    build: F,
) -> Result<GradReport>
where
    M: Module,
    F: Fn(&mut Graph, &M, &[Var]) -> Result<Var>,
{
    let eval = |module: &M, inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(graph_seed);
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
        let loss = build(&mut g, module, &vars)?;
        Ok(g.scalar(loss))
    };

    module.zero_grad();
    let mut g = Graph::new(graph_seed);
    let vars: Vec<Var> = inputs
        .iter_mut()
        .map(|t| {
            t.set_requires_grad(true);
            g.leaf(t)
        })
        .collect();
    let loss = build(&mut g, module, &vars)?;
    g.backward(loss)?;
    g.accumulate_grads(module)?;

    let mut analytic: Vec<(String, f64)> = Vec::new();
    module.visit("", &mut |name, t, kind| {
        if kind != ParamRef::Weight || !t.requires_grad() {
            return;
        }
        let zeros = vec![0.0; t.len()];
        let grad = t.grad().unwrap_or(&zeros);
        for (i, v) in grad.iter().enumerate() {
            analytic.push((format!("{name}[{i}]"), *v));
        }
    });
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs.iter())
        .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, a: f64, n: f64| {
        let e = rel_err(a, n);
        report.checked += 1;
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e;
            report.worst = format!("{name}: analytic {a:e}, numeric {n:e}");
        }
    };

    for (idx, (name, a)) in analytic.into_iter().enumerate() {
        nudge(module, idx, eps);
        let plus = eval(module, inputs)?;
        nudge(module, idx, -2.0 * eps);
        let minus = eval(module, inputs)?;
        nudge(module, idx, eps);
        record(name, a, (plus - minus) / (2.0 * eps));
    }
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + eps;
            let plus = eval(module, inputs)?;
            inputs[k].data_mut()[i] = orig - eps;
            let minus = eval(module, inputs)?;
            inputs[k].data_mut()[i] = orig;
            record(
                format!("input{k}[{i}]"),
                input_grads[k][i],
                (plus - minus) / (2.0 * eps),
            );
        }
    }
    module.zero_grad();
    Ok(report)
}

/// Deterministic projection weights so a vector-valued output becomes a
/// scalar loss with non-degenerate gradients: `sum(out * w)`.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n = g.value(out).len();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weighted = g.mul_const(out, w)?;
    Ok(g.sum(weighted))
}

/// No parameters; for checking bare graph ops.
pub struct NoParams;

impl Module for NoParams {
    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Tensor, ParamRef)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {}
}

fn random_input(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::uniform(shape, scale, rng)
}

/// Runs a finite-difference check of every layer type for one seed.
///
/// Returns `(layer name, report)` pairs. Shapes are kept small so the full
/// suite over ten seeds takes well under a second in release builds.
pub fn layer_suite(seed: u64, eps: f64) -> Result<Vec<(&'static str, GradReport)>> {
    use crate::layers::*;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut dense = Dense::new(4, 3, &mut rng);
    let mut x = [random_input(&mut rng, &[5, 4], 1.0)];
    out.push((
        "dense",
        check(&mut dense, &mut x, eps, seed, |g, m, v| {
            let y = m.forward(g, v[0])?;
            project(g, y, seed)
        })?,
    ));

    let mut none = NoParams;
    let mut x = [random_input(&mut rng, &[3, 4], 2.0)];
    out.push((
        "activations",
        check(&mut none, &mut x, eps, seed, |g, _, v| {
            let a = g.relu(v[0]);
            let b = g.tanh(v[0]);
            let c = g.sigmoid(v[0]);
            let s = g.softmax_rows(v[0], None)?;
            let ab = g.concat_cols(&[a, b])?;
            let cs = g.concat_cols(&[c, s])?;
            let all = g.concat_rows(&[ab, cs])?;
            project(g, all, seed)
        })?,
    ));

    let mut none = NoParams;
    let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    let mut x = [random_input(&mut rng, &[6, 1], 2.0)];
    out.push((
        "bce",
        check(&mut none, &mut x, eps, seed, |g, _, v| {
            let l1 = g.bce_with_logits(v[0], &labels)?;
            let p = g.sigmoid(v[0]);
            let l2 = g.bce(p, &labels)?;
            g.add(l1, l2)
        })?,
    ));

    let mut bn = BatchNorm1d::new(3);
    let mut x = [random_input(&mut rng, &[6, 3], 1.5)];
    out.push((
        "batchnorm",
        check(&mut bn, &mut x, eps, seed, |g, m, v| {
            let y = m.forward(g, v[0], true)?;
            project(g, y, seed)
        })?,
    ));

    let mut none = NoParams;
    let drop = Dropout::new(0.3)?;
    let mut x = [random_input(&mut rng, &[4, 5], 1.0)];
    out.push((
        "dropout",
        check(&mut none, &mut x, eps, seed, |g, _, v| {
            let y = drop.forward(g, v[0], true)?;
            project(g, y, seed)
        })?,
    ));

    let mut ln = LayerNorm::new(4);
    perturb_weights(&mut ln, &mut rng);
    let mut x = [random_input(&mut rng, &[3, 4], 1.5)];
    out.push((
        "layernorm",
        check(&mut ln, &mut x, eps, seed, |g, m, v| {
            let y = m.forward(g, v[0])?;
            project(g, y, seed)
        })?,
    ));

    let mut gru = GruCell::new(3, 4, &mut rng)?;
    let mut xs = [
        random_input(&mut rng, &[2, 3], 1.0),
        random_input(&mut rng, &[2, 3], 1.0),
        random_input(&mut rng, &[2, 3], 1.0),
    ];
    let mask = vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    out.push((
        "gru",
        check(&mut gru, &mut xs, eps, seed, |g, m, v| {
            let h = m.run(g, v, Some(&mask))?;
            project(g, h, seed)
        })?,
    ));

    let mut emb = Embedding::new(6, 3, &mut rng);
    let ids = [0usize, 3, 3, 5, 1];
    out.push((
        "embedding",
        check(&mut emb, &mut [], eps, seed, |g, m, _| {
            let y = m.forward(g, &ids)?;
            let y = g.tanh(y);
            project(g, y, seed)
        })?,
    ));

    let mut mha = MultiHeadAttention::new(4, 2, &mut rng)?;
    let mut x = [random_input(&mut rng, &[6, 4], 1.0)];
    let key_mask = [true, true, false, true, true, true];
    out.push((
        "attention",
        check(&mut mha, &mut x, eps, seed, |g, m, v| {
            let y = m.forward(g, v[0], 3, &key_mask)?;
            project(g, y, seed)
        })?,
    ));

    let mut block = TransformerBlock::new(4, 2, 6, &mut rng)?;
    perturb_weights(&mut block, &mut rng);
    let mut x = [random_input(&mut rng, &[6, 4], 1.0)];
    out.push((
        "transformer",
        check(&mut block, &mut x, eps, seed, |g, m, v| {
            let y = m.forward(g, v[0], 3, &key_mask)?;
            project(g, y, seed)
        })?,
    ));

    let mut none = NoParams;
    let mut xs = [
        random_input(&mut rng, &[3, 4], 1.0),
        random_input(&mut rng, &[4, 2], 1.0),
        random_input(&mut rng, &[3, 2], 1.0),
    ];
    out.push((
        "tensor ops",
        check(&mut none, &mut xs, eps, seed, |g, _, v| {
            let p = g.matmul(v[0], v[1])?;
            let q = g.mul(p, v[2])?;
            let r = g.sub(q, v[2])?;
            let r = g.blend_rows(r, p, vec![0.25, 1.0, 0.0])?;
            let s = g.slice_cols(v[0], 1, 3)?;
            let s = g.gather_rows(s, &[2, 0, 0])?;
            let t = g.add(r, s)?;
            let m0 = g.mean_axis(t, 0)?;
            let m1 = g.mean_axis(t, 1)?;
            let a = project(g, m0, seed)?;
            let b = project(g, m1, seed + 1)?;
            let c = g.mean(t);
            let c = g.scale(c, 0.5);
            let c = g.add_scalar(c, 1.0);
            let ab = g.add(a, b)?;
            g.add(ab, c)
        })?,
    ));

    Ok(out)
}

/// Moves unit-gamma, zero-beta style initialisations away from their
/// special values so the check exercises general parameter settings.
fn perturb_weights<M: Module>(module: &mut M, rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    module.visit_mut("", &mut |_, t, kind| {
        if kind == ParamRef::Weight {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        w: Tensor,
    }

    impl Module for Quad {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamRef)) {
            f(&crate::module::join(prefix, "w"), &self.w, ParamRef::Weight);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamRef)) {
            f(&crate::module::join(prefix, "w"), &mut self.w, ParamRef::Weight);
        }
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!(rel_err(1e-12, 2e-12) < 1e-4);
    }

    #[test]
    fn elementwise_product_passes() {
        let mut m = Quad {
            w: Tensor::new(vec![1, 3], vec![0.5, -1.5, 2.0]).unwrap().trainable(),
        };
        let mut x = [Tensor::new(vec![1, 3], vec![1.0, 2.0, -0.5]).unwrap()];
        let r = check(&mut m, &mut x, 1e-5, 0, |g, m, v| {
            let w = g.param(&m.w);
            let p = g.mul(w, v[0])?;
            let t = g.tanh(p);
            Ok(g.sum(t))
        })
        .unwrap();
        assert_eq!(r.checked, 6);
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // mul_const treats its constant as data; pretend it was the weight to
        // produce a deliberately missing gradient path.
        let mut m = Quad {
            w: Tensor::new(vec![1, 2], vec![0.5, -1.5]).unwrap().trainable(),
        };
        let r = check(&mut m, &mut [], 1e-5, 0, |g, m, _| {
            let w = g.constant(&m.w);
            Ok(g.sum(w))
        })
        .unwrap();
        assert!(r.max_rel_err > 0.5);
    }
}
