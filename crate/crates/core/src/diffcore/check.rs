use super::graph::{Bindings, Graph, Mode, NodeId};
use crate::Result;

/// Largest disagreement between reverse-mode gradients and central
/// differences, `|analytic - numeric| / max(1, |numeric|)`, over every
/// coordinate of every [`Graph::param`] leaf.
///
/// A coordinate is skipped when nudging it by `eps` either way moves a relu
/// input or an MAE residual across zero: the loss has a kink there and the
/// difference quotient measures neither side.
pub fn finite_diff_check(g: &Graph, bindings: &Bindings, loss: NodeId, mode: Mode, eps: f64) -> Result<f64> {
    assert!(eps > 0.0, "eps must be positive");
    let base = g.forward(bindings, mode)?;
    let signature = base.kink_signature();
    let analytic = base.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = bindings.clone();
    for name in g.param_names() {
        let Some(grad) = analytic.get(name) else { continue };
        for i in 0..grad.len() {
            let x0 = bindings[name].data()[i];
            let mut side = |x: f64| -> Result<Option<f64>> {
                probe.get_mut(name).expect("bound").data_mut()[i] = x;
                let ev = g.forward(&probe, mode)?;
                (ev.kink_signature() == signature)
                    .then(|| ev.value(loss).item())
                    .transpose()
            };
            let plus = side(x0 + eps)?;
            let minus = side(x0 - eps)?;
            probe.get_mut(name).expect("bound").data_mut()[i] = x0;
            if let (Some(fp), Some(fm)) = (plus, minus) {
                let numeric = (fp - fm) / (2.0 * eps);
                let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn every_node_type_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d, h, c, k, l, e) = (4, 3, 5, 3, 3, 2, 2);
        let mut g = Graph::new();
        let x = g.param("x");
        let arch = g.param("arch");
        let emb = g.param("emb");
        let flat = g.param("flat");
        let w1 = g.param("w1");
        let b1 = g.param("b1");
        let w2 = g.param("w2");
        let w3 = g.param("w3");
        let labels = g.input("labels");
        let target = g.input("target");

        let stem = g.affine(x, w1, Some(b1));
        let branch = g.affine(stem, w2, None);
        let branch = g.relu(branch);
        let mixed = g.weighted_mix(arch, 1, vec![Some(stem), Some(branch), None]);
        let dropped = g.dropout(mixed, 0.3);
        let logits = g.affine(dropped, w3, None);
        let ce = g.cross_entropy(logits, labels);
        let probs = g.softmax(logits);
        let embedded = g.embedding_apply(emb, flat);
        let mae_probs = g.mae(probs, target);
        let mae_emb = g.mae(embedded, target);
        let _ = (ce, mae_probs, mae_emb);

        let mut b = Bindings::new();
        b.insert("x".into(), random(&mut rng, vec![n, d]));
        b.insert("arch".into(), random(&mut rng, vec![k, l]));
        b.insert("emb".into(), random(&mut rng, vec![l, e, k]));
        b.insert("flat".into(), random(&mut rng, vec![3, l * k]));
        b.insert("w1".into(), random(&mut rng, vec![h, d]));
        b.insert("b1".into(), random(&mut rng, vec![h]));
        b.insert("w2".into(), random(&mut rng, vec![h, h]));
        b.insert("w3".into(), random(&mut rng, vec![c, h]));
        b.insert("labels".into(), Tensor::vector(vec![0.0, 2.0, 1.0, 2.0]));
        b.insert("target".into(), random(&mut rng, vec![n * c]));

        for loss in [ce, mae_probs] {
            for mode in [Mode::Eval, Mode::Train { seed: 9 }] {
                let err = finite_diff_check(&g, &b, loss, mode, 1e-5).unwrap();
                assert!(err < 1e-4, "{err}");
            }
        }
        b.insert("target".into(), random(&mut rng, vec![3 * l * e]));
        assert!(finite_diff_check(&g, &b, mae_emb, Mode::Eval, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn constant_graph_has_zero_error() {
        let mut g = Graph::new();
        let p = g.param("p");
        let t = g.input("t");
        let unused = g.relu(p);
        let loss = g.mae(t, t);
        let _ = unused;
        let mut b = Bindings::new();
        b.insert("p".into(), Tensor::vector(vec![0.3, -0.2]));
        b.insert("t".into(), Tensor::vector(vec![1.0]));
        assert_eq!(finite_diff_check(&g, &b, loss, Mode::Eval, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn relu_kink_is_excluded() {
        // At x = 0 the one-sided slopes are 0 and 1; the central quotient
        // (0.5) would disagree with either.
        let mut g = Graph::new();
        let x = g.param("x");
        let t = g.input("t");
        let y = g.relu(x);
        let loss = g.mae(y, t);
        let mut b = Bindings::new();
        b.insert("x".into(), Tensor::vector(vec![0.0]));
        b.insert("t".into(), Tensor::vector(vec![-1.0]));
        assert_eq!(finite_diff_check(&g, &b, loss, Mode::Eval, 1e-5).unwrap(), 0.0);
    }
}
