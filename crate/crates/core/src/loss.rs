//! Training objectives: local-global contrastive alignment between the
//! graph and hypergraph paths, and the joint MSE + contrastive + L2 loss.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::params::{ParamId, ParamSet};
use crate::views::View;

/// Matched per-layer, per-view activations from the two encoder paths.
pub struct ContrastivePair {
    pub layer: usize,
    pub view: View,
    /// Graph-path activation (N, T', d).
    pub graph: Var,
    /// Hypergraph-path activation (N, T', d).
    pub hyper: Var,
}

pub struct ContrastiveResult {
    pub loss: Var,
    /// Region vectors whose norm vanished; their cosine is treated as 0.
    pub degenerate_vectors: usize,
}

/// InfoNCE over regions: for every (view, layer), time-pooled graph vectors
/// must match their own region's hypergraph vector against all other
/// regions'. Minimized form (negated log-softmax diagonal), averaged over
/// (view, layer, region).
pub fn contrastive_loss(
    tape: &mut Tape,
    pairs: &[ContrastivePair],
    temperature: f64,
) -> ContrastiveResult {
    assert!(!pairs.is_empty(), "contrastive loss needs at least one pair");
    assert!(temperature > 0.0, "temperature must be positive");
    let n = tape.value(pairs[0].graph).dims()[0];
    let mut degenerate = 0usize;
    let mut acc: Option<Var> = None;
    for pair in pairs {
        let g = tape.mean_axis(pair.graph, 1); // (N, d)
        let h = tape.mean_axis(pair.hyper, 1);
        let gg = tape.mul(g, g);
        let g_norm_sq = tape.sum_axis(gg, 1);
        let g_norm = tape.sqrt0(g_norm_sq);
        let hh = tape.mul(h, h);
        let h_norm_sq = tape.sum_axis(hh, 1);
        let h_norm = tape.sqrt0(h_norm_sq);
        degenerate += tape
            .value(g_norm)
            .data()
            .iter()
            .chain(tape.value(h_norm).data())
            .filter(|&&v| v == 0.0)
            .count();

        let ht = tape.permute(h, &[1, 0]);
        let dots = tape.matmul(g, ht); // (N, N): row = anchor region
        let g_inv = tape.recip0(g_norm);
        let h_inv = tape.recip0(h_norm);
        let cos = tape.row_scale(dots, g_inv);
        let cos_t = tape.permute(cos, &[1, 0]);
        let cos_t = tape.row_scale(cos_t, h_inv);
        let cos = tape.permute(cos_t, &[1, 0]);

        let logits = tape.mul_scalar(cos, 1.0 / temperature);
        let log_p = tape.log_softmax_last(logits);
        let diag = tape.take_diag(log_p);
        let s = tape.sum_all(diag);
        acc = Some(match acc {
            None => s,
            Some(prev) => tape.add(prev, s),
        });
    }
    let total = acc.expect("at least one pair");
    let scale = -1.0 / (pairs.len() as f64 * n as f64);
    ContrastiveResult {
        loss: tape.mul_scalar(total, scale),
        degenerate_vectors: degenerate,
    }
}

/// Sum of squared norms over weight-decayed parameters, on the tape so the
/// regularizer contributes gradients.
pub fn l2_term(tape: &mut Tape, bound: &[Var], params: &ParamSet) -> Var {
    let decayed: Vec<ParamId> = params
        .iter()
        .filter(|(_, e)| e.decay)
        .map(|(id, _)| id)
        .collect();
    assert!(!decayed.is_empty(), "no decayed parameters registered");
    let mut acc: Option<Var> = None;
    for id in decayed {
        let v = bound[id.0];
        let sq = tape.mul(v, v);
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            None => s,
            Some(prev) => tape.add(prev, s),
        });
    }
    acc.unwrap()
}

/// Tape nodes of the assembled objective.
pub struct LossTerms {
    pub mse: Var,
    pub contrastive: Option<Var>,
    pub l2: Var,
    pub total: Var,
}

/// Scalar values of one evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub contrastive: f64,
    pub l2: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    /// Recomposes the total from the parts with the same operation order
    /// used on the tape; holds bit-for-bit.
    pub fn recompose(&self) -> f64 {
        (self.mse + self.lambda1 * self.contrastive) + self.lambda2 * self.l2
    }
}

/// total = mse + λ1·contrastive + λ2·‖Θ‖² with mse the mean squared error
/// over every prediction entry.
pub fn joint_loss(
    tape: &mut Tape,
    target: Var,
    prediction: Var,
    contrastive: Option<Var>,
    lambda1: f64,
    lambda2: f64,
    l2: Var,
) -> (LossTerms, LossBreakdown) {
    let diff = tape.sub(prediction, target);
    let sq = tape.mul(diff, diff);
    let mse = tape.mean_all(sq);

    let mut total = match contrastive {
        Some(c) => {
            let scaled = tape.mul_scalar(c, lambda1);
            tape.add(mse, scaled)
        }
        None => mse,
    };
    let l2_scaled = tape.mul_scalar(l2, lambda2);
    total = tape.add(total, l2_scaled);

    let breakdown = LossBreakdown {
        mse: tape.value(mse).item(),
        contrastive: contrastive.map_or(0.0, |c| tape.value(c).item()),
        l2: tape.value(l2).item(),
        total: tape.value(total).item(),
        lambda1: if contrastive.is_some() { lambda1 } else { 0.0 },
        lambda2,
    };
    (
        LossTerms {
            mse,
            contrastive,
            l2,
            total,
        },
        breakdown,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::bind_all;
    use crate::fmath;
    use crate::gradcheck::{check, check_inputs, RelTol};
    use crate::rng;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn pair_from(g: Var, h: Var) -> ContrastivePair {
        ContrastivePair {
            layer: 0,
            view: View::Spatial,
            graph: g,
            hyper: h,
        }
    }

    #[test]
    fn aligned_pairs_with_orthogonal_negatives_match_closed_form() {
        // N=2, d=2, T'=1: e0/e1 bases; positives cos=1, negatives cos=0
        let mut tape = Tape::new();
        let g = tape.input(Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let h = tape.input(Tensor::new(vec![2, 1, 2], vec![2.0, 0.0, 0.0, 3.0]));
        let res = contrastive_loss(&mut tape, &[pair_from(g, h)], 1.0);
        let expect = -(fmath::exp(1.0) / (fmath::exp(1.0) + 1.0)).ln();
        assert!(
            (tape.value(res.loss).item() - expect).abs() < 1e-12,
            "got {} want {expect}",
            tape.value(res.loss).item()
        );
        assert!((expect - 0.3133).abs() < 1e-4);
        assert_eq!(res.degenerate_vectors, 0);
    }

    #[test]
    fn identical_regions_give_uniform_softmax() {
        // all regions share one vector: every term is -log(1/N)
        let n = 4;
        let mut tape = Tape::new();
        let t = Tensor::from_fn(&[n, 1, 3], |i| if i % 3 == 0 { 1.0 } else { 0.5 });
        let g = tape.input(t.clone());
        let h = tape.input(t);
        let res = contrastive_loss(&mut tape, &[pair_from(g, h)], 1.0);
        let expect = fmath::ln(n as f64);
        assert!((tape.value(res.loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_when_positive_cosine_rises() {
        let eval = |align: f64| -> f64 {
            let mut tape = Tape::new();
            let g = tape.input(Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]));
            let h = tape.input(Tensor::new(
                vec![2, 1, 2],
                vec![align, 1.0 - align, 1.0 - align, align],
            ));
            let res = contrastive_loss(&mut tape, &[pair_from(g, h)], 1.0);
            tape.value(res.loss).item()
        };
        assert!(eval(0.9) < eval(0.6));
    }

    #[test]
    fn zero_norm_vectors_count_as_degenerate() {
        let mut tape = Tape::new();
        let g = tape.input(Tensor::new(vec![2, 1, 2], vec![0.0, 0.0, 0.0, 1.0]));
        let h = tape.input(Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let res = contrastive_loss(&mut tape, &[pair_from(g, h)], 1.0);
        assert_eq!(res.degenerate_vectors, 1);
        assert!(tape.value(res.loss).item().is_finite());
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        let g = Tensor::from_fn(&[3, 2, 2], |i| 0.4 + ((i as f64) * 0.71).sin() * 0.3);
        let h = Tensor::from_fn(&[3, 2, 2], |i| 0.5 + ((i as f64) * 0.37).cos() * 0.3);
        check_inputs(&[g, h], RelTol::default(), |tape, vars| {
            let res = contrastive_loss(
                tape,
                &[pair_from(vars[0], vars[1])],
                0.7,
            );
            res.loss
        });
    }

    #[test]
    fn joint_loss_zero_for_perfect_fit_without_penalties() {
        let mut ps = ParamSet::new();
        ps.register("w".into(), Tensor::zeros(&[2]), true);
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let y = tape.constant(Tensor::new(vec![1, 2], vec![0.3, -0.4]));
        let l2 = l2_term(&mut tape, &bound, &ps);
        let (_, breakdown) = joint_loss(&mut tape, y, y, None, 0.0, 0.0, l2);
        assert_eq!(breakdown.total, 0.0);
    }

    #[test]
    fn joint_loss_mse_matches_hand_value() {
        let mut ps = ParamSet::new();
        ps.register("w".into(), Tensor::full(&[2], 2.0), true);
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let y = tape.constant(Tensor::new(vec![1, 2], vec![0.0, 1.0]));
        let yhat = tape.constant(Tensor::zeros(&[1, 2]));
        let l2 = l2_term(&mut tape, &bound, &ps);
        let (_, breakdown) = joint_loss(&mut tape, y, yhat, None, 0.1, 0.001, l2);
        assert_eq!(breakdown.mse, 0.5);
        assert_eq!(breakdown.l2, 8.0);
        assert_eq!(breakdown.total.to_bits(), breakdown.recompose().to_bits());
    }

    #[test]
    fn l2_skips_biases_and_gains() {
        let mut ps = ParamSet::new();
        ps.register("w".into(), Tensor::full(&[2], 3.0), true);
        ps.register_bias("b".into(), &[4]);
        ps.register("gain".into(), Tensor::full(&[4], 1.0), false);
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let l2 = l2_term(&mut tape, &bound, &ps);
        assert_eq!(tape.value(l2).item(), 18.0);
        assert_eq!(ps.decayed_sq_norm(), 18.0);
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        let mut rng = rng::stream(23, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let w = ps.register_uniform("w".into(), &[2, 2], 2, &mut rng);
        let g = Tensor::from_fn(&[2, 2, 2], |i| 0.3 + ((i as f64) * 0.51).sin() * 0.25);
        let h = Tensor::from_fn(&[2, 2, 2], |i| 0.4 + ((i as f64) * 0.29).cos() * 0.25);
        let target = Tensor::from_fn(&[2, 2], |i| (i as f64) * 0.2 - 0.3);
        let x = Tensor::from_fn(&[2, 2], |i| ((i as f64) * 0.83).sin());
        check(&mut ps, &[g, h, target, x], RelTol::default(), |tape, params, vars| {
            let bound = bind_all(tape, params);
            let pred = tape.matmul(vars[3], bound[w.0]);
            let contrastive = contrastive_loss(
                tape,
                &[pair_from(vars[0], vars[1])],
                1.0,
            );
            let l2 = l2_term(tape, &bound, params);
            let (terms, _) = joint_loss(tape, vars[2], pred, Some(contrastive.loss), 0.1, 0.01, l2);
            terms.total
        });
    }
}
