//! End-to-end gradient check: the whole model's joint objective against
//! central finite differences on a deliberately tiny configuration.
//!
//! The degree normalizations and cosine norms (x⁻¹, x^(-1/2), √x with the
//! 0→0 convention) are continuous but not differentiable where a degree or
//! norm vanishes, so the check must run at a point with healthy margins;
//! the deterministic seed scan below picks the first initialization whose
//! built structures stay away from those kinks.

use std::time::Instant;

use riskcast_core::autodiff::Tape;
use riskcast_core::fmath;
use riskcast_core::model::{
    desk_config, desk_context, desk_window, ForwardPass, Model, ModelConfig, WindowTensors,
};
use riskcast_core::tensor::Tensor;

struct Margins {
    /// Smallest positive hyperedge/node degree.
    min_degree: f64,
    /// Smallest nonzero structure entry (distance from the ReLU kink).
    min_entry: f64,
    /// Smallest time-pooled region-vector norm feeding a cosine.
    min_norm: f64,
}

fn margins(tape: &Tape, pass: &ForwardPass) -> Margins {
    let mut m = Margins {
        min_degree: f64::INFINITY,
        min_entry: f64::INFINITY,
        min_norm: f64::INFINITY,
    };
    let mut scan = |t: &Tensor, with_sums: bool| {
        let (rows, cols) = (t.dims()[0], t.dims()[1]);
        if with_sums {
            for r in 0..rows {
                let s: f64 = t.data()[r * cols..(r + 1) * cols].iter().sum();
                if s > 0.0 {
                    m.min_degree = m.min_degree.min(s);
                }
            }
            for c in 0..cols {
                let s: f64 = (0..rows).map(|r| t.data()[r * cols + c]).sum();
                if s > 0.0 {
                    m.min_degree = m.min_degree.min(s);
                }
            }
        }
        for &v in t.data() {
            if v != 0.0 {
                m.min_entry = m.min_entry.min(v.abs());
            }
        }
    };
    for &(_, h) in &pass.views.incidence {
        scan(tape.value(h), true);
    }
    for &(_, a) in &pass.views.pairwise {
        scan(tape.value(a), false);
    }
    for pair in &pass.contrastive_pairs {
        for &side in &[pair.graph, pair.hyper] {
            let t = tape.value(side);
            let (n, tt, d) = (t.dims()[0], t.dims()[1], t.dims()[2]);
            for r in 0..n {
                let mut sq = 0.0;
                for c in 0..d {
                    let mean: f64 =
                        (0..tt).map(|j| t.at3(r, j, c)).sum::<f64>() / tt as f64;
                    sq += mean * mean;
                }
                m.min_norm = m.min_norm.min(fmath::sqrt(sq));
            }
        }
    }
    m
}

fn check_config() -> ModelConfig {
    let mut config = desk_config(3, 4, 2, 4);
    config.layers = 1;
    // enough hyperedges that every region generically joins at least one
    config.hyperedge_ratio = 1.4;
    config
}

fn find_safe_seed(config: &ModelConfig) -> u64 {
    for seed in 70..170 {
        let model = Model::new(config.clone(), seed);
        let ctx = desk_context(config, 71);
        let (inputs, met, cal, targets) = desk_window(config, 72);
        let mut tape = Tape::new();
        let obj = model.window_objective(
            &mut tape,
            &ctx,
            &WindowTensors {
                inputs: &inputs,
                met: &met,
                cal: &cal,
            },
            &targets,
            true,
        );
        let m = margins(&tape, &obj.forward);
        if obj.degenerate_cosines == 0
            && m.min_degree > 2e-2
            && m.min_entry > 5e-3
            && m.min_norm > 9e-3
        {
            return seed;
        }
    }
    panic!("no initialization with safe structural margins in the scanned range");
}

#[test]
fn joint_objective_gradients_match_finite_differences() {
    let config = check_config();
    let seed = find_safe_seed(&config);
    let model = Model::new(config.clone(), seed);
    let ctx = desk_context(&config, 71);
    let (inputs, met, cal, targets) = desk_window(&config, 72);

    let mut params = model.params.clone();
    let start = Instant::now();
    let report = check(&mut params, &[], RelTol::default(), |tape, ps, _| {
        let obj = model.window_objective_with(
            tape,
            ps,
            &ctx,
            &WindowTensors {
                inputs: &inputs,
                met: &met,
                cal: &cal,
            },
            &targets,
            true,
        );
        obj.terms.total
    });
    println!(
        "full-model joint objective (seed {seed}): {} coordinates checked, max rel err {:.3e}, {:?}",
        report.checked,
        report.max_rel_err,
        start.elapsed()
    );
}

use riskcast_core::gradcheck::{check, RelTol};
