//! Temporal decoder: embeds dynamic external features, concatenates them
//! with an encoder output, runs a gated temporal convolution per stream,
//! then flattens both streams with fresh urban-feature embeddings through a
//! two-layer head into τ-step predictions.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::encoder::GtcBlock;
use crate::params::{ParamId, ParamSet};
use crate::rng::SeededRng;

#[inline]
fn bv(bound: &[Var], id: ParamId) -> Var {
    bound[id.0]
}

/// Per-stream decoder: external-feature embeddings plus one GTC block that
/// projects the 3d concatenation back to width d.
#[derive(Debug, Clone)]
pub struct StreamDecoder {
    pub met_w: ParamId,
    pub met_b: ParamId,
    pub cal_w: ParamId,
    pub cal_b: ParamId,
    pub gtc: GtcBlock,
}

impl StreamDecoder {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        d: usize,
        d_met: usize,
        d_cal: usize,
    ) -> Self {
        Self {
            met_w: params.register_uniform(format!("{name}.met.w"), &[d_met, d], d_met, rng),
            met_b: params.register_bias(format!("{name}.met.b"), &[d]),
            cal_w: params.register_uniform(format!("{name}.cal.w"), &[d_cal, d], d_cal, rng),
            cal_b: params.register_bias(format!("{name}.cal.b"), &[d]),
            gtc: GtcBlock::register(params, rng, &format!("{name}.gtc"), 3 * d, d),
        }
    }

    /// encoder (N,T,d), met (N,T,d_M), cal (N,T,d_C) → (N,T,d).
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], encoder: Var, met: Var, cal: Var) -> Var {
        let enc_t = tape.value(encoder).dims()[1];
        assert_eq!(
            tape.value(met).dims()[1],
            enc_t,
            "external meteorology time axis mismatch"
        );
        assert_eq!(
            tape.value(cal).dims()[1],
            enc_t,
            "external calendar time axis mismatch"
        );
        let met_e = tape.affine(met, bv(bound, self.met_w), bv(bound, self.met_b));
        let cal_e = tape.affine(cal, bv(bound, self.cal_w), bv(bound, self.cal_b));
        let cat = tape.concat(&[encoder, met_e, cal_e], 2);
        self.gtc.forward(tape, bound, cat)
    }
}

/// Final prediction head: fresh POI/road embeddings concatenated with the
/// flattened decoder streams, two affine layers with ReLU between.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    pub poi_w: Option<ParamId>,
    pub poi_b: Option<ParamId>,
    pub road_w: Option<ParamId>,
    pub road_b: Option<ParamId>,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

pub struct PredictionHeadSpec {
    pub d: usize,
    pub t_in: usize,
    pub horizon: usize,
    pub n_streams: usize,
    pub hidden: usize,
    pub d_poi: Option<usize>,
    pub d_road: Option<usize>,
}

impl PredictionHead {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        spec: &PredictionHeadSpec,
    ) -> Self {
        let mut in_width = spec.t_in * spec.d * spec.n_streams;
        let reg_embed = |params: &mut ParamSet, rng: &mut SeededRng, field: &str, d_in: usize| {
            let w = params.register_uniform(format!("{name}.{field}.w"), &[d_in, spec.d], d_in, rng);
            let b = params.register_bias(format!("{name}.{field}.b"), &[spec.d]);
            (w, b)
        };
        let (poi_w, poi_b) = match spec.d_poi {
            Some(d_in) => {
                let (w, b) = reg_embed(params, rng, "poi", d_in);
                in_width += spec.d;
                (Some(w), Some(b))
            }
            None => (None, None),
        };
        let (road_w, road_b) = match spec.d_road {
            Some(d_in) => {
                let (w, b) = reg_embed(params, rng, "road", d_in);
                in_width += spec.d;
                (Some(w), Some(b))
            }
            None => (None, None),
        };
        Self {
            poi_w,
            poi_b,
            road_w,
            road_b,
            fc1_w: params.register_uniform(format!("{name}.fc1.w"), &[in_width, spec.hidden], in_width, rng),
            fc1_b: params.register_bias(format!("{name}.fc1.b"), &[spec.hidden]),
            fc2_w: params.register_uniform(
                format!("{name}.fc2.w"),
                &[spec.hidden, spec.horizon],
                spec.hidden,
                rng,
            ),
            fc2_b: params.register_bias(format!("{name}.fc2.b"), &[spec.horizon]),
        }
    }

    /// streams: one or two (N,T,d) decoder states; poi/road: raw static
    /// feature matrices (already standardized). Output (N, horizon).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        streams: &[Var],
        poi: Option<Var>,
        road: Option<Var>,
    ) -> Var {
        assert!(!streams.is_empty());
        let dims = tape.value(streams[0]).dims().to_vec();
        let (n, t, d) = (dims[0], dims[1], dims[2]);
        let cat = if streams.len() == 1 {
            streams[0]
        } else {
            tape.concat(streams, 2)
        };
        let flat = tape.reshape(cat, &[n, t * d * streams.len()]);
        let mut parts: Vec<Var> = alloc::vec![flat];
        if let (Some(w), Some(b), Some(x)) = (self.poi_w, self.poi_b, poi) {
            parts.push(tape.affine(x, bv(bound, w), bv(bound, b)));
        }
        if let (Some(w), Some(b), Some(x)) = (self.road_w, self.road_b, road) {
            parts.push(tape.affine(x, bv(bound, w), bv(bound, b)));
        }
        let features = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, 1)
        };
        let h = tape.affine(features, bv(bound, self.fc1_w), bv(bound, self.fc1_b));
        let h = tape.relu(h);
        tape.affine(h, bv(bound, self.fc2_w), bv(bound, self.fc2_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::bind_all;
    use crate::gradcheck::{check, RelTol};
    use crate::rng;
    use crate::tensor::Tensor;

    fn ramp(dims: &[usize], scale: f64) -> Tensor {
        Tensor::from_fn(dims, |i| ((i as f64) * 0.477).sin() * scale)
    }

    #[test]
    fn decode_concatenation_width_is_three_d() {
        let mut rng = rng::stream(1, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let d = 2;
        let dec = StreamDecoder::register(&mut ps, &mut rng, "dec", d, 3, 4);
        // the gate conv of the first sub-layer consumes 3d channels
        assert_eq!(ps.get(dec.gtc.sub1.w_gate).dims(), &[crate::encoder::KERNEL, 3 * d, d]);
        assert!(dec.gtc.sub1.w_residual.is_some(), "width change needs a residual projection");
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let enc = tape.constant(ramp(&[3, 4, d], 0.8));
        let met = tape.constant(ramp(&[3, 4, 3], 0.5));
        let cal = tape.constant(ramp(&[3, 4, 4], 0.5));
        let out = dec.forward(&mut tape, &bound, enc, met, cal);
        assert_eq!(tape.value(out).dims(), &[3, 4, d]);
    }

    #[test]
    fn decode_zero_externals_still_mix_through_gate() {
        let mut rng = rng::stream(2, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let dec = StreamDecoder::register(&mut ps, &mut rng, "dec", 2, 3, 4);
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let enc = tape.constant(ramp(&[2, 4, 2], 0.8));
        let met = tape.constant(Tensor::zeros(&[2, 4, 3]));
        let cal = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let out = dec.forward(&mut tape, &bound, enc, met, cal);
        assert!(tape.value(out).all_finite());
        assert!(tape.value(out).max_abs() > 0.0, "residual path should carry signal");
    }

    #[test]
    fn decode_gradients_match_finite_differences() {
        let mut rng = rng::stream(3, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let dec = StreamDecoder::register(&mut ps, &mut rng, "dec", 2, 2, 2);
        let enc = ramp(&[2, 4, 2], 0.9);
        let met = ramp(&[2, 4, 2], 0.4);
        let cal = ramp(&[2, 4, 2], -0.3);
        check(&mut ps, &[enc, met, cal], RelTol::default(), |tape, params, vars| {
            let bound = bind_all(tape, params);
            let out = dec.forward(tape, &bound, vars[0], vars[1], vars[2]);
            let sq = tape.mul(out, out);
            tape.mean_all(sq)
        });
    }

    #[test]
    fn head_output_shape_and_zero_weights_give_bias() {
        let mut rng = rng::stream(4, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let spec = PredictionHeadSpec {
            d: 2,
            t_in: 3,
            horizon: 6,
            n_streams: 2,
            hidden: 4,
            d_poi: Some(3),
            d_road: Some(2),
        };
        let head = PredictionHead::register(&mut ps, &mut rng, "head", &spec);
        // zero every weight, set the final bias
        for id in ps.ids().collect::<Vec<_>>() {
            let t = ps.get_mut(id);
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        ps.get_mut(head.fc2_b).data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut tape = Tape::new();
        let bound = bind_all(&mut tape, &ps);
        let s1 = tape.constant(ramp(&[5, 3, 2], 1.0));
        let s2 = tape.constant(ramp(&[5, 3, 2], -1.0));
        let poi = tape.constant(ramp(&[5, 3], 1.0));
        let road = tape.constant(ramp(&[5, 2], 1.0));
        let y = head.forward(&mut tape, &bound, &[s1, s2], Some(poi), Some(road));
        assert_eq!(tape.value(y).dims(), &[5, 6]);
        for row in tape.value(y).data().chunks(6) {
            assert_eq!(row, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        }
    }

    #[test]
    fn head_uses_road_features() {
        // with random nonzero parameters, changing road features changes output
        let mut rng = rng::stream(5, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let spec = PredictionHeadSpec {
            d: 2,
            t_in: 2,
            horizon: 2,
            n_streams: 1,
            hidden: 4,
            d_poi: None,
            d_road: Some(2),
        };
        let head = PredictionHead::register(&mut ps, &mut rng, "head", &spec);
        let run = |road: Tensor, ps: &ParamSet| {
            let mut tape = Tape::new();
            let bound = bind_all(&mut tape, ps);
            let s = tape.constant(ramp(&[3, 2, 2], 1.0));
            let r = tape.constant(road);
            let y = head.forward(&mut tape, &bound, &[s], None, Some(r));
            tape.value(y).clone()
        };
        let a = run(ramp(&[3, 2], 1.0), &ps);
        let b = run(ramp(&[3, 2], 2.0), &ps);
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = rng::stream(6, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let spec = PredictionHeadSpec {
            d: 2,
            t_in: 2,
            horizon: 2,
            n_streams: 2,
            hidden: 3,
            d_poi: Some(2),
            d_road: Some(2),
        };
        let head = PredictionHead::register(&mut ps, &mut rng, "head", &spec);
        let s1 = ramp(&[2, 2, 2], 0.8);
        let s2 = ramp(&[2, 2, 2], -0.6);
        let poi = ramp(&[2, 2], 0.4);
        let road = ramp(&[2, 2], 0.3);
        check(&mut ps, &[s1, s2, poi, road], RelTol::default(), |tape, params, vars| {
            let bound = bind_all(tape, params);
            let y = head.forward(tape, &bound, &[vars[0], vars[1]], Some(vars[2]), Some(vars[3]));
            let sq = tape.mul(y, y);
            tape.mean_all(sq)
        });
    }

    #[test]
    fn swapping_streams_with_swapped_parameters_is_consistent() {
        // feed (s1, s2) through a head, then (s2, s1) through a head whose
        // fc1 weight rows are permuted accordingly: identical predictions
        let mut rng = rng::stream(7, rng::TAG_INIT);
        let mut ps = ParamSet::new();
        let spec = PredictionHeadSpec {
            d: 2,
            t_in: 2,
            horizon: 3,
            n_streams: 2,
            hidden: 4,
            d_poi: None,
            d_road: None,
        };
        let head = PredictionHead::register(&mut ps, &mut rng, "head", &spec);
        let s1t = ramp(&[2, 2, 2], 0.9);
        let s2t = ramp(&[2, 2, 2], -0.7);
        let run = |ps: &ParamSet, first: &Tensor, second: &Tensor| {
            let mut tape = Tape::new();
            let bound = bind_all(&mut tape, ps);
            let a = tape.constant(first.clone());
            let b = tape.constant(second.clone());
            let y = head.forward(&mut tape, &bound, &[a, b], None, None);
            tape.value(y).clone()
        };
        let base = run(&ps, &s1t, &s2t);
        // swap the per-stream channel blocks inside fc1's input rows:
        // row layout is (t, stream, d) flattened
        let mut swapped = ps.clone();
        {
            let w = swapped.get_mut(head.fc1_w);
            let hidden = w.dims()[1];
            let d = 2;
            let t_in = 2;
            let mut data = w.data().to_vec();
            for t in 0..t_in {
                for c in 0..d {
                    let row_a = (t * 2) * d + c;
                    let row_b = (t * 2 + 1) * d + c;
                    for h in 0..hidden {
                        data.swap(row_a * hidden + h, row_b * hidden + h);
                    }
                }
            }
            w.data_mut().copy_from_slice(&data);
        }
        let flipped = run(&swapped, &s2t, &s1t);
        for (x, y) in base.data().iter().zip(flipped.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
