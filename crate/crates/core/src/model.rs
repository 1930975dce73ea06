//! The full multi-view adaptive hypergraph forecaster: learned view
//! embeddings feed pairwise-graph and hypergraph construction; two "sandwich"
//! encoder paths (graph and hypergraph) run in parallel; the decoder fuses
//! external features per stream and a shared head emits τ-step predictions.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::decoder::{PredictionHead, PredictionHeadSpec, StreamDecoder};
use crate::encoder::{
    bind_all, embed_sequence, PathActivations, PathEncoder, PathKind, StaticViewEncoder,
    TemporalViewEncoder,
};
use crate::loss::{self, ContrastivePair, LossBreakdown, LossTerms};
use crate::params::{ParamId, ParamSet};
use crate::rng;
use crate::tensor::Tensor;
use crate::views::{
    build_hypergraph, build_pairwise_graph, hyperedge_count, in_unit_range, normalize_pairwise,
    max_col_nnz, max_row_nnz, zero_col_count, TopkAxis, TopkReport, View, ViewStructure,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_regions: usize,
    pub t_in: usize,
    pub horizon: usize,
    pub d_poi: usize,
    pub d_road: usize,
    pub d_met: usize,
    pub d_cal: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Row cap for learned pairwise affinities.
    pub k_pairwise: usize,
    pub hyperedge_ratio: f64,
    /// Membership cap along the configured incidence axis.
    pub k_members: usize,
    pub temperature: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub use_contrastive: bool,
    pub use_hypergraph: bool,
    pub use_attention_fusion: bool,
    pub use_poi: bool,
    pub use_road: bool,
    pub dynamic_temporal_view: bool,
    pub topk_axis: TopkAxis,
}

impl ModelConfig {
    /// Views active under the current flags.
    pub fn views(&self) -> Vec<View> {
        let mut v = alloc::vec![View::Spatial, View::Temporal];
        if self.use_poi {
            v.push(View::Poi);
        }
        if self.use_road {
            v.push(View::Road);
        }
        v
    }

    pub fn n_hyperedges(&self) -> usize {
        hyperedge_count(self.n_regions, self.hyperedge_ratio)
    }

    pub fn ffn_hidden(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn head_hidden(&self) -> usize {
        2 * self.embed_dim
    }

    fn k_pairwise_effective(&self) -> usize {
        self.k_pairwise.min(self.n_regions)
    }

    fn k_members_effective(&self) -> usize {
        match self.topk_axis {
            TopkAxis::Column => self.k_members.min(self.n_regions),
            TopkAxis::Row => self.k_members.min(self.n_hyperedges()),
        }
    }
}

/// Window-independent data the model convolves over.
#[derive(Debug, Clone)]
pub struct StaticContext {
    /// Binary N×N spatial adjacency.
    pub adjacency: Tensor,
    /// Standardized N×d_P POI matrix.
    pub poi: Tensor,
    /// Standardized N×d_R road matrix.
    pub road: Tensor,
    /// N×T history for the static temporal-view mode: per-region training
    /// mean broadcast over the window length.
    pub mean_history: Tensor,
}

/// One window's inputs on the tape.
pub struct WindowTensors<'a> {
    pub inputs: &'a Tensor,
    pub met: &'a Tensor,
    pub cal: &'a Tensor,
}

struct Architecture {
    embed: ParamId,
    spatial_positions: Option<ParamId>,
    temporal_encoder: TemporalViewEncoder,
    poi_encoder: Option<StaticViewEncoder>,
    road_encoder: Option<StaticViewEncoder>,
    hyper_bases: Vec<(View, ParamId)>,
    graph_path: PathEncoder,
    hyper_path: Option<PathEncoder>,
    graph_decoder: StreamDecoder,
    hyper_decoder: Option<StreamDecoder>,
    head: PredictionHead,
}

/// Structures built during one forward pass, still addressable on the tape.
pub struct BuiltViews {
    /// Masked pairwise affinities (pre-normalization), per view.
    pub pairwise: Vec<(View, Var)>,
    pub pairwise_reports: Vec<(View, Option<TopkReport>)>,
    /// Masked incidence matrices, per view (empty when the hypergraph path
    /// is disabled).
    pub incidence: Vec<(View, Var)>,
    pub incidence_reports: Vec<(View, TopkReport)>,
}

pub struct ForwardPass {
    pub prediction: Var,
    pub views: BuiltViews,
    pub contrastive_pairs: Vec<ContrastivePair>,
}

pub struct WindowObjective {
    pub terms: LossTerms,
    pub breakdown: LossBreakdown,
    pub degenerate_cosines: usize,
    pub forward: ForwardPass,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    arch: Architecture,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        assert!(config.layers >= 1, "encoder needs at least one layer");
        assert!(
            config.embed_dim % config.heads == 0,
            "embed_dim must be divisible by heads"
        );
        let mut params = ParamSet::new();
        let mut init = rng::stream(seed, rng::TAG_INIT);
        let d = config.embed_dim;
        let views = config.views();

        let embed = params.register_uniform("embed.e".into(), &[1, d], 1, &mut init);
        let temporal_encoder =
            TemporalViewEncoder::register(&mut params, &mut init, "view.temporal", d);
        let poi_encoder = config
            .use_poi
            .then(|| StaticViewEncoder::register(&mut params, &mut init, "view.poi", config.d_poi, d));
        let road_encoder = config.use_road.then(|| {
            StaticViewEncoder::register(&mut params, &mut init, "view.road", config.d_road, d)
        });

        let (spatial_positions, hyper_bases) = if config.use_hypergraph {
            let pos = params.register_uniform(
                "view.spatial.positions".into(),
                &[config.n_regions, d],
                d,
                &mut init,
            );
            let i = config.n_hyperedges();
            let bases = views
                .iter()
                .map(|&view| {
                    let id = params.register_uniform(
                        format!("hyper.basis.{}", view.code()),
                        &[d, i],
                        d,
                        &mut init,
                    );
                    (view, id)
                })
                .collect();
            (Some(pos), bases)
        } else {
            (None, Vec::new())
        };

        let graph_path = PathEncoder::register(
            &mut params,
            &mut init,
            "encoder.graph",
            PathKind::Graph,
            d,
            config.heads,
            config.ffn_hidden(),
            config.layers,
            &views,
        );
        let hyper_path = config.use_hypergraph.then(|| {
            PathEncoder::register(
                &mut params,
                &mut init,
                "encoder.hyper",
                PathKind::Hyper,
                d,
                config.heads,
                config.ffn_hidden(),
                config.layers,
                &views,
            )
        });

        let graph_decoder = StreamDecoder::register(
            &mut params,
            &mut init,
            "decoder.graph",
            d,
            config.d_met,
            config.d_cal,
        );
        let hyper_decoder = config.use_hypergraph.then(|| {
            StreamDecoder::register(
                &mut params,
                &mut init,
                "decoder.hyper",
                d,
                config.d_met,
                config.d_cal,
            )
        });

        let spec = PredictionHeadSpec {
            d,
            t_in: config.t_in,
            horizon: config.horizon,
            n_streams: if config.use_hypergraph { 2 } else { 1 },
            hidden: config.head_hidden(),
            d_poi: config.use_poi.then_some(config.d_poi),
            d_road: config.use_road.then_some(config.d_road),
        };
        let head = PredictionHead::register(&mut params, &mut init, "head", &spec);

        Self {
            config,
            params,
            arch: Architecture {
                embed,
                spatial_positions,
                temporal_encoder,
                poi_encoder,
                road_encoder,
                hyper_bases,
                graph_path,
                hyper_path,
                graph_decoder,
                hyper_decoder,
                head,
            },
        }
    }

    /// Full forward pass for one window. All randomness lives in the
    /// parameters; identical inputs give bitwise-identical outputs.
    pub fn forward(&self, tape: &mut Tape, ctx: &StaticContext, window: &WindowTensors) -> ForwardPass {
        self.forward_with(tape, &self.params, ctx, window)
    }

    /// Forward pass binding an externally owned parameter set (must share
    /// the registration layout of `self.params`); used by gradient checks.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ctx: &StaticContext,
        window: &WindowTensors,
    ) -> ForwardPass {
        let cfg = &self.config;
        let views = cfg.views();
        assert_eq!(params.len(), self.params.len(), "parameter layout mismatch");
        let bound = bind_all(tape, params);

        let inputs = tape.constant(window.inputs.clone());
        let met = tape.constant(window.met.clone());
        let cal = tape.constant(window.cal.clone());
        let poi = cfg.use_poi.then(|| tape.constant(ctx.poi.clone()));
        let road = cfg.use_road.then(|| tape.constant(ctx.road.clone()));

        // --- view embeddings ---
        let temporal_history = if cfg.dynamic_temporal_view {
            inputs
        } else {
            tape.constant(ctx.mean_history.clone())
        };
        let u_temporal = self
            .arch
            .temporal_encoder
            .forward(tape, &bound, temporal_history);
        let u_poi = self
            .arch
            .poi_encoder
            .as_ref()
            .map(|enc| enc.forward(tape, &bound, poi.expect("poi enabled")));
        let u_road = self
            .arch
            .road_encoder
            .as_ref()
            .map(|enc| enc.forward(tape, &bound, road.expect("road enabled")));

        let learned_u = |view: View| -> Var {
            match view {
                View::Temporal => u_temporal,
                View::Poi => u_poi.expect("poi view active"),
                View::Road => u_road.expect("road view active"),
                View::Spatial => unreachable!("spatial pairwise view is not learned"),
            }
        };

        // --- pairwise graphs ---
        let k = cfg.k_pairwise_effective();
        let mut pairwise = Vec::with_capacity(views.len());
        let mut pairwise_reports = Vec::with_capacity(views.len());
        let mut normalized = Vec::with_capacity(views.len());
        for &view in &views {
            let (masked, report) = match view {
                View::Spatial => (tape.constant(ctx.adjacency.clone()), None),
                _ => {
                    let (a, rep) = build_pairwise_graph(tape, learned_u(view), k);
                    (a, Some(rep))
                }
            };
            let norm = normalize_pairwise(tape, masked);
            pairwise.push((view, masked));
            pairwise_reports.push((view, report));
            normalized.push((view, norm));
        }

        // --- hypergraph incidences ---
        let mut incidence = Vec::new();
        let mut incidence_reports = Vec::new();
        if cfg.use_hypergraph {
            let k_members = cfg.k_members_effective();
            for &view in &views {
                let u = match view {
                    View::Spatial => bound[self.arch.spatial_positions.expect("registered").0],
                    _ => learned_u(view),
                };
                let basis = self
                    .arch
                    .hyper_bases
                    .iter()
                    .find(|(v, _)| *v == view)
                    .expect("basis registered per view")
                    .1;
                let (h, report) =
                    build_hypergraph(tape, u, bound[basis.0], k_members, cfg.topk_axis);
                incidence.push((view, h));
                incidence_reports.push((view, report));
            }
        }

        // --- encoder paths ---
        let embedded = embed_sequence(tape, &bound, self.arch.embed, inputs);
        let graph_acts =
            self.arch
                .graph_path
                .forward(tape, &bound, embedded, &normalized, cfg.use_attention_fusion);
        let hyper_acts: Option<PathActivations> = self.arch.hyper_path.as_ref().map(|path| {
            path.forward(tape, &bound, embedded, &incidence, cfg.use_attention_fusion)
        });

        let contrastive_pairs = match &hyper_acts {
            Some(h) => collect_pairs(&graph_acts, h),
            None => Vec::new(),
        };

        // --- decoder streams and head ---
        let graph_state = self
            .arch
            .graph_decoder
            .forward(tape, &bound, graph_acts.output, met, cal);
        let mut streams = alloc::vec![graph_state];
        if let (Some(dec), Some(acts)) = (&self.arch.hyper_decoder, &hyper_acts) {
            streams.push(dec.forward(tape, &bound, acts.output, met, cal));
        }
        let prediction = self.arch.head.forward(tape, &bound, &streams, poi, road);

        ForwardPass {
            prediction,
            views: BuiltViews {
                pairwise,
                pairwise_reports,
                incidence,
                incidence_reports,
            },
            contrastive_pairs,
        }
    }

    /// Builds the training objective for one window on the tape.
    /// `include_l2` adds the λ2 regularizer (the batch loop adds its
    /// gradient analytically once per step instead).
    pub fn window_objective(
        &self,
        tape: &mut Tape,
        ctx: &StaticContext,
        window: &WindowTensors,
        targets: &Tensor,
        include_l2: bool,
    ) -> WindowObjective {
        self.window_objective_with(tape, &self.params, ctx, window, targets, include_l2)
    }

    /// [`Model::window_objective`] over an externally owned parameter set.
    pub fn window_objective_with(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ctx: &StaticContext,
        window: &WindowTensors,
        targets: &Tensor,
        include_l2: bool,
    ) -> WindowObjective {
        let cfg = &self.config;
        let forward = self.forward_with(tape, params, ctx, window);
        let target = tape.constant(targets.clone());

        let (contrastive, degenerate) =
            if cfg.use_contrastive && !forward.contrastive_pairs.is_empty() {
                let res = loss::contrastive_loss(tape, &forward.contrastive_pairs, cfg.temperature);
                (Some(res.loss), res.degenerate_vectors)
            } else {
                (None, 0)
            };

        let (terms, breakdown) = if include_l2 {
            let bound = bind_all(tape, params);
            let l2 = loss::l2_term(tape, &bound, params);
            loss::joint_loss(
                tape,
                target,
                forward.prediction,
                contrastive,
                cfg.lambda1,
                cfg.lambda2,
                l2,
            )
        } else {
            let l2 = tape.constant(Tensor::scalar(0.0));
            loss::joint_loss(
                tape,
                target,
                forward.prediction,
                contrastive,
                cfg.lambda1,
                0.0,
                l2,
            )
        };

        WindowObjective {
            terms,
            breakdown,
            degenerate_cosines: degenerate,
            forward,
        }
    }

    /// Structure facts for every built view; the trainer fails the run on
    /// violation.
    pub fn structure_report(&self, tape: &Tape, pass: &ForwardPass) -> Vec<ViewStructure> {
        let cfg = &self.config;
        let mut out = Vec::new();
        for (idx, &(view, a)) in pass.views.pairwise.iter().enumerate() {
            let value = tape.value(a);
            let cap = match pass.views.pairwise_reports[idx].1 {
                Some(_) => cfg.k_pairwise_effective(),
                None => cfg.n_regions, // fixed spatial adjacency: unconstrained
            };
            let tie_fraction = pass.views.pairwise_reports[idx]
                .1
                .as_ref()
                .map_or(0.0, |r| r.tie_fraction());
            let hyper = pass
                .views
                .incidence
                .iter()
                .position(|(v, _)| *v == view)
                .map(|i| pass.views.incidence[i].1);
            let (hyper_nnz, hyper_ok, hyper_zero) = match hyper {
                Some(h) => {
                    let hv = tape.value(h);
                    let nnz = match cfg.topk_axis {
                        TopkAxis::Column => max_col_nnz(hv),
                        TopkAxis::Row => max_row_nnz(hv),
                    };
                    (Some(nnz), in_unit_range(hv), zero_col_count(hv))
                }
                None => (None, true, 0),
            };
            out.push(ViewStructure {
                view,
                pairwise_max_row_nnz: max_row_nnz(value),
                pairwise_cap: cap,
                pairwise_in_range: in_unit_range(value),
                pairwise_tie_fraction: tie_fraction,
                hyper_max_group_nnz: hyper_nnz,
                hyper_cap: cfg.k_members_effective(),
                hyper_in_range: hyper_ok,
                hyper_zero_columns: hyper_zero,
            });
        }
        out
    }
}

fn collect_pairs(graph: &PathActivations, hyper: &PathActivations) -> Vec<ContrastivePair> {
    let mut pairs = Vec::new();
    for (layer, (g_views, h_views)) in graph.per_view.iter().zip(&hyper.per_view).enumerate() {
        for (&(view, g), &(h_view, h)) in g_views.iter().zip(h_views) {
            debug_assert_eq!(view, h_view);
            pairs.push(ContrastivePair {
                layer,
                view,
                graph: g,
                hyper: h,
            });
        }
    }
    pairs
}

/// Resolves per-view U handles needed outside the forward pass (exports).
pub fn view_codes(views: &[(View, Var)]) -> Vec<&'static str> {
    views.iter().map(|(v, _)| v.code()).collect()
}

/// Small fully-specified config for tests and gradient checks.
pub fn desk_config(n_regions: usize, t_in: usize, horizon: usize, d: usize) -> ModelConfig {
    ModelConfig {
        n_regions,
        t_in,
        horizon,
        d_poi: 3,
        d_road: 2,
        d_met: 3,
        d_cal: 9,
        embed_dim: d,
        heads: 2,
        layers: 2,
        k_pairwise: n_regions,
        hyperedge_ratio: 0.4,
        k_members: n_regions,
        temperature: 1.0,
        lambda1: 0.1,
        lambda2: 0.001,
        use_contrastive: true,
        use_hypergraph: true,
        use_attention_fusion: true,
        use_poi: true,
        use_road: true,
        dynamic_temporal_view: true,
        topk_axis: TopkAxis::Column,
    }
}

/// Deterministic toy context matching [`desk_config`] dimensions.
pub fn desk_context(config: &ModelConfig, seed: u64) -> StaticContext {
    let n = config.n_regions;
    let mut r = rng::stream(seed, rng::TAG_SYNTH);
    let mut adjacency = Tensor::zeros(&[n, n]);
    for i in 0..n.saturating_sub(1) {
        adjacency.set2(i, i + 1, 1.0);
        adjacency.set2(i + 1, i, 1.0);
    }
    let poi = Tensor::from_fn(&[n, config.d_poi], |_| rng::normal(&mut r) * 0.5);
    let road = Tensor::from_fn(&[n, config.d_road], |_| rng::normal(&mut r) * 0.5);
    let mean_history = Tensor::from_fn(&[n, config.t_in], |i| {
        let region = i / config.t_in;
        -0.5 + 0.1 * (region % 5) as f64
    });
    StaticContext {
        adjacency,
        poi,
        road,
        mean_history,
    }
}

/// Deterministic toy window matching [`desk_config`] dimensions.
pub fn desk_window(config: &ModelConfig, seed: u64) -> (Tensor, Tensor, Tensor, Tensor) {
    let n = config.n_regions;
    let mut r = rng::stream(seed, rng::TAG_SYNTH);
    let inputs = Tensor::from_fn(&[n, config.t_in], |_| {
        if rand::Rng::random_range(&mut r, 0.0..1.0f64) < 0.6 {
            -0.7 + rng::normal(&mut r) * 0.05
        } else {
            rand::Rng::random_range(&mut r, 0.1..1.0)
        }
    });
    let met = Tensor::from_fn(&[n, config.t_in, config.d_met], |_| rng::normal(&mut r) * 0.3);
    let cal = Tensor::from_fn(&[n, config.t_in, config.d_cal], |i| ((i % 9) == 2) as u8 as f64);
    let targets = Tensor::from_fn(&[n, config.horizon], |_| {
        if rand::Rng::random_range(&mut r, 0.0..1.0f64) < 0.6 {
            -0.7
        } else {
            rand::Rng::random_range(&mut r, 0.1..1.0)
        }
    });
    (inputs, met, cal, targets)
}
