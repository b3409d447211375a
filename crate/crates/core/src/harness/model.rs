//! The assembled model: projection → clustering → temporal weighted
//! attention → state-transition graph → cross-temporal refinement → shared
//! classifier.

use super::{ClassifierSharing, RunConfig};
use crate::apl::{build_st_graph, extract_future_cue, gated_gcn_forward, GcnLayerVars, GcnVars, StGraph};
use crate::csmc::{
    compress_embedded, embed_window, fit_gmm, select_critical_frames, CriticalFrame,
    CriticalFrameSet, GmmParams, MemoryWindow, ProjectionVars,
};
use crate::cti::{classify, refine_against, ClassifierVars, PositionalVars, Slot};
use crate::error::{Result, SsmError};
use crate::numerics::{glorot_uniform, AttentionVars, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Model parameters plus the run configuration that shaped them.
pub struct SsmModel {
    pub config: RunConfig,
    pub params: ParamStore<f64>,
}

/// Per-pass leaves for every parameter, grouped by module.
pub struct ModelVars {
    pub leaves: BTreeMap<String, Var<f64>>,
    pub projection: ProjectionVars<f64>,
    pub twa: AttentionVars<f64>,
    pub edge_ca: AttentionVars<f64>,
    pub edge_projection: Var<f64>,
    pub gcn: GcnVars<f64>,
    pub cti_present: AttentionVars<f64>,
    pub cti_future: AttentionVars<f64>,
    pub positional: Option<PositionalVars<f64>>,
    pub detection_head: ClassifierVars<f64>,
    pub anticipation_head: ClassifierVars<f64>,
}

/// One window's outputs. Distributions are `1×(C+1)` rows on the pass tape.
pub struct WindowForward {
    pub p_d: Var<f64>,
    pub p_a: Var<f64>,
    /// Classifier output on the raw future cue, the consistency target.
    pub p_st: Var<f64>,
    pub critical: CriticalFrameSet,
    pub gmm: Option<GmmParams<f64>>,
    /// Head-averaged temporal attention weights, `(K+1)×(L+1)`.
    pub twa_weights: Tensor<f64>,
}

impl SsmModel {
    /// Builds a model with seeded uniform initialization.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let d = config.d_model;
        let de = config.d_edge;
        let classes = config.total_classes();

        let mat = |params: &mut ParamStore<f64>,
                       name: String,
                       rows: usize,
                       cols: usize,
                       rng: &mut ChaCha8Rng|
         -> Result<()> { params.insert(&name, glorot_uniform(rows, cols, rng)) };

        params.insert("proj.weight", glorot_uniform(d, config.feature_dim, &mut rng))?;
        params.insert("proj.bias", Tensor::zeros(1, d))?;
        for name in ["twa.wq", "twa.wk", "twa.wv"] {
            mat(&mut params, name.into(), d, d, &mut rng)?;
        }
        for name in ["apl.edge_ca.wq", "apl.edge_ca.wk", "apl.edge_ca.wv"] {
            mat(&mut params, name.into(), d, d, &mut rng)?;
        }
        mat(&mut params, "apl.edge_proj".into(), de, d, &mut rng)?;
        for layer in 0..config.gcn_layers {
            let p = |suffix: &str| format!("gcn.l{layer}.{suffix}");
            mat(&mut params, p("node_self"), d, d, &mut rng)?;
            mat(&mut params, p("node_neigh"), d, d, &mut rng)?;
            mat(&mut params, p("gate_src"), d, d, &mut rng)?;
            mat(&mut params, p("gate_dst"), d, d, &mut rng)?;
            mat(&mut params, p("gate_edge"), d, de, &mut rng)?;
            mat(&mut params, p("edge_w"), de, 2 * d + de, &mut rng)?;
            params.insert(&p("node_gain"), Tensor::full(1, d, 1.0))?;
            params.insert(&p("node_bias"), Tensor::zeros(1, d))?;
            params.insert(&p("edge_gain"), Tensor::full(1, de, 1.0))?;
            params.insert(&p("edge_bias"), Tensor::zeros(1, de))?;
        }
        mat(&mut params, "gcn.readout".into(), d, d, &mut rng)?;
        if config.positional_encoding {
            params.insert(
                "cti.pos",
                glorot_uniform(config.clusters + 2, d, &mut rng),
            )?;
        }
        for name in [
            "cti.present.wq",
            "cti.present.wk",
            "cti.present.wv",
            "cti.future.wq",
            "cti.future.wk",
            "cti.future.wv",
        ] {
            mat(&mut params, name.into(), d, d, &mut rng)?;
        }
        match config.classifier_sharing {
            ClassifierSharing::Shared => {
                params.insert("classifier.weight", glorot_uniform(classes, d, &mut rng))?;
                params.insert("classifier.bias", Tensor::zeros(1, classes))?;
            }
            ClassifierSharing::Separate => {
                params.insert("classifier.det.weight", glorot_uniform(classes, d, &mut rng))?;
                params.insert("classifier.det.bias", Tensor::zeros(1, classes))?;
                params.insert("classifier.ant.weight", glorot_uniform(classes, d, &mut rng))?;
                params.insert("classifier.ant.bias", Tensor::zeros(1, classes))?;
            }
        }
        Ok(Self { config, params })
    }

    /// Restores a model from existing parameters (checkpoint load).
    pub fn from_parts(config: RunConfig, params: ParamStore<f64>) -> Result<Self> {
        config.validate()?;
        let model = Self { config, params };
        // Binding validates that every expected parameter exists.
        let tape = Tape::new();
        model.bind(&tape)?;
        Ok(model)
    }

    /// Parameter name of the head used for detection. In shared mode the
    /// anticipation head resolves to the identical name.
    pub fn detection_head_name(&self) -> &'static str {
        match self.config.classifier_sharing {
            ClassifierSharing::Shared => "classifier.weight",
            ClassifierSharing::Separate => "classifier.det.weight",
        }
    }

    pub fn anticipation_head_name(&self) -> &'static str {
        match self.config.classifier_sharing {
            ClassifierSharing::Shared => "classifier.weight",
            ClassifierSharing::Separate => "classifier.ant.weight",
        }
    }

    /// Creates tape leaves for all parameters and groups them per module.
    pub fn bind(&self, tape: &Tape<f64>) -> Result<ModelVars> {
        let leaves = self.params.leaves(tape);
        let get = |name: &str| -> Result<Var<f64>> {
            leaves
                .get(name)
                .cloned()
                .ok_or_else(|| SsmError::State(format!("missing parameter {name:?}")))
        };
        let attention = |prefix: &str| -> Result<AttentionVars<f64>> {
            Ok(AttentionVars {
                wq: get(&format!("{prefix}.wq"))?,
                wk: get(&format!("{prefix}.wk"))?,
                wv: get(&format!("{prefix}.wv"))?,
                heads: self.config.heads,
            })
        };
        let layers = (0..self.config.gcn_layers)
            .map(|layer| {
                let p = |suffix: &str| format!("gcn.l{layer}.{suffix}");
                Ok(GcnLayerVars {
                    node_self: get(&p("node_self"))?,
                    node_neigh: get(&p("node_neigh"))?,
                    gate_src: get(&p("gate_src"))?,
                    gate_dst: get(&p("gate_dst"))?,
                    gate_edge: get(&p("gate_edge"))?,
                    edge_w: get(&p("edge_w"))?,
                    node_gain: get(&p("node_gain"))?,
                    node_bias: get(&p("node_bias"))?,
                    edge_gain: get(&p("edge_gain"))?,
                    edge_bias: get(&p("edge_bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (det_w, det_b, ant_w, ant_b) = match self.config.classifier_sharing {
            ClassifierSharing::Shared => (
                "classifier.weight",
                "classifier.bias",
                "classifier.weight",
                "classifier.bias",
            ),
            ClassifierSharing::Separate => (
                "classifier.det.weight",
                "classifier.det.bias",
                "classifier.ant.weight",
                "classifier.ant.bias",
            ),
        };
        Ok(ModelVars {
            projection: ProjectionVars {
                weight: get("proj.weight")?,
                bias: get("proj.bias")?,
            },
            twa: attention("twa")?,
            edge_ca: attention("apl.edge_ca")?,
            edge_projection: get("apl.edge_proj")?,
            gcn: GcnVars {
                layers,
                readout: get("gcn.readout")?,
            },
            cti_present: attention("cti.present")?,
            cti_future: attention("cti.future")?,
            positional: self
                .config
                .positional_encoding
                .then(|| get("cti.pos"))
                .transpose()?
                .map(|table| PositionalVars { table }),
            detection_head: ClassifierVars {
                weight: get(det_w)?,
                bias: get(det_b)?,
            },
            anticipation_head: ClassifierVars {
                weight: get(ant_w)?,
                bias: get(ant_b)?,
            },
            leaves,
        })
    }

    /// Full forward pass over one window on an existing tape. Clustering and
    /// critical-frame selection run on detached values (pass
    /// `frozen_critical` to skip them entirely, e.g. under the gradient
    /// checker); everything downstream is differentiable.
    pub fn forward_on(
        &self,
        tape: &Tape<f64>,
        vars: &ModelVars,
        window: &MemoryWindow<f64>,
        em_seed: u64,
        warm_start: Option<&GmmParams<f64>>,
        frozen_critical: Option<&CriticalFrameSet>,
    ) -> Result<WindowForward> {
        let cfg = &self.config;
        if window.feature_dim() != cfg.feature_dim {
            return Err(SsmError::Dimension(format!(
                "frame width {} vs configured feature_dim {}",
                window.feature_dim(),
                cfg.feature_dim
            )));
        }
        if window.memory_len() > cfg.memory_len {
            return Err(SsmError::Argument(format!(
                "window holds {} memory frames, configured maximum is {}",
                window.memory_len(),
                cfg.memory_len
            )));
        }
        let embedded = embed_window(tape, window, &vars.projection)?;

        // Cluster the memory on plain values; gradients stop here.
        let mem_len = window.memory_len();
        let (critical, gmm) = match frozen_critical {
            Some(set) => (set.clone(), None),
            None if mem_len == 0 => (
                CriticalFrameSet::from_entries(vec![CriticalFrame {
                    frame_index: 0,
                    cluster: None,
                }])?,
                None,
            ),
            None => {
                let emb_vals = embedded.value();
                let d = emb_vals.cols();
                let mut mem_data = Vec::with_capacity(mem_len * d);
                mem_data.extend_from_slice(&emb_vals.data()[..mem_len * d]);
                let mem_emb = Tensor::new(vec![mem_len, d], mem_data)?;
                let k_eff = cfg.clusters.min(mem_len);
                let warm = warm_start.filter(|g| g.components() == k_eff && g.dim() == d);
                let fit = fit_gmm(
                    &mem_emb,
                    k_eff,
                    em_seed,
                    cfg.em_max_iters,
                    cfg.em_tol,
                    warm,
                )?;
                let indices: Vec<i64> = (0..mem_len as i64).map(|i| i - mem_len as i64).collect();
                let set = select_critical_frames(&mem_emb, &fit.params, &indices, 0)?;
                (set, Some(fit.params))
            }
        };

        let compressed = compress_embedded(
            tape,
            &embedded,
            window,
            &critical,
            &vars.twa,
            cfg.temporal_scale,
        )?;
        let states = compressed.states;
        let n_states = states.len();
        debug_assert_eq!(states[n_states - 1].anchor_index, 0);

        // Action-pattern learning over the critical states.
        let graph = if n_states >= 2 {
            build_st_graph(&states, &vars.edge_ca, &vars.edge_projection)?
        } else {
            StGraph::from_parts(vec![states[0].vector.clone()], Vec::new())?
        };
        let gcn_out = gated_gcn_forward(&graph, &vars.gcn)?;
        let future_cue = extract_future_cue(&gcn_out.graph, &vars.gcn.readout, cfg.readout)?;

        // Cross-temporal interaction, gated by the ablation switches.
        let past: Vec<Var<f64>> = states[..n_states - 1]
            .iter()
            .map(|s| s.vector.clone())
            .collect();
        let present = states[n_states - 1].vector.clone();
        let sw = cfg.interactions;
        let pos = vars.positional.as_ref();
        let count = past.len();
        let past_tokens = |tokens: &mut Vec<(Var<f64>, Slot)>| {
            for (index, p) in past.iter().enumerate() {
                tokens.push((p.clone(), Slot::Past { index, count }));
            }
        };

        let detection_feature = if sw.past && sw.present {
            let mut tokens = Vec::new();
            past_tokens(&mut tokens);
            tokens.push((present.clone(), Slot::Present));
            if sw.future {
                tokens.push((future_cue.clone(), Slot::Future));
            }
            refine_against(&present, Slot::Present, &tokens, &vars.cti_present, pos)?
        } else {
            present.clone()
        };

        let anticipation_feature = if sw.future && (sw.past || sw.present) {
            let mut tokens = Vec::new();
            if sw.past {
                past_tokens(&mut tokens);
            }
            if sw.present {
                tokens.push((detection_feature.clone(), Slot::Present));
            }
            tokens.push((future_cue.clone(), Slot::Future));
            refine_against(&future_cue, Slot::Future, &tokens, &vars.cti_future, pos)?
        } else {
            future_cue.clone()
        };

        let p_d = classify(&detection_feature, &vars.detection_head)?;
        let p_st = classify(&future_cue, &vars.anticipation_head)?;
        let p_a = classify(&anticipation_feature, &vars.anticipation_head)?;
        tape.check_finite()?;

        Ok(WindowForward {
            p_d,
            p_a,
            p_st,
            critical,
            gmm,
            twa_weights: compressed.attention_weights,
        })
    }

    /// Convenience wrapper: fresh tape, bind, forward.
    pub fn forward_window(
        &self,
        window: &MemoryWindow<f64>,
        em_seed: u64,
        warm_start: Option<&GmmParams<f64>>,
        frozen_critical: Option<&CriticalFrameSet>,
    ) -> Result<(Tape<f64>, ModelVars, WindowForward)> {
        let tape = Tape::new();
        let vars = self.bind(&tape)?;
        let out = self.forward_on(&tape, &vars, window, em_seed, warm_start, frozen_critical)?;
        Ok((tape, vars, out))
    }
}

/// Builds the relative-indexed window ending at `episode[t]`, using at most
/// `memory_len` preceding frames.
pub fn window_at(
    features: &[Vec<f64>],
    t: usize,
    memory_len: usize,
) -> Result<MemoryWindow<f64>> {
    if t >= features.len() {
        return Err(SsmError::Argument(format!(
            "position {t} outside episode of length {}",
            features.len()
        )));
    }
    let start = t.saturating_sub(memory_len);
    let mem_len = t - start;
    let memory = (start..t)
        .map(|i| crate::csmc::FeatureFrame::new(i as i64 - t as i64, features[i].clone()))
        .collect();
    let current = crate::csmc::FeatureFrame::new(0, features[t].clone());
    MemoryWindow::new(memory, current).map(|w| {
        debug_assert_eq!(w.memory_len(), mem_len);
        w
    })
}
