//! Action pattern learning: a complete directed graph over the critical
//! states with vector-valued edges from pairwise cross-attention, refined by
//! a residual gated graph convolution, and read out as the potential future
//! cue.

use crate::csmc::CriticalState;
use crate::error::{Result, SsmError};
use crate::numerics::{AttentionVars, Scalar, Tensor, Var};

/// Epsilon in the gated neighbor normalization.
pub const GATE_EPS: f64 = 1e-6;
/// Epsilon inside the per-node layer normalization.
pub const NORM_EPS: f64 = 1e-6;

/// State-transition graph: `n` node vectors and one `d_edge` vector per
/// ordered pair of distinct nodes, stored in `(from, to)` row-major order.
pub struct StGraph<T: Scalar> {
    pub nodes: Vec<Var<T>>,
    pub edges: Vec<Var<T>>,
}

impl<T: Scalar> StGraph<T> {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Index of the directed edge `from → to` in the edge list.
    pub fn edge_index(n: usize, from: usize, to: usize) -> usize {
        debug_assert!(from != to && from < n && to < n);
        from * (n - 1) + if to < from { to } else { to - 1 }
    }

    pub fn edge(&self, from: usize, to: usize) -> &Var<T> {
        &self.edges[Self::edge_index(self.nodes.len(), from, to)]
    }

    /// Assembles a graph from explicit node and edge vectors. The edge list
    /// must be complete and in `(from, to)` row-major order; a single-node
    /// graph has zero edges.
    pub fn from_parts(nodes: Vec<Var<T>>, edges: Vec<Var<T>>) -> Result<Self> {
        let n = nodes.len();
        if n == 0 {
            return Err(SsmError::Argument("graph needs at least one node".into()));
        }
        if edges.len() != n * (n.saturating_sub(1)) {
            return Err(SsmError::Dimension(format!(
                "expected {} directed edges for {n} nodes, got {}",
                n * (n - 1),
                edges.len()
            )));
        }
        Ok(Self { nodes, edges })
    }
}

/// Builds the state-transition graph from critical states. Every ordered
/// pair `(i, j)` gets `E_ij = edge_projection(CA(query=S_i, key/value=S_j))`,
/// sharing one attention block with the roles swapped for the reverse edge.
/// No temporal masking: edges exist in both directions between every pair.
pub fn build_st_graph<T: Scalar>(
    states: &[CriticalState<T>],
    attn: &AttentionVars<T>,
    edge_projection: &Var<T>,
) -> Result<StGraph<T>> {
    let n = states.len();
    if n < 2 {
        return Err(SsmError::Argument(format!(
            "graph construction needs at least 2 critical states, got {n}"
        )));
    }
    let nodes: Vec<Var<T>> = states.iter().map(|s| s.vector.clone()).collect();
    let mut edges = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let attended = attn.apply(&nodes[i], &nodes[j], None)?;
            edges.push(attended.matmul(&edge_projection.t()));
        }
    }
    StGraph::from_parts(nodes, edges)
}

/// Parameters for one gated graph-convolution layer.
pub struct GcnLayerVars<T: Scalar> {
    /// Self transform applied to the node being updated.
    pub node_self: Var<T>,
    /// Neighbor transform applied to messages.
    pub node_neigh: Var<T>,
    /// Gate contribution of the receiving node.
    pub gate_src: Var<T>,
    /// Gate contribution of the neighbor.
    pub gate_dst: Var<T>,
    /// Gate contribution of the connecting edge, `d_model×d_edge`.
    pub gate_edge: Var<T>,
    /// Edge update transform, `d_edge×(2·d_model+d_edge)`.
    pub edge_w: Var<T>,
    pub node_gain: Var<T>,
    pub node_bias: Var<T>,
    pub edge_gain: Var<T>,
    pub edge_bias: Var<T>,
}

pub struct GcnVars<T: Scalar> {
    pub layers: Vec<GcnLayerVars<T>>,
    /// Readout projection, `d_model×d_model`.
    pub readout: Var<T>,
}

/// Output of [`gated_gcn_forward`]: the updated graph plus the raw gate
/// activations per layer (`edge_count×d_model`), kept for diagnostics.
pub struct GcnOutput<T: Scalar> {
    pub graph: StGraph<T>,
    pub gates: Vec<Tensor<T>>,
}

/// Residual gated graph convolution.
///
/// Per layer, from the layer's input nodes `h` and edges `E`:
/// gate `η_ij = sigmoid(A·h_i + B·h_j + C·E_ij)`, node update
/// `h_i ← h_i + tanh(norm(U·h_i + Σ_{j≠i} η_ij⊙(V·h_j) / (Σ η_ij + ε)))`,
/// edge update `E_ij ← E_ij + tanh(norm(W·[h_i; h_j; E_ij]))`. Node and edge
/// updates within a layer both read the layer's inputs.
pub fn gated_gcn_forward<T: Scalar>(
    graph: &StGraph<T>,
    params: &GcnVars<T>,
) -> Result<GcnOutput<T>> {
    let n = graph.node_count();
    let eps = T::of(GATE_EPS);
    let norm_eps = T::of(NORM_EPS);

    let mut nodes = graph.nodes.clone();
    let mut edges = graph.edges.clone();
    let mut gate_log = Vec::with_capacity(params.layers.len());

    for layer in &params.layers {
        let h = Var::concat_rows(&nodes);
        let hu = h.matmul(&layer.node_self.t());
        let hv = h.matmul(&layer.node_neigh.t());
        let ha = h.matmul(&layer.gate_src.t());
        let hb = h.matmul(&layer.gate_dst.t());

        let (e_all, ec) = if edges.is_empty() {
            (None, None)
        } else {
            let e = Var::concat_rows(&edges);
            let ec = e.matmul(&layer.gate_edge.t());
            (Some(e), Some(ec))
        };

        let mut gates: Vec<Var<T>> = Vec::with_capacity(edges.len());
        let mut new_nodes = Vec::with_capacity(n);
        for i in 0..n {
            let mut num: Option<Var<T>> = None;
            let mut den: Option<Var<T>> = None;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let eidx = StGraph::<T>::edge_index(n, i, j);
                let ec = ec.as_ref().expect("edges exist when n > 1");
                let eta = ha
                    .slice_rows(i, 1)
                    .add(&hb.slice_rows(j, 1))
                    .add(&ec.slice_rows(eidx, 1))
                    .sigmoid();
                let msg = eta.mul(&hv.slice_rows(j, 1));
                num = Some(match num {
                    Some(acc) => acc.add(&msg),
                    None => msg,
                });
                den = Some(match den {
                    Some(acc) => acc.add(&eta),
                    None => eta.clone(),
                });
                gates.push(eta);
            }
            let pre = match (num, den) {
                (Some(num), Some(den)) => {
                    hu.slice_rows(i, 1).add(&num.div(&den.add_scalar(eps)))
                }
                _ => hu.slice_rows(i, 1),
            };
            let update = pre
                .layer_norm_rows(&layer.node_gain, &layer.node_bias, norm_eps)
                .tanh();
            new_nodes.push(nodes[i].add(&update));
        }

        if let Some(e_all) = e_all {
            let mut new_edges = Vec::with_capacity(edges.len());
            let mut pair = 0usize;
            for i in 0..n {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let cat = Var::concat_cols(&[
                        h.slice_rows(i, 1),
                        h.slice_rows(j, 1),
                        e_all.slice_rows(StGraph::<T>::edge_index(n, i, j), 1),
                    ]);
                    let update = cat
                        .matmul(&layer.edge_w.t())
                        .layer_norm_rows(&layer.edge_gain, &layer.edge_bias, norm_eps)
                        .tanh();
                    new_edges.push(edges[pair].add(&update));
                    pair += 1;
                }
            }
            edges = new_edges;
        }

        // Gate log follows (i, j) iteration order, which matches edge order.
        if gates.is_empty() {
            gate_log.push(Tensor::zeros(1, 1));
        } else {
            gate_log.push(Var::concat_rows(&gates).value());
        }
        nodes = new_nodes;
    }

    Ok(GcnOutput {
        graph: StGraph { nodes, edges },
        gates: gate_log,
    })
}

/// How the future cue is read out of the updated graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Mean over all updated nodes, then projection.
    #[default]
    Mean,
    /// The node anchored at the current frame (last in order), then projection.
    CurrentNode,
}

/// Extracts the potential future cue from the updated graph.
pub fn extract_future_cue<T: Scalar>(
    graph: &StGraph<T>,
    readout: &Var<T>,
    mode: ReadoutMode,
) -> Result<Var<T>> {
    if graph.nodes.is_empty() {
        return Err(SsmError::Argument("empty graph".into()));
    }
    let pooled = match mode {
        ReadoutMode::Mean => Var::concat_rows(&graph.nodes).mean_rows(),
        ReadoutMode::CurrentNode => graph.nodes.last().expect("non-empty").clone(),
    };
    Ok(pooled.matmul(&readout.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csmc::CriticalState;
    use crate::numerics::Tape;

    fn state(tape: &Tape<f64>, anchor: i64, v: &[f64]) -> CriticalState<f64> {
        CriticalState {
            anchor_index: anchor,
            vector: tape.leaf(Tensor::row_vector(v).unwrap()),
        }
    }

    fn identity_attention(tape: &Tape<f64>, d: usize) -> AttentionVars<f64> {
        AttentionVars {
            wq: tape.leaf(Tensor::eye(d)),
            wk: tape.leaf(Tensor::eye(d)),
            wv: tape.leaf(Tensor::eye(d)),
            heads: 1,
        }
    }

    fn simple_layer(
        tape: &Tape<f64>,
        d: usize,
        d_edge: usize,
        scale: f64,
    ) -> GcnLayerVars<f64> {
        GcnLayerVars {
            node_self: tape.leaf(Tensor::eye(d).scale(scale)),
            node_neigh: tape.leaf(Tensor::eye(d).scale(scale)),
            gate_src: tape.leaf(Tensor::zeros(d, d)),
            gate_dst: tape.leaf(Tensor::zeros(d, d)),
            gate_edge: tape.leaf(Tensor::zeros(d, d_edge)),
            edge_w: tape.leaf(Tensor::zeros(d_edge, 2 * d + d_edge)),
            node_gain: tape.leaf(Tensor::full(1, d, 1.0)),
            node_bias: tape.leaf(Tensor::zeros(1, d)),
            edge_gain: tape.leaf(Tensor::full(1, d_edge, 1.0)),
            edge_bias: tape.leaf(Tensor::zeros(1, d_edge)),
        }
    }

    #[test]
    fn graph_needs_two_nodes_and_counts_edges() {
        let tape = Tape::new();
        let attn = identity_attention(&tape, 2);
        let proj = tape.leaf(Tensor::eye(2));
        let one = vec![state(&tape, 0, &[1.0, 0.0])];
        assert!(build_st_graph(&one, &attn, &proj).is_err());

        let two = vec![state(&tape, -3, &[1.0, 0.0]), state(&tape, 0, &[0.0, 1.0])];
        let g = build_st_graph(&two, &attn, &proj).unwrap();
        assert_eq!(g.edge_count(), 2);
        let e01 = g.edge(0, 1).value();
        let e10 = g.edge(1, 0).value();
        assert_ne!(e01.data(), e10.data());
    }

    #[test]
    fn identical_states_give_identical_edges() {
        let tape = Tape::new();
        let attn = identity_attention(&tape, 2);
        let proj = tape.leaf(Tensor::from_rows(&[vec![0.5, -0.3]]).unwrap());
        let states = vec![
            state(&tape, -4, &[0.7, 0.1]),
            state(&tape, -2, &[0.7, 0.1]),
            state(&tape, 0, &[0.7, 0.1]),
        ];
        let g = build_st_graph(&states, &attn, &proj).unwrap();
        let first = g.edges[0].value();
        for e in &g.edges {
            assert_eq!(e.value().data(), first.data());
        }
    }

    #[test]
    fn edges_match_single_key_attention_plus_projection() {
        // Single-key attention passes the value projection of the key state
        // through; the edge projection then maps it to edge width.
        let tape = Tape::new();
        let attn = identity_attention(&tape, 2);
        let proj = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let vecs = [[0.2, -0.1], [0.9, 0.4], [-0.6, 0.3]];
        let states: Vec<_> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| state(&tape, i as i64 - 2, v))
            .collect();
        let g = build_st_graph(&states, &attn, &proj).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let expected = vecs[j][0] * 1.0 + vecs[j][1] * 2.0;
                let got = g.edge(i, j).value().item();
                assert!((got - expected).abs() < 1e-9, "edge {i}->{j}");
            }
        }
    }

    #[test]
    fn forced_zero_gates_suppress_neighbor_mixing() {
        let tape = Tape::new();
        let d = 2;
        let d_edge = 1;
        let mut layer = simple_layer(&tape, d, d_edge, 0.8);
        // Edges hold 1.0; a hugely negative edge-gate transform drives every
        // gate pre-activation to -inf, i.e. exactly zero gates.
        layer.gate_edge = tape.leaf(Tensor::full(d, d_edge, -1e30));
        let params = GcnVars {
            layers: vec![layer],
            readout: tape.leaf(Tensor::eye(d)),
        };
        let nodes = vec![
            tape.leaf(Tensor::row_vector(&[0.4, -0.2]).unwrap()),
            tape.leaf(Tensor::row_vector(&[1.0, 0.3]).unwrap()),
        ];
        let edges = vec![
            tape.leaf(Tensor::scalar(1.0)),
            tape.leaf(Tensor::scalar(1.0)),
        ];
        let g = StGraph::from_parts(nodes.clone(), edges).unwrap();
        let out = gated_gcn_forward(&g, &params).unwrap();

        for gate in &out.gates {
            assert!(gate.data().iter().all(|&v| v == 0.0));
        }
        // Expected: h + tanh(norm(U·h)), no neighbor term.
        for (i, node) in nodes.iter().enumerate() {
            let expected = node.add(
                &node
                    .matmul(&params.layers[0].node_self.t())
                    .layer_norm_rows(
                        &params.layers[0].node_gain,
                        &params.layers[0].node_bias,
                        NORM_EPS,
                    )
                    .tanh(),
            );
            let got = out.graph.nodes[i].value();
            for j in 0..2 {
                assert!((got.at(0, j) - expected.value().at(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_transforms_and_gain_make_identity() {
        let tape = Tape::new();
        let mut layer = simple_layer(&tape, 2, 1, 0.0);
        layer.node_gain = tape.leaf(Tensor::zeros(1, 2));
        layer.edge_gain = tape.leaf(Tensor::zeros(1, 1));
        let params = GcnVars {
            layers: vec![layer],
            readout: tape.leaf(Tensor::eye(2)),
        };
        let nodes = vec![
            tape.leaf(Tensor::row_vector(&[0.4, -0.2]).unwrap()),
            tape.leaf(Tensor::row_vector(&[1.0, 0.3]).unwrap()),
        ];
        let edges = vec![
            tape.leaf(Tensor::scalar(0.7)),
            tape.leaf(Tensor::scalar(-0.1)),
        ];
        let g = StGraph::from_parts(nodes.clone(), edges.clone()).unwrap();
        let out = gated_gcn_forward(&g, &params).unwrap();
        for (got, orig) in out.graph.nodes.iter().zip(&nodes) {
            assert_eq!(got.value().data(), orig.value().data());
        }
        for (got, orig) in out.graph.edges.iter().zip(&edges) {
            assert_eq!(got.value().data(), orig.value().data());
        }
    }

    #[test]
    fn gates_stay_in_open_unit_interval() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let d = 4;
        let d_edge = 2;
        let mut rand_mat = |r: usize, c: usize| {
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            tape.leaf(Tensor::new(vec![r, c], data).unwrap())
        };
        let layer = GcnLayerVars {
            node_self: rand_mat(d, d),
            node_neigh: rand_mat(d, d),
            gate_src: rand_mat(d, d),
            gate_dst: rand_mat(d, d),
            gate_edge: rand_mat(d, d_edge),
            edge_w: rand_mat(d_edge, 2 * d + d_edge),
            node_gain: rand_mat(1, d),
            node_bias: rand_mat(1, d),
            edge_gain: rand_mat(1, d_edge),
            edge_bias: rand_mat(1, d_edge),
        };
        let params = GcnVars {
            layers: vec![layer],
            readout: rand_mat(d, d),
        };
        let nodes: Vec<_> = (0..3).map(|_| rand_mat(1, d)).collect();
        let edges: Vec<_> = (0..6).map(|_| rand_mat(1, d_edge)).collect();
        let g = StGraph::from_parts(nodes, edges).unwrap();
        let out = gated_gcn_forward(&g, &params).unwrap();
        for gate in &out.gates {
            assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn two_node_layer_matches_hand_evaluation() {
        // d_model = 1, d_edge = 1 keeps the hand computation tractable:
        // layer norm of a single feature is just the bias.
        let tape = Tape::new();
        let layer = GcnLayerVars {
            node_self: tape.leaf(Tensor::scalar(2.0)),
            node_neigh: tape.leaf(Tensor::scalar(3.0)),
            gate_src: tape.leaf(Tensor::scalar(1.0)),
            gate_dst: tape.leaf(Tensor::scalar(-1.0)),
            gate_edge: tape.leaf(Tensor::scalar(0.5)),
            edge_w: tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap()),
            node_gain: tape.leaf(Tensor::scalar(1.5)),
            node_bias: tape.leaf(Tensor::scalar(0.25)),
            edge_gain: tape.leaf(Tensor::scalar(2.0)),
            edge_bias: tape.leaf(Tensor::scalar(-0.5)),
        };
        let params = GcnVars {
            layers: vec![layer],
            readout: tape.leaf(Tensor::scalar(1.0)),
        };
        let h = [0.6f64, -0.4];
        let e = [0.2f64, 0.9]; // edges (0->1, 1->0)
        let nodes = vec![
            tape.leaf(Tensor::scalar(h[0])),
            tape.leaf(Tensor::scalar(h[1])),
        ];
        let edges = vec![
            tape.leaf(Tensor::scalar(e[0])),
            tape.leaf(Tensor::scalar(e[1])),
        ];
        let g = StGraph::from_parts(nodes, edges).unwrap();
        let out = gated_gcn_forward(&g, &params).unwrap();

        // Hand evaluation with plain scalars.
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        // Width-1 layer norm: (x - x)/sqrt(0 + eps) = 0, so norm(x) = bias.
        let norm_node = |_x: f64| 0.25f64;
        let norm_edge = |_x: f64| -0.5f64;
        let mut expected_nodes = [0.0f64; 2];
        for i in 0..2 {
            let j = 1 - i;
            let eta = sigmoid(1.0 * h[i] - 1.0 * h[j] + 0.5 * e[if i == 0 { 0 } else { 1 }]);
            let agg = eta * (3.0 * h[j]) / (eta + GATE_EPS);
            let pre = 2.0 * h[i] + agg;
            expected_nodes[i] = h[i] + norm_node(pre).tanh();
        }
        let mut expected_edges = [0.0f64; 2];
        for (slot, (i, j)) in [(0usize, 1usize), (1, 0)].iter().enumerate() {
            let pre = 1.0 * h[*i] + 2.0 * h[*j] + 3.0 * e[slot];
            expected_edges[slot] = e[slot] + norm_edge(pre).tanh();
        }
        for i in 0..2 {
            assert!((out.graph.nodes[i].value().item() - expected_nodes[i]).abs() < 1e-9);
            assert!((out.graph.edges[i].value().item() - expected_edges[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn future_cue_readouts() {
        let tape = Tape::new();
        let nodes = vec![
            tape.leaf(Tensor::row_vector(&[1.0, 0.0]).unwrap()),
            tape.leaf(Tensor::row_vector(&[0.0, 1.0]).unwrap()),
        ];
        let edges = vec![
            tape.leaf(Tensor::scalar(0.0)),
            tape.leaf(Tensor::scalar(0.0)),
        ];
        let g = StGraph::from_parts(nodes, edges).unwrap();
        let readout = tape.leaf(Tensor::eye(2));
        let cue = extract_future_cue(&g, &readout, ReadoutMode::Mean).unwrap();
        assert_eq!(cue.value().data(), &[0.5, 0.5]);
        let cue = extract_future_cue(&g, &readout, ReadoutMode::CurrentNode).unwrap();
        assert_eq!(cue.value().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mean_readout_of_equal_nodes_is_that_node() {
        let tape = Tape::new();
        let v = [0.3f64, -0.8, 0.1];
        let nodes: Vec<_> = (0..3)
            .map(|_| tape.leaf(Tensor::row_vector(&v).unwrap()))
            .collect();
        let edges: Vec<_> = (0..6).map(|_| tape.leaf(Tensor::scalar(0.0))).collect();
        let g = StGraph::from_parts(nodes, edges).unwrap();
        let readout = tape.leaf(Tensor::eye(3));
        let cue = extract_future_cue(&g, &readout, ReadoutMode::Mean).unwrap();
        for (a, b) in cue.value().data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_node_mean_projection_matches_manual() {
        let tape = Tape::new();
        let vecs = [[1.0f64, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let nodes: Vec<_> = vecs
            .iter()
            .map(|v| tape.leaf(Tensor::row_vector(v).unwrap()))
            .collect();
        let edges: Vec<_> = (0..6).map(|_| tape.leaf(Tensor::scalar(0.0))).collect();
        let g = StGraph::from_parts(nodes, edges).unwrap();
        let readout = tape.leaf(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.5, -0.5]]).unwrap());
        let cue = extract_future_cue(&g, &readout, ReadoutMode::Mean).unwrap().value();
        // mean = (3, 4); projection rows: [1,1]·mean = 7, [0.5,-0.5]·mean = -0.5
        assert!((cue.at(0, 0) - 7.0).abs() < 1e-12);
        assert!((cue.at(0, 1) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::new();
        let d = 4;
        let d_edge = 2;
        let n = 4;
        let mut rand_mat = |r: usize, c: usize| {
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-0.8..0.8)).collect();
            tape.leaf(Tensor::new(vec![r, c], data).unwrap())
        };
        let layers = (0..2)
            .map(|_| GcnLayerVars {
                node_self: rand_mat(d, d),
                node_neigh: rand_mat(d, d),
                gate_src: rand_mat(d, d),
                gate_dst: rand_mat(d, d),
                gate_edge: rand_mat(d, d_edge),
                edge_w: rand_mat(d_edge, 2 * d + d_edge),
                node_gain: rand_mat(1, d),
                node_bias: rand_mat(1, d),
                edge_gain: rand_mat(1, d_edge),
                edge_bias: rand_mat(1, d_edge),
            })
            .collect();
        let params = GcnVars {
            layers,
            readout: rand_mat(d, d),
        };
        let node_vals: Vec<Tensor<f64>> = (0..n).map(|_| rand_mat(1, d).value()).collect();
        let edge_vals: Vec<Tensor<f64>> =
            (0..n * (n - 1)).map(|_| rand_mat(1, d_edge).value()).collect();

        let run = |perm: &[usize]| {
            let nodes: Vec<_> = perm
                .iter()
                .map(|&p| tape.leaf(node_vals[p].clone()))
                .collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let orig = StGraph::<f64>::edge_index(n, perm[i], perm[j]);
                    edges.push(tape.leaf(edge_vals[orig].clone()));
                }
            }
            let g = StGraph::from_parts(nodes, edges).unwrap();
            let out = gated_gcn_forward(&g, &params).unwrap();
            let cue = extract_future_cue(&out.graph, &params.readout, ReadoutMode::Mean)
                .unwrap()
                .value();
            let nodes_out: Vec<Tensor<f64>> =
                out.graph.nodes.iter().map(|v| v.value()).collect();
            (nodes_out, cue)
        };

        let (base_nodes, base_cue) = run(&[0, 1, 2, 3]);
        let perm = [2, 0, 3, 1];
        let (perm_nodes, perm_cue) = run(&perm);
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..d {
                assert!(
                    (perm_nodes[i].at(0, j) - base_nodes[p].at(0, j)).abs() < 1e-9,
                    "node {i} not equivariant"
                );
            }
        }
        for j in 0..d {
            assert!((perm_cue.at(0, j) - base_cue.at(0, j)).abs() < 1e-9);
        }
    }
}
