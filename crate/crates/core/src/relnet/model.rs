use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{object_dim, CaseFeatures, DEFAULT_GRID, EDGE_DIM};
use super::tape::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scene::{Category, Predicate, Relation, SceneGraph, SceneObject};

/// Number of output classes: none plus the three predicates.
pub const CLASSES: usize = 4;

/// One hidden vector per node or edge.
pub type States = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "v-motif")]
    VMotif,
    #[serde(rename = "v-imp")]
    VImp,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::VMotif, Architecture::VImp];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::VMotif => "v-motif",
            Architecture::VImp => "v-imp",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v-motif" => Ok(Architecture::VMotif),
            "v-imp" => Ok(Architecture::VImp),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture {other:?} (expected v-motif or v-imp)"
            ))),
        }
    }
}

/// Sequence order for the V-MOTIF context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectOrder {
    #[default]
    TopToBottom,
    Size,
}

impl FromStr for ObjectOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top-to-bottom" => Ok(ObjectOrder::TopToBottom),
            "size" => Ok(ObjectOrder::Size),
            other => Err(Error::InvalidConfig(format!("unknown object order {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub hidden: usize,
    /// Message passing rounds (V-IMP only).
    pub iterations: usize,
    pub grid: usize,
    pub grounding: bool,
    pub order: ObjectOrder,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Architecture::VMotif,
            hidden: 16,
            iterations: 2,
            grid: DEFAULT_GRID,
            grounding: false,
            order: ObjectOrder::TopToBottom,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden size must be at least 1".into()));
        }
        if self.grid == 0 {
            return Err(Error::InvalidConfig("occupancy grid must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LstmIds {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct GruIds {
    wx: ParamId,
    wh: ParamId,
    bx: ParamId,
    bh: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct MlpIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Layout {
    Motif {
        proj_w: ParamId,
        proj_b: ParamId,
        fwd: LstmIds,
        bwd: LstmIds,
        readout: MlpIds,
    },
    Imp {
        node_w: ParamId,
        node_b: ParamId,
        edge_w: ParamId,
        edge_b: ParamId,
        node_gru: GruIds,
        edge_gru: GruIds,
        node_scorer: MlpIds,
        edge_scorer: MlpIds,
        readout: MlpIds,
    },
}

struct Builder {
    params: ParamSet,
    fan_in: Vec<usize>,
}

impl Builder {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.fan_in.push(cols);
        self.params.add(name, rows, cols)
    }

    /// Bias sharing the fan-in of the weight it belongs to.
    fn bias(&mut self, name: &str, rows: usize, fan_in: usize) -> ParamId {
        self.fan_in.push(fan_in);
        self.params.add(name, rows, 1)
    }

    fn lstm(&mut self, prefix: &str, h: usize) -> LstmIds {
        LstmIds {
            wx: self.weight(&format!("{prefix}.wx"), 4 * h, h),
            wh: self.weight(&format!("{prefix}.wh"), 4 * h, h),
            b: self.bias(&format!("{prefix}.b"), 4 * h, h),
        }
    }

    fn gru(&mut self, prefix: &str, h: usize) -> GruIds {
        GruIds {
            wx: self.weight(&format!("{prefix}.wx"), 3 * h, h),
            wh: self.weight(&format!("{prefix}.wh"), 3 * h, h),
            bx: self.bias(&format!("{prefix}.bx"), 3 * h, h),
            bh: self.bias(&format!("{prefix}.bh"), 3 * h, h),
        }
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: usize, out: usize) -> MlpIds {
        MlpIds {
            w1: self.weight(&format!("{prefix}.w1"), hidden, input),
            b1: self.bias(&format!("{prefix}.b1"), hidden, input),
            w2: self.weight(&format!("{prefix}.w2"), out, hidden),
            b2: self.bias(&format!("{prefix}.b2"), out, hidden),
        }
    }
}

fn build(config: &ModelConfig) -> (Layout, ParamSet, Vec<usize>) {
    let h = config.hidden;
    let d = object_dim(config.grid);
    let mut b = Builder {
        params: ParamSet::default(),
        fan_in: Vec::new(),
    };
    let layout = match config.arch {
        Architecture::VMotif => Layout::Motif {
            proj_w: b.weight("proj.w", h, d),
            proj_b: b.bias("proj.b", h, d),
            fwd: b.lstm("lstm_fwd", h),
            bwd: b.lstm("lstm_bwd", h),
            readout: b.mlp("readout", 4 * h + EDGE_DIM, h, CLASSES),
        },
        Architecture::VImp => Layout::Imp {
            node_w: b.weight("node_proj.w", h, d),
            node_b: b.bias("node_proj.b", h, d),
            edge_w: b.weight("edge_proj.w", h, EDGE_DIM),
            edge_b: b.bias("edge_proj.b", h, EDGE_DIM),
            node_gru: b.gru("node_gru", h),
            edge_gru: b.gru("edge_gru", h),
            node_scorer: b.mlp("node_scorer", 2 * h, h, 1),
            edge_scorer: b.mlp("edge_scorer", 2 * h, h, 1),
            readout: b.mlp("readout", 3 * h + EDGE_DIM, h, CLASSES),
        },
    };
    (layout, b.params, b.fan_in)
}

/// Positions of `objects` in V-MOTIF sequence order.
pub fn v_motif_order(objects: &[SceneObject], order: ObjectOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..objects.len()).collect();
    idx.sort_by(|&a, &b| {
        let (oa, ob) = (&objects[a], &objects[b]);
        let by_z = oa.bbox.min[0].cmp(&ob.bbox.min[0]);
        let by_size = ob.bbox.volume().cmp(&oa.bbox.volume());
        let primary = match order {
            ObjectOrder::TopToBottom => by_z.then(by_size),
            ObjectOrder::Size => by_size.then(by_z),
        };
        primary.then(oa.id.cmp(&ob.id))
    });
    idx
}

/// Class mask of a (subject, object) pair: none is always allowed.
pub fn class_mask(subject: Category, object: Category) -> [bool; CLASSES] {
    let mut m = [true; CLASSES];
    for p in Predicate::ALL {
        m[p.index() + 1] = p.compatible(subject, object);
    }
    m
}

/// Softmax over the allowed classes; disallowed entries are exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool; CLASSES]) -> [f64; CLASSES] {
    let max = (0..CLASSES)
        .filter(|&c| mask[c])
        .map(|c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; CLASSES];
    let mut sum = 0.0;
    for c in 0..CLASSES {
        if mask[c] {
            p[c] = (logits[c] - max).exp();
            sum += p[c];
        }
    }
    for v in &mut p {
        *v /= sum;
    }
    p
}

/// Weighted cross-entropy of one pair and its gradient w.r.t. the logits.
pub fn weighted_cross_entropy(
    logits: &[f64],
    mask: &[bool; CLASSES],
    target: usize,
    weight: f64,
) -> (f64, [f64; CLASSES]) {
    let p = masked_softmax(logits, mask);
    let loss = -weight * p[target].max(f64::MIN_POSITIVE).ln();
    let mut g = [0.0; CLASSES];
    for c in 0..CLASSES {
        if mask[c] {
            g[c] = weight * (p[c] - if c == target { 1.0 } else { 0.0 });
        }
    }
    (loss, g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub subject: u32,
    pub object: u32,
    pub probs: [f64; CLASSES],
}

/// How pair distributions become ranked relations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMode {
    /// One predicate per pair, its best non-none class.
    #[default]
    Constrained,
    /// Every compatible predicate of every pair.
    Unconstrained,
}

/// A case prepared for training: features plus the target class per pair.
#[derive(Clone, Debug)]
pub struct TrainingCase {
    pub features: CaseFeatures,
    pub targets: Vec<usize>,
    pub graph: SceneGraph,
}

impl TrainingCase {
    /// Targets come from the relations of `graph`; pairs without one are none.
    pub fn new(features: CaseFeatures, graph: &SceneGraph) -> Self {
        let targets = features
            .pair_ids()
            .iter()
            .map(|&(s, o)| {
                graph
                    .relations
                    .iter()
                    .find(|r| r.subject == s && r.object == o)
                    .map_or(0, |r| r.predicate.index() + 1)
            })
            .collect();
        TrainingCase {
            features,
            targets,
            graph: graph.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
    fan_in: Vec<usize>,
}

impl RelationModel {
    /// Model with all parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, params, fan_in) = build(&config);
        Ok(RelationModel {
            config,
            params,
            layout,
            fan_in,
        })
    }

    /// Uniform initialization in ±1/√fan-in.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, &fan) in m.params.tensors.iter_mut().zip(&m.fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            for v in &mut t.data {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(m)
    }

    /// Rebuild a model from stored tensors, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        if params.len() != m.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors, {} architecture needs {}",
                params.len(),
                config.arch,
                m.params.len()
            )));
        }
        for i in 0..params.len() {
            let (want, got) = (&m.params.tensors[i], &params.tensors[i]);
            if m.params.names[i] != params.names[i]
                || want.rows != got.rows
                || want.cols != got.cols
                || got.data.len() != got.rows * got.cols
            {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected {} {}x{}, found {} {}x{}",
                    m.params.names[i], want.rows, want.cols, params.names[i], got.rows, got.cols
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
        m.params = params;
        Ok(m)
    }

    fn check_features(&self, f: &CaseFeatures) -> Result<()> {
        let d = object_dim(self.config.grid);
        if let Some(bad) = f.object_features.iter().find(|v| v.len() != d) {
            return Err(Error::ShapeMismatch(format!(
                "object feature of length {}, model expects {d}",
                bad.len()
            )));
        }
        if let Some(bad) = f.edge_features.iter().find(|v| v.len() != EDGE_DIM) {
            return Err(Error::ShapeMismatch(format!(
                "edge feature of length {}, model expects {EDGE_DIM}",
                bad.len()
            )));
        }
        if f.object_features.len() != f.objects.len() || f.edge_features.len() != f.pairs.len() {
            return Err(Error::ShapeMismatch("feature counts differ from objects or pairs".into()));
        }
        Ok(())
    }

    fn lstm_step<'p>(tape: &mut Tape<'p>, ids: LstmIds, h: usize, x: Var, hp: Var, cp: Var) -> (Var, Var) {
        let gx = tape.linear(ids.wx, Some(ids.b), x);
        let gh = tape.linear(ids.wh, None, hp);
        let gates = tape.add(gx, gh);
        let i = tape.slice(gates, 0, h);
        let f = tape.slice(gates, h, h);
        let g = tape.slice(gates, 2 * h, h);
        let o = tape.slice(gates, 3 * h, h);
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, cp);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let hn = tape.mul(o, tc);
        (hn, c)
    }

    fn gru_step<'p>(tape: &mut Tape<'p>, ids: GruIds, h: usize, x: Var, hp: Var) -> Var {
        let gx = tape.linear(ids.wx, Some(ids.bx), x);
        let gh = tape.linear(ids.wh, Some(ids.bh), hp);
        let xr = tape.slice(gx, 0, h);
        let xz = tape.slice(gx, h, h);
        let xn = tape.slice(gx, 2 * h, h);
        let hr = tape.slice(gh, 0, h);
        let hz = tape.slice(gh, h, h);
        let hn = tape.slice(gh, 2 * h, h);
        let r = tape.add(xr, hr);
        let r = tape.sigmoid(r);
        let z = tape.add(xz, hz);
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, hn);
        let n = tape.add(xn, rh);
        let n = tape.tanh(n);
        let omz = tape.one_minus(z);
        let a = tape.mul(omz, n);
        let b = tape.mul(z, hp);
        tape.add(a, b)
    }

    fn mlp<'p>(tape: &mut Tape<'p>, ids: MlpIds, x: Var) -> Var {
        let h = tape.linear(ids.w1, Some(ids.b1), x);
        let h = tape.tanh(h);
        tape.linear(ids.w2, Some(ids.b2), h)
    }

    /// Contextualized object vectors (`2H` each) in input object order.
    fn motif_context<'p>(&'p self, tape: &mut Tape<'p>, f: &CaseFeatures) -> Vec<Var> {
        let Layout::Motif {
            proj_w,
            proj_b,
            fwd,
            bwd,
            ..
        } = self.layout
        else {
            unreachable!("motif context on a v-imp model")
        };
        let h = self.config.hidden;
        let order = v_motif_order(&f.objects, self.config.order);
        let xs: Vec<Var> = order
            .iter()
            .map(|&i| {
                let x = tape.input(f.object_features[i].clone());
                tape.linear(proj_w, Some(proj_b), x)
            })
            .collect();
        let n = xs.len();
        let mut hf = Vec::with_capacity(n);
        let (mut hp, mut cp) = (tape.zeros(h), tape.zeros(h));
        for &x in &xs {
            let (hn, cn) = Self::lstm_step(tape, fwd, h, x, hp, cp);
            hf.push(hn);
            hp = hn;
            cp = cn;
        }
        let mut hb = vec![hp; n];
        let (mut hp, mut cp) = (tape.zeros(h), tape.zeros(h));
        for (pos, &x) in xs.iter().enumerate().rev() {
            let (hn, cn) = Self::lstm_step(tape, bwd, h, x, hp, cp);
            hb[pos] = hn;
            hp = hn;
            cp = cn;
        }
        let mut out = vec![hp; n];
        for (pos, &i) in order.iter().enumerate() {
            out[i] = tape.concat(&[hf[pos], hb[pos]]);
        }
        out
    }

    /// Final node and edge states after message passing.
    fn imp_states<'p>(&'p self, tape: &mut Tape<'p>, f: &CaseFeatures) -> (Vec<Var>, Vec<Var>) {
        let Layout::Imp {
            node_w,
            node_b,
            edge_w,
            edge_b,
            node_gru,
            edge_gru,
            node_scorer,
            edge_scorer,
            ..
        } = self.layout
        else {
            unreachable!("message passing on a v-motif model")
        };
        let h = self.config.hidden;
        let mut nodes: Vec<Var> = f
            .object_features
            .iter()
            .map(|v| {
                let x = tape.input(v.clone());
                tape.linear(node_w, Some(node_b), x)
            })
            .collect();
        let mut edges: Vec<Var> = f
            .edge_features
            .iter()
            .map(|v| {
                let x = tape.input(v.clone());
                tape.linear(edge_w, Some(edge_b), x)
            })
            .collect();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (k, &(s, o)) in f.pairs.iter().enumerate() {
            incident[s].push(k);
            incident[o].push(k);
        }
        for _ in 0..self.config.iterations {
            let mut node_msgs = Vec::with_capacity(nodes.len());
            for (i, inc) in incident.iter().enumerate() {
                if inc.is_empty() {
                    node_msgs.push(tape.zeros(h));
                    continue;
                }
                let scores: Vec<Var> = inc
                    .iter()
                    .map(|&k| {
                        let pair = tape.concat(&[nodes[i], edges[k]]);
                        Self::mlp(tape, node_scorer, pair)
                    })
                    .collect();
                let items: Vec<Var> = inc.iter().map(|&k| edges[k]).collect();
                node_msgs.push(tape.attn_pool(&scores, &items));
            }
            let mut edge_msgs = Vec::with_capacity(edges.len());
            for (k, &(s, o)) in f.pairs.iter().enumerate() {
                let ps = tape.concat(&[edges[k], nodes[s]]);
                let po = tape.concat(&[edges[k], nodes[o]]);
                let a_s = Self::mlp(tape, edge_scorer, ps);
                let a_o = Self::mlp(tape, edge_scorer, po);
                edge_msgs.push(tape.attn_pool(&[a_s, a_o], &[nodes[s], nodes[o]]));
            }
            nodes = nodes
                .iter()
                .zip(&node_msgs)
                .map(|(&n, &m)| Self::gru_step(tape, node_gru, h, m, n))
                .collect();
            edges = edges
                .iter()
                .zip(&edge_msgs)
                .map(|(&e, &m)| Self::gru_step(tape, edge_gru, h, m, e))
                .collect();
        }
        (nodes, edges)
    }

    /// Logits (4 per pair) on `tape`.
    fn logits<'p>(&'p self, tape: &mut Tape<'p>, f: &CaseFeatures) -> Vec<Var> {
        match self.layout {
            Layout::Motif { readout, .. } => {
                if f.pairs.is_empty() {
                    return Vec::new();
                }
                let ctx = self.motif_context(tape, f);
                f.pairs
                    .iter()
                    .zip(&f.edge_features)
                    .map(|(&(s, o), e)| {
                        let e = tape.input(e.clone());
                        let x = tape.concat(&[ctx[s], ctx[o], e]);
                        Self::mlp(tape, readout, x)
                    })
                    .collect()
            }
            Layout::Imp { readout, .. } => {
                if f.pairs.is_empty() {
                    return Vec::new();
                }
                let (nodes, edges) = self.imp_states(tape, f);
                f.pairs
                    .iter()
                    .zip(&f.edge_features)
                    .enumerate()
                    .map(|(k, (&(s, o), e))| {
                        let e = tape.input(e.clone());
                        let x = tape.concat(&[nodes[s], nodes[o], edges[k], e]);
                        Self::mlp(tape, readout, x)
                    })
                    .collect()
            }
        }
    }

    pub fn v_motif_context(&self, f: &CaseFeatures) -> Result<Vec<Vec<f64>>> {
        if self.config.arch != Architecture::VMotif {
            return Err(Error::ShapeMismatch("v-motif context needs v-motif parameters".into()));
        }
        self.check_features(f)?;
        let mut tape = Tape::new(&self.params);
        let ctx = self.motif_context(&mut tape, f);
        Ok(ctx.iter().map(|&v| tape.value(v).to_vec()).collect())
    }

    /// Node states and edge states after `iterations` rounds.
    pub fn v_imp_propagate(&self, f: &CaseFeatures) -> Result<(States, States)> {
        if self.config.arch != Architecture::VImp {
            return Err(Error::ShapeMismatch("message passing needs v-imp parameters".into()));
        }
        self.check_features(f)?;
        let mut tape = Tape::new(&self.params);
        let (n, e) = self.imp_states(&mut tape, f);
        Ok((
            n.iter().map(|&v| tape.value(v).to_vec()).collect(),
            e.iter().map(|&v| tape.value(v).to_vec()).collect(),
        ))
    }

    pub fn predict_distribution(&self, f: &CaseFeatures) -> Result<Vec<PairPrediction>> {
        self.check_features(f)?;
        let mut tape = Tape::new(&self.params);
        let logits = self.logits(&mut tape, f);
        Ok(f.pairs
            .iter()
            .zip(&logits)
            .map(|(&(s, o), &l)| {
                let (so, oo) = (&f.objects[s], &f.objects[o]);
                PairPrediction {
                    subject: so.id,
                    object: oo.id,
                    probs: masked_softmax(tape.value(l), &class_mask(so.category, oo.category)),
                }
            })
            .collect())
    }

    /// Ranked relations. Scores are the predicate probability times both
    /// object scores.
    pub fn predict(&self, f: &CaseFeatures, mode: RankMode) -> Result<Vec<Relation>> {
        let dists = self.predict_distribution(f)?;
        let score_of = |id: u32| f.objects.iter().find(|o| o.id == id).map_or(1.0, |o| o.score);
        let mut rels = Vec::new();
        for d in &dists {
            let scale = score_of(d.subject) * score_of(d.object);
            let subj_cat = f.objects.iter().find(|o| o.id == d.subject).map(|o| o.category);
            let obj_cat = f.objects.iter().find(|o| o.id == d.object).map(|o| o.category);
            let (Some(sc), Some(oc)) = (subj_cat, obj_cat) else { continue };
            let allowed: Vec<Predicate> = Predicate::ALL
                .into_iter()
                .filter(|p| p.compatible(sc, oc))
                .collect();
            let chosen: Vec<Predicate> = match mode {
                RankMode::Constrained => allowed
                    .iter()
                    .copied()
                    .fold(None::<Predicate>, |best, p| match best {
                        Some(b) if d.probs[b.index() + 1] >= d.probs[p.index() + 1] => Some(b),
                        _ => Some(p),
                    })
                    .into_iter()
                    .collect(),
                RankMode::Unconstrained => allowed,
            };
            for p in chosen {
                rels.push(Relation {
                    subject: d.subject,
                    object: d.object,
                    predicate: p,
                    score: (d.probs[p.index() + 1] * scale).clamp(0.0, 1.0),
                });
            }
        }
        rels.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(rels)
    }

    /// Scene graph carrying the objects of `f` and the ranked relations.
    pub fn predict_graph(&self, f: &CaseFeatures, template: &SceneGraph, mode: RankMode) -> Result<SceneGraph> {
        Ok(SceneGraph {
            case_id: template.case_id.clone(),
            shape: template.shape,
            spacing: template.spacing,
            objects: f.objects.clone(),
            relations: self.predict(f, mode)?,
        })
    }

    fn case_loss(&self, case: &TrainingCase, weights: &[f64; CLASSES], grads: Option<&mut [Tensor]>) -> f64 {
        let f = &case.features;
        let mut tape = Tape::new(&self.params);
        let logits = self.logits(&mut tape, f);
        let mut loss = 0.0;
        let mut seeds = Vec::with_capacity(logits.len());
        for ((&l, &(s, o)), &t) in logits.iter().zip(&f.pairs).zip(&case.targets) {
            let mask = class_mask(f.objects[s].category, f.objects[o].category);
            let (li, g) = weighted_cross_entropy(tape.value(l), &mask, t, weights[t]);
            loss += li;
            seeds.push((l, g.to_vec()));
        }
        if let Some(grads) = grads {
            tape.backward(&seeds, grads);
        }
        loss
    }

    /// Mean over cases of the summed weighted cross-entropy.
    pub fn loss<C: Borrow<TrainingCase>>(&self, cases: &[C], weights: &[f64; CLASSES]) -> f64 {
        if cases.is_empty() {
            return 0.0;
        }
        let total: f64 = cases.iter().map(|c| self.case_loss(c.borrow(), weights, None)).sum();
        total / cases.len() as f64
    }

    pub fn loss_and_grad<C: Borrow<TrainingCase>>(
        &self,
        cases: &[C],
        weights: &[f64; CLASSES],
    ) -> (f64, Vec<Tensor>) {
        let mut grads = self.params.zeros_like();
        if cases.is_empty() {
            return (0.0, grads);
        }
        let mut total = 0.0;
        for c in cases {
            total += self.case_loss(c.borrow(), weights, Some(&mut grads));
        }
        let scale = 1.0 / cases.len() as f64;
        for g in &mut grads {
            g.data.iter_mut().for_each(|v| *v *= scale);
        }
        (total * scale, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;
    use crate::relnet::features::featurize;

    fn obj(id: u32, cat: Category, min: [usize; 3], max: [usize; 3]) -> SceneObject {
        SceneObject::new(id, cat, Box3::new(min, max).unwrap(), 1.0)
    }

    #[test]
    fn order_examples() {
        let objs = vec![
            obj(0, Category::Bleeding, [5, 0, 0], [6, 1, 1]),
            obj(1, Category::Bleeding, [2, 0, 0], [3, 1, 1]),
            obj(2, Category::Bleeding, [9, 0, 0], [10, 1, 1]),
        ];
        assert_eq!(v_motif_order(&objs, ObjectOrder::TopToBottom), vec![1, 0, 2]);
        let tie = vec![
            obj(0, Category::Bleeding, [3, 0, 0], [4, 2, 5]),
            obj(1, Category::Midline, [3, 0, 0], [4, 10, 10]),
        ];
        assert_eq!(v_motif_order(&tie, ObjectOrder::TopToBottom), vec![1, 0]);
        assert_eq!(v_motif_order(&objs[..1], ObjectOrder::TopToBottom), vec![0]);
    }

    #[test]
    fn uniform_distribution_loss_is_ln4() {
        let (l, g) = weighted_cross_entropy(&[0.3; 4], &[true; 4], 2, 1.0);
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((g.iter().sum::<f64>()).abs() < 1e-15);
        let (l, _) = weighted_cross_entropy(&[0.0, 0.0, 60.0, 0.0], &[true; 4], 2, 1.0);
        assert!(l < 1e-20);
    }

    #[test]
    fn incompatible_predicates_are_zero() {
        let m = class_mask(Category::Bleeding, Category::Midline);
        let p = masked_softmax(&[0.1, 0.2, 5.0, 3.0], &m);
        assert_eq!(p[2], 0.0);
        assert_eq!(p[3], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_pairs_no_relations() {
        let objs = vec![obj(0, Category::Midline, [0, 0, 0], [2, 2, 2])];
        let f = featurize(&objs, [4, 4, 4], None, false, 2).unwrap();
        for arch in Architecture::ALL {
            let cfg = ModelConfig { arch, hidden: 3, grid: 2, ..Default::default() };
            let m = RelationModel::init(cfg, 1).unwrap();
            assert!(m.predict(&f, RankMode::Constrained).unwrap().is_empty());
        }
    }

    #[test]
    fn wrong_feature_length_is_a_shape_mismatch() {
        let objs = vec![
            obj(0, Category::Bleeding, [0, 0, 0], [2, 2, 2]),
            obj(1, Category::Midline, [0, 2, 0], [4, 3, 4]),
        ];
        let f = featurize(&objs, [4, 4, 4], None, false, 2).unwrap();
        let m = RelationModel::init(ModelConfig { hidden: 3, grid: 4, ..Default::default() }, 1).unwrap();
        assert!(matches!(m.predict_distribution(&f), Err(Error::ShapeMismatch(_))));
    }
}
