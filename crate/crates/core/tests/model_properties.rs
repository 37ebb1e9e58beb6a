mod common;

use std::collections::HashMap;

use voxsg::relnet::model::v_motif_order;
use voxsg::relnet::{
    checkpoint, featurize, train, Architecture, CaseFeatures, ModelConfig, RankMode, RelationModel, TrainConfig,
    TrainingCase,
};
use voxsg::scene::Category;
use voxsg::volume::{linear_index, LabelMap};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn set(model: &mut RelationModel, name: &str, values: &[f64]) {
    let id = model.params.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = model.params.get_mut(id);
    assert_eq!(t.data.len(), values.len(), "{name}");
    t.data.copy_from_slice(values);
}

fn get(model: &RelationModel, name: &str) -> Vec<f64> {
    model.params.get(model.params.find(name).unwrap()).data.clone()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn close(a: f64, b: f64) {
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

/// One scalar LSTM step written out by hand: gate rows i, f, g, o.
fn scalar_lstm(wx: &[f64], wh: &[f64], b: &[f64], x: f64, h: f64, c: f64) -> (f64, f64) {
    let pre = |k: usize| wx[k] * x + wh[k] * h + b[k];
    let (i, f, g, o) = (sigmoid(pre(0)), sigmoid(pre(1)), pre(2).tanh(), sigmoid(pre(3)));
    let c = f * c + i * g;
    (o * c.tanh(), c)
}

/// One scalar GRU step: r and n use separate input and hidden biases,
/// and the reset gate multiplies the hidden contribution.
fn scalar_gru(wx: &[f64], wh: &[f64], bx: &[f64], bh: &[f64], x: f64, h: f64) -> f64 {
    let r = sigmoid(wx[0] * x + bx[0] + wh[0] * h + bh[0]);
    let z = sigmoid(wx[1] * x + bx[1] + wh[1] * h + bh[1]);
    let n = (wx[2] * x + bx[2] + r * (wh[2] * h + bh[2])).tanh();
    (1.0 - z) * n + z * h
}

fn motif_config(hidden: usize, grid: usize) -> ModelConfig {
    ModelConfig {
        arch: Architecture::VMotif,
        hidden,
        grid,
        grounding: true,
        ..Default::default()
    }
}

#[test]
fn scalar_lstm_context_matches_closed_form() {
    let (map, graph) = common::fixture(3);
    let f = common::features(&map, &graph, true, 1);
    let mut m = RelationModel::zeros(motif_config(1, 1)).unwrap();
    let pw: Vec<f64> = (0..11).map(|j| 0.1 * j as f64 - 0.4).collect();
    set(&mut m, "proj.w", &pw);
    set(&mut m, "proj.b", &[0.2]);
    let (fx, fh, fb) = ([0.5, -0.3, 0.8, 0.1], [0.7, 0.2, -0.6, 0.4], [0.1, 0.3, -0.2, 0.05]);
    let (bx, bh, bb) = ([-0.4, 0.6, 0.3, -0.2], [0.1, -0.5, 0.9, 0.3], [0.0, -0.1, 0.2, 0.15]);
    set(&mut m, "lstm_fwd.wx", &fx);
    set(&mut m, "lstm_fwd.wh", &fh);
    set(&mut m, "lstm_fwd.b", &fb);
    set(&mut m, "lstm_bwd.wx", &bx);
    set(&mut m, "lstm_bwd.wh", &bh);
    set(&mut m, "lstm_bwd.b", &bb);

    let ctx = m.v_motif_context(&f).unwrap();
    let order = v_motif_order(&f.objects, Default::default());
    let xs: Vec<f64> = order.iter().map(|&i| dot(&pw, &f.object_features[i]) + 0.2).collect();
    let n = xs.len();
    let mut hf = vec![0.0; n];
    let (mut h, mut c) = (0.0, 0.0);
    for t in 0..n {
        (h, c) = scalar_lstm(&fx, &fh, &fb, xs[t], h, c);
        hf[t] = h;
    }
    let mut hb = vec![0.0; n];
    let (mut h, mut c) = (0.0, 0.0);
    for t in (0..n).rev() {
        (h, c) = scalar_lstm(&bx, &bh, &bb, xs[t], h, c);
        hb[t] = h;
    }
    for (pos, &i) in order.iter().enumerate() {
        assert_eq!(ctx[i].len(), 2);
        close(ctx[i][0], hf[pos]);
        close(ctx[i][1], hb[pos]);
    }
}

#[test]
fn motif_order_is_top_to_bottom_then_larger_first() {
    let (_, graph) = common::fixture(5);
    let order = v_motif_order(&graph.objects, Default::default());
    for w in order.windows(2) {
        let (a, b) = (&graph.objects[w[0]], &graph.objects[w[1]]);
        assert!(
            a.bbox.min[0] < b.bbox.min[0]
                || (a.bbox.min[0] == b.bbox.min[0] && a.bbox.volume() >= b.bbox.volume())
        );
    }
}

#[test]
fn tied_directions_give_mirrored_context_on_reversed_sequences() {
    let (map, graph) = common::fixture(5);
    let mut f = common::features(&map, &graph, true, 2);
    let mut m = RelationModel::init(motif_config(4, 2), 3).unwrap();
    for part in ["wx", "wh", "b"] {
        let w = get(&m, &format!("lstm_fwd.{part}"));
        set(&mut m, &format!("lstm_bwd.{part}"), &w);
    }
    let order = v_motif_order(&f.objects, Default::default());
    let n = order.len();
    let mut reversed = f.clone();
    for (pos, &i) in order.iter().enumerate() {
        let (fz, rz) = (pos, n - 1 - pos);
        for (target, z) in [(&mut f, fz), (&mut reversed, rz)] {
            let b = &mut target.objects[i].bbox;
            let depth = b.max[0] - b.min[0];
            b.min[0] = z;
            b.max[0] = z + depth;
        }
    }
    let a = m.v_motif_context(&f).unwrap();
    let b = m.v_motif_context(&reversed).unwrap();
    for i in 0..n {
        assert_eq!(a[i][..4], b[i][4..]);
        assert_eq!(a[i][4..], b[i][..4]);
    }
}

fn imp_config(hidden: usize, iterations: usize) -> ModelConfig {
    ModelConfig {
        arch: Architecture::VImp,
        hidden,
        iterations,
        grid: 1,
        grounding: true,
        ..Default::default()
    }
}

fn imp_fixture() -> (CaseFeatures, RelationModel, Vec<f64>, Vec<f64>) {
    let (map, graph) = common::fixture(2);
    let f = common::features(&map, &graph, true, 1);
    assert_eq!(f.pairs.len(), 1);
    let mut m = RelationModel::zeros(imp_config(1, 1)).unwrap();
    let nw: Vec<f64> = (0..11).map(|j| 0.05 * j as f64 - 0.3).collect();
    let ew: Vec<f64> = (0..7).map(|j| 0.2 - 0.07 * j as f64).collect();
    set(&mut m, "node_proj.w", &nw);
    set(&mut m, "node_proj.b", &[0.1]);
    set(&mut m, "edge_proj.w", &ew);
    set(&mut m, "edge_proj.b", &[-0.2]);
    (f, m, nw, ew)
}

#[test]
fn zero_iterations_return_the_projections() {
    let (f, mut m, nw, ew) = imp_fixture();
    m.config.iterations = 0;
    let (nodes, edges) = m.v_imp_propagate(&f).unwrap();
    for (i, v) in f.object_features.iter().enumerate() {
        close(nodes[i][0], dot(&nw, v) + 0.1);
    }
    close(edges[0][0], dot(&ew, &f.edge_features[0]) - 0.2);
}

#[test]
fn one_message_passing_step_matches_hand_computation() {
    let (f, mut m, nw, ew) = imp_fixture();
    let (ngx, ngh, ngbx, ngbh) = ([0.6, -0.4, 0.9], [0.3, 0.5, -0.7], [0.1, -0.2, 0.05], [0.0, 0.3, 0.2]);
    let (egx, egh, egbx, egbh) = ([-0.5, 0.2, 0.8], [0.4, -0.1, 0.6], [0.2, 0.1, -0.1], [-0.3, 0.0, 0.25]);
    set(&mut m, "node_gru.wx", &ngx);
    set(&mut m, "node_gru.wh", &ngh);
    set(&mut m, "node_gru.bx", &ngbx);
    set(&mut m, "node_gru.bh", &ngbh);
    set(&mut m, "edge_gru.wx", &egx);
    set(&mut m, "edge_gru.wh", &egh);
    set(&mut m, "edge_gru.bx", &egbx);
    set(&mut m, "edge_gru.bh", &egbh);
    let (s1, s2, sb1, sv, sb2) = (0.7, -0.9, 0.1, 1.3, 0.4);
    set(&mut m, "edge_scorer.w1", &[s1, s2]);
    set(&mut m, "edge_scorer.b1", &[sb1]);
    set(&mut m, "edge_scorer.w2", &[sv]);
    set(&mut m, "edge_scorer.b2", &[sb2]);

    let n: Vec<f64> = f.object_features.iter().map(|v| dot(&nw, v) + 0.1).collect();
    let e = dot(&ew, &f.edge_features[0]) - 0.2;
    let (s, o) = f.pairs[0];
    // Each node has a single incident edge, so its message is that edge.
    let score = |node: f64| sv * (s1 * e + s2 * node + sb1).tanh() + sb2;
    let (a_s, a_o) = (score(n[s]), score(n[o]));
    let mx = a_s.max(a_o);
    let (w_s, w_o) = ((a_s - mx).exp(), (a_o - mx).exp());
    let edge_msg = (w_s * n[s] + w_o * n[o]) / (w_s + w_o);

    let (nodes, edges) = m.v_imp_propagate(&f).unwrap();
    for i in 0..2 {
        close(nodes[i][0], scalar_gru(&ngx, &ngh, &ngbx, &ngbh, e, n[i]));
    }
    close(edges[0][0], scalar_gru(&egx, &egh, &egbx, &egbh, edge_msg, e));

    // With a constant scorer the edge message is the plain mean.
    set(&mut m, "edge_scorer.w2", &[0.0]);
    let (_, edges) = m.v_imp_propagate(&f).unwrap();
    close(edges[0][0], scalar_gru(&egx, &egh, &egbx, &egbh, 0.5 * (n[s] + n[o]), e));
}

fn by_ids(model: &RelationModel, f: &CaseFeatures) -> HashMap<(u32, u32), [f64; 4]> {
    model
        .predict_distribution(f)
        .unwrap()
        .into_iter()
        .map(|p| ((p.subject, p.object), p.probs))
        .collect()
}

#[test]
fn predictions_do_not_depend_on_object_listing_order() {
    let (map, graph) = common::fixture(5);
    let f = common::features(&map, &graph, true, 2);
    let mut shuffled = graph.objects.clone();
    shuffled.reverse();
    shuffled.swap(0, 2);
    let g = featurize(&shuffled, common::SHAPE, Some(&map), true, 2).unwrap();
    assert_ne!(f.pairs, g.pairs);
    for arch in Architecture::ALL {
        let config = ModelConfig { arch, hidden: 6, grid: 2, ..Default::default() };
        let m = RelationModel::init(config, 11).unwrap();
        let (a, b) = (by_ids(&m, &f), by_ids(&m, &g));
        assert_eq!(a.len(), 6);
        assert_eq!(a.len(), b.len());
        for (k, pa) in &a {
            let pb = b[k];
            for c in 0..4 {
                assert!((pa[c] - pb[c]).abs() < 1e-12, "{arch} {k:?}");
            }
            assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn incompatible_predicates_get_zero_probability() {
    let (map, graph) = common::fixture(5);
    let f = common::features(&map, &graph, true, 2);
    let kind = |id: u32| graph.objects.iter().find(|o| o.id == id).unwrap().category;
    for arch in Architecture::ALL {
        let m = RelationModel::init(ModelConfig { arch, hidden: 4, grid: 2, ..Default::default() }, 5).unwrap();
        for p in m.predict_distribution(&f).unwrap() {
            assert_eq!(kind(p.subject), Category::Bleeding);
            if kind(p.object) == Category::Midline {
                assert_eq!((p.probs[2], p.probs[3]), (0.0, 0.0));
            } else {
                assert_eq!(p.probs[1], 0.0);
            }
        }
    }
}

/// Same boxes as `map`, with one occupancy octant of the ventricle emptied.
fn rearranged_interior(map: &LabelMap) -> LabelMap {
    let mut labels = map.labels().to_vec();
    let s = common::SHAPE;
    for z in 3..6 {
        for y in 5..8 {
            for x in 5..8 {
                labels[linear_index(s, z, y, x)] = 0;
            }
        }
    }
    LabelMap::new(s, [2.0; 3], labels).unwrap()
}

#[test]
fn without_grounding_masks_do_not_matter() {
    let (map, graph) = common::fixture(5);
    let other = rearranged_interior(&map);
    assert_ne!(map, other);
    for arch in Architecture::ALL {
        let m = RelationModel::init(ModelConfig { arch, hidden: 4, grid: 2, grounding: false, ..Default::default() }, 9)
            .unwrap();
        let a = featurize(&graph.objects, common::SHAPE, Some(&map), false, 2).unwrap();
        let b = featurize(&graph.objects, common::SHAPE, Some(&other), false, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.predict_distribution(&a).unwrap(), m.predict_distribution(&b).unwrap());

        let ga = featurize(&graph.objects, common::SHAPE, Some(&map), true, 2).unwrap();
        let gb = featurize(&graph.objects, common::SHAPE, Some(&other), true, 2).unwrap();
        assert_ne!(ga.object_features, gb.object_features);
    }
}

#[test]
fn training_labels_do_not_change_predictions() {
    let (map, graph) = common::fixture(5);
    let f = common::features(&map, &graph, false, 2);
    let mut relabelled = graph.clone();
    relabelled.relations.truncate(1);
    let a = TrainingCase::new(f.clone(), &graph);
    let b = TrainingCase::new(f, &relabelled);
    assert_ne!(a.targets, b.targets);
    let m = RelationModel::init(ModelConfig { hidden: 4, grid: 2, grounding: false, ..Default::default() }, 1).unwrap();
    assert_eq!(
        m.predict_distribution(&a.features).unwrap(),
        m.predict_distribution(&b.features).unwrap()
    );
}

#[test]
fn a_single_case_is_memorized() {
    let case = common::training_case(5, true, 2);
    let k = case.graph.relations.len();
    let train_config = TrainConfig { epochs: 500, patience: 0, eval_k: k, ..Default::default() };
    for arch in Architecture::ALL {
        let config = ModelConfig { arch, hidden: 32, grid: 2, ..Default::default() };
        let (model, log) = train(std::slice::from_ref(&case), &[], config, &train_config, 0).unwrap();
        assert_eq!(log.epochs.len(), 500);
        assert_eq!(log.best_val_recall, 1.0, "{arch}");
        let predicted = model.predict(&case.features, RankMode::Constrained).unwrap();
        let top: Vec<_> = predicted.iter().take(k).collect();
        for r in &case.graph.relations {
            assert!(
                top.iter().any(|p| (p.subject, p.object, p.predicate) == (r.subject, r.object, r.predicate)),
                "{arch}: {r:?} missing from {top:?}"
            );
        }
    }
}

#[test]
fn training_is_reproducible_per_seed() {
    let cases: Vec<TrainingCase> = [2, 3, 5].iter().map(|&n| common::training_case(n, true, 2)).collect();
    let train_config = TrainConfig { epochs: 15, patience: 0, ..Default::default() };
    for arch in Architecture::ALL {
        let config = ModelConfig { arch, hidden: 8, grid: 2, ..Default::default() };
        let (a, la) = train(&cases, &[], config, &train_config, 4).unwrap();
        let (b, lb) = train(&cases, &[], config, &train_config, 4).unwrap();
        let (c, _) = train(&cases, &[], config, &train_config, 5).unwrap();
        assert_eq!(a.params.tensors, b.params.tensors);
        assert_eq!(la, lb);
        assert_ne!(a.params.tensors, c.params.tensors);
    }
}

#[test]
fn checkpoints_round_trip_exactly() {
    let tmp = tempfile::TempDir::new().unwrap();
    let case = common::training_case(5, true, 2);
    for arch in Architecture::ALL {
        let m = RelationModel::init(ModelConfig { arch, hidden: 5, grid: 2, ..Default::default() }, 21).unwrap();
        let path = tmp.path().join(format!("{arch}.json"));
        checkpoint::save(&m, &path).unwrap();
        let back = checkpoint::load(&path).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.params.tensors, m.params.tensors);
        assert_eq!(
            back.predict_distribution(&case.features).unwrap(),
            m.predict_distribution(&case.features).unwrap()
        );
    }
    let m = RelationModel::init(ModelConfig { hidden: 5, grid: 2, ..Default::default() }, 21).unwrap();
    let mut text = checkpoint::to_json(&m);
    text = text.replacen("\"hidden\": 5", "\"hidden\": 6", 1).replacen("\"hidden\":5", "\"hidden\":6", 1);
    assert!(checkpoint::from_json(&text).is_err());
}
