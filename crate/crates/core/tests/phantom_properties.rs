use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsg::geometry::{bbox_of_label, iou3, BoundAccumulator};
use voxsg::instancing::{degrade_labelmap, extract_objects, InstancingConfig, NoiseConfig};
use voxsg::metrics::{recall_suite, MatchSpec};
use voxsg::phantom::{case_seed, generate, rule_based_relations, PhantomConfig, Role};
use voxsg::scene::{validate, Category, SceneGraph};
use voxsg::volume::{linear_index, unravel, LabelMap};

#[test]
fn same_seed_gives_the_same_phantom() {
    let config = PhantomConfig::default();
    let a = generate(&config, 42, "a").unwrap();
    let b = generate(&config, 42, "a").unwrap();
    assert_eq!(a, b);
    let c = generate(&config, 43, "a").unwrap();
    assert_ne!(a.labels, c.labels);
}

#[test]
fn zero_probabilities_plant_no_relations() {
    let config = PhantomConfig::without_relations();
    for seed in 0..5 {
        let p = generate(&config, seed, "x").unwrap();
        assert!(p.graph.relations.is_empty());
        assert!(p.graph.bleeding_count() >= 1);
        assert!(p.bleedings.iter().all(|b| b.role == Role::Unrelated));
    }
}

#[test]
fn planted_objects_are_recovered_and_evidenced() {
    check_planted_objects_are_recovered_and_evidenced();
}

pub fn check_planted_objects_are_recovered_and_evidenced() {
    let config = PhantomConfig::default();
    let mut flows = 0;
    for i in 0..40 {
        let p = generate(&config, case_seed(9, i), "x").unwrap();
        let g = &p.graph;
        assert!(validate(g).is_empty(), "case {i}: {:?}", validate(g));

        let objects = extract_objects(&p.labels, &InstancingConfig::default(), None);
        assert_eq!(objects.iter().filter(|o| o.category == Category::Bleeding).count(), p.bleedings.len());
        for b in &p.bleedings {
            let best = objects
                .iter()
                .filter(|o| o.category == Category::Bleeding)
                .map(|o| iou3(&o.bbox, &b.bbox))
                .fold(0.0, f64::max);
            assert!(best >= 0.99, "case {i}: planted bleeding recovered at IoU {best}");
        }
        for cat in [Category::VentricleSystem, Category::Midline] {
            let want = bbox_of_label(&p.labels, cat.id()).unwrap();
            let got: Vec<_> = objects.iter().filter(|o| o.category == cat).collect();
            assert_eq!(got.len(), 1, "case {i}: {cat:?}");
            assert!(iou3(&got[0].bbox, &want) >= 0.99);
        }
        let mut acc = BoundAccumulator::default();
        let labels = p.labels.labels();
        for (v, _) in p.ventricle_mask.iter().enumerate().filter(|(_, &m)| m) {
            if labels[v] == Category::VentricleSystem.id() {
                acc.add(unravel(g.shape, v));
            } else {
                assert_eq!(labels[v], Category::Bleeding.id(), "case {i}: ventricle voxel lost to background");
            }
        }
        let vent = objects.iter().find(|o| o.category == Category::VentricleSystem).unwrap();
        let planted = acc.finish().unwrap();
        assert!(iou3(&vent.bbox, &planted) >= 0.99, "case {i}: ventricle IoU {}", iou3(&vent.bbox, &planted));

        for b in p.bleedings.iter().filter(|b| b.role == Role::BloodFlow) {
            flows += 1;
            let obj = g.object(b.object_id).unwrap();
            let mask = obj.mask.as_ref().unwrap();
            let bb = mask.bbox;
            let mut overlap = 0;
            for z in bb.min[0]..bb.max[0] {
                for y in bb.min[1]..bb.max[1] {
                    for x in bb.min[2]..bb.max[2] {
                        if mask.get([z, y, x]) && p.ventricle_mask[linear_index(g.shape, z, y, x)] {
                            overlap += 1;
                        }
                    }
                }
            }
            assert!(overlap > 0, "case {i}: blood flow bleeding {} misses the ventricle", b.object_id);
        }
    }
    assert!(flows > 5, "only {flows} blood-flow bleedings planted");
}

#[test]
fn relation_counts_and_rule_separability() {
    let config = PhantomConfig::default();
    let graphs: Vec<(SceneGraph, SceneGraph)> = (0..200)
        .map(|i| {
            let p = generate(&config, case_seed(2024, i), &format!("c{i:03}")).unwrap();
            let mut rules = p.graph.clone();
            rules.relations = rule_based_relations(&p.labels, &p.graph.objects);
            (rules, p.graph)
        })
        .collect();
    let counts: Vec<usize> = graphs.iter().map(|(_, g)| g.relations.len()).collect();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    println!("mean relations per case {mean:.3}, max {}", counts.iter().max().unwrap());
    assert!((1.0..=3.0).contains(&mean), "mean {mean}");
    assert!(*counts.iter().max().unwrap() <= 7);

    let refs: Vec<_> = graphs.iter().map(|(r, g)| (r, g)).collect();
    let report = recall_suite(&refs, &MatchSpec::default());
    println!("rule classifier R@8 {:.4}", report.recall);
    assert!(report.recall >= 0.95, "rule classifier R@8 {}", report.recall);
}

fn random_label_map(rng: &mut impl Rng) -> LabelMap {
    let shape = [rng.gen_range(4..14), rng.gen_range(4..14), rng.gen_range(4..14)];
    let n: usize = shape.iter().product();
    let density = rng.gen_range(0.05..0.9);
    let labels = (0..n)
        .map(|_| if rng.gen_bool(density) { rng.gen_range(1..4) } else { 0 })
        .collect();
    LabelMap::new(shape, [rng.gen_range(0.5..3.0); 3], labels).unwrap()
}

#[test]
fn anatomy_is_never_split_into_several_objects() {
    check_anatomy_is_never_split_into_several_objects();
}

pub fn check_anatomy_is_never_split_into_several_objects() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let small = PhantomConfig { shape: [32, 48, 48], ..Default::default() };
    for i in 0..500 {
        let map = if i % 10 == 0 {
            let p = generate(&small, i, "x").unwrap();
            degrade_labelmap(&p.labels, i, &NoiseConfig::default())
        } else {
            random_label_map(&mut rng)
        };
        let config = InstancingConfig {
            min_anatomy_voxels: rng.gen_range(1..12),
            min_bleeding_volume_cm3: 0.0,
            ..Default::default()
        };
        let objects = extract_objects(&map, &config, None);
        for cat in [Category::VentricleSystem, Category::Midline] {
            assert!(objects.iter().filter(|o| o.category == cat).count() <= 1, "map {i}: several {cat:?}");
        }
        let mut ids: Vec<u32> = objects.iter().map(|o| o.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), objects.len());
    }
}
