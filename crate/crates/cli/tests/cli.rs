use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use voxsg::dataset::generate_dataset;
use voxsg::nifti::write_volume;
use voxsg::phantom::PhantomConfig;
use voxsg::volume::LabelMap;

fn voxsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxsg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path, n: usize) {
    generate_dataset(dir, &PhantomConfig::default(), n, 11).unwrap();
}

#[test]
fn extract_on_empty_label_map_writes_empty_object_list() {
    let tmp = TempDir::new().unwrap();
    let labels = tmp.path().join("empty.nii.gz");
    write_volume(&LabelMap::zeros([4, 5, 6], [1.0, 1.0, 1.0]).unwrap().to_volume(), &labels).unwrap();
    let out = tmp.path().join("objects.json");
    let o = voxsg(&["extract", "--labels", s(&labels), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let graph = voxsg::graph_io::read_scene_graph(&out).unwrap();
    assert_eq!(graph.case_id, "empty");
    assert_eq!(graph.shape, [4, 5, 6]);
    assert!(graph.objects.is_empty() && graph.relations.is_empty());
}

#[test]
fn eval_sgg_on_predictions_equal_to_gt_reports_full_recall() {
    let tmp = TempDir::new().unwrap();
    small_dataset(&tmp.path().join("ds"), 12);
    let gt = tmp.path().join("gt");
    fs::create_dir(&gt).unwrap();
    for entry in fs::read_dir(tmp.path().join("ds/cases")).unwrap() {
        let dir = entry.unwrap().path();
        let name = dir.file_name().unwrap().to_str().unwrap().to_string();
        fs::copy(dir.join("graph.json"), gt.join(format!("{name}.json"))).unwrap();
    }
    let json = tmp.path().join("m.json");
    let o = voxsg(&[
        "eval-sgg", "--task", "predcls", "--k", "8", "--iou", "0.3", "--gt", s(&gt), "--predictions", s(&gt),
        "--json", s(&json),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.starts_with("model")).expect("table row");
    let first_cell = row.split_whitespace().nth(1).unwrap();
    assert_eq!(first_cell, "100.0", "{text}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["aggregate"]["R@8"]["mean"], 1.0);
    assert_eq!(v["aggregate"]["UB R@8"]["mean"], 1.0);
}

#[test]
fn train_with_five_seeds_writes_five_checkpoints_and_a_report() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    small_dataset(&ds, 18);
    let out = tmp.path().join("ck");
    let o = voxsg(&[
        "train", "--dataset", s(&ds), "--out", s(&out), "--arch", "v-motif", "--seeds", "5", "--epochs", "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in 0..5 {
        let ck = out.join(format!("v-motif-seed{seed}.json"));
        voxsg::relnet::checkpoint::load(&ck).unwrap();
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("v-motif-train.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 5);
    assert!(report["validation"]["R@8"]["std"].as_f64().unwrap() >= 0.0);
    assert!(stdout(&o).contains(" ± "));

    let conf = out.join("v-motif.conf");
    let rerun = voxsg(&["train", "--config", s(&conf), "--out", s(&tmp.path().join("ck2"))]);
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    for seed in 0..5 {
        let name = format!("v-motif-seed{seed}.json");
        assert_eq!(
            fs::read(out.join(&name)).unwrap(),
            fs::read(tmp.path().join("ck2").join(&name)).unwrap()
        );
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(voxsg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(voxsg(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(voxsg(&["eval-sgg", "--task", "predcls"]).status.code(), Some(1));
    assert_eq!(voxsg(&["train", "--arch", "v-nope", "--dataset", "x", "--out", "y"]).status.code(), Some(1));

    let tmp = TempDir::new().unwrap();
    let conf = tmp.path().join("run.conf");
    fs::write(&conf, "hidden = 8\nlearning_rat = 0.1\n").unwrap();
    let o = voxsg(&["train", "--config", s(&conf)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
    assert_eq!(voxsg(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_with_two_and_name_the_case() {
    let tmp = TempDir::new().unwrap();
    let ds = tmp.path().join("ds");
    small_dataset(&ds, 6);
    let ids = voxsg::dataset::Dataset::open(&ds).unwrap().ids(Some(voxsg::dataset::Split::Test));
    let victim = &ids[0];
    fs::write(ds.join("cases").join(victim).join("graph.json"), "{\"case_id\": 3}").unwrap();
    let preds = tmp.path().join("preds");
    fs::create_dir(&preds).unwrap();
    let o = voxsg(&["eval-sgg", "--dataset", s(&ds), "--predictions", s(&preds)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(victim.as_str()), "{}", stderr(&o));

    let o = voxsg(&["extract", "--labels", s(&tmp.path().join("missing.nii")), "--out", s(&tmp.path().join("o.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));
}

#[test]
fn config_command_lists_every_key() {
    let o = voxsg(&["config"]);
    assert!(o.status.success());
    let listed = voxsg_cli::RunConfig::parse_str(&stdout(&o)).unwrap();
    assert_eq!(listed, voxsg_cli::RunConfig::default());
}
