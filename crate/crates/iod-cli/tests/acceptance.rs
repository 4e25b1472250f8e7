//! The acceptance gate: every release criterion as one test, each printing a
//! single PASS line with its measured evidence (run with `--nocapture` to
//! see them). Tolerances and runtime budgets are asserted, not aspirational.

mod support;

use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use iod_core::coco::{CocoCategory, CocoDataset, CocoImage};
use iod_core::config::RunConfig;
use iod_core::dataset::TaskSchedule;
use iod_core::gradcheck::run_all;
use iod_core::metrics::{evaluate, EvalConfig, AP_UNDEFINED, IOU_THRESHOLDS};
use iod_core::pseudo::{deduplicate, generate_pseudo_labels, kmeans2_threshold, threshold_table, CpgConfig, ScoreBanks};
use iod_core::scale::ScaleBucket;
use iod_core::setloss::assign_min_cost;
use iod_core::sim::{run_experiment, Mode};
use iod_core::topology::{relation_topology, std_loss, TopologyNode};
use iod_core::{Annotation, BBox, DetRecord, Detection};
use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{
    ann, assignment_enumeration_reference, contiguous_split_reference, image, iod,
    permutation_min_cost, reference_ap,
};

/// One pass line per criterion; failures panic with the offending detail.
fn verdict(number: u32, name: &str, started: Instant, budget_s: f64, detail: &str) {
    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion {number:02} {name}: PASS ({detail}; {elapsed:.2}s of {budget_s:.0}s budget)");
    assert!(
        elapsed < budget_s,
        "criterion {number} {name} exceeded its runtime budget: {elapsed:.2}s >= {budget_s}s"
    );
}

fn fail(number: u32, name: &str, detail: String) -> ! {
    println!("criterion {number:02} {name}: FAIL ({detail})");
    panic!("criterion {number} {name}: {detail}");
}

// ------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_gradient_suite() {
    let t0 = Instant::now();
    let reports = run_all(100);
    let mut worst = 0.0f64;
    for r in &reports {
        worst = worst.max(r.max_rel_error);
        if !r.passed() {
            fail(1, "gradient-suite", format!("suite {} exceeded 1e-4: {:?}", r.suite, r.failures));
        }
        assert!(r.tolerance == 1e-4);
    }
    let parameters: usize = reports.iter().map(|r| r.parameters).sum();
    verdict(
        1,
        "gradient-suite",
        t0,
        30.0,
        &format!("{} suites, {parameters} partials, max rel err {worst:.2e} < 1e-4", reports.len()),
    );
}

// ------------------------------------------------------------- criterion 2

fn random_bank(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Half the banks are bimodal (the regime the thresholding exists for),
    // half are plain uniform.
    if rng.random::<bool>() {
        (0..n)
            .map(|_| {
                if rng.random::<f64>() < 0.45 {
                    rng.random_range(0.30..0.46)
                } else {
                    rng.random_range(0.58..0.92)
                }
            })
            .collect()
    } else {
        (0..n).map(|_| rng.random_range(0.30..0.99)).collect()
    }
}

#[test]
fn criterion_02_kmeans_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x2EA15);

    // 1,000 banks spanning sizes 2..=10,000, log-uniform.
    let mut checked = 0usize;
    for _ in 0..1000 {
        let n = (2.0f64.ln() + rng.random::<f64>() * (10_000.0f64.ln() - 2.0f64.ln()))
            .exp()
            .round() as usize;
        let bank = random_bank(&mut rng, n.clamp(2, 10_000));
        let ours = kmeans2_threshold(&bank).expect("non-degenerate random bank");
        let (threshold, wcss, low_len) =
            contiguous_split_reference(&bank).expect("oracle agrees the bank is splittable");
        if ours.threshold != threshold || ours.low_len != low_len {
            fail(
                2,
                "kmeans-oracle",
                format!(
                    "bank of {n}: split {} at {} vs oracle split {low_len} at {threshold}",
                    ours.low_len, ours.threshold
                ),
            );
        }
        let scale = wcss.abs().max(1.0);
        if (ours.wcss - wcss).abs() > 1e-9 * scale {
            fail(2, "kmeans-oracle", format!("wcss {} vs oracle {wcss}", ours.wcss));
        }
        checked += 1;
    }

    // Full 2^n assignment enumeration for every small size.
    let mut enumerated = 0usize;
    for n in 2..=12usize {
        for _ in 0..40 {
            let bank = random_bank(&mut rng, n);
            let ours = kmeans2_threshold(&bank).expect("distinct random scores");
            let (wcss, threshold) =
                assignment_enumeration_reference(&bank).expect("splittable bank");
            if ours.threshold != threshold {
                fail(
                    2,
                    "kmeans-oracle",
                    format!("n={n}: threshold {} vs enumerated {threshold}", ours.threshold),
                );
            }
            if (ours.wcss - wcss).abs() > 1e-9 * wcss.abs().max(1.0) {
                fail(2, "kmeans-oracle", format!("n={n}: wcss {} vs enumerated {wcss}", ours.wcss));
            }
            enumerated += 1;
        }
    }
    verdict(
        2,
        "kmeans-oracle",
        t0,
        60.0,
        &format!("{checked} banks vs split enumeration, {enumerated} vs 2^n assignment enumeration"),
    );
}

// ------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_matching_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..500 {
        let rows = rng.random_range(1..=7usize);
        let cols = rng.random_range(rows..=7usize);
        let cost = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-10.0..10.0));
        let (by_column, total) = assign_min_cost(&cost);
        let brute = permutation_min_cost(&cost);
        if (total - brute).abs() > 1e-9 {
            fail(3, "matching-oracle", format!("case {case} ({rows}x{cols}): {total} vs {brute}"));
        }
        let assigned: Vec<usize> = by_column.iter().filter_map(|c| *c).collect();
        let mut unique = assigned.clone();
        unique.sort_unstable();
        unique.dedup();
        if assigned.len() != rows || unique.len() != rows {
            fail(3, "matching-oracle", format!("case {case}: assignment not a bijection onto rows"));
        }
    }
    verdict(3, "matching-oracle", t0, 10.0, "500 cost matrices up to 7x7 match the permutation minimum");
}

// ------------------------------------------------------------- criterion 4

struct Scenario {
    gt: CocoDataset,
    dets: Vec<DetRecord>,
    classes: Vec<u32>,
}

/// Multi-image detection scenarios with controlled pathologies. Scores are
/// globally distinct so ranking is unambiguous on both sides.
fn build_scenario(index: usize, rng: &mut ChaCha8Rng) -> Scenario {
    let num_classes = rng.random_range(1..=3usize);
    let classes: Vec<u32> = (1..=num_classes as u32).collect();
    let num_images = rng.random_range(2..=4usize);

    let mut annotations = Vec::new();
    let mut raw_dets: Vec<(u64, [f64; 4], u32)> = Vec::new();
    let mut ann_id = 1u64;
    for image_id in 1..=num_images as u64 {
        for &class in &classes {
            let gt_count = match index {
                0 => usize::from(image_id == 1 && class == 1), // one box, one hit
                1 => 2,                                        // boxes that only FPs chase
                2 => 0,                                        // detections without any GT
                _ => rng.random_range(0..=4usize),
            };
            for _ in 0..gt_count {
                let bbox = [
                    rng.random_range(0.0..150.0),
                    rng.random_range(0.0..150.0),
                    rng.random_range(5.0..60.0),
                    rng.random_range(5.0..60.0),
                ];
                annotations.push(ann(ann_id, image_id, class, bbox));
                ann_id += 1;

                let chase = match index {
                    0 => true,
                    1 | 2 => false,
                    _ => rng.random::<f64>() < 0.75,
                };
                if chase {
                    if index == 0 {
                        // Exact copies pin the AP=1 corner at every threshold.
                        raw_dets.push((image_id, bbox, class));
                    } else {
                        // A jittered copy: IoU against its source varies from
                        // solid to hopeless across the ten thresholds.
                        let dx = rng.random_range(-0.4..0.4) * bbox[2];
                        let dy = rng.random_range(-0.4..0.4) * bbox[3];
                        let sw = rng.random_range(0.6..1.4);
                        let sh = rng.random_range(0.6..1.4);
                        raw_dets.push((
                            image_id,
                            [bbox[0] + dx, bbox[1] + dy, bbox[2] * sw, bbox[3] * sh],
                            class,
                        ));
                    }
                }
            }
            let false_positives = match index {
                0 => 0,
                1 | 2 => 2,
                _ => rng.random_range(0..=2usize),
            };
            for _ in 0..false_positives {
                raw_dets.push((
                    image_id,
                    [
                        rng.random_range(400.0..900.0),
                        rng.random_range(400.0..900.0),
                        rng.random_range(5.0..40.0),
                        rng.random_range(5.0..40.0),
                    ],
                    class,
                ));
            }
        }
    }

    // Shuffle-by-construction: assign strictly decreasing scores in the
    // random order the detections were generated.
    let total = raw_dets.len().max(1);
    let dets = raw_dets
        .into_iter()
        .enumerate()
        .map(|(k, (image_id, b, class_id))| DetRecord {
            image_id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            score: 0.98 - 0.9 * k as f64 / total as f64,
            class_id,
        })
        .collect();

    let gt = CocoDataset {
        info: Default::default(),
        images: (1..=num_images as u64).map(image).collect(),
        annotations,
        categories: classes
            .iter()
            .map(|&id| CocoCategory { id, name: format!("class-{id}") })
            .collect(),
    };
    Scenario { gt, dets, classes }
}

#[test]
fn criterion_04_coco_evaluator_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0usize;
    let mut saw_perfect = false;
    let mut saw_zero = false;
    for index in 0..50 {
        let scenario = build_scenario(index, &mut rng);
        let schedule =
            TaskSchedule::new(vec![scenario.classes.iter().copied().collect::<BTreeSet<u32>>()])
                .unwrap();
        let report =
            evaluate(&scenario.dets, &scenario.gt, &schedule, 1, &EvalConfig::default()).unwrap();
        for class_ap in &report.classes {
            for (ti, &threshold) in IOU_THRESHOLDS.iter().enumerate() {
                let ours = class_ap.by_threshold[ti];
                let reference =
                    reference_ap(&scenario.dets, &scenario.gt, class_ap.class_id, threshold);
                let agree = if reference == AP_UNDEFINED {
                    ours == AP_UNDEFINED
                } else {
                    (ours - reference).abs() <= 1e-9
                };
                if !agree {
                    fail(
                        4,
                        "coco-oracle",
                        format!(
                            "scenario {index}, class {}, IoU {threshold}: {ours} vs {reference}",
                            class_ap.class_id
                        ),
                    );
                }
                saw_perfect |= ours == 1.0;
                saw_zero |= ours == 0.0;
                compared += 1;
            }
        }
    }
    assert!(saw_perfect && saw_zero, "trivial AP=1 and AP=0 cases must be exercised");
    verdict(
        4,
        "coco-oracle",
        t0,
        30.0,
        &format!("{compared} (class, IoU) slices within 1e-9, AP=1 and AP=0 covered"),
    );
}

// ------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_area_boundary_conformance() {
    let t0 = Instant::now();
    let cfg = iod_core::ScaleConfig::default();
    assert_eq!((cfg.tau_s, cfg.tau_m), (1024.0, 9216.0));
    let expectations = [
        (900.0, ScaleBucket::Small),
        (1024.0, ScaleBucket::Medium),
        (9215.0, ScaleBucket::Medium),
        (9216.0, ScaleBucket::Large),
    ];
    for (area, expected) in expectations {
        let got = cfg.bucket_of_area(area);
        if got != expected {
            fail(5, "area-boundaries", format!("area {area} -> {got:?}, expected {expected:?}"));
        }
    }
    verdict(5, "area-boundaries", t0, 30.0, "900/1024/9215/9216 -> S/M/M/L");
}

// ------------------------------------------------------------- criterion 6

fn fuzz_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0.0..180.0),
        rng.random_range(0.0..180.0),
        rng.random_range(4.0..50.0),
        rng.random_range(4.0..50.0),
    )
    .unwrap()
}

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let x1 = a.x.max(b.x);
    let y1 = a.y.max(b.y);
    let x2 = (a.x + a.w).min(b.x + b.w);
    let y2 = (a.y + a.h).min(b.y + b.h);
    let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    inter / (a.w * a.h + b.w * b.h - inter)
}

#[test]
fn criterion_06_pseudo_label_contract() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cpg = CpgConfig::<f64>::default();
    let mut emitted_total = 0usize;
    for round in 0..300 {
        let old: BTreeSet<u32> = (1..=6u32).filter(|_| rng.random::<bool>()).collect();
        let mut banks = ScoreBanks::new(cpg.capacity);
        for &class in &old {
            let n = rng.random_range(0..=80usize);
            banks.update(class, (0..n).map(|_| rng.random::<f64>()), cpg.delta_min);
        }
        let thresholds = threshold_table(&banks, &old, &cpg);

        let image_id = round as u64;
        let preds: Vec<Detection> = (0..rng.random_range(0..=12usize))
            .map(|q| {
                Detection::new(
                    fuzz_box(&mut rng),
                    rng.random::<f64>(),
                    rng.random_range(1..=8u32),
                    q as u32,
                )
                .unwrap()
            })
            .collect();
        let gt: Vec<Annotation> = (0..rng.random_range(0..=6usize))
            .map(|_| Annotation {
                image_id,
                bbox: fuzz_box(&mut rng),
                class_id: rng.random_range(1..=8u32),
                is_pseudo: false,
            })
            .collect();

        let labels = generate_pseudo_labels(image_id, &preds, &old, &thresholds).unwrap();
        // The emitted set is exactly the old-class predictions at or above
        // their class threshold, in order.
        let expected: Vec<&Detection> = preds
            .iter()
            .filter(|p| {
                old.contains(&p.class_id)
                    && p.score >= thresholds.get(p.class_id).unwrap().threshold
            })
            .collect();
        assert_eq!(labels.len(), expected.len(), "round {round}");
        for (label, pred) in labels.iter().zip(&expected) {
            assert_eq!(label.class_id, pred.class_id);
            assert_eq!(label.bbox, pred.bbox);
            assert!(label.is_pseudo);
            let tau = thresholds.get(label.class_id).unwrap().threshold;
            if pred.score < tau {
                fail(6, "pseudo-contract", format!("round {round}: score {} < {tau}", pred.score));
            }
        }

        let kept = deduplicate(labels.clone(), &gt, cpg.theta_nms);
        for label in &kept {
            let max_iou = gt
                .iter()
                .map(|g| oracle_iou(&label.bbox, &g.bbox))
                .fold(0.0, f64::max);
            if max_iou >= cpg.theta_nms {
                fail(6, "pseudo-contract", format!("round {round}: kept label at IoU {max_iou}"));
            }
        }
        emitted_total += kept.len();

        // Exact duplicates of ground truth never survive dedup.
        let duplicates: Vec<Annotation> = gt
            .iter()
            .map(|g| Annotation { image_id, bbox: g.bbox, class_id: 1, is_pseudo: true })
            .collect();
        assert!(deduplicate(duplicates, &gt, cpg.theta_nms).is_empty(), "round {round}");
    }
    verdict(
        6,
        "pseudo-contract",
        t0,
        30.0,
        &format!("300 fuzz rounds, {emitted_total} surviving labels all within contract"),
    );
}

// ------------------------------------------------------------- criterion 7

/// Coordinates scale with the temperature so `-d / tau` stays in a range
/// where the softmax is far from one-hot; a saturated affinity row makes the
/// KL underflow to zero and the positivity check meaningless.
fn random_nodes(rng: &mut StdRng, n: usize, dim: usize, temperature: f64) -> Vec<(TopologyNode, Array1<f64>)> {
    let span = 4.0 * temperature;
    (0..n)
        .map(|i| {
            let id = if i + 1 == n {
                TopologyNode::Background
            } else {
                TopologyNode::Class(i as u32)
            };
            (id, Array1::from_shape_fn(dim, |_| rng.random_range(-span..span)))
        })
        .collect()
}

#[test]
fn criterion_07_topology_invariants() {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(7);
    for round in 0..200 {
        let n = rng.random_range(2..=6usize);
        let dim = rng.random_range(1..=5usize);
        let temperature = [0.37, 1.0, 2.9][round % 3];
        let nodes = random_nodes(&mut rng, n, dim, temperature);
        let topo = relation_topology(ScaleBucket::Small, &nodes, temperature).unwrap();

        for (u, row) in topo.affinity.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                fail(7, "topology-invariants", format!("row {u} sums to {sum}"));
            }
        }

        // Self-distillation is exactly zero; a perturbed student is strictly
        // positive.
        let self_loss = std_loss(&[topo.clone()], &[topo.clone()]).unwrap();
        assert_eq!(self_loss, 0.0, "round {round}");
        let jitter = 0.25 * temperature;
        let perturbed: Vec<(TopologyNode, Array1<f64>)> = nodes
            .iter()
            .map(|(id, v)| {
                (*id, v + Array1::from_shape_fn(dim, |_| rng.random_range(-jitter..jitter)))
            })
            .collect();
        let student = relation_topology(ScaleBucket::Small, &perturbed, temperature).unwrap();
        let loss = std_loss(&[topo.clone()], &[student]).unwrap();
        if loss <= 0.0 {
            fail(7, "topology-invariants", format!("round {round}: non-positive loss {loss}"));
        }

        // Translating every node leaves distances and affinities unchanged.
        let shift = Array1::from_shape_fn(dim, |_| rng.random_range(-30.0..30.0));
        let shifted: Vec<(TopologyNode, Array1<f64>)> =
            nodes.iter().map(|(id, v)| (*id, v + &shift)).collect();
        let translated = relation_topology(ScaleBucket::Small, &shifted, temperature).unwrap();
        let d_drift = (&translated.distances - &topo.distances)
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let p_drift = (&translated.affinity - &topo.affinity)
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        if d_drift > 1e-9 || p_drift > 1e-9 {
            fail(
                7,
                "topology-invariants",
                format!("round {round}: translation drift M {d_drift:.2e}, P {p_drift:.2e}"),
            );
        }

        // Scaling the geometry by kappa while scaling the temperature by
        // kappa leaves the affinities unchanged.
        let kappa = rng.random_range(0.2..5.0);
        let scaled: Vec<(TopologyNode, Array1<f64>)> =
            nodes.iter().map(|(id, v)| (*id, v * kappa)).collect();
        let coscaled =
            relation_topology(ScaleBucket::Small, &scaled, temperature * kappa).unwrap();
        let co_drift = (&coscaled.affinity - &topo.affinity)
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        if co_drift > 1e-9 {
            fail(7, "topology-invariants", format!("round {round}: co-scaling drift {co_drift:.2e}"));
        }
    }
    verdict(
        7,
        "topology-invariants",
        t0,
        30.0,
        "200 rounds: rows sum to 1, L(t,t)=0, L(t,s)>0, translation and co-scaling invariance",
    );
}

// ------------------------------------------------------------- criterion 8

/// First verified run of the shipped reference scenario (seed 17). The exact
/// values are pinned; regressions in any numeric path will move them.
const GOLDEN_MAP_PREVIOUS: [(Mode, f64); 5] = [
    (Mode::Finetune, 0.0),
    (Mode::Crd, 0.2508250825082508),
    (Mode::Cpg, 0.6897689768976897),
    (Mode::CrdCpg, 0.8514851485148515),
    (Mode::Full, 0.8514851485148515),
];

#[test]
fn criterion_08_directional_ablation_reproduction() {
    let t0 = Instant::now();
    let config_path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.toml");
    let cfg = RunConfig::from_path(std::path::Path::new(config_path)).unwrap();
    assert_eq!(cfg.world.seed, 17, "the reference scenario is seeded with 17");

    let ledgers = run_experiment(&cfg, &Mode::ALL).unwrap();
    let mut previous = std::collections::BTreeMap::new();
    for (ledger, mode) in ledgers.iter().zip(Mode::ALL) {
        let report = ledger.final_report().unwrap();
        previous.insert(mode.name(), report.map_previous.unwrap());
    }

    let finetune = previous["finetune"];
    let crd = previous["crd"];
    let cpg = previous["cpg"];
    let combined = previous["crd+cpg"];
    let full = previous["full"];
    if !(finetune < crd && crd < cpg && crd < combined && crd < full) {
        fail(8, "ablation-ordering", format!("mAP^P not ordered: {previous:?}"));
    }
    if full - finetune < 0.15 {
        fail(8, "ablation-ordering", format!("full gains only {:.3} over finetune", full - finetune));
    }
    for (mode, golden) in GOLDEN_MAP_PREVIOUS {
        let got = previous[mode.name()];
        if (got - golden).abs() > 1e-9 {
            fail(
                8,
                "ablation-ordering",
                format!("{}: mAP^P {got} drifted from pinned {golden}", mode.name()),
            );
        }
    }
    verdict(
        8,
        "ablation-ordering",
        t0,
        300.0,
        &format!(
            "mAP^P {:.3} < {:.3} < {{{:.3}, {:.3}, {:.3}}}, gap {:.3} >= 0.15, goldens within 1e-9",
            finetune, crd, cpg, combined, full, full - finetune
        ),
    );
}

// ------------------------------------------------------------- criterion 9

const DETERMINISM_CONFIG: &str = "\
[world]
classes_per_task = [2, 2]
train_images_per_stage = 12
eval_images_per_stage = 10
queries_per_image = 8
objects_per_image = 2
seed = 23

[train]
epochs = 5
mode = \"full\"
";

#[test]
fn criterion_09_simulate_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("world.toml");
    fs::write(&config, DETERMINISM_CONFIG).unwrap();

    let mut ledgers: Vec<Vec<u8>> = Vec::new();
    for (label, workers) in [("repeat-a", None), ("repeat-b", None), ("w1", Some(1)), ("w2", Some(2)), ("w4", Some(4))] {
        let out_dir = dir.path().join(label);
        let mut cmd = iod();
        cmd.args(["simulate", "--mode", "full", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(&out_dir);
        if let Some(w) = workers {
            cmd.args(["--workers", &w.to_string()]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        ledgers.push(fs::read(out_dir.join("ledger-full.json")).unwrap());
    }
    for (i, ledger) in ledgers.iter().enumerate().skip(1) {
        if ledger != &ledgers[0] {
            fail(9, "determinism", format!("run {i} differs from run 0 at the byte level"));
        }
    }
    verdict(9, "determinism", t0, 120.0, "5 runs (repeats and workers 1/2/4) byte-identical");
}

// ------------------------------------------------------------ criterion 10

/// Synthetic two-task dataset with an exact number of co-occurrence images.
fn planted_dataset(only_new: usize, cooccur: usize, only_old: usize) -> CocoDataset {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut ann_id = 1u64;
    let mut add = |images: &mut Vec<CocoImage>, id: u64, with_old: bool, with_new: bool| {
        images.push(image(id));
        if with_old {
            annotations.push(ann(ann_id, id, 1, [10.0, 10.0, 20.0, 20.0]));
            ann_id += 1;
        }
        if with_new {
            annotations.push(ann(ann_id, id, 2, [50.0, 50.0, 20.0, 20.0]));
            ann_id += 1;
        }
    };
    let mut next = 1u64;
    for _ in 0..only_new {
        add(&mut images, next, false, true);
        next += 1;
    }
    for _ in 0..cooccur {
        add(&mut images, next, true, true);
        next += 1;
    }
    for _ in 0..only_old {
        add(&mut images, next, true, false);
        next += 1;
    }
    CocoDataset {
        info: Default::default(),
        images,
        annotations,
        categories: vec![
            CocoCategory { id: 1, name: "first".into() },
            CocoCategory { id: 2, name: "second".into() },
        ],
    }
}

fn stats_pct(gt_path: &std::path::Path, schedule_path: &std::path::Path) -> f64 {
    let out = iod()
        .args(["stats", "--json", "--stage", "2", "--gt"])
        .arg(gt_path)
        .arg("--schedule")
        .arg(schedule_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    stats[0]["cooccurrence_pct"].as_f64().unwrap()
}

#[test]
fn criterion_10_split_statistics() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let schedule_path = dir.path().join("schedule.txt");
    fs::write(&schedule_path, "first\nsecond\n").unwrap();

    // Planted rates chosen to be exactly representable: 94/400, 287/500,
    // 100/300.
    let cases = [(306usize, 94usize, 23.5), (213, 287, 57.4), (200, 100, 100.0 / 3.0)];
    let mut reported = Vec::new();
    for (i, (only_new, cooccur, planted)) in cases.into_iter().enumerate() {
        let gt_path = dir.path().join(format!("planted-{i}.json"));
        planted_dataset(only_new, cooccur, 25).write_path(&gt_path).unwrap();
        let pct = stats_pct(&gt_path, &schedule_path);
        if (pct - planted).abs() > 2.0 {
            fail(10, "split-stats", format!("planted {planted:.3}% but stats reports {pct:.3}%"));
        }
        reported.push(format!("{pct:.1}%~{planted:.1}%"));
    }

    // Informational comparison against the published DIOR/DOTA rates, only
    // when the datasets are present locally.
    let mut informational = Vec::new();
    for (env_var, preset, published) in
        [("IOD_DIOR_GT", "dior-5+5+5+5", 23.5), ("IOD_DOTA_GT", "dota-5+5+5", 57.4)]
    {
        match std::env::var_os(env_var) {
            None => informational.push(format!("{preset}: skipped, {env_var} not set")),
            Some(path) => {
                let out = iod()
                    .args(["stats", "--json", "--preset", preset, "--gt"])
                    .arg(&path)
                    .output()
                    .unwrap();
                assert_eq!(out.status.code(), Some(0));
                let stats: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
                let (mut cooccur, mut available) = (0.0, 0.0);
                for s in stats.iter().skip(1) {
                    cooccur += s["cooccurrence"].as_f64().unwrap();
                    available += s["cooccurrence"].as_f64().unwrap()
                        + s["only_new"].as_f64().unwrap();
                }
                let pct = 100.0 * cooccur / available;
                if (pct - published).abs() > 1.0 {
                    fail(
                        10,
                        "split-stats",
                        format!("{preset}: measured {pct:.1}% vs published {published}% (>1 point)"),
                    );
                }
                informational.push(format!("{preset}: {pct:.1}% vs {published}%"));
            }
        }
    }
    verdict(
        10,
        "split-stats",
        t0,
        60.0,
        &format!("planted rates {}; {}", reported.join(", "), informational.join("; ")),
    );
}
