//! Fixtures and independent oracles shared by the CLI and acceptance tests.
//!
//! The oracles deliberately avoid the library's algorithms and helpers:
//! matching is brute-force permutation search, the 1-D 2-means reference
//! accumulates variances with Welford updates instead of prefix sums of
//! squares, and the AP reference evaluates the 101-point definition
//! literally, with its own IoU.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use iod_core::coco::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
use iod_core::DetRecord;
use ndarray::Array2;

pub fn iod() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iod"))
}

// ---------------------------------------------------------------- fixtures

pub fn image(id: u64) -> CocoImage {
    CocoImage { id, width: 200, height: 200, file_name: String::new() }
}

pub fn ann(id: u64, image_id: u64, category_id: u32, bbox: [f64; 4]) -> CocoAnnotation {
    CocoAnnotation { id, image_id, category_id, bbox, iscrowd: 0, area: None, is_pseudo: false }
}

/// Four classes in two tasks; image 3 mixes alpha (old at stage 2) with
/// gamma, image 6 mixes beta with delta.
pub fn two_task_fixture() -> CocoDataset {
    CocoDataset {
        info: Default::default(),
        images: (1..=6).map(image).collect(),
        annotations: vec![
            ann(1, 1, 1, [10.0, 10.0, 20.0, 20.0]),
            ann(2, 2, 3, [10.0, 10.0, 30.0, 30.0]),
            ann(3, 3, 1, [40.0, 40.0, 25.0, 25.0]),
            ann(4, 3, 3, [70.0, 10.0, 15.0, 15.0]),
            ann(5, 4, 2, [5.0, 5.0, 10.0, 10.0]),
            ann(6, 5, 4, [50.0, 50.0, 20.0, 20.0]),
            ann(7, 6, 2, [20.0, 20.0, 12.0, 12.0]),
            ann(8, 6, 4, [60.0, 60.0, 18.0, 18.0]),
        ],
        categories: vec![
            CocoCategory { id: 1, name: "alpha".into() },
            CocoCategory { id: 2, name: "beta".into() },
            CocoCategory { id: 3, name: "gamma".into() },
            CocoCategory { id: 4, name: "delta".into() },
        ],
    }
}

pub fn write_gt(dir: &Path, dataset: &CocoDataset) -> PathBuf {
    let path = dir.join("gt.json");
    dataset.write_path(&path).unwrap();
    path
}

pub fn write_two_task_schedule(dir: &Path) -> PathBuf {
    let path = dir.join("schedule.txt");
    std::fs::write(&path, "alpha, beta\ngamma, delta\n").unwrap();
    path
}

// --------------------------------------------------- matching oracle (C3)

/// Minimum assignment cost by trying every injective row -> column map.
pub fn permutation_min_cost(cost: &Array2<f64>) -> f64 {
    fn descend(cost: &Array2<f64>, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.nrows() {
            *best = best.min(acc);
            return;
        }
        for col in 0..cost.ncols() {
            if !used[col] {
                used[col] = true;
                descend(cost, row + 1, used, acc + cost[[row, col]], best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    descend(cost, 0, &mut vec![false; cost.ncols()], 0.0, &mut best);
    best
}

// ----------------------------------------------------- 2-means oracle (C2)

/// Per-split WCSS of the sorted scores by forward/backward Welford passes;
/// picks the first split on exact ties, like the contract demands.
pub fn contiguous_split_reference(scores: &[f64]) -> Option<(f64, f64, usize)> {
    let n = scores.len();
    if n < 2 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted[0] == sorted[n - 1] {
        return None;
    }

    // m2_prefix[m] = within-cluster sum of squares of sorted[..m].
    let mut m2_prefix = vec![0.0; n + 1];
    let mut m2_suffix = vec![0.0; n + 1];
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        m2_prefix[i + 1] = m2;
    }
    mean = 0.0;
    m2 = 0.0;
    for (i, &x) in sorted.iter().rev().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        m2_suffix[n - 1 - i] = m2;
    }

    let mut best_m = 1;
    let mut best = f64::INFINITY;
    for m in 1..n {
        let wcss = m2_prefix[m] + m2_suffix[m];
        if wcss < best {
            best = wcss;
            best_m = m;
        }
    }
    Some((sorted[best_m], best, best_m))
}

/// Global 2-means optimum over every nonempty bipartition (2^n - 2 masks).
/// Returns (wcss, threshold = min of the higher-mean cluster).
pub fn assignment_enumeration_reference(scores: &[f64]) -> Option<(f64, f64)> {
    let n = scores.len();
    assert!((2..=16).contains(&n), "mask enumeration is for small banks");
    if scores.iter().all(|&s| s == scores[0]) {
        return None;
    }
    let wcss_of = |members: &[f64]| -> f64 {
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        members.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
    };
    let mut best: Option<(f64, f64)> = None;
    for mask in 1u32..(1 << n) - 1 {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, &s) in scores.iter().enumerate() {
            if mask & (1 << i) != 0 {
                a.push(s);
            } else {
                b.push(s);
            }
        }
        let wcss = wcss_of(&a) + wcss_of(&b);
        let mean_a = a.iter().sum::<f64>() / a.len() as f64;
        let mean_b = b.iter().sum::<f64>() / b.len() as f64;
        let high = if mean_a > mean_b { &a } else { &b };
        let threshold = high.iter().cloned().fold(f64::INFINITY, f64::min);
        match best {
            Some((w, t)) if wcss > w || (wcss == w && threshold >= t) => {}
            _ => best = Some((wcss, threshold)),
        }
    }
    best
}

// --------------------------------------------------------- AP oracle (C4)

fn oracle_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let x1 = a[0].max(b[0]);
    let y1 = a[1].max(b[1]);
    let x2 = (a[0] + a[2]).min(b[0] + b[2]);
    let y2 = (a[1] + a[3]).min(b[1] + b[3]);
    let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// AP of one class at one IoU threshold, straight from the definition:
/// per-image greedy matching of score-ranked detections, then, for each of
/// the 101 recall points, the best precision among operating points at or
/// beyond it. Returns -1 for classes without ground truth.
pub fn reference_ap(
    dets: &[DetRecord],
    gt: &CocoDataset,
    class_id: u32,
    iou_threshold: f64,
) -> f64 {
    use std::collections::BTreeMap;

    let mut gt_by_image: BTreeMap<u64, Vec<[f64; 4]>> = BTreeMap::new();
    for a in gt.annotations.iter().filter(|a| a.category_id == class_id) {
        gt_by_image.entry(a.image_id).or_default().push(a.bbox);
    }
    let npos: usize = gt_by_image.values().map(Vec::len).sum();
    if npos == 0 {
        return -1.0;
    }

    let mut points: Vec<(f64, bool)> = Vec::new(); // (score, is true positive)
    let image_ids: std::collections::BTreeSet<u64> = gt.images.iter().map(|i| i.id).collect();
    for &image_id in &image_ids {
        let mut image_dets: Vec<&DetRecord> = dets
            .iter()
            .filter(|d| d.class_id == class_id && d.image_id == image_id)
            .collect();
        image_dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let boxes = gt_by_image.get(&image_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut taken = vec![false; boxes.len()];
        for det in image_dets {
            let dbox = [det.bbox.x, det.bbox.y, det.bbox.w, det.bbox.h];
            let mut bar = iou_threshold.min(1.0 - 1e-10);
            let mut matched = None;
            for (g, gbox) in boxes.iter().enumerate() {
                if !taken[g] {
                    let overlap = oracle_iou(&dbox, gbox);
                    if overlap >= bar {
                        bar = overlap;
                        matched = Some(g);
                    }
                }
            }
            if let Some(g) = matched {
                taken[g] = true;
                points.push((det.score, true));
            } else {
                points.push((det.score, false));
            }
        }
    }

    points.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(points.len()); // (recall, precision)
    for (rank, &(_, hit)) in points.iter().enumerate() {
        tp += usize::from(hit);
        curve.push((tp as f64 / npos as f64, tp as f64 / (rank + 1) as f64));
    }

    let mut total = 0.0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        let best = curve
            .iter()
            .filter(|(recall, _)| *recall >= r)
            .map(|&(_, precision)| precision)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 101.0
}
