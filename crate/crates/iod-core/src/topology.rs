//! Scale-bucketed prototype topologies and the relational distillation loss.
//!
//! Within each scale bucket, every old class present in the batch is reduced
//! to a confidence-weighted prototype of its query features. The pairwise
//! Euclidean distances between prototypes (plus an optional static background
//! anchor node) induce a row-stochastic affinity matrix; the loss is the
//! temperature-scaled KL divergence between the teacher's and the student's
//! affinity rows, summed over buckets.
//!
//! Teacher and student sides share one label assignment and one scale
//! partition (both teacher-derived), so their topologies are node-aligned by
//! construction and only the aggregated feature matrix differs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMap;
use crate::scalar::Real;
use crate::scale::{ScaleBucket, ScalePartition};

/// Options for the topology loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdConfig<R = f64> {
    /// Softmax temperature over negative distances; also scales the loss by
    /// its square.
    pub temperature: R,
    /// Append the background anchor as an extra node in every bucket.
    pub include_background_anchor: bool,
}

impl<R: Real> Default for StdConfig<R> {
    fn default() -> Self {
        Self { temperature: R::one(), include_background_anchor: true }
    }
}

/// Teacher-assigned pseudo-label for one query: old class plus confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryLabel<R = f64> {
    pub class_id: u32,
    pub score: R,
}

/// Confidence-weighted class centroid within one scale bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<R = f64> {
    pub class_id: u32,
    pub bucket: ScaleBucket,
    pub vector: Array1<R>,
    /// Number of queries aggregated into this prototype.
    pub support: usize,
}

/// Result of prototype aggregation over one batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeSet<R = f64> {
    /// Ordered by bucket, then ascending class id.
    pub prototypes: Vec<Prototype<R>>,
    /// Classes whose total confidence mass was zero, excluded per bucket.
    pub skipped: Vec<(ScaleBucket, u32)>,
}

/// Node identity inside a bucket topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyNode {
    Class(u32),
    Background,
}

/// Relational structure of one bucket: distances plus affinity rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationTopology<R = f64> {
    pub bucket: ScaleBucket,
    pub nodes: Vec<TopologyNode>,
    /// Symmetric, zero-diagonal Euclidean distances.
    pub distances: Array2<R>,
    /// Row-stochastic softmax of `-distances / temperature`; the diagonal
    /// self-term `exp(0)` is part of every row's normalizer.
    pub affinity: Array2<R>,
    pub temperature: R,
}

/// Loss plus gradient of one topology-distillation evaluation.
#[derive(Debug, Clone)]
pub struct StdOutput<R = f64> {
    pub loss: R,
    /// Gradient with respect to the student feature matrix, `N x D`.
    pub feature_grad: Array2<R>,
    /// Buckets that actually contributed (had at least two nodes).
    pub buckets_used: usize,
}

fn validate_temperature<R: Real>(temperature: R) -> Result<()> {
    if !temperature.is_finite() || temperature <= R::zero() {
        return Err(Error::InvalidTemperature { value: temperature.to64() });
    }
    Ok(())
}

/// Internal aggregation record keeping per-query weights for the backward
/// pass.
struct ProtoAccum<R> {
    class_id: u32,
    vector: Array1<R>,
    /// `(query index, normalized weight)` pairs.
    members: Vec<(usize, R)>,
}

/// Aggregates per-bucket class accumulators in a fixed order: queries in
/// ascending index, classes in ascending id.
fn accumulate_bucket<R: Real>(
    features: &ArrayView2<R>,
    labels: &[Option<QueryLabel<R>>],
    bucket_queries: &[usize],
    skipped: &mut Vec<(ScaleBucket, u32)>,
    bucket: ScaleBucket,
) -> Vec<ProtoAccum<R>> {
    let mut class_ids: Vec<u32> =
        bucket_queries.iter().filter_map(|&q| labels[q].map(|l| l.class_id)).collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let dim = features.ncols();
    let mut accums = Vec::new();
    for class_id in class_ids {
        let mut mass = R::zero();
        let mut members = Vec::new();
        for &q in bucket_queries {
            if let Some(label) = labels[q] {
                if label.class_id == class_id {
                    mass += label.score;
                    members.push((q, label.score));
                }
            }
        }
        if mass <= R::zero() {
            skipped.push((bucket, class_id));
            continue;
        }
        let mut vector = Array1::zeros(dim);
        for (q, score) in &mut members {
            *score = *score / mass;
            vector.scaled_add(*score, &features.row(*q));
        }
        accums.push(ProtoAccum { class_id, vector, members });
    }
    accums
}

/// Builds confidence-weighted prototypes for every (bucket, class) pair
/// present in the labels. Classes whose scores sum to zero are excluded and
/// reported in `skipped`.
pub fn aggregate_prototypes<R: Real>(
    features: &ArrayView2<R>,
    labels: &[Option<QueryLabel<R>>],
    partition: &ScalePartition,
) -> PrototypeSet<R> {
    assert_eq!(features.nrows(), labels.len(), "one label slot per feature row");
    let mut set = PrototypeSet::default();
    for bucket in ScaleBucket::ALL {
        let accums = accumulate_bucket(
            features,
            labels,
            partition.group(bucket),
            &mut set.skipped,
            bucket,
        );
        for a in accums {
            set.prototypes.push(Prototype {
                class_id: a.class_id,
                bucket,
                vector: a.vector,
                support: a.members.len(),
            });
        }
    }
    set
}

/// Spatial mean of the image feature map: the static background node.
pub fn background_anchor<R: Real>(map: &FeatureMap<R>) -> Array1<R> {
    let (h, w, d) = (map.height(), map.width(), map.feature_dim());
    let mut mean = Array1::zeros(d);
    for y in 0..h {
        for x in 0..w {
            mean += &map.pixel(y, x);
        }
    }
    let count = R::of_usize(h * w);
    mean.mapv_inplace(|v| v / count);
    mean
}

fn euclidean<R: Real>(a: &ArrayView1<R>, b: &ArrayView1<R>) -> R {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<R>()
        .sqrt()
}

/// Builds the distance and affinity matrices over a bucket's nodes.
///
/// Requires at least two nodes and a positive temperature. Rows of the
/// affinity matrix are softmax distributions over `-distance / temperature`,
/// self-term included.
pub fn relation_topology<R: Real>(
    bucket: ScaleBucket,
    nodes: &[(TopologyNode, Array1<R>)],
    temperature: R,
) -> Result<RelationTopology<R>> {
    validate_temperature(temperature)?;
    let n = nodes.len();
    if n < 2 {
        return Err(Error::DegenerateTopology { bucket: bucket.name(), nodes: n });
    }
    let mut distances = Array2::zeros((n, n));
    for u in 0..n {
        for v in (u + 1)..n {
            let d = euclidean(&nodes[u].1.view(), &nodes[v].1.view());
            distances[[u, v]] = d;
            distances[[v, u]] = d;
        }
    }
    let affinity = affinity_from_distances(&distances, temperature);
    Ok(RelationTopology {
        bucket,
        nodes: nodes.iter().map(|(id, _)| *id).collect(),
        distances,
        affinity,
        temperature,
    })
}

/// Row-wise softmax of `-distances / temperature`. Distances are
/// non-negative, so the logits are bounded above by the diagonal's zero and
/// no max-shift is needed for stability.
fn affinity_from_distances<R: Real>(distances: &Array2<R>, temperature: R) -> Array2<R> {
    let n = distances.nrows();
    let mut affinity = Array2::zeros((n, n));
    for u in 0..n {
        let mut denom = R::zero();
        for v in 0..n {
            let e = (-distances[[u, v]] / temperature).exp();
            affinity[[u, v]] = e;
            denom += e;
        }
        for v in 0..n {
            affinity[[u, v]] /= denom;
        }
    }
    affinity
}

/// Sum of `temperature^2 * KL(teacher_row || student_row)` over all rows of
/// all bucket pairs. Teacher and student lists must align bucket by bucket
/// with identical node sets; empty lists yield zero.
pub fn std_loss<R: Real>(
    teacher: &[RelationTopology<R>],
    student: &[RelationTopology<R>],
) -> Result<R> {
    if teacher.len() != student.len() {
        return Err(Error::TopologyNodeMismatch {
            bucket: "(bucket count)",
            teacher: teacher.len(),
            student: student.len(),
        });
    }
    let mut total = R::zero();
    for (t, s) in teacher.iter().zip(student) {
        if t.bucket != s.bucket || t.nodes != s.nodes {
            return Err(Error::TopologyNodeMismatch {
                bucket: t.bucket.name(),
                teacher: t.nodes.len(),
                student: s.nodes.len(),
            });
        }
        if t.temperature != s.temperature {
            return Err(Error::Config {
                message: format!(
                    "teacher and student topologies use different temperatures ({} vs {})",
                    t.temperature, s.temperature
                ),
            });
        }
        let tau2 = t.temperature * t.temperature;
        total += tau2 * kl_rows(&t.affinity, &s.affinity);
    }
    Ok(total)
}

/// `sum_u KL(t_u || s_u)` over matching rows. All entries are softmax outputs
/// and therefore strictly positive; no flooring is applied.
fn kl_rows<R: Real>(t: &Array2<R>, s: &Array2<R>) -> R {
    let mut acc = R::zero();
    for (tv, sv) in t.iter().zip(s.iter()) {
        acc += *tv * (tv.ln() - sv.ln());
    }
    acc
}

/// Full topology-distillation evaluation: aggregates prototypes on both
/// sides from the shared labels and partition, builds the per-bucket
/// topologies, and returns the loss together with its analytic gradient with
/// respect to the student features.
///
/// The background anchors must be supplied for both sides or neither; they
/// are appended as static nodes when `config.include_background_anchor` is
/// set and receive no gradient.
#[allow(clippy::too_many_arguments)]
pub fn std_loss_and_grad<R: Real>(
    teacher_features: &ArrayView2<R>,
    student_features: &ArrayView2<R>,
    labels: &[Option<QueryLabel<R>>],
    partition: &ScalePartition,
    teacher_anchor: Option<&Array1<R>>,
    student_anchor: Option<&Array1<R>>,
    config: &StdConfig<R>,
) -> Result<StdOutput<R>> {
    validate_temperature(config.temperature)?;
    let (n, d) = teacher_features.dim();
    if student_features.dim() != (n, d) {
        return Err(Error::Config {
            message: format!(
                "teacher features {:?} and student features {:?} differ in shape",
                teacher_features.dim(),
                student_features.dim()
            ),
        });
    }
    assert_eq!(labels.len(), n, "one label slot per query");
    let anchors = match (teacher_anchor, student_anchor) {
        (Some(t), Some(s)) if config.include_background_anchor => Some((t, s)),
        (None, None) => None,
        _ if !config.include_background_anchor => None,
        _ => {
            return Err(Error::Config {
                message: "background anchor must be provided for both sides or neither".into(),
            })
        }
    };

    let mut loss = R::zero();
    let mut feature_grad = Array2::zeros((n, d));
    let mut buckets_used = 0;
    let mut skipped = Vec::new();

    for bucket in ScaleBucket::ALL {
        let queries = partition.group(bucket);
        let t_acc = accumulate_bucket(teacher_features, labels, queries, &mut skipped, bucket);
        skipped.clear();
        let s_acc = accumulate_bucket(student_features, labels, queries, &mut skipped, bucket);
        skipped.clear();
        // Shared labels imply identical class sets on both sides.
        debug_assert_eq!(
            t_acc.iter().map(|a| a.class_id).collect::<Vec<_>>(),
            s_acc.iter().map(|a| a.class_id).collect::<Vec<_>>()
        );

        let mut t_nodes: Vec<(TopologyNode, Array1<R>)> = t_acc
            .iter()
            .map(|a| (TopologyNode::Class(a.class_id), a.vector.clone()))
            .collect();
        let mut s_nodes: Vec<(TopologyNode, Array1<R>)> = s_acc
            .iter()
            .map(|a| (TopologyNode::Class(a.class_id), a.vector.clone()))
            .collect();
        if let Some((t_anchor, s_anchor)) = anchors {
            t_nodes.push((TopologyNode::Background, t_anchor.clone()));
            s_nodes.push((TopologyNode::Background, s_anchor.clone()));
        }
        if t_nodes.len() < 2 {
            continue;
        }
        buckets_used += 1;

        let t_topo = relation_topology(bucket, &t_nodes, config.temperature)?;
        let s_topo = relation_topology(bucket, &s_nodes, config.temperature)?;
        let tau = config.temperature;
        loss += tau * tau * kl_rows(&t_topo.affinity, &s_topo.affinity);

        // Backward pass. For the loss over row softmaxes of logits
        // l_{uv} = -M_{uv}/tau, d(loss)/d(l_{uv}) = tau^2 (S - T)_{uv}, so
        // d(loss)/dM_{uv} = tau (T - S)_{uv} per row occurrence. Each
        // off-diagonal distance appears in two rows.
        let nn = t_nodes.len();
        let mut proto_grad: Vec<Array1<R>> = vec![Array1::zeros(d); nn];
        for u in 0..nn {
            for v in (u + 1)..nn {
                let m = s_topo.distances[[u, v]];
                if m <= R::zero() {
                    // Coincident prototypes: subgradient 0.
                    continue;
                }
                let g_pair = tau
                    * ((t_topo.affinity[[u, v]] - s_topo.affinity[[u, v]])
                        + (t_topo.affinity[[v, u]] - s_topo.affinity[[v, u]]));
                let scale = g_pair / m;
                let diff = &s_nodes[u].1 - &s_nodes[v].1;
                proto_grad[u].scaled_add(scale, &diff);
                proto_grad[v].scaled_add(-scale, &diff);
            }
        }
        // Chain prototype gradients to student features through the fixed
        // confidence weights. The background node, if present, is last and
        // static: its gradient is dropped by construction.
        for (node_idx, acc) in s_acc.iter().enumerate() {
            for &(q, w) in &acc.members {
                feature_grad.row_mut(q).scaled_add(w, &proto_grad[node_idx]);
            }
        }
    }

    Ok(StdOutput { loss, feature_grad, buckets_used })
}
