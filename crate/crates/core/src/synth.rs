//! Synthetic heterogeneous-embedding benchmark.
//!
//! Generates desk-scale datasets that exhibit the pathologies the head is
//! built for: Zipf-skewed cluster sizes, classes that mix head and tail
//! clusters, attenuated signal on tail clusters, and pure-noise views.
//! Everything is a deterministic function of the spec.

use crate::error::{HopeError, Result};
use crate::head::ViewBatch;
use crate::real::Real;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub nodes: usize,
    pub views: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub num_clusters: usize,
    /// Cluster sizes are proportional to rank^(-zipf_exponent).
    pub zipf_exponent: f64,
    /// Ground-truth cluster -> view map; round-robin over non-noise views
    /// when absent.
    #[serde(default)]
    pub informative_view_map: Option<Vec<usize>>,
    /// Views that carry no signal component at all.
    #[serde(default)]
    pub noise_views: Vec<usize>,
    /// Signal multiplier < 1 applied to below-average-size clusters.
    pub tail_attenuation: f64,
    /// Standard deviation of the per-feature Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// The default desk-scale benchmark: 2000 nodes, 4 views (one pure
    /// noise), 8 Zipf-1.0 clusters folded onto 4 classes, tail clusters at
    /// 0.4 signal strength.
    pub fn default_benchmark() -> Self {
        DatasetSpec {
            nodes: 2000,
            views: 4,
            dim: 32,
            num_classes: 4,
            num_clusters: 8,
            zipf_exponent: 1.0,
            informative_view_map: None,
            noise_views: vec![3],
            tail_attenuation: 0.4,
            noise_sigma: 1.0,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 1 || self.views < 1 || self.dim < 1 || self.num_classes < 1 {
            return Err(HopeError::Config(
                "nodes, views, dim, num_classes must all be >= 1".into(),
            ));
        }
        if self.num_clusters < self.num_classes {
            return Err(HopeError::Config(format!(
                "num_clusters ({}) must be >= num_classes ({})",
                self.num_clusters, self.num_classes
            )));
        }
        if self.num_clusters > self.nodes {
            return Err(HopeError::Config(format!(
                "infeasible spec: {} clusters > {} nodes",
                self.num_clusters, self.nodes
            )));
        }
        for &nv in &self.noise_views {
            if nv >= self.views {
                return Err(HopeError::Config(format!(
                    "noise view {nv} out of range for {} views",
                    self.views
                )));
            }
        }
        if self.noise_views.len() >= self.views {
            return Err(HopeError::Config("every view marked as noise".into()));
        }
        if let Some(map) = &self.informative_view_map {
            if map.len() != self.num_clusters {
                return Err(HopeError::Config(
                    "informative_view_map must have one view per cluster".into(),
                ));
            }
            for &v in map {
                if v >= self.views {
                    return Err(HopeError::Config(format!("informative view {v} out of range")));
                }
                if self.noise_views.contains(&v) {
                    return Err(HopeError::Config(format!(
                        "informative view {v} collides with noise views"
                    )));
                }
            }
        }
        if !(self.tail_attenuation > 0.0 && self.tail_attenuation <= 1.0) {
            return Err(HopeError::Config(format!(
                "tail_attenuation must lie in (0, 1], got {}",
                self.tail_attenuation
            )));
        }
        if self.noise_sigma < 0.0 || self.zipf_exponent < 0.0 {
            return Err(HopeError::Config(
                "noise_sigma and zipf_exponent must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` along `weights`.
/// Remainder ties resolve to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// One generated dataset. Signatures are ground truth for tests and
/// diagnostics; they are not part of the serialized format.
#[derive(Debug, Clone)]
pub struct SyntheticDataset<T> {
    pub spec: DatasetSpec,
    /// M blocks, each N x d row-major.
    pub views: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub cluster_of: Vec<usize>,
    pub is_tail: Vec<bool>,
    pub cluster_sizes: Vec<usize>,
    /// Resolved cluster -> informative view map.
    pub informative_view: Vec<usize>,
    /// signatures[m][k] is the unit signature of cluster k in view m.
    pub signatures: Vec<Vec<Vec<T>>>,
}

/// Ground-truth cluster -> informative view assignment implied by a spec.
pub fn resolve_informative_views(spec: &DatasetSpec) -> Vec<usize> {
    match &spec.informative_view_map {
        Some(map) => map.clone(),
        None => {
            let non_noise: Vec<usize> =
                (0..spec.views).filter(|v| !spec.noise_views.contains(v)).collect();
            (0..spec.num_clusters).map(|c| non_noise[c % non_noise.len()]).collect()
        }
    }
}

/// Signatures come first in the generation stream so a loaded dataset can
/// reconstruct them by replaying just this prefix.
fn draw_signatures<T: Real>(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<T>>> {
    let normal = StandardNormal;
    (0..spec.views)
        .map(|_| {
            (0..spec.num_clusters)
                .map(|_| {
                    let raw: Vec<f64> = (0..spec.dim).map(|_| normal.sample(rng)).collect();
                    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                    raw.iter().map(|&x| T::from_f64(x / norm)).collect()
                })
                .collect()
        })
        .collect()
}

/// The signature bank a spec generates, without the node embeddings.
pub fn signatures_for_spec<T: Real>(spec: &DatasetSpec) -> Vec<Vec<Vec<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    draw_signatures(spec, &mut rng)
}

/// Zipf-apportioned cluster sizes for a spec.
pub fn cluster_sizes_for_spec(spec: &DatasetSpec) -> Vec<usize> {
    let weights: Vec<f64> = (1..=spec.num_clusters)
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    apportion(spec.nodes, &weights)
}

pub fn generate<T: Real>(spec: &DatasetSpec) -> Result<SyntheticDataset<T>> {
    spec.validate()?;
    let (n, m, d, k) = (spec.nodes, spec.views, spec.dim, spec.num_clusters);

    let cluster_sizes = cluster_sizes_for_spec(spec);

    let mean_size = n as f64 / k as f64;
    let tail_cluster: Vec<bool> = cluster_sizes.iter().map(|&s| (s as f64) < mean_size).collect();

    let mut cluster_of = Vec::with_capacity(n);
    for (c, &size) in cluster_sizes.iter().enumerate() {
        cluster_of.extend(std::iter::repeat(c).take(size));
    }
    let labels: Vec<usize> = cluster_of.iter().map(|&c| c % spec.num_classes).collect();
    let is_tail: Vec<bool> = cluster_of.iter().map(|&c| tail_cluster[c]).collect();

    let informative_view = resolve_informative_views(spec);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;

    let signatures: Vec<Vec<Vec<T>>> = draw_signatures(spec, &mut rng);

    // A cluster's signal lives in its informative view only; every other
    // view is pure noise for it. This is the contextual-polysemy pathology:
    // the same node is legible in one semantic channel and noise in the
    // rest, so a head that cannot select views has to average them.
    let mut views = Vec::with_capacity(m);
    for view in 0..m {
        let is_noise_view = spec.noise_views.contains(&view);
        let mut block = vec![T::zero(); n * d];
        for v in 0..n {
            let c = cluster_of[v];
            let strength = if is_noise_view || informative_view[c] != view {
                0.0
            } else if tail_cluster[c] {
                spec.tail_attenuation
            } else {
                1.0
            };
            for j in 0..d {
                let noise: f64 = normal.sample(&mut rng);
                block[v * d + j] = T::from_f64(
                    strength * signatures[view][c][j].to_f64() + spec.noise_sigma * noise,
                );
            }
        }
        views.push(block);
    }

    Ok(SyntheticDataset {
        spec: spec.clone(),
        views,
        labels,
        cluster_of,
        is_tail,
        cluster_sizes,
        informative_view,
        signatures,
    })
}

/// Stratified split indices. Clusters smaller than 3 go wholly to train and
/// are recorded as warnings.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn split<T: Real>(
    ds: &SyntheticDataset<T>,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<Splits> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(HopeError::Config(format!(
            "fractions must satisfy 0 < train, 0 < val, train + val < 1 (got {train_frac}, {val_frac})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for c in 0..ds.spec.num_clusters {
        let mut members: Vec<usize> = (0..ds.spec.nodes).filter(|&v| ds.cluster_of[v] == c).collect();
        members.shuffle(&mut rng);
        let nc = members.len();
        if nc < 3 {
            splits
                .warnings
                .push(format!("cluster {c} has {nc} nodes; placed wholly in train"));
            splits.train.extend(members);
            continue;
        }
        let mut counts = {
            let quotas = [
                train_frac * nc as f64,
                val_frac * nc as f64,
                (1.0 - train_frac - val_frac) * nc as f64,
            ];
            let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            let assigned: usize = counts.iter().sum();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| {
                let ra = quotas[a] - quotas[a].floor();
                let rb = quotas[b] - quotas[b].floor();
                rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
            });
            for &i in order.iter().take(nc - assigned) {
                counts[i] += 1;
            }
            counts
        };
        // every split sees every cluster of size >= 3
        for i in 0..3 {
            while counts[i] == 0 {
                let largest = (0..3).max_by_key(|&j| counts[j]).unwrap();
                counts[largest] -= 1;
                counts[i] += 1;
            }
        }
        let (a, rest) = members.split_at(counts[0]);
        let (b, c_part) = rest.split_at(counts[1]);
        splits.train.extend_from_slice(a);
        splits.val.extend_from_slice(b);
        splits.test.extend_from_slice(c_part);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

/// Gather the given node rows from every view into a batch.
pub fn make_view_batch<T: Real>(ds: &SyntheticDataset<T>, indices: &[usize]) -> Result<ViewBatch<T>> {
    let d = ds.spec.dim;
    for &i in indices {
        if i >= ds.spec.nodes {
            return Err(HopeError::IndexOutOfRange {
                index: i,
                len: ds.spec.nodes,
            });
        }
    }
    let views: Vec<Vec<T>> = ds
        .views
        .iter()
        .map(|block| {
            let mut out = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                out.extend_from_slice(&block[i * d..(i + 1) * d]);
            }
            out
        })
        .collect();
    ViewBatch::new(views, indices.len(), d)
}

/// Labels gathered in batch order.
pub fn gather_labels<T: Real>(ds: &SyntheticDataset<T>, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| ds.labels[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            nodes: 400,
            views: 3,
            dim: 16,
            num_classes: 2,
            num_clusters: 4,
            zipf_exponent: 1.0,
            informative_view_map: None,
            noise_views: vec![2],
            tail_attenuation: 0.5,
            noise_sigma: 0.3,
            seed: 11,
        }
    }

    // Frozen from normalizing harmonic weights 1, 1/2, 1/3, 1/4 over 1000
    // nodes and applying largest-remainder rounding.
    #[test]
    fn zipf_sizes_match_hand_computation() {
        let mut spec = small_spec();
        spec.nodes = 1000;
        spec.num_clusters = 4;
        spec.zipf_exponent = 1.0;
        let ds = generate::<f32>(&spec).unwrap();
        assert_eq!(ds.cluster_sizes, vec![480, 240, 160, 120]);
    }

    #[test]
    fn zipf_zero_gives_equal_sizes() {
        let mut spec = small_spec();
        spec.nodes = 402;
        spec.zipf_exponent = 0.0;
        let ds = generate::<f32>(&spec).unwrap();
        for &s in &ds.cluster_sizes {
            assert!((s as i64 - 100).abs() <= 1, "size {s}");
        }
        assert_eq!(ds.cluster_sizes.iter().sum::<usize>(), 402);
    }

    #[test]
    fn noiseless_rows_of_one_cluster_are_identical() {
        let mut spec = small_spec();
        spec.noise_sigma = 0.0;
        spec.tail_attenuation = 1.0;
        let ds = generate::<f32>(&spec).unwrap();
        for view in 0..spec.views {
            for c in 0..spec.num_clusters {
                let members: Vec<usize> =
                    (0..spec.nodes).filter(|&v| ds.cluster_of[v] == c).collect();
                let first = &ds.views[view][members[0] * spec.dim..(members[0] + 1) * spec.dim];
                for &v in &members[1..] {
                    let row = &ds.views[view][v * spec.dim..(v + 1) * spec.dim];
                    assert_eq!(first, row);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate::<f32>(&spec).unwrap();
        let b = generate::<f32>(&spec).unwrap();
        for (va, vb) in a.views.iter().zip(&b.views) {
            let bits_a: Vec<u32> = va.iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u32> = vb.iter().map(|x| x.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let mut spec = small_spec();
        spec.num_clusters = 500;
        spec.num_classes = 500;
        assert!(matches!(generate::<f32>(&spec), Err(HopeError::Config(_))));
    }

    #[test]
    fn split_proportions_within_one_per_cluster() {
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        let s = split(&ds, 0.6, 0.2, 3).unwrap();
        for c in 0..spec.num_clusters {
            let in_cluster = |ids: &[usize]| ids.iter().filter(|&&v| ds.cluster_of[v] == c).count();
            let nc = ds.cluster_sizes[c] as f64;
            assert!((in_cluster(&s.train) as f64 - 0.6 * nc).abs() <= 1.0);
            assert!((in_cluster(&s.val) as f64 - 0.2 * nc).abs() <= 1.0);
            assert!((in_cluster(&s.test) as f64 - 0.2 * nc).abs() <= 1.0);
        }
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        let a = split(&ds, 0.6, 0.2, 3).unwrap();
        let b = split(&ds, 0.6, 0.2, 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);

        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..spec.nodes).collect();
        assert_eq!(all, expect, "splits must partition the node set");
    }

    #[test]
    fn tiny_cluster_goes_wholly_to_train_with_warning() {
        let mut spec = small_spec();
        spec.nodes = 24;
        spec.num_clusters = 8;
        spec.num_classes = 2;
        spec.zipf_exponent = 2.5; // forces tiny tail clusters
        let ds = generate::<f32>(&spec).unwrap();
        assert!(ds.cluster_sizes.iter().any(|&s| s > 0 && s < 3));
        let s = split(&ds, 0.5, 0.25, 3).unwrap();
        assert!(!s.warnings.is_empty());
        for (c, &size) in ds.cluster_sizes.iter().enumerate() {
            if size > 0 && size < 3 {
                let in_train = s.train.iter().filter(|&&v| ds.cluster_of[v] == c).count();
                assert_eq!(in_train, size, "cluster {c} must sit wholly in train");
            }
        }
    }

    #[test]
    fn view_batch_single_and_repeated_indices() {
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        let single = make_view_batch(&ds, &[5]).unwrap();
        assert_eq!(single.batch, 1);
        let d = spec.dim;
        for m in 0..spec.views {
            assert_eq!(&single.all[m * d..(m + 1) * d], &ds.views[m][5 * d..6 * d]);
        }
        let repeated = make_view_batch(&ds, &[9, 9]).unwrap();
        assert_eq!(&repeated.views[0][..d], &repeated.views[0][d..2 * d]);
    }

    #[test]
    fn view_batch_blocks_match_gathered_rows() {
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        let idx = [3usize, 100, 42, 11];
        let batch = make_view_batch(&ds, &idx).unwrap();
        let d = spec.dim;
        for (m, view) in batch.views.iter().enumerate() {
            for (row, &v) in idx.iter().enumerate() {
                assert_eq!(&view[row * d..(row + 1) * d], &ds.views[m][v * d..(v + 1) * d]);
            }
        }
    }

    #[test]
    fn view_batch_rejects_out_of_range() {
        let spec = small_spec();
        let ds = generate::<f32>(&spec).unwrap();
        assert!(matches!(
            make_view_batch(&ds, &[spec.nodes]),
            Err(HopeError::IndexOutOfRange { .. })
        ));
    }

    // With no noise the dataset is separable by construction: nearest
    // signature in the informative view recovers the cluster, and the label
    // is a function of the cluster.
    #[test]
    fn noiseless_dataset_is_separable_by_nearest_signature()
    {
        let mut spec = small_spec();
        spec.noise_sigma = 0.0;
        let ds = generate::<f64>(&spec).unwrap();
        let d = spec.dim;
        let mut correct = 0;
        for v in 0..spec.nodes {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for c in 0..spec.num_clusters {
                let view = ds.informative_view[c];
                let row = &ds.views[view][v * d..(v + 1) * d];
                let sig = &ds.signatures[view][c];
                let dot: f64 = row.iter().zip(sig).map(|(a, b)| a * b).sum();
                let nr = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                let cos = if nr > 0.0 { dot / nr } else { 0.0 };
                if cos > best.0 {
                    best = (cos, c);
                }
            }
            if best.1 % spec.num_classes == ds.labels[v] {
                correct += 1;
            }
        }
        assert_eq!(correct, spec.nodes);
    }

    #[test]
    fn noise_view_rows_have_no_signal_component() {
        let mut spec = small_spec();
        spec.nodes = 2000;
        spec.noise_sigma = 1.0;
        let ds = generate::<f64>(&spec).unwrap();
        let d = spec.dim;
        let noise_view = spec.noise_views[0];
        // expected cosine against any fixed unit vector is 0
        let probe = &ds.signatures[noise_view][0];
        let mut mean = 0.0;
        for v in 0..spec.nodes {
            let row = &ds.views[noise_view][v * d..(v + 1) * d];
            let dot: f64 = row.iter().zip(probe).map(|(a, b)| a * b).sum();
            let nr = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            mean += dot / nr;
        }
        mean /= spec.nodes as f64;
        assert!(
            mean.abs() < 3.0 / (spec.nodes as f64).sqrt(),
            "noise view carries signal: mean cosine {mean}"
        );
    }

    #[test]
    fn tail_nodes_score_lower_than_head_nodes() {
        let spec = small_spec();
        let ds = generate::<f64>(&spec).unwrap();
        let d = spec.dim;
        let mut tail = (0.0, 0usize);
        let mut headn = (0.0, 0usize);
        for v in 0..spec.nodes {
            let c = ds.cluster_of[v];
            let view = ds.informative_view[c];
            let row = &ds.views[view][v * d..(v + 1) * d];
            let sig = &ds.signatures[view][c];
            let dot: f64 = row.iter().zip(sig).map(|(a, b)| a * b).sum();
            let nr = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            let cos = dot / nr;
            if ds.is_tail[v] {
                tail.0 += cos;
                tail.1 += 1;
            } else {
                headn.0 += cos;
                headn.1 += 1;
            }
        }
        let tail_mean = tail.0 / tail.1 as f64;
        let head_mean = headn.0 / headn.1 as f64;
        assert!(
            tail_mean < head_mean,
            "tail mean {tail_mean} not below head mean {head_mean}"
        );
    }
}
