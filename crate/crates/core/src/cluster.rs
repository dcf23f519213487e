//! Station clustering from CP location loadings.
//!
//! Stations are embedded by PCA of the weighted location factor, then
//! merged bottom-up under group-average (UPGMA) Euclidean linkage.

use nalgebra::DMatrix;

use crate::cp::CpModel;
use crate::error::{Error, Result};
use crate::forecast::LOCATION_AXIS;
use crate::tensor::DenseTensor;

pub const DEFAULT_VARIANCE_RETAINED: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct StationEmbedding {
    pub station_ids: Vec<String>,
    /// `L x m` principal coordinates, one row per station.
    pub coords: DMatrix<f64>,
    /// Share of the centered variance carried by the retained components.
    pub explained: f64,
    /// Set when the location factor had no variance to project.
    pub degenerate: bool,
}

impl StationEmbedding {
    pub fn from_coords(coords: DMatrix<f64>) -> Self {
        let station_ids = (0..coords.nrows()).map(|i| i.to_string()).collect();
        Self { station_ids, coords, explained: 1.0, degenerate: false }
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.coords.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} station ids for {} embedded stations",
                ids.len(),
                self.coords.nrows()
            )));
        }
        self.station_ids = ids;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        (self.coords.row(a) - self.coords.row(b)).norm()
    }
}

/// Project the weighted location factor onto its leading principal
/// components.
pub fn embed_stations(model: &CpModel, variance_retained: f64) -> Result<StationEmbedding> {
    if !(variance_retained > 0.0 && variance_retained <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance_retained must lie in (0, 1], got {variance_retained}"
        )));
    }
    let u = model.absorbed_factor(LOCATION_AXIS);
    let rows = u.nrows();
    let mut centered = u.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let svd = centered.svd(true, true);
    let (u_svd, s) = (svd.u.expect("left vectors requested"), svd.singular_values);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let smax = order.first().map_or(0.0, |&i| s[i]);
    if smax <= f64::EPSILON * rows.max(1) as f64 * u.amax().max(f64::MIN_POSITIVE) {
        log::warn!("location factor has no spread; using a single zero coordinate");
        let mut e = StationEmbedding::from_coords(DMatrix::zeros(rows, 1));
        e.degenerate = true;
        e.explained = 0.0;
        return Ok(e);
    }
    let numeric_rank = order.iter().filter(|&&i| s[i] > 1e-12 * smax).count();
    let total: f64 = order.iter().map(|&i| s[i] * s[i]).sum();
    let mut kept = 0;
    let mut cum = 0.0;
    for &i in order.iter().take(numeric_rank) {
        cum += s[i] * s[i];
        kept += 1;
        if cum >= variance_retained * total * (1.0 - 1e-12) {
            break;
        }
    }
    let coords = DMatrix::from_fn(rows, kept, |r, c| u_svd[(r, order[c])] * s[order[c]]);
    let mut e = StationEmbedding::from_coords(coords);
    e.explained = cum / total;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Smallest station index of each merged cluster, `left < right`.
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    /// Size of the merged cluster.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub linkage_trace: Vec<Merge>,
}

impl ClusterAssignment {
    /// Station indices carrying `label`, in ascending order.
    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Full UPGMA merge sequence down to a single cluster, plus the cluster
/// membership after each merge is undone back to `k`.
fn upgma(e: &StationEmbedding, k: usize) -> (Vec<Vec<usize>>, Vec<Merge>) {
    let n = e.len();
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut dist = DMatrix::from_fn(n, n, |a, b| e.distance(a, b));
    let mut trace = Vec::with_capacity(n.saturating_sub(1));
    let mut snapshot = None;
    let mut active = n;
    if active == k {
        snapshot = Some(clusters.iter().flatten().cloned().collect());
    }
    while active > 1 {
        // Slots are indexed by their smallest member, so scanning slot
        // pairs in order breaks ties toward the lowest station index.
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..n {
            if clusters[a].is_none() {
                continue;
            }
            for b in a + 1..n {
                if clusters[b].is_none() {
                    continue;
                }
                if best.is_none_or(|(_, _, d)| dist[(a, b)] < d) {
                    best = Some((a, b, dist[(a, b)]));
                }
            }
        }
        let (a, b, d) = best.expect("at least two active clusters");
        let right = clusters[b].take().expect("active");
        let (na, nb) = (clusters[a].as_ref().map_or(0, Vec::len) as f64, right.len() as f64);
        for c in 0..n {
            if c != a && clusters[c].is_some() {
                let merged = (na * dist[(a, c)] + nb * dist[(b, c)]) / (na + nb);
                dist[(a, c)] = merged;
                dist[(c, a)] = merged;
            }
        }
        let left = clusters[a].as_mut().expect("active");
        left.extend(right);
        left.sort_unstable();
        trace.push(Merge { left: a, right: b, distance: d, size: left.len() });
        active -= 1;
        if active == k {
            snapshot = Some(clusters.iter().flatten().cloned().collect());
        }
    }
    (snapshot.unwrap_or_else(|| vec![(0..n).collect()]), trace)
}

/// Group-average agglomerative clustering down to `k` clusters.
///
/// Labels are numbered by the smallest station index in each cluster.
pub fn agglomerate(e: &StationEmbedding, k: usize) -> Result<ClusterAssignment> {
    let n = e.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cluster count {k} outside [1, {n}]")));
    }
    let (groups, trace) = upgma(e, k);
    let mut labels = vec![0; n];
    for (label, members) in groups.iter().enumerate() {
        for &m in members {
            labels[m] = label;
        }
    }
    Ok(ClusterAssignment { labels, k, linkage_trace: trace })
}

/// Cluster count from the largest jump in merge distance.
///
/// Stopping before the merge that follows the largest gap (among counts
/// up to `max_k`) gives the count. That merge must be at least
/// `min_ratio` times farther than the one before it; otherwise everything
/// is one cluster.
pub fn choose_k_by_gap(e: &StationEmbedding, max_k: usize, min_ratio: f64) -> Result<usize> {
    let n = e.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no stations to cluster".into()));
    }
    let (_, trace) = upgma(e, 1);
    let max_k = max_k.clamp(1, n);
    let mut best: Option<(usize, f64, f64)> = None;
    for j in 1..trace.len() {
        let (before, after) = (trace[j - 1].distance, trace[j].distance);
        if n - j > max_k {
            continue;
        }
        if best.is_none_or(|(_, gap, _)| after - before > gap) {
            best = Some((n - j, after - before, after / before));
        }
    }
    Ok(match best {
        Some((k, gap, ratio)) if gap > 0.0 && ratio >= min_ratio => k,
        _ => 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSlice {
    pub label: usize,
    /// Station indices of the source tensor, ascending.
    pub stations: Vec<usize>,
    pub tensor: DenseTensor,
}

pub fn split_tensor_by_cluster(t: &DenseTensor, assign: &ClusterAssignment) -> Result<Vec<ClusterSlice>> {
    let l = t.shape().first().copied().unwrap_or(0);
    if assign.labels.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} stations",
            assign.labels.len(),
            l
        )));
    }
    if let Some(&bad) = assign.labels.iter().find(|&&lab| lab >= assign.k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {})", assign.k)));
    }
    (0..assign.k)
        .map(|label| {
            let stations = assign.members(label);
            if stations.is_empty() {
                return Err(Error::InvalidArgument(format!("cluster {label} is empty")));
            }
            let tensor = t.select(LOCATION_AXIS, &stations)?;
            Ok(ClusterSlice { label, stations, tensor })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_groups(n_each: usize, seed: u64) -> (StationEmbedding, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * n_each;
        // Interleave the groups so labels are not trivially contiguous.
        let planted: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let coords = DMatrix::from_fn(n, 2, |i, c| {
            let centre = if planted[i] == 0 { 0.0 } else { 10.0 };
            centre * (c == 0) as u8 as f64 + rng.random_range(-0.5..0.5)
        });
        (StationEmbedding::from_coords(coords), planted)
    }

    /// Group-average distances recomputed from scratch at every step.
    fn naive_upgma(e: &StationEmbedding) -> Vec<(usize, usize, f64)> {
        let mut clusters: Vec<Vec<usize>> = (0..e.len()).map(|i| vec![i]).collect();
        let mut trace = Vec::new();
        while clusters.len() > 1 {
            let mut best = (0, 1, f64::INFINITY);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut sum = 0.0;
                    for &i in &clusters[a] {
                        for &j in &clusters[b] {
                            sum += e.distance(i, j);
                        }
                    }
                    let d = sum / (clusters[a].len() * clusters[b].len()) as f64;
                    if d < best.2 {
                        best = (a, b, d);
                    }
                }
            }
            let right = clusters.remove(best.1);
            trace.push((clusters[best.0][0], right[0], best.2));
            clusters[best.0].extend(right);
            clusters[best.0].sort_unstable();
            clusters.sort_by_key(|c| c[0]);
        }
        trace
    }

    #[test]
    fn matches_naive_trace() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = StationEmbedding::from_coords(DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0)));
            let fast = agglomerate(&e, 1).unwrap().linkage_trace;
            let slow = naive_upgma(&e);
            assert_eq!(fast.len(), slow.len());
            for (m, (l, r, d)) in fast.iter().zip(slow) {
                assert_eq!((m.left, m.right), (l, r));
                assert!((m.distance - d).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recovers_planted_pair() {
        let (e, planted) = two_groups(6, 3);
        let a = agglomerate(&e, 2).unwrap();
        assert_eq!(a.labels, planted);
        assert_eq!(choose_k_by_gap(&e, 10, 2.0).unwrap(), 2);
    }

    #[test]
    fn trivial_counts() {
        let (e, _) = two_groups(3, 1);
        let single = agglomerate(&e, 6).unwrap();
        assert_eq!(single.labels, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(agglomerate(&e, 1).unwrap().labels, vec![0; 6]);
        assert!(agglomerate(&e, 0).is_err());
        assert!(agglomerate(&e, 7).is_err());
    }

    #[test]
    fn ties_break_toward_lowest_index() {
        let e = StationEmbedding::from_coords(DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]));
        let a = agglomerate(&e, 1).unwrap();
        assert_eq!((a.linkage_trace[0].left, a.linkage_trace[0].right), (0, 1));
        assert_eq!(a.linkage_trace, agglomerate(&e, 1).unwrap().linkage_trace);
    }

    #[test]
    fn homogeneous_cloud_is_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = StationEmbedding::from_coords(DMatrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0)));
        assert_eq!(choose_k_by_gap(&e, 10, 2.0).unwrap(), 1);
    }

    #[test]
    fn full_pca_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let factors = vec![
            DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0)),
        ];
        let model = CpModel::new(vec![2.0, 1.0, 0.5], factors).unwrap();
        let u = model.absorbed_factor(0);
        let e = embed_stations(&model, 1.0).unwrap();
        assert_eq!(e.dim(), 3);
        for a in 0..8 {
            for b in 0..8 {
                let direct = (u.row(a) - u.row(b)).norm();
                assert!((direct - e.distance(a, b)).abs() < 1e-9);
            }
        }
        assert!(embed_stations(&model, 0.0).is_err());
        assert!(embed_stations(&model, 1.5).is_err());
    }

    #[test]
    fn disjoint_components_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let loc = DMatrix::from_fn(10, 2, |i, c| if (i < 5) == (c == 0) { 1.0 + rng.random_range(-0.05..0.05) } else { 0.0 });
        let others = vec![
            DMatrix::from_fn(7, 2, |_, _| rng.random_range(0.5..1.0)),
            DMatrix::from_fn(6, 2, |_, _| rng.random_range(0.5..1.0)),
        ];
        let mut factors = vec![loc];
        factors.extend(others);
        let e = embed_stations(&CpModel::from_factors(factors).unwrap(), 0.9).unwrap();
        let centroid = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            range.fold(DMatrix::zeros(1, e.dim()), |acc, i| acc + e.coords.rows(i, 1)) / n
        };
        let (c0, c1) = (centroid(0..5), centroid(5..10));
        let between = (&c0 - &c1).norm();
        let spread = (0..10)
            .map(|i| (e.coords.rows(i, 1) - if i < 5 { &c0 } else { &c1 }).norm())
            .fold(0.0, f64::max);
        assert!(between > 5.0 * spread, "{between} vs {spread}");
    }

    #[test]
    fn degenerate_factor_flagged() {
        let factors = vec![DMatrix::from_element(4, 2, 1.0), DMatrix::from_element(3, 2, 1.0), DMatrix::from_element(2, 2, 1.0)];
        let e = embed_stations(&CpModel::from_factors(factors).unwrap(), 0.9).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.dim(), 1);
    }

    #[test]
    fn split_and_reassemble() {
        let t = DenseTensor::from_fn(vec![5, 2, 3], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        let a = ClusterAssignment { labels: vec![1, 0, 1, 0, 1], k: 2, linkage_trace: vec![] };
        let parts = split_tensor_by_cluster(&t, &a).unwrap();
        assert_eq!(parts[0].stations, vec![1, 3]);
        assert_eq!(parts[1].tensor.shape(), &[3, 2, 3]);
        assert_eq!(parts[1].tensor.get(&[2, 1, 2]), t.get(&[4, 1, 2]));
        let whole = ClusterAssignment { labels: vec![0; 5], k: 1, linkage_trace: vec![] };
        assert_eq!(split_tensor_by_cluster(&t, &whole).unwrap()[0].tensor, t);
        let bad = ClusterAssignment { labels: vec![0; 4], k: 1, linkage_trace: vec![] };
        assert!(split_tensor_by_cluster(&t, &bad).is_err());
    }
}
