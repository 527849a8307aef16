//! Offline prototype bank: K-means over the features of fully visible
//! pedestrians, with nearest-prototype lookup by proposal scale.

use std::fs;
use std::path::Path;

use crate::container::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::ndnum::Rng;
use crate::par::{self, Exec};
use crate::synth::Proposal;

const BANK_MAGIC: &[u8; 4] = b"FCPB";
const BANK_VERSION: u32 = 1;

/// Features of every fully visible pedestrian together with its scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    pub entries: Vec<(FeatureMap, f64)>,
}

impl FeaturePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Collects the pedestrians with visibility ≥ 0.99.
pub fn build_pool(proposals: &[Proposal]) -> Result<FeaturePool> {
    let entries: Vec<_> = proposals
        .iter()
        .filter(|p| p.is_fully_visible_pedestrian())
        .map(|p| (p.features.clone(), p.scale))
        .collect();
    if entries.is_empty() {
        return Err(Error::NoFullyVisibleSamples);
    }
    let shape = entries[0].0.dims();
    if let Some((f, _)) = entries.iter().find(|(f, _)| f.dims() != shape) {
        return Err(Error::ShapeMismatch {
            left: vec![shape.0, shape.1, shape.2],
            right: vec![f.channels(), f.width(), f.height()],
        });
    }
    Ok(FeaturePool { entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub id: usize,
    pub center: FeatureMap,
    pub scale_mean: f64,
    pub scale_std: f64,
    pub member_count: usize,
}

/// Cluster centers sorted by ascending scale mean; `id` is the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub prototypes: Vec<Prototype>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMode {
    /// Closest scale mean.
    Scale,
    /// Closest center in feature space.
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 5,
            restarts: 5,
            max_iters: 100,
            seed: 0,
            exec: Exec::auto(),
        }
    }
}

/// Result of clustering plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub objective: f64,
    /// Within-cluster sum of squares after each Lloyd iteration of the
    /// winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Means of the members of each cluster, summed in point order.
fn cluster_means(points: &[Vec<f64>], assignment: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    (sums, counts)
}

/// Within-cluster sum of squares of a partition, measured against each
/// cluster's mean.
pub fn partition_objective(points: &[Vec<f64>], assignment: &[usize], k: usize) -> f64 {
    let (means, _) = cluster_means(points, assignment, k);
    points.iter().zip(assignment).map(|(p, &a)| sq_dist(p, &means[a])).sum()
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.below(n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.below(n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut Rng, exec: Exec) -> Clustering {
    let mut centers = plus_plus_seeds(points, k, rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let nearest_all = par::map(exec, points, |p| nearest(p, &centers));
        let next: Vec<usize> = nearest_all.iter().map(|&(a, _)| a).collect();
        let changed = next != assignment;
        assignment = next;
        let (mut means, mut counts) = cluster_means(points, &assignment, k);
        // An emptied cluster takes over the point farthest from its center.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..points.len())
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&i, &j| {
                    let di = sq_dist(&points[i], &means[assignment[i]]);
                    let dj = sq_dist(&points[j], &means[assignment[j]]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                });
            let Some(far) = far else { break };
            assignment[far] = empty;
            (means, counts) = cluster_means(points, &assignment, k);
        }
        centers = means;
        history.push(partition_objective(points, &assignment, k));
        if !changed {
            break;
        }
    }
    let objective = partition_objective(points, &assignment, k);
    Clustering {
        centers,
        assignment,
        objective,
        history,
    }
}

/// Best-of-`restarts` K-means with K-means++ seeding and Lloyd iterations.
/// Restart `r` draws from stream `r` of the seed.
pub fn kmeans_vectors(points: &[Vec<f64>], config: &KMeansConfig) -> Result<Clustering> {
    if config.k == 0 {
        return Err(Error::precondition("K must be at least 1"));
    }
    if points.len() < config.k {
        return Err(Error::precondition(format!(
            "pool of {} samples is smaller than K = {}",
            points.len(),
            config.k
        )));
    }
    let root = Rng::new(config.seed).split(crate::ndnum::streams::KMEANS);
    let mut best: Option<Clustering> = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = root.split(r as u64);
        let c = lloyd(points, config.k, config.max_iters, &mut rng, config.exec);
        if best.as_ref().is_none_or(|b| c.objective < b.objective) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Clusters the pool and summarizes each cluster's member scales.
pub fn kmeans(pool: &FeaturePool, config: &KMeansConfig) -> Result<PrototypeBank> {
    if pool.is_empty() {
        return Err(Error::NoFullyVisibleSamples);
    }
    let points: Vec<Vec<f64>> = pool.entries.iter().map(|(f, _)| f.data().to_vec()).collect();
    let clustering = kmeans_vectors(&points, config)?;
    let (c, x, y) = pool.entries[0].0.dims();
    let mut prototypes = Vec::with_capacity(config.k);
    for (k, center) in clustering.centers.iter().enumerate() {
        let scales: Vec<f64> = pool
            .entries
            .iter()
            .zip(&clustering.assignment)
            .filter(|(_, &a)| a == k)
            .map(|((_, s), _)| *s)
            .collect();
        let n = scales.len() as f64;
        let mean = scales.iter().sum::<f64>() / n;
        let var = scales.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        prototypes.push(Prototype {
            id: 0,
            center: FeatureMap::new(c, x, y, center.clone())?,
            scale_mean: mean,
            scale_std: var.sqrt(),
            member_count: scales.len(),
        });
    }
    PrototypeBank::new(prototypes)
}

impl PrototypeBank {
    /// Sorts by scale mean and renumbers.
    pub fn new(mut prototypes: Vec<Prototype>) -> Result<Self> {
        if prototypes.is_empty() {
            return Err(Error::precondition("prototype bank must not be empty"));
        }
        prototypes.sort_by(|a, b| a.scale_mean.total_cmp(&b.scale_mean));
        for (i, p) in prototypes.iter_mut().enumerate() {
            p.id = i;
        }
        Ok(Self { prototypes })
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn lookup(&self, features: &FeatureMap, scale: f64, mode: LookupMode) -> &Prototype {
        match mode {
            LookupMode::Scale => nearest_prototype(self, scale),
            LookupMode::Features => nearest_by_features(self, features),
        }
    }

    /// One `mean ± std` line per cluster.
    pub fn scale_summary(&self) -> String {
        self.prototypes
            .iter()
            .map(|p| {
                format!(
                    "prototype {}: {:.2} ± {:.2} ({} members)\n",
                    p.id, p.scale_mean, p.scale_std, p.member_count
                )
            })
            .collect()
    }
}

/// Prototype whose scale mean is closest to `scale`; ties go to the smaller
/// mean.
pub fn nearest_prototype(bank: &PrototypeBank, scale: f64) -> &Prototype {
    let mut best = &bank.prototypes[0];
    for p in &bank.prototypes[1..] {
        if (scale - p.scale_mean).abs() < (scale - best.scale_mean).abs() {
            best = p;
        }
    }
    best
}

/// Prototype whose center is closest in feature space; ties go to the lower id.
pub fn nearest_by_features<'a>(bank: &'a PrototypeBank, features: &FeatureMap) -> &'a Prototype {
    let mut best = &bank.prototypes[0];
    let mut best_d = f64::INFINITY;
    for p in &bank.prototypes {
        let d = sq_dist(p.center.data(), features.data());
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

pub fn encode_bank(bank: &PrototypeBank) -> Result<Vec<u8>> {
    let (c, x, y) = bank.prototypes[0].center.dims();
    let mut e = Encoder::new(BANK_MAGIC, BANK_VERSION);
    e.len_u32(bank.len())?;
    for d in [c, x, y] {
        e.len_u32(d)?;
    }
    for p in &bank.prototypes {
        e.f64(p.scale_mean);
        e.f64(p.scale_std);
        e.u64(p.member_count as u64);
        e.f64s(p.center.data());
    }
    Ok(e.finish())
}

pub fn decode_bank(bytes: &[u8]) -> Result<PrototypeBank> {
    let (mut d, version) = Decoder::open(bytes, BANK_MAGIC)?;
    if version != BANK_VERSION {
        return Err(d.malformed(format!("unsupported bank version {version}")));
    }
    let k = d.usize32()?;
    let (c, x, y) = (d.usize32()?, d.usize32()?, d.usize32()?);
    if k == 0 || c == 0 || x == 0 || y == 0 {
        return Err(d.malformed("empty bank or zero feature dimension"));
    }
    let mut prototypes = Vec::with_capacity(k.min(1024));
    for id in 0..k {
        let scale_mean = d.f64()?;
        let scale_std = d.f64()?;
        let member_count = d.u64()? as usize;
        let center = FeatureMap::new(c, x, y, d.f64s(c * x * y)?)?;
        prototypes.push(Prototype {
            id,
            center,
            scale_mean,
            scale_std,
            member_count,
        });
    }
    d.finish()?;
    PrototypeBank::new(prototypes)
}

pub fn write_bank(bank: &PrototypeBank, path: &Path) -> Result<()> {
    fs::write(path, encode_bank(bank)?)?;
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<PrototypeBank> {
    decode_bank(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_background, gen_pedestrian, gen_random_occluded, gen_world, WorldConfig};

    fn scalar_points(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    fn cfg(k: usize) -> KMeansConfig {
        KMeansConfig {
            k,
            restarts: 5,
            max_iters: 100,
            seed: 1,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn pool_filters_fully_visible() {
        let w = gen_world(&WorldConfig::default()).unwrap();
        let mut r = Rng::new(0);
        let mut props = Vec::new();
        for _ in 0..10 {
            props.push(gen_pedestrian(&w, 150.0, &mut r).unwrap());
        }
        for _ in 0..5 {
            props.push(gen_random_occluded(&w, &mut r).unwrap());
        }
        for _ in 0..5 {
            props.push(gen_background(&w, &mut r));
        }
        let pool = build_pool(&props).unwrap();
        assert_eq!(pool.len(), 10);
        assert_eq!(pool.entries[3].0, props[3].features);
        assert!(matches!(build_pool(&props[10..]), Err(Error::NoFullyVisibleSamples)));
    }

    #[test]
    fn four_scalars_two_clusters() {
        let pts = scalar_points(&[0.0, 1.0, 10.0, 11.0]);
        let c = kmeans_vectors(&pts, &cfg(2)).unwrap();
        let mut centers: Vec<f64> = c.centers.iter().map(|v| v[0]).collect();
        centers.sort_by(f64::total_cmp);
        assert_eq!(centers, vec![0.5, 10.5]);
        assert_eq!(c.objective, 1.0);
    }

    #[test]
    fn k_equal_to_pool_size() {
        let pts = scalar_points(&[3.0, -1.0, 8.0, 2.5, 7.0]);
        let c = kmeans_vectors(&pts, &cfg(5)).unwrap();
        assert_eq!(c.objective, 0.0);
        let mut centers: Vec<f64> = c.centers.iter().map(|v| v[0]).collect();
        centers.sort_by(f64::total_cmp);
        assert_eq!(centers, vec![-1.0, 2.5, 3.0, 7.0, 8.0]);
    }

    #[test]
    fn identical_points() {
        let pts = vec![vec![2.0, -1.0]; 6];
        let c = kmeans_vectors(&pts, &cfg(3)).unwrap();
        assert!(c.centers.iter().all(|v| v == &vec![2.0, -1.0]));
        assert_eq!(c.objective, 0.0);
        let counts = (0..3).map(|k| c.assignment.iter().filter(|&&a| a == k).count());
        assert!(counts.into_iter().all(|n| n >= 1));
    }

    #[test]
    fn pool_smaller_than_k() {
        let pts = scalar_points(&[1.0, 2.0]);
        assert!(kmeans_vectors(&pts, &cfg(3)).is_err());
        assert!(kmeans_vectors(&pts, &cfg(0)).is_err());
    }

    #[test]
    fn lloyd_fixed_point_and_monotone_history() {
        let mut r = Rng::new(5);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let c = (i % 4) as f64 * 3.0;
                vec![c + r.normal(), c * 0.5 + r.normal(), r.normal()]
            })
            .collect();
        let c = kmeans_vectors(&pts, &cfg(4)).unwrap();
        for (p, &a) in pts.iter().zip(&c.assignment) {
            let (best, d) = nearest(p, &c.centers);
            assert!(best == a || sq_dist(p, &c.centers[a]) == d);
        }
        for w in c.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
        }
    }

    fn bank_of(means: &[f64]) -> PrototypeBank {
        PrototypeBank::new(
            means
                .iter()
                .map(|&m| Prototype {
                    id: 0,
                    center: FeatureMap::zeros(1, 1, 1),
                    scale_mean: m,
                    scale_std: 1.0,
                    member_count: 1,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn scale_lookup() {
        let bank = bank_of(&[340.0, 64.0, 181.0, 105.0]);
        let means: Vec<f64> = bank.prototypes.iter().map(|p| p.scale_mean).collect();
        assert_eq!(means, vec![64.0, 105.0, 181.0, 340.0]);
        assert_eq!(nearest_prototype(&bank, 100.0).scale_mean, 105.0);
        assert_eq!(nearest_prototype(&bank, 181.0).scale_mean, 181.0);
        assert_eq!(nearest_prototype(&bank, 84.5).scale_mean, 64.0);
        assert_eq!(nearest_prototype(&bank, 84.5).id, nearest_prototype(&bank, 84.5).id);
    }

    #[test]
    fn bank_round_trip_and_truncation() {
        let w = gen_world(&WorldConfig::default()).unwrap();
        let mut r = Rng::new(2);
        let props: Vec<_> = (0..30)
            .map(|_| {
                let s = w.sample_scale(&mut r);
                gen_pedestrian(&w, s, &mut r).unwrap()
            })
            .collect();
        let bank = kmeans(&build_pool(&props).unwrap(), &cfg(3)).unwrap();
        let total: usize = bank.prototypes.iter().map(|p| p.member_count).sum();
        assert_eq!(total, 30);
        let bytes = encode_bank(&bank).unwrap();
        assert_eq!(decode_bank(&bytes).unwrap(), bank);
        assert!(matches!(
            decode_bank(&bytes[..bytes.len() - 3]),
            Err(Error::Malformed { .. })
        ));
    }
}
