//! Geographic user adjacency graph and the random-walk quantities defined on it.
//!
//! Users only ever connect to users of their own (dominant) city. Within a
//! city every user proposes its `N` nearest peers by great-circle distance,
//! and proposals are accepted greedily in ascending distance order while both
//! endpoints have spare capacity, so no node exceeds degree `N`.

use std::collections::{btree_map, BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{dominant, CheckinRecord, IdIndex};
use crate::scalar::Scalar;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("gaussian mapping needs sigma > 0, got {0}")]
    InvalidSigma(f64),
    #[error("degree cap must be at least 1")]
    InvalidDegreeCap,
    #[error("user {0} has no neighbors")]
    IsolatedUser(usize),
    #[error("user {k} is not a direct neighbor of user {i}")]
    NotANeighbor { i: usize, k: usize },
    #[error("walk length must be at least 1")]
    ZeroLength,
    #[error("user `{0}` has no check-ins to locate it")]
    MissingLocation(String),
    #[error("unsupported graph schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Great-circle distance in kilometres between two `(lat, lon)` points in degrees.
pub fn haversine<T: Scalar>(a: (T, T), b: (T, T)) -> T {
    let two = T::lit(2.0);
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) / two).sin();
    let s_lon = ((lon2 - lon1) / two).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    // Rounding can push h a hair past 1 for antipodal points.
    two * T::lit(EARTH_RADIUS_KM) * h.min(T::one()).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLocation {
    pub user: usize,
    pub lat: f64,
    pub lon: f64,
    pub city: String,
}

/// Locates each indexed user at the centroid of its check-ins in its dominant
/// city (most check-ins, ties to the lexicographically smaller name).
/// Records of users absent from `users` are ignored.
pub fn derive_locations(records: &[CheckinRecord], users: &IdIndex) -> Result<Vec<UserLocation>> {
    let mut tally: Vec<BTreeMap<&str, u64>> = vec![BTreeMap::new(); users.len()];
    for r in records {
        if let Some(i) = users.get(&r.user_id) {
            *tally[i].entry(&r.city).or_default() += u64::from(r.count);
        }
    }
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); users.len()];
    let cities: Vec<&str> = tally.iter().map(dominant).collect();
    for r in records {
        if let Some(i) = users.get(&r.user_id) {
            if r.city == cities[i] {
                let s = &mut sums[i];
                s.0 += r.lat;
                s.1 += r.lon;
                s.2 += 1;
            }
        }
    }
    sums.iter()
        .zip(&cities)
        .enumerate()
        .map(|(user, (&(lat, lon, n), city))| {
            if n == 0 {
                return Err(GraphError::MissingLocation(users.id(user).to_string()));
            }
            Ok(UserLocation { user, lat: lat / n as f64, lon: lon / n as f64, city: city.to_string() })
        })
        .collect()
}

/// Maps a distance in kilometres to an edge weight in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistanceMapping {
    /// Every edge weighs 1.
    #[default]
    Constant,
    /// `exp(-d^2 / (2 sigma^2))`.
    Gaussian { sigma_km: f64 },
}

impl DistanceMapping {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistanceMapping::Gaussian { sigma_km } if !(sigma_km > 0.0) => Err(GraphError::InvalidSigma(sigma_km)),
            _ => Ok(()),
        }
    }

    pub fn weight<T: Scalar>(&self, distance_km: T) -> T {
        match *self {
            DistanceMapping::Constant => T::one(),
            DistanceMapping::Gaussian { sigma_km } => {
                let sigma = T::lit(sigma_km);
                (-(distance_km * distance_km) / (T::lit(2.0) * sigma * sigma)).exp()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DistanceMapping::Constant)
    }
}

/// How a rating event's gradient travels through the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WalkMode {
    /// Every member of every BFS layer `N^1(i) .. N^D(i)` receives it.
    #[default]
    DeterministicLayers,
    /// One random walk of `D` steps; the node reached at step `d` receives it.
    Sampled,
}

/// Whether neighbor updates carry the `|N^d(i)|` amplification factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WalkScale {
    #[default]
    Layered,
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkPolicy {
    /// Maximum walk distance `D`; zero disables communication.
    pub max_distance: usize,
    #[serde(default)]
    pub mode: WalkMode,
    #[serde(default)]
    pub scale: WalkScale,
}

impl Default for WalkPolicy {
    fn default() -> Self {
        WalkPolicy { max_distance: 2, mode: WalkMode::default(), scale: WalkScale::default() }
    }
}

/// Symmetric, degree-capped, same-city user graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph<T> {
    max_degree: usize,
    mapping: DistanceMapping,
    cities: Vec<String>,
    /// Per-user neighbor lists sorted by neighbor index.
    adj: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> AdjacencyGraph<T> {
    /// Builds the graph from per-user locations indexed `0..I`.
    pub fn build(locations: &[UserLocation], max_degree: usize, mapping: DistanceMapping) -> Result<Self> {
        if max_degree == 0 {
            return Err(GraphError::InvalidDegreeCap);
        }
        mapping.validate()?;
        for (idx, loc) in locations.iter().enumerate() {
            if loc.user != idx {
                return Err(GraphError::Invalid(format!("location {idx} belongs to user {}", loc.user)));
            }
        }
        let pos: Vec<(T, T)> = locations.iter().map(|l| (T::lit(l.lat), T::lit(l.lon))).collect();

        let mut by_city: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for loc in locations {
            by_city.entry(&loc.city).or_default().push(loc.user);
        }

        // Every user proposes its N nearest same-city peers.
        let mut proposals: Vec<(T, usize, usize)> = Vec::new();
        for members in by_city.values() {
            for &i in members {
                let mut near: Vec<(T, usize)> = members
                    .iter()
                    .filter(|&&k| k != i)
                    .map(|&k| (haversine(pos[i], pos[k]), k))
                    .collect();
                near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
                proposals.extend(near.into_iter().take(max_degree).map(|(d, k)| (d, i.min(k), i.max(k))));
            }
        }
        proposals.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        proposals.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);

        let mut adj: Vec<Vec<(usize, T)>> = vec![Vec::new(); locations.len()];
        for (d, a, b) in proposals {
            if adj[a].len() >= max_degree || adj[b].len() >= max_degree {
                continue;
            }
            let w = mapping.weight(d);
            if w > T::zero() {
                adj[a].push((b, w));
                adj[b].push((a, w));
            }
        }
        for list in &mut adj {
            list.sort_by_key(|&(k, _)| k);
        }
        Ok(AdjacencyGraph {
            max_degree,
            mapping,
            cities: locations.iter().map(|l| l.city.clone()).collect(),
            adj,
        })
    }

    pub fn n_users(&self) -> usize {
        self.adj.len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn mapping(&self) -> DistanceMapping {
        self.mapping
    }

    pub fn city(&self, i: usize) -> &str {
        &self.cities[i]
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, T)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn weight(&self, i: usize, k: usize) -> T {
        self.adj[i]
            .binary_search_by_key(&k, |&(n, _)| n)
            .map_or(T::zero(), |pos| self.adj[i][pos].1)
    }

    /// Undirected edges `(i, j, w)` with `i < j`, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&(k, _)| k > i).map(move |&(k, w)| (i, k, w)))
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// BFS layers `N^1(i) .. N^depth(i)`: nodes at shortest-path distance
    /// exactly `d`, each sorted ascending. Always returns `depth` entries.
    pub fn neighbor_layers(&self, i: usize, depth: usize) -> Vec<Vec<usize>> {
        let mut layers = vec![Vec::new(); depth];
        if depth == 0 {
            return layers;
        }
        let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
        dist.insert(i, 0);
        let mut queue = VecDeque::from([i]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[&v];
            if dv == depth {
                continue;
            }
            for &(k, _) in &self.adj[v] {
                if let btree_map::Entry::Vacant(e) = dist.entry(k) {
                    e.insert(dv + 1);
                    layers[dv].push(k);
                    queue.push_back(k);
                }
            }
        }
        for layer in &mut layers {
            layer.sort_unstable();
        }
        layers
    }

    /// One-step selection probability `w_ik / sum_k' w_ik'`.
    pub fn transition_prob(&self, i: usize, k: usize) -> Result<T> {
        let total = self.out_weight(i)?;
        let w = self.weight(i, k);
        if w == T::zero() {
            return Err(GraphError::NotANeighbor { i, k });
        }
        Ok(w / total)
    }

    /// Distribution of a `steps`-long random walk from `i`, as a sparse map.
    pub fn walk_distribution(&self, i: usize, steps: usize) -> Result<BTreeMap<usize, T>> {
        if steps == 0 {
            return Err(GraphError::ZeroLength);
        }
        self.out_weight(i)?;
        let mut current = BTreeMap::from([(i, T::one())]);
        for _ in 0..steps {
            let mut next: BTreeMap<usize, T> = BTreeMap::new();
            for (&v, &mass) in &current {
                let total: T = self.adj[v].iter().map(|&(_, w)| w).sum();
                for &(k, w) in &self.adj[v] {
                    *next.entry(k).or_insert_with(T::zero) += mass * w / total;
                }
            }
            current = next;
        }
        Ok(current)
    }

    /// Probability that a `steps`-long random walk from `i` ends at `target`.
    pub fn walk_prob(&self, i: usize, target: usize, steps: usize) -> Result<T> {
        Ok(self.walk_distribution(i, steps)?.get(&target).copied().unwrap_or_else(T::zero))
    }

    /// Draws one random-walk step from `i`; `None` when `i` is isolated.
    pub fn sample_step<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Option<usize> {
        let list = &self.adj[i];
        let total: T = list.iter().map(|&(_, w)| w).sum();
        if list.is_empty() || total <= T::zero() {
            return None;
        }
        let mut target = T::lit(rng.gen::<f64>()) * total;
        for &(k, w) in list {
            if target < w {
                return Some(k);
            }
            target -= w;
        }
        list.last().map(|&(k, _)| k)
    }

    fn out_weight(&self, i: usize) -> Result<T> {
        let total: T = self.adj[i].iter().map(|&(_, w)| w).sum();
        if self.adj[i].is_empty() || total <= T::zero() {
            return Err(GraphError::IsolatedUser(i));
        }
        Ok(total)
    }

    /// Builds a graph from explicit edges. Cities default to one shared label.
    pub fn from_edges(
        n_users: usize,
        max_degree: usize,
        mapping: DistanceMapping,
        cities: Option<Vec<String>>,
        edges: &[(usize, usize, T)],
    ) -> Result<Self> {
        let cities = cities.unwrap_or_else(|| vec![String::from("_"); n_users]);
        if cities.len() != n_users {
            return Err(GraphError::Invalid("city list does not match user count".into()));
        }
        let mut adj: Vec<Vec<(usize, T)>> = vec![Vec::new(); n_users];
        for &(a, b, w) in edges {
            if a >= n_users || b >= n_users || a == b {
                return Err(GraphError::Invalid(format!("bad edge ({a}, {b})")));
            }
            if !(w > T::zero() && w <= T::one()) {
                return Err(GraphError::Invalid(format!("edge ({a}, {b}) weight {w} outside (0, 1]")));
            }
            if cities[a] != cities[b] {
                return Err(GraphError::Invalid(format!("edge ({a}, {b}) crosses cities")));
            }
            if adj[a].iter().any(|&(k, _)| k == b) {
                return Err(GraphError::Invalid(format!("duplicate edge ({a}, {b})")));
            }
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        if adj.iter().any(|l| l.len() > max_degree) {
            return Err(GraphError::Invalid(format!("degree cap {max_degree} exceeded")));
        }
        for list in &mut adj {
            list.sort_by_key(|&(k, _)| k);
        }
        Ok(AdjacencyGraph { max_degree, mapping, cities, adj })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            schema_version: GRAPH_SCHEMA_VERSION,
            n_users: self.n_users(),
            max_degree: self.max_degree,
            mapping: self.mapping,
            cities: self.cities.clone(),
            edges: self.edges().map(|(i, j, w)| EdgeRecord { i, j, w: w.as_f64() }).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        if file.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::SchemaVersion(file.schema_version));
        }
        let edges: Vec<(usize, usize, T)> = file.edges.iter().map(|e| (e.i, e.j, T::lit(e.w))).collect();
        Self::from_edges(file.n_users, file.max_degree, file.mapping, Some(file.cities), &edges)
    }
}

/// Precomputed BFS layers for every user up to a fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTable {
    depth: usize,
    layers: Vec<Vec<Vec<usize>>>,
}

impl LayerTable {
    pub fn new<T: Scalar>(graph: &AdjacencyGraph<T>, depth: usize) -> Self {
        let layers = (0..graph.n_users()).map(|i| graph.neighbor_layers(i, depth)).collect();
        LayerTable { depth, layers }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `N^d(i)` for `1 <= d <= depth`.
    pub fn layer(&self, i: usize, d: usize) -> &[usize] {
        &self.layers[i][d - 1]
    }

    /// `sum_{d <= depth} |N^d(i)|`.
    pub fn reach(&self, i: usize) -> usize {
        self.layers[i].iter().map(Vec::len).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    i: usize,
    j: usize,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    schema_version: u32,
    n_users: usize,
    max_degree: usize,
    mapping: DistanceMapping,
    /// Dominant city of every user, by user index.
    cities: Vec<String>,
    edges: Vec<EdgeRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loc(user: usize, lat: f64, lon: f64, city: &str) -> UserLocation {
        UserLocation { user, lat, lon, city: city.into() }
    }

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> AdjacencyGraph<f64> {
        AdjacencyGraph::from_edges(n, 8, DistanceMapping::Constant, None, edges).unwrap()
    }

    #[test]
    fn haversine_reference_points() {
        assert_eq!(haversine((10.0f64, 20.0), (10.0, 20.0)), 0.0);
        // Quarter great circle: pi/2 * R.
        let quarter = std::f64::consts::FRAC_PI_2 * EARTH_RADIUS_KM;
        assert_abs_diff_eq!(haversine((0.0f64, 0.0), (0.0, 90.0)), quarter, epsilon = 0.01);
        assert_abs_diff_eq!(quarter, 10007.543, epsilon = 0.01);
        // 0.1 degree of meridian arc.
        let arc = EARTH_RADIUS_KM * 0.1 * std::f64::consts::PI / 180.0;
        assert_abs_diff_eq!(haversine((40.7f64, -74.0), (40.8, -74.0)), arc, epsilon = 0.01);
        assert_abs_diff_eq!(arc, 11.119, epsilon = 0.01);
        assert_abs_diff_eq!(haversine((40.7f32, -74.0), (40.8, -74.0)), 11.119f32, epsilon = 0.05);
    }

    #[test]
    fn locations_use_dominant_city_centroid() {
        let mut users = IdIndex::new();
        users.intern("a");
        users.intern("b");
        let r = |u: &str, lat: f64, lon: f64, city: &str| CheckinRecord {
            user_id: u.into(),
            item_id: "x".into(),
            count: 1,
            lat,
            lon,
            city: city.into(),
            timestamp: None,
        };
        let rows = [
            r("a", 1.0, 1.0, "NYC"),
            r("a", 2.0, 2.0, "NYC"),
            r("a", 3.0, 6.0, "NYC"),
            r("a", 50.0, 50.0, "LA"),
            r("b", 5.0, 7.0, "SF"),
        ];
        let locs = derive_locations(&rows, &users).unwrap();
        assert_eq!(locs[0], loc(0, 2.0, 3.0, "NYC"));
        assert_eq!(locs[1], loc(1, 5.0, 7.0, "SF"));

        let tie = [r("a", 0.0, 0.0, "NYC"), r("a", 0.0, 0.0, "NYC"), r("a", 1.0, 1.0, "LA"), r("a", 1.0, 1.0, "LA"), r("b", 0.0, 0.0, "X")];
        assert_eq!(derive_locations(&tie, &users).unwrap()[0].city, "LA");
    }

    #[test]
    fn missing_location_is_error() {
        let mut users = IdIndex::new();
        users.intern("ghost");
        assert!(matches!(derive_locations(&[], &users), Err(GraphError::MissingLocation(_))));
    }

    #[test]
    fn build_caps_degree_and_respects_cities() {
        let locs: Vec<UserLocation> = (0..10)
            .map(|k| loc(k, 40.0 + 0.01 * k as f64, -74.0, if k < 6 { "A" } else { "B" }))
            .collect();
        let g = AdjacencyGraph::<f64>::build(&locs, 2, DistanceMapping::Constant).unwrap();
        assert!((0..10).all(|i| g.degree(i) <= 2));
        assert!(g.edges().all(|(i, j, w)| g.city(i) == g.city(j) && w == 1.0));
        assert!(g.n_edges() > 0);
    }

    #[test]
    fn different_cities_never_connect() {
        let locs = [loc(0, 10.0, 10.0, "A"), loc(1, 10.0, 10.0, "B")];
        let g = AdjacencyGraph::<f64>::build(&locs, 2, DistanceMapping::Constant).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn greedy_insertion_prefers_short_edges() {
        // 0-1 closest, then 1-2; cap 1 means 1-2 is rejected.
        let locs = [loc(0, 0.0, 0.0, "A"), loc(1, 0.0, 0.01, "A"), loc(2, 0.0, 0.025, "A")];
        let g = AdjacencyGraph::<f64>::build(&locs, 1, DistanceMapping::Constant).unwrap();
        assert_eq!(g.edges().map(|(i, j, _)| (i, j)).collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn gaussian_weights_and_sigma_validation() {
        let locs = [loc(0, 0.0, 0.0, "A"), loc(1, 0.0, 0.1, "A")];
        let g = AdjacencyGraph::<f64>::build(&locs, 2, DistanceMapping::Gaussian { sigma_km: 10.0 }).unwrap();
        let d: f64 = haversine((0.0, 0.0), (0.0, 0.1));
        assert_abs_diff_eq!(g.weight(0, 1), (-d * d / 200.0).exp(), epsilon = 1e-15);
        assert!(matches!(
            AdjacencyGraph::<f64>::build(&locs, 2, DistanceMapping::Gaussian { sigma_km: 0.0 }),
            Err(GraphError::InvalidSigma(_))
        ));
    }

    #[test]
    fn layers_follow_shortest_paths() {
        let chain = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(chain.neighbor_layers(0, 2), vec![vec![1], vec![2]]);
        let isolated = graph(2, &[]);
        assert_eq!(isolated.neighbor_layers(0, 3), vec![Vec::<usize>::new(); 3]);
        let triangle = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]);
        assert_eq!(triangle.neighbor_layers(0, 2), vec![vec![1, 2], vec![]]);
        assert!(chain.neighbor_layers(0, 0).is_empty());
    }

    #[test]
    fn transition_probabilities() {
        let g = graph(3, &[(0, 1, 0.5), (0, 2, 0.5)]);
        assert_eq!(g.transition_prob(0, 1).unwrap(), 0.5);
        let g = graph(3, &[(0, 1, 0.25), (0, 2, 0.75)]);
        assert_eq!(g.transition_prob(0, 1).unwrap(), 0.25);
        let g = graph(2, &[(0, 1, 0.3)]);
        assert_eq!(g.transition_prob(0, 1).unwrap(), 1.0);
        let g = graph(3, &[(0, 1, 1.0)]);
        assert!(matches!(g.transition_prob(2, 0), Err(GraphError::IsolatedUser(2))));
        assert!(matches!(g.transition_prob(1, 2), Err(GraphError::NotANeighbor { .. })));
    }

    #[test]
    fn walk_prob_on_chain() {
        let chain = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(chain.walk_prob(0, 2, 2).unwrap(), 0.5);
        assert_eq!(chain.walk_prob(0, 1, 1).unwrap(), chain.transition_prob(0, 1).unwrap());
        assert!(matches!(chain.walk_prob(0, 1, 0), Err(GraphError::ZeroLength)));
        let row: f64 = chain.walk_distribution(0, 5).unwrap().values().sum();
        assert_abs_diff_eq!(row, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_steps_follow_weights() {
        let g = graph(3, &[(0, 1, 0.25), (0, 2, 0.75)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hits = (0..20_000).filter(|_| g.sample_step(0, &mut rng) == Some(1)).count();
        let p = hits as f64 / 20_000.0;
        // 4 sigma of a Bernoulli(0.25) mean over 20k draws.
        assert!((p - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / 20_000.0).sqrt(), "p = {p}");
        assert_eq!(graph(2, &[]).sample_step(0, &mut rng), None);
    }

    #[test]
    fn json_round_trip() {
        let locs: Vec<UserLocation> = (0..6).map(|k| loc(k, 1.0 + 0.02 * k as f64, 2.0, "A")).collect();
        let g = AdjacencyGraph::<f64>::build(&locs, 2, DistanceMapping::Constant).unwrap();
        let text = g.to_json().unwrap();
        assert_eq!(AdjacencyGraph::<f64>::from_json(&text).unwrap(), g);
        assert!(text.contains("\"i\": 0"));
    }

    #[test]
    fn from_edges_rejects_cross_city_and_overflow() {
        let cities = Some(vec!["A".into(), "B".into()]);
        assert!(AdjacencyGraph::from_edges(2, 2, DistanceMapping::Constant, cities, &[(0, 1, 1.0f64)]).is_err());
        assert!(AdjacencyGraph::from_edges(3, 1, DistanceMapping::Constant, None, &[(0, 1, 1.0f64), (0, 2, 1.0)]).is_err());
    }

    #[test]
    fn layer_table_reach() {
        let chain = graph(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let table = LayerTable::new(&chain, 2);
        assert_eq!(table.reach(0), 2);
        assert_eq!(table.reach(1), 3);
        assert_eq!(table.layer(1, 2), &[3]);
    }
}
