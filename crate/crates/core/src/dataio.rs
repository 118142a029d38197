//! Check-in ingestion, rating normalization, train/test splitting and
//! unobserved-rating sampling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag written into every serialized [`Dataset`].
pub const DATASET_SCHEMA_VERSION: u32 = 1;

const REQUIRED_COLUMNS: [&str; 6] = ["user_id", "item_id", "count", "lat", "lon", "city"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate split: {train} train / {test} test ratings")]
    DegenerateSplit { train: usize, test: usize },
    #[error("train fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("unsupported dataset schema version {0}")]
    SchemaVersion(u32),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One user-item interaction with the coordinates and city it happened in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckinRecord {
    pub user_id: String,
    pub item_id: String,
    pub count: u32,
    pub lat: f64,
    pub lon: f64,
    pub city: String,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Drop malformed rows (collecting them in [`Parsed::skipped`]) instead of aborting.
    pub skip_malformed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Parsed {
    pub records: Vec<CheckinRecord>,
    pub skipped: Vec<SkippedRow>,
}

struct Columns {
    user_id: usize,
    item_id: usize,
    count: usize,
    lat: usize,
    lon: usize,
    city: usize,
    timestamp: Option<usize>,
    width: usize,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let mut found = [0usize; 6];
        for (slot, name) in found.iter_mut().zip(REQUIRED_COLUMNS) {
            *slot = find(name).ok_or_else(|| DataError::MalformedRow {
                line: 1,
                reason: format!("header is missing column `{name}`"),
            })?;
        }
        Ok(Columns {
            user_id: found[0],
            item_id: found[1],
            count: found[2],
            lat: found[3],
            lon: found[4],
            city: found[5],
            timestamp: find("timestamp"),
            width: header.len(),
        })
    }

    fn record(&self, row: &csv::StringRecord) -> std::result::Result<CheckinRecord, String> {
        if row.len() != self.width {
            return Err(format!("expected {} fields, found {}", self.width, row.len()));
        }
        let user_id = row[self.user_id].to_string();
        let item_id = row[self.item_id].to_string();
        if user_id.is_empty() || item_id.is_empty() {
            return Err("empty user_id or item_id".into());
        }
        let count: u32 = row[self.count]
            .parse()
            .map_err(|_| format!("count `{}` is not a nonnegative integer", &row[self.count]))?;
        if count < 1 {
            return Err("count must be at least 1".into());
        }
        let coord = |idx: usize, name: &str, bound: f64| -> std::result::Result<f64, String> {
            let v: f64 = row[idx]
                .parse()
                .map_err(|_| format!("{name} `{}` is not numeric", &row[idx]))?;
            if !v.is_finite() || v.abs() > bound {
                return Err(format!("{name} {v} outside [-{bound}, {bound}]"));
            }
            Ok(v)
        };
        let lat = coord(self.lat, "lat", 90.0)?;
        let lon = coord(self.lon, "lon", 180.0)?;
        let city = row[self.city].to_string();
        if city.is_empty() {
            return Err("empty city".into());
        }
        let timestamp = match self.timestamp.map(|idx| &row[idx]) {
            None | Some("") => None,
            Some(raw) => Some(
                raw.parse()
                    .map_err(|_| format!("timestamp `{raw}` is not an integer"))?,
            ),
        };
        Ok(CheckinRecord { user_id, item_id, count, lat, lon, city, timestamp })
    }
}

/// Parses UTF-8 CSV check-ins with a `user_id,item_id,count,lat,lon,city[,timestamp]`
/// header. Columns are located by header name, so their order is free.
pub fn parse_checkins<R: Read>(source: R, options: ParseOptions) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(DataError::EmptyInput);
    }
    let columns = Columns::from_header(&header)?;

    let mut parsed = Parsed::default();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match columns.record(&row) {
            Ok(record) => parsed.records.push(record),
            Err(reason) if options.skip_malformed => parsed.skipped.push(SkippedRow { line, reason }),
            Err(reason) => return Err(DataError::MalformedRow { line, reason }),
        }
    }
    Ok(parsed)
}

/// Iteratively removes users and items whose number of distinct partners falls
/// outside `[min_interactions, max_interactions]`, until nothing changes.
pub fn filter_interactions(
    records: &[CheckinRecord],
    min_interactions: Option<usize>,
    max_interactions: Option<usize>,
) -> Vec<CheckinRecord> {
    let lo = min_interactions.unwrap_or(0);
    let hi = max_interactions.unwrap_or(usize::MAX);
    let mut kept: Vec<CheckinRecord> = records.to_vec();
    loop {
        let mut user_items: HashMap<&str, HashSet<&str>> = HashMap::new();
        let mut item_users: HashMap<&str, HashSet<&str>> = HashMap::new();
        for r in &kept {
            user_items.entry(&r.user_id).or_default().insert(&r.item_id);
            item_users.entry(&r.item_id).or_default().insert(&r.user_id);
        }
        let ok = |n: usize| n >= lo && n <= hi;
        let keep: Vec<bool> = kept
            .iter()
            .map(|r| ok(user_items[r.user_id.as_str()].len()) && ok(item_users[r.item_id.as_str()].len()))
            .collect();
        if keep.iter().all(|&k| k) {
            return kept;
        }
        let mut flags = keep.into_iter();
        kept.retain(|_| flags.next().unwrap_or(false));
    }
}

/// Dense bijection between opaque string ids and `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, assigning the next free one on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.lookup.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_string());
        self.lookup.insert(id.to_string(), idx);
        idx
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl From<Vec<String>> for IdIndex {
    fn from(ids: Vec<String>) -> Self {
        let mut index = IdIndex::new();
        for id in &ids {
            index.intern(id);
        }
        index
    }
}

impl From<IdIndex> for Vec<String> {
    fn from(index: IdIndex) -> Self {
        index.ids
    }
}

/// An integer-indexed rating with its confidence weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub confidence: f64,
}

impl Rating {
    pub fn observed(user: usize, item: usize, value: f64) -> Self {
        Rating { user, item, value, confidence: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Any check-in becomes `r = 1.0`.
    #[default]
    Binary,
    /// Per-user counts scaled by the user's maximum count.
    Minmax,
}

/// Normalized ratings plus the index maps needed to translate back to ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: IdIndex,
    pub items: IdIndex,
    pub cities: IdIndex,
    /// Dominant city of each user (most check-ins, ties to the smaller name).
    pub user_city: Vec<usize>,
    /// Dominant city of each item, same rule.
    pub item_city: Vec<usize>,
    pub train: Vec<Rating>,
    pub test: Vec<Rating>,
}

/// Picks the key with the largest tally; ties go to the lexicographically
/// smallest key.
pub(crate) fn dominant<'a>(tally: &BTreeMap<&'a str, u64>) -> &'a str {
    let mut best: Option<(&str, u64)> = None;
    for (&city, &n) in tally {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((city, n));
        }
    }
    best.map(|(c, _)| c).unwrap_or("")
}

/// Builds a [`Dataset`] whose `train` holds every distinct (user, item) rating.
/// Duplicate rows collapse; in minmax mode their counts add up first.
pub fn normalize(records: &[CheckinRecord], mode: NormalizeMode) -> Result<Dataset> {
    if records.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut users = IdIndex::new();
    let mut items = IdIndex::new();
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut user_tally: Vec<BTreeMap<&str, u64>> = Vec::new();
    let mut item_tally: Vec<BTreeMap<&str, u64>> = Vec::new();
    for r in records {
        let i = users.intern(&r.user_id);
        let j = items.intern(&r.item_id);
        if i == user_tally.len() {
            user_tally.push(BTreeMap::new());
        }
        if j == item_tally.len() {
            item_tally.push(BTreeMap::new());
        }
        *counts.entry((i, j)).or_default() += u64::from(r.count);
        *user_tally[i].entry(&r.city).or_default() += u64::from(r.count);
        *item_tally[j].entry(&r.city).or_default() += u64::from(r.count);
    }

    let mut cities = IdIndex::new();
    let user_city: Vec<usize> = user_tally.iter().map(|t| cities.intern(dominant(t))).collect();
    let item_city: Vec<usize> = item_tally.iter().map(|t| cities.intern(dominant(t))).collect();

    let mut user_max = vec![0u64; users.len()];
    for (&(i, _), &c) in &counts {
        user_max[i] = user_max[i].max(c);
    }
    let train = counts
        .iter()
        .map(|(&(i, j), &c)| {
            let value = match mode {
                NormalizeMode::Binary => 1.0,
                NormalizeMode::Minmax => c as f64 / user_max[i] as f64,
            };
            Rating::observed(i, j, value)
        })
        .collect();

    Ok(Dataset { users, items, cities, user_city, item_city, train, test: Vec::new() })
}

/// Re-partitions every rating of `dataset` into train and test with a seeded
/// uniform permutation. The first `round(fraction * total)` permuted ratings
/// form the train set; both sides come back sorted by (user, item).
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let mut all: Vec<Rating> = dataset.train.iter().chain(&dataset.test).copied().collect();
    all.sort_by_key(|r| (r.user, r.item));
    let total = all.len();
    let n_train = (train_fraction * total as f64).round() as usize;
    if n_train == 0 || n_train == total {
        return Err(DataError::DegenerateSplit { train: n_train, test: total - n_train });
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let pick = |idx: &[usize]| {
        let mut part: Vec<Rating> = idx
            .iter()
            .map(|&k| Rating { confidence: 1.0, ..all[k] })
            .collect();
        part.sort_by_key(|r| (r.user, r.item));
        part
    };
    Ok(Dataset {
        train: pick(&order[..n_train]),
        test: pick(&order[n_train..]),
        ..dataset.clone()
    })
}

/// A sampled unobserved rating: treated as `r = 0` with confidence `1/m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativeSample {
    pub item: usize,
    pub rating: f64,
    pub confidence: f64,
}

/// Samples `min(m, J - |rated|)` distinct items uniformly without replacement
/// from `0..n_items` minus `rated` (which must be sorted ascending).
pub fn sample_negatives<R: Rng + ?Sized>(
    m: usize,
    rated: &[usize],
    n_items: usize,
    rng: &mut R,
) -> Vec<NegativeSample> {
    if m == 0 {
        return Vec::new();
    }
    debug_assert!(rated.windows(2).all(|w| w[0] < w[1]));
    let unrated = n_items.saturating_sub(rated.len());
    let confidence = 1.0 / m as f64;
    let wrap = |item| NegativeSample { item, rating: 0.0, confidence };
    if unrated <= m {
        return (0..n_items)
            .filter(|j| rated.binary_search(j).is_err())
            .map(wrap)
            .collect();
    }
    if unrated * 2 >= n_items {
        // Sparse user: rejection sampling touches O(m) items.
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m {
            let j = rng.gen_range(0..n_items);
            if rated.binary_search(&j).is_err() && !chosen.contains(&j) {
                chosen.push(j);
            }
        }
        chosen.into_iter().map(wrap).collect()
    } else {
        let pool: Vec<usize> = (0..n_items)
            .filter(|j| rated.binary_search(j).is_err())
            .collect();
        sample_from_pool(m, &pool, rng).into_iter().map(wrap).collect()
    }
}

/// Like [`sample_negatives`] but restricted to an explicit candidate pool
/// (sorted ascending), e.g. the items of the user's own city.
pub fn sample_negatives_from<R: Rng + ?Sized>(
    m: usize,
    rated: &[usize],
    candidates: &[usize],
    rng: &mut R,
) -> Vec<NegativeSample> {
    if m == 0 {
        return Vec::new();
    }
    let confidence = 1.0 / m as f64;
    let pool: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|j| rated.binary_search(j).is_err())
        .collect();
    let picked = if pool.len() <= m { pool } else { sample_from_pool(m, &pool, rng) };
    picked
        .into_iter()
        .map(|item| NegativeSample { item, rating: 0.0, confidence })
        .collect()
}

fn sample_from_pool<R: Rng + ?Sized>(m: usize, pool: &[usize], rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, pool.len(), m)
        .into_iter()
        .map(|k| pool[k])
        .collect()
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Sorted train items of every user.
    pub fn train_items_by_user(&self) -> Vec<Vec<usize>> {
        items_by_user(&self.train, self.n_users())
    }

    pub fn test_items_by_user(&self) -> Vec<Vec<usize>> {
        items_by_user(&self.test, self.n_users())
    }

    /// Sorted item ids belonging to each city.
    pub fn items_by_city(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cities.len()];
        for (j, &c) in self.item_city.iter().enumerate() {
            out[c].push(j);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DatasetFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        Dataset::try_from(file)
    }
}

fn items_by_user(ratings: &[Rating], n_users: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_users];
    for r in ratings {
        out[r.user].push(r.item);
    }
    for items in &mut out {
        items.sort_unstable();
        items.dedup();
    }
    out
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    schema_version: u32,
    users: IdIndex,
    items: IdIndex,
    cities: IdIndex,
    user_city: Vec<usize>,
    item_city: Vec<usize>,
    /// `[user, item, rating, confidence]`
    train: Vec<(usize, usize, f64, f64)>,
    /// `[user, item, rating]`
    test: Vec<(usize, usize, f64)>,
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        DatasetFile {
            schema_version: DATASET_SCHEMA_VERSION,
            users: d.users.clone(),
            items: d.items.clone(),
            cities: d.cities.clone(),
            user_city: d.user_city.clone(),
            item_city: d.item_city.clone(),
            train: d.train.iter().map(|r| (r.user, r.item, r.value, r.confidence)).collect(),
            test: d.test.iter().map(|r| (r.user, r.item, r.value)).collect(),
        }
    }
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = DataError;

    fn try_from(f: DatasetFile) -> Result<Self> {
        if f.schema_version != DATASET_SCHEMA_VERSION {
            return Err(DataError::SchemaVersion(f.schema_version));
        }
        let (n_users, n_items) = (f.users.len(), f.items.len());
        if f.user_city.len() != n_users || f.item_city.len() != n_items {
            return Err(DataError::Invalid("city maps do not match index sizes".into()));
        }
        if f.user_city.iter().chain(&f.item_city).any(|&c| c >= f.cities.len()) {
            return Err(DataError::Invalid("city index out of range".into()));
        }
        let check = |i: usize, j: usize, r: f64| {
            if i >= n_users || j >= n_items || !(0.0..=1.0).contains(&r) {
                Err(DataError::Invalid(format!("bad rating ({i}, {j}, {r})")))
            } else {
                Ok(())
            }
        };
        let mut train = Vec::with_capacity(f.train.len());
        for (i, j, r, c) in f.train {
            check(i, j, r)?;
            train.push(Rating { user: i, item: j, value: r, confidence: c });
        }
        let mut test = Vec::with_capacity(f.test.len());
        for (i, j, r) in f.test {
            check(i, j, r)?;
            test.push(Rating::observed(i, j, r));
        }
        Ok(Dataset {
            users: f.users,
            items: f.items,
            cities: f.cities,
            user_city: f.user_city,
            item_city: f.item_city,
            train,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, count: u32, city: &str) -> CheckinRecord {
        CheckinRecord {
            user_id: u.into(),
            item_id: i.into(),
            count,
            lat: 40.0,
            lon: -74.0,
            city: city.into(),
            timestamp: None,
        }
    }

    fn parse(text: &str) -> Result<Parsed> {
        parse_checkins(text.as_bytes(), ParseOptions::default())
    }

    #[test]
    fn parses_single_row() {
        let p = parse("user_id,item_id,count,lat,lon,city\nu1,p1,2,40.7,-74.0,NYC\n").unwrap();
        assert_eq!(p.records, vec![CheckinRecord {
            user_id: "u1".into(),
            item_id: "p1".into(),
            count: 2,
            lat: 40.7,
            lon: -74.0,
            city: "NYC".into(),
            timestamp: None,
        }]);
    }

    #[test]
    fn header_only_is_empty_list() {
        let p = parse("user_id,item_id,count,lat,lon,city\n").unwrap();
        assert!(p.records.is_empty());
    }

    #[test]
    fn empty_source_is_an_error() {
        assert!(matches!(parse(""), Err(DataError::EmptyInput)));
    }

    #[test]
    fn columns_located_by_name_and_crlf_accepted() {
        let p = parse("city,lon,lat,count,item_id,user_id,timestamp\r\nLA,-118.2,34.0,3,p9,u7,1500000000\r\n")
            .unwrap();
        let r = &p.records[0];
        assert_eq!((r.user_id.as_str(), r.item_id.as_str(), r.count), ("u7", "p9", 3));
        assert_eq!((r.lat, r.lon, r.city.as_str()), (34.0, -118.2, "LA"));
        assert_eq!(r.timestamp, Some(1_500_000_000));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "user_id,item_id,count,lat,lon,city\nu1,p1,1,1,1,A\nu1,p2,0,1,1,A\nu2,p1,1,north,1,A\nu3,p1,1,1\n";
        match parse(text) {
            Err(DataError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let p = parse_checkins(text.as_bytes(), ParseOptions { skip_malformed: true }).unwrap();
        assert_eq!(p.records.len(), 1);
        let lines: Vec<u64> = p.skipped.iter().map(|s| s.line).collect();
        assert_eq!(lines, vec![3, 4, 5]);
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let err = parse("user_id,item_id,count,lat,lon,city\nu1,p1,1,91,0,A\n").unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 2, .. }));
        let err = parse("user_id,item_id,count,lat,lon,city\nu1,p1,1,0,-180.5,A\n").unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn missing_column_rejected() {
        assert!(matches!(
            parse("user_id,item_id,count,lat,lon\nu1,p1,1,0,0\n"),
            Err(DataError::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn binary_normalization_collapses_duplicates() {
        let d = normalize(&[rec("u1", "p1", 5, "A"), rec("u1", "p1", 1, "A")], NormalizeMode::Binary).unwrap();
        assert_eq!(d.train, vec![Rating::observed(0, 0, 1.0)]);
        assert!(d.test.is_empty());
    }

    #[test]
    fn minmax_scales_by_user_max() {
        let d = normalize(&[rec("u1", "a", 1, "A"), rec("u1", "b", 4, "A")], NormalizeMode::Minmax).unwrap();
        let values: Vec<f64> = d.train.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.25, 1.0]);
        assert!(d.train.iter().all(|r| r.confidence == 1.0));
    }

    #[test]
    fn normalize_empty_is_error() {
        assert!(matches!(normalize(&[], NormalizeMode::Binary), Err(DataError::EmptyInput)));
    }

    #[test]
    fn dominant_city_breaks_ties_lexicographically() {
        let rows = [rec("u", "a", 1, "NYC"), rec("u", "b", 1, "NYC"), rec("u", "c", 1, "LA"), rec("u", "d", 1, "LA")];
        let d = normalize(&rows, NormalizeMode::Binary).unwrap();
        assert_eq!(d.cities.id(d.user_city[0]), "LA");
    }

    #[test]
    fn split_counts_and_partition() {
        let rows: Vec<CheckinRecord> = (0..100).map(|k| rec(&format!("u{}", k % 7), &format!("p{k}"), 1, "A")).collect();
        let d = normalize(&rows, NormalizeMode::Binary).unwrap();
        let s = split(&d, 0.9, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (90, 10));
        let mut pairs: Vec<_> = s.train.iter().chain(&s.test).map(|r| (r.user, r.item)).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 100);
        assert_eq!(split(&d, 0.9, 3).unwrap(), s);
        assert_ne!(split(&d, 0.9, 4).unwrap().test, s.test);
    }

    #[test]
    fn split_rejects_degenerate() {
        let d = normalize(&[rec("u", "a", 1, "A"), rec("u", "b", 1, "A")], NormalizeMode::Binary).unwrap();
        assert!(matches!(split(&d, 0.9, 0), Err(DataError::DegenerateSplit { .. })));
        assert!(matches!(split(&d, 1.0, 0), Err(DataError::InvalidFraction(_))));
    }

    #[test]
    fn negatives_forced_full_unrated_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = sample_negatives(3, &[1, 2], 5, &mut rng);
        let items: Vec<usize> = negs.iter().map(|n| n.item).collect();
        assert_eq!(items, vec![0, 3, 4]);
        assert!(negs.iter().all(|n| n.rating == 0.0 && n.confidence == 1.0 / 3.0));
    }

    #[test]
    fn negatives_empty_for_saturated_user() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_negatives(3, &[0, 1, 2, 3, 4], 5, &mut rng).is_empty());
    }

    #[test]
    fn negatives_from_dense_user_use_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rated: Vec<usize> = (0..90).collect();
        let negs = sample_negatives(4, &rated, 100, &mut rng);
        assert_eq!(negs.len(), 4);
        let mut items: Vec<usize> = negs.iter().map(|n| n.item).collect();
        assert!(items.iter().all(|&j| j >= 90));
        items.sort();
        items.dedup();
        assert_eq!(items.len(), 4);
    }

    #[test]
    fn negatives_restricted_to_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let negs = sample_negatives_from(2, &[3], &[1, 3, 5, 7], &mut rng);
        assert_eq!(negs.len(), 2);
        assert!(negs.iter().all(|n| [1, 5, 7].contains(&n.item)));
    }

    #[test]
    fn filter_reaches_fixpoint() {
        // u3 has a single item; dropping it leaves p3 with one user, which cascades.
        let rows = [
            rec("u1", "p1", 1, "A"),
            rec("u1", "p2", 1, "A"),
            rec("u2", "p1", 1, "A"),
            rec("u2", "p2", 1, "A"),
            rec("u3", "p3", 1, "A"),
            rec("u4", "p3", 1, "A"),
            rec("u4", "p1", 1, "A"),
        ];
        let kept = filter_interactions(&rows, Some(2), None);
        assert_eq!(kept.len(), 4);
        assert!(kept.iter().all(|r| r.user_id == "u1" || r.user_id == "u2"));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let rows: Vec<CheckinRecord> = (0..20).map(|k| rec(&format!("u{}", k % 3), &format!("p{}", k % 11), 1, "A")).collect();
        let d = split(&normalize(&rows, NormalizeMode::Binary).unwrap(), 0.7, 5).unwrap();
        let text = d.to_json().unwrap();
        let back = Dataset::from_json(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("\"schema_version\": 1"));
    }
}
