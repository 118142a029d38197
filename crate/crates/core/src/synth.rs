//! Seeded synthetic check-in corpora with planted, geographically clustered
//! preference groups.
//!
//! Each city holds `G` groups laid out around the city centre. Users and items
//! of a group are scattered (Gaussian) around the group's centre, so nearby
//! users tend to share tastes. A user checks in to each item of its own group
//! with probability `p_in` and to each other item of its city with `p_out`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::CheckinRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub cities: usize,
    pub users_per_city: usize,
    pub items_per_city: usize,
    pub groups: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
    /// Distance of group centres from the city centre, in degrees.
    #[serde(default = "default_group_offset")]
    pub group_offset_deg: f64,
    /// Standard deviation of member positions around their group centre, in degrees.
    #[serde(default = "default_scatter")]
    pub scatter_deg: f64,
}

fn default_group_offset() -> f64 {
    0.05
}

fn default_scatter() -> f64 {
    0.01
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cities: 2,
            users_per_city: 100,
            items_per_city: 50,
            groups: 2,
            p_in: 0.3,
            p_out: 0.02,
            seed: 7,
            group_offset_deg: default_group_offset(),
            scatter_deg: default_scatter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synthetic corpus config: {0}")]
pub struct SynthError(String);

/// Generated corpus plus the ground truth used to build it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<CheckinRecord>,
    /// `(city, group)` of every user, in `user_id` generation order.
    pub user_groups: Vec<(usize, usize)>,
    pub item_groups: Vec<(usize, usize)>,
}

pub fn city_name(c: usize) -> String {
    format!("city{c:03}")
}

pub fn user_name(c: usize, u: usize) -> String {
    format!("c{c:03}_u{u:04}")
}

pub fn item_name(c: usize, v: usize) -> String {
    format!("c{c:03}_p{v:04}")
}

fn city_centre(c: usize) -> (f64, f64) {
    // A 40 x N lattice of well separated centres.
    (-60.0 + 3.0 * (c % 40) as f64, -170.0 + 3.0 * (c / 40) as f64)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    let fail = |m: &str| Err(SynthError(m.into()));
    if cfg.cities == 0 || cfg.users_per_city == 0 || cfg.items_per_city == 0 || cfg.groups == 0 {
        return fail("cities, users, items and groups must be positive");
    }
    if cfg.cities > 40 * 113 {
        return fail("too many cities");
    }
    if !(0.0..=1.0).contains(&cfg.p_in) || !(0.0..=1.0).contains(&cfg.p_out) || cfg.p_out >= cfg.p_in {
        return fail("need 0 <= p_out < p_in <= 1");
    }
    if !(cfg.scatter_deg > 0.0) || !(cfg.group_offset_deg >= 0.0) {
        return fail("scatter must be positive and group offset nonnegative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, cfg.scatter_deg).map_err(|e| SynthError(e.to_string()))?;

    let mut corpus = SynthCorpus { records: Vec::new(), user_groups: Vec::new(), item_groups: Vec::new() };
    for c in 0..cfg.cities {
        let (clat, clon) = city_centre(c);
        let group_centre = |g: usize| {
            let angle = std::f64::consts::TAU * g as f64 / cfg.groups as f64;
            (clat + cfg.group_offset_deg * angle.sin(), clon + cfg.group_offset_deg * angle.cos())
        };
        let items: Vec<(usize, f64, f64)> = (0..cfg.items_per_city)
            .map(|v| {
                let g = v % cfg.groups;
                let (glat, glon) = group_centre(g);
                (g, glat + jitter.sample(&mut rng), glon + jitter.sample(&mut rng))
            })
            .collect();
        corpus.item_groups.extend(items.iter().map(|&(g, _, _)| (c, g)));

        for u in 0..cfg.users_per_city {
            let g = u % cfg.groups;
            corpus.user_groups.push((c, g));
            let mut chosen: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(_, &(ig, _, _))| rng.gen_bool(if ig == g { cfg.p_in } else { cfg.p_out }))
                .map(|(v, _)| v)
                .collect();
            if chosen.is_empty() {
                // Every user needs at least one check-in to be located.
                let own: Vec<usize> = (0..items.len()).filter(|&v| items[v].0 == g).collect();
                let pool = if own.is_empty() { (0..items.len()).collect() } else { own };
                chosen.push(pool[rng.gen_range(0..pool.len())]);
            }
            for v in chosen {
                let (_, lat, lon) = items[v];
                corpus.records.push(CheckinRecord {
                    user_id: user_name(c, u),
                    item_id: item_name(c, v),
                    count: rng.gen_range(1..=3),
                    lat: lat.clamp(-90.0, 90.0),
                    lon: lon.clamp(-180.0, 180.0),
                    city: city_name(c),
                    timestamp: None,
                });
            }
        }
    }
    Ok(corpus)
}

/// Writes records as CSV with the standard `user_id,item_id,count,lat,lon,city` header.
pub fn write_checkins<W: Write>(records: &[CheckinRecord], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["user_id", "item_id", "count", "lat", "lon", "city"])?;
    for r in records {
        writer.write_record([
            r.user_id.as_str(),
            r.item_id.as_str(),
            &r.count.to_string(),
            &r.lat.to_string(),
            &r.lon.to_string(),
            r.city.as_str(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Three users, five items, one city, four training ratings.
#[cfg(test)]
pub(crate) fn tiny_dataset() -> crate::dataio::Dataset {
    use crate::dataio::{Dataset, IdIndex, Rating};
    Dataset {
        users: IdIndex::from(vec!["a".to_string(), "b".into(), "c".into()]),
        items: IdIndex::from((0..5).map(|j| format!("p{j}")).collect::<Vec<_>>()),
        cities: IdIndex::from(vec!["X".to_string()]),
        user_city: vec![0; 3],
        item_city: vec![0; 5],
        train: vec![
            Rating::observed(0, 0, 1.0),
            Rating::observed(0, 1, 1.0),
            Rating::observed(1, 1, 1.0),
            Rating::observed(2, 4, 1.0),
        ],
        test: Vec::new(),
    }
}
