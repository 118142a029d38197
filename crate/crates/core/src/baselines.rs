//! Centralized comparison models: least-squares MF and pairwise BPR.
//!
//! Both keep one user matrix `U` and one item matrix `V` shared by all users.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{sample_negatives, sample_negatives_from, Dataset};
use crate::dmf::{epoch_rng, Result, TrainError};
use crate::scalar::{dot, squared_norm, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CentralParams<T> {
    pub k: usize,
    pub theta: T,
    pub lambda: T,
    pub epochs: usize,
    /// Negatives per positive for MF; BPR always draws one per positive.
    pub negatives: usize,
    pub seed: u64,
    #[serde(default)]
    pub neg_same_city: bool,
}

impl<T: Scalar> Default for CentralParams<T> {
    fn default() -> Self {
        CentralParams {
            k: 10,
            theta: T::lit(0.1),
            lambda: T::lit(0.1),
            epochs: 100,
            negatives: 3,
            seed: 42,
            neg_same_city: false,
        }
    }
}

impl<T: Scalar> CentralParams<T> {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(TrainError::InvalidHyperParams(msg.into()));
        if self.k == 0 {
            return fail("K must be at least 1");
        }
        if !(self.theta > T::zero()) {
            return fail("theta must be positive");
        }
        if !(self.lambda >= T::zero()) {
            return fail("lambda must be nonnegative");
        }
        if self.epochs == 0 {
            return fail("at least one epoch is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CentralModel<T> {
    pub k: usize,
    /// `I x K`, row-major.
    pub u: Vec<T>,
    /// `J x K`, row-major.
    pub v: Vec<T>,
}

impl<T: Scalar> CentralModel<T> {
    pub fn zeros(n_users: usize, n_items: usize, k: usize) -> Self {
        CentralModel { k, u: vec![T::zero(); n_users * k], v: vec![T::zero(); n_items * k] }
    }

    /// Uniform `[0, 1/sqrt(K)]` initialization seeded by `seed`.
    pub fn random(n_users: usize, n_items: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (k as f64).sqrt();
        let mut draw = |len: usize| -> Vec<T> { (0..len).map(|_| T::lit(rng.gen::<f64>() * scale)).collect() };
        let u = draw(n_users * k);
        let v = draw(n_items * k);
        CentralModel { k, u, v }
    }

    pub fn n_users(&self) -> usize {
        self.u.len() / self.k
    }

    pub fn n_items(&self) -> usize {
        self.v.len() / self.k
    }

    pub fn user(&self, i: usize) -> &[T] {
        &self.u[i * self.k..(i + 1) * self.k]
    }

    pub fn item(&self, j: usize) -> &[T] {
        &self.v[j * self.k..(j + 1) * self.k]
    }

    pub fn score(&self, i: usize, j: usize) -> T {
        dot(self.user(i), self.item(j))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Gradients of `c/2 (r - u.v)^2 + lambda/2 (|u|^2 + |v|^2)` w.r.t. `u` and `v`.
pub fn mf_gradients<T: Scalar>(u: &[T], v: &[T], r: T, confidence: T, lambda: T) -> (Vec<T>, Vec<T>) {
    let e = confidence * (r - dot(u, v));
    let gu = u.iter().zip(v).map(|(&u, &v)| -e * v + lambda * u).collect();
    let gv = u.iter().zip(v).map(|(&u, &v)| -e * u + lambda * v).collect();
    (gu, gv)
}

pub fn mf_objective<T: Scalar>(u: &[T], v: &[T], r: T, confidence: T, lambda: T) -> T {
    let half = T::lit(0.5);
    let e = r - dot(u, v);
    half * confidence * e * e + half * lambda * (squared_norm(u) + squared_norm(v))
}

/// Gradients of `-ln sigmoid(u.(v+ - v-)) + lambda/2 (|u|^2 + |v+|^2 + |v-|^2)`
/// w.r.t. `u`, `v+` and `v-`.
pub fn bpr_gradients<T: Scalar>(u: &[T], pos: &[T], neg: &[T], lambda: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let diff: Vec<T> = pos.iter().zip(neg).map(|(&a, &b)| a - b).collect();
    let x = dot(u, &diff);
    // 1 - sigmoid(x)
    let s = T::one() / (T::one() + x.exp());
    let gu = diff.iter().zip(u).map(|(&d, &u)| -s * d + lambda * u).collect();
    let gp = u.iter().zip(pos).map(|(&u, &p)| -s * u + lambda * p).collect();
    let gn = u.iter().zip(neg).map(|(&u, &n)| s * u + lambda * n).collect();
    (gu, gp, gn)
}

pub fn bpr_objective<T: Scalar>(u: &[T], pos: &[T], neg: &[T], lambda: T) -> T {
    let diff: Vec<T> = pos.iter().zip(neg).map(|(&a, &b)| a - b).collect();
    let x = dot(u, &diff);
    // -ln sigmoid(x) = ln(1 + e^-x)
    (-x).exp().ln_1p() + T::lit(0.5) * lambda * (squared_norm(u) + squared_norm(pos) + squared_norm(neg))
}

fn descend<T: Scalar>(row: &mut [T], grad: &[T], theta: T) -> bool {
    let mut finite = true;
    for (x, &g) in row.iter_mut().zip(grad) {
        *x -= theta * g;
        finite &= x.is_finite();
    }
    finite
}

struct Sampler {
    rated: Vec<Vec<usize>>,
    city_items: Option<Vec<Vec<usize>>>,
    user_city: Vec<usize>,
    n_items: usize,
}

impl Sampler {
    fn new(dataset: &Dataset, same_city: bool) -> Self {
        Sampler {
            rated: dataset.train_items_by_user(),
            city_items: same_city.then(|| dataset.items_by_city()),
            user_city: dataset.user_city.clone(),
            n_items: dataset.n_items(),
        }
    }

    fn draw<R: Rng>(&self, user: usize, m: usize, rng: &mut R) -> Vec<crate::dataio::NegativeSample> {
        match &self.city_items {
            Some(by_city) => sample_negatives_from(m, &self.rated[user], &by_city[self.user_city[user]], rng),
            None => sample_negatives(m, &self.rated[user], self.n_items, rng),
        }
    }
}

/// Trains least-squares MF with the same negative-sampling scheme as the
/// decentralized model.
pub fn mf_train<T: Scalar>(dataset: &Dataset, hp: &CentralParams<T>) -> Result<CentralModel<T>> {
    hp.validate()?;
    let mut model = CentralModel::random(dataset.n_users(), dataset.n_items(), hp.k, hp.seed);
    mf_train_from(&mut model, dataset, hp)?;
    Ok(model)
}

/// Continues MF training from an existing model for `hp.epochs` epochs.
pub fn mf_train_from<T: Scalar>(model: &mut CentralModel<T>, dataset: &Dataset, hp: &CentralParams<T>) -> Result<()> {
    (1..=hp.epochs).try_for_each(|epoch| mf_epoch(model, dataset, hp, epoch).map(drop))
}

/// One MF pass over a shuffle seeded by `(hp.seed, epoch)`; returns the
/// number of samples processed.
pub fn mf_epoch<T: Scalar>(model: &mut CentralModel<T>, dataset: &Dataset, hp: &CentralParams<T>, epoch: usize) -> Result<usize> {
    let sampler = Sampler::new(dataset, hp.neg_same_city);
    let k = hp.k;
    let mut rng = epoch_rng(hp.seed, epoch);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(&mut rng);
    let mut processed = 0;
    for idx in order {
        let obs = dataset.train[idx];
        let negs = sampler.draw(obs.user, hp.negatives, &mut rng);
        let samples = std::iter::once((obs.item, obs.value, obs.confidence))
            .chain(negs.iter().map(|n| (n.item, n.rating, n.confidence)));
        for (j, r, c) in samples {
            let i = obs.user;
            let (gu, gv) = mf_gradients(model.user(i), model.item(j), T::lit(r), T::lit(c), hp.lambda);
            let ok_u = descend(&mut model.u[i * k..(i + 1) * k], &gu, hp.theta);
            let ok_v = descend(&mut model.v[j * k..(j + 1) * k], &gv, hp.theta);
            if !(ok_u && ok_v) {
                return Err(TrainError::NonFiniteUpdate { user: i, item: j, target: "central factors" });
            }
            processed += 1;
        }
    }
    Ok(processed)
}

/// Trains BPR with one uniformly drawn unrated item per observed rating.
pub fn bpr_train<T: Scalar>(dataset: &Dataset, hp: &CentralParams<T>) -> Result<CentralModel<T>> {
    hp.validate()?;
    let mut model = CentralModel::random(dataset.n_users(), dataset.n_items(), hp.k, hp.seed);
    bpr_train_from(&mut model, dataset, hp)?;
    Ok(model)
}

pub fn bpr_train_from<T: Scalar>(model: &mut CentralModel<T>, dataset: &Dataset, hp: &CentralParams<T>) -> Result<()> {
    (1..=hp.epochs).try_for_each(|epoch| bpr_epoch(model, dataset, hp, epoch).map(drop))
}

/// One BPR pass over a shuffle seeded by `(hp.seed, epoch)`; returns the
/// number of (positive, negative) pairs processed.
pub fn bpr_epoch<T: Scalar>(model: &mut CentralModel<T>, dataset: &Dataset, hp: &CentralParams<T>, epoch: usize) -> Result<usize> {
    let sampler = Sampler::new(dataset, hp.neg_same_city);
    let k = hp.k;
    let mut rng = epoch_rng(hp.seed, epoch);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(&mut rng);
    let mut processed = 0;
    for idx in order {
        let obs = dataset.train[idx];
        let (i, jp) = (obs.user, obs.item);
        let Some(neg) = sampler.draw(i, 1, &mut rng).first().copied() else {
            continue;
        };
        let jn = neg.item;
        let (gu, gp, gn) = bpr_gradients(model.user(i), model.item(jp), model.item(jn), hp.lambda);
        let ok_u = descend(&mut model.u[i * k..(i + 1) * k], &gu, hp.theta);
        let ok_p = descend(&mut model.v[jp * k..(jp + 1) * k], &gp, hp.theta);
        let ok_n = descend(&mut model.v[jn * k..(jn + 1) * k], &gn, hp.theta);
        if !(ok_u && ok_p && ok_n) {
            return Err(TrainError::NonFiniteUpdate { user: i, item: jp, target: "central factors" });
        }
        processed += 1;
    }
    Ok(processed)
}

/// Mean of `(r - u.v)^2 / 2 + lambda/2 (|u|^2 + |v|^2)` over `ratings`.
pub fn central_loss<T: Scalar>(model: &CentralModel<T>, ratings: &[crate::dataio::Rating], lambda: T) -> f64 {
    if ratings.is_empty() {
        return 0.0;
    }
    let total: f64 = ratings
        .iter()
        .map(|r| mf_objective(model.user(r.user), model.item(r.item), T::lit(r.value), T::lit(r.confidence), lambda).as_f64())
        .sum();
    total / ratings.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{IdIndex, Rating};

    fn dataset(n_users: usize, n_items: usize, train: Vec<Rating>) -> Dataset {
        Dataset {
            users: IdIndex::from((0..n_users).map(|i| format!("u{i}")).collect::<Vec<_>>()),
            items: IdIndex::from((0..n_items).map(|j| format!("p{j}")).collect::<Vec<_>>()),
            cities: IdIndex::from(vec!["A".to_string()]),
            user_city: vec![0; n_users],
            item_city: vec![0; n_items],
            train,
            test: Vec::new(),
        }
    }

    #[test]
    fn zero_model_with_zero_ratings_stays_zero() {
        let d = dataset(2, 3, vec![Rating::observed(0, 1, 0.0), Rating::observed(1, 2, 0.0)]);
        let hp = CentralParams::<f64> { k: 3, epochs: 5, ..CentralParams::default() };
        let mut model = CentralModel::zeros(2, 3, 3);
        mf_train_from(&mut model, &d, &hp).unwrap();
        assert_eq!(model, CentralModel::zeros(2, 3, 3));
    }

    #[test]
    fn bpr_degenerate_pair_leaves_user_direction_zero() {
        let u = [0.3f64, -0.2];
        let v = [0.5, 0.5];
        let (gu, _, _) = bpr_gradients(&u, &v, &v, 0.0);
        assert_eq!(gu, vec![0.0, 0.0]);
        // x = 0 gives a sigmoid weight of exactly one half.
        let (_, gp, gn) = bpr_gradients(&u, &v, &v, 0.0);
        assert_eq!(gp, vec![-0.15, 0.1]);
        assert_eq!(gn, vec![0.15, -0.1]);
    }

    #[test]
    fn bpr_ranks_liked_item_first() {
        let d = dataset(2, 2, vec![Rating::observed(0, 0, 1.0), Rating::observed(1, 1, 1.0)]);
        let hp = CentralParams::<f64> { k: 4, epochs: 200, seed: 11, ..CentralParams::default() };
        let model = bpr_train(&d, &hp).unwrap();
        assert!(model.score(0, 0) > model.score(0, 1));
        assert!(model.score(1, 1) > model.score(1, 0));
    }

    #[test]
    fn mf_is_deterministic_and_learns() {
        let d = dataset(3, 6, (0..3).flat_map(|i| [Rating::observed(i, i, 1.0), Rating::observed(i, i + 3, 1.0)]).collect());
        let hp = CentralParams::<f64> { k: 4, epochs: 60, ..CentralParams::default() };
        let a = mf_train(&d, &hp).unwrap();
        assert_eq!(a, mf_train(&d, &hp).unwrap());
        for i in 0..3 {
            let liked = a.score(i, i);
            let others = (0..6).filter(|&j| j != i && j != i + 3).map(|j| a.score(i, j));
            assert!(others.into_iter().all(|s| s < liked));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let d = dataset(1, 2, vec![Rating::observed(0, 0, 1.0)]);
        assert!(mf_train(&d, &CentralParams::<f64> { k: 0, ..CentralParams::default() }).is_err());
        assert!(bpr_train(&d, &CentralParams::<f64> { lambda: -0.1, ..CentralParams::default() }).is_err());
    }
}
