use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Uniform random equal-size split.
    Iid,
    /// Per-client label proportions drawn from `Dirichlet(alpha * 1_l)`.
    Dirichlet(f64),
    /// Client `i` holds only label `i mod l`.
    SingleLabel,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Iid => f.write_str("iid"),
            Scheme::Dirichlet(a) => write!(f, "dirichlet({a})"),
            Scheme::SingleLabel => f.write_str("single_label"),
        }
    }
}

/// Disjoint per-client index lists into a shared dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub scheme: Scheme,
    pub shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn client_count(&self) -> usize {
        self.shards.len()
    }
}

/// Splits `ds` into `n_clients` equal-size shards of `ds.len() / n_clients` samples.
pub fn partition<R: Rng + ?Sized>(ds: &Dataset, n_clients: usize, scheme: Scheme, rng: &mut R) -> Result<Partition> {
    if n_clients < 2 {
        return Err(Error::invalid(format!("need at least 2 clients, got {n_clients}")));
    }
    let per_client = ds.len() / n_clients;
    if per_client == 0 {
        return Err(Error::invalid(format!(
            "{} samples cannot be split across {n_clients} clients",
            ds.len()
        )));
    }
    let shards = match scheme {
        Scheme::Iid => {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(rng);
            order
                .chunks(per_client)
                .take(n_clients)
                .map(<[usize]>::to_vec)
                .collect()
        }
        Scheme::Dirichlet(alpha) => dirichlet_shards(ds, n_clients, per_client, alpha, rng)?,
        Scheme::SingleLabel => single_label_shards(ds, n_clients, per_client, rng)?,
    };
    Ok(Partition { scheme, shards })
}

fn label_queues<R: Rng + ?Sized>(ds: &Dataset, rng: &mut R) -> Vec<Vec<usize>> {
    let mut queues = vec![Vec::new(); ds.label_count()];
    for (i, &y) in ds.labels().iter().enumerate() {
        queues[y].push(i);
    }
    for q in &mut queues {
        q.shuffle(rng);
    }
    queues
}

/// Draws a Dirichlet(alpha) vector through normalized Gamma variates. When every
/// variate underflows (tiny alpha) the mass goes to one uniformly chosen label.
pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, l: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut p: Vec<f64> = (0..l).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        p = vec![0.0; l];
        p[rng.random_range(0..l)] = 1.0;
    }
    p
}

/// Largest-remainder rounding of `total * proportions`.
pub(crate) fn quotas(proportions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut q: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = q.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    // stable sort keeps ties in label order
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        q[k] += 1;
    }
    q
}

fn dirichlet_shards<R: Rng + ?Sized>(
    ds: &Dataset,
    n_clients: usize,
    per_client: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha {alpha} must be positive")));
    }
    let l = ds.label_count();
    let mut queues = label_queues(ds, rng);
    let mut shards = Vec::with_capacity(n_clients);
    let mut deficits = Vec::with_capacity(n_clients);
    for _ in 0..n_clients {
        let props = sample_dirichlet(alpha, l, rng);
        let mut shard = Vec::with_capacity(per_client);
        for (k, want) in quotas(&props, per_client).into_iter().enumerate() {
            let take = want.min(queues[k].len());
            let at = queues[k].len() - take;
            shard.extend(queues[k].drain(at..));
        }
        deficits.push(per_client - shard.len());
        shards.push(shard);
    }
    // Backfill shortfalls from whatever is left, in random order.
    let mut leftover: Vec<usize> = queues.into_iter().flatten().collect();
    leftover.shuffle(rng);
    for (shard, deficit) in shards.iter_mut().zip(deficits) {
        let at = leftover.len() - deficit;
        shard.extend(leftover.drain(at..));
    }
    Ok(shards)
}

fn single_label_shards<R: Rng + ?Sized>(
    ds: &Dataset,
    n_clients: usize,
    per_client: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let l = ds.label_count();
    let mut queues = label_queues(ds, rng);
    let mut shards = Vec::with_capacity(n_clients);
    for i in 0..n_clients {
        let q = &mut queues[i % l];
        if q.len() < per_client {
            return Err(Error::invalid(format!(
                "label {} has {} samples left, client {i} needs {per_client}",
                i % l,
                q.len()
            )));
        }
        let at = q.len() - per_client;
        shards.push(q.drain(at..).collect());
    }
    Ok(shards)
}
