//! Federated readout training over exchanged sufficient statistics.
//!
//! Each client reduces its local features to `Γ_u = Y_u Φ_uᵀ` and
//! `Ω_u = Φ_u Φ_uᵀ`. These sums are all a ridge solve needs, so the server
//! recovers the centralized readout from `Σ Γ_u` and `Σ Ω_u`. The ridge term
//! is added once, at the server, so repeated uploads never inflate it.
//!
//! Clients upload their full current statistics each time they take part in a
//! round and the server replaces their earlier contribution. Aggregation
//! always sums in ascending client id order, which makes the aggregate
//! bitwise independent of upload order.
//!
//! The sums are kept in compensated form (`gamma + gamma_lo`,
//! `omega + omega_lo`), so the rounded `gamma` and `omega` do not depend on
//! how the data was batched or split across clients: a streamed federated
//! run and a one-shot centralized fit solve bitwise the same system.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::esn::{ridge_solve, ReadoutWeights};
use crate::par::{try_for_each_mut, Execution};
use crate::sums;
use crate::{derive_seed, seeded_stream};

const STATS_MAGIC: &[u8; 4] = b"FRCS";
const STATS_VERSION: u16 = 2;
const STATS_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 8;
const PLAN_DOMAIN: u64 = 0x706c_616e;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientStats {
    pub client_id: u32,
    /// `classes × features`
    pub gamma: DMatrix<f64>,
    /// `features × features`, without any ridge term.
    pub omega: DMatrix<f64>,
    /// Rounding error of `gamma`: the exact sum is `gamma + gamma_lo` to about 2^-104.
    pub gamma_lo: DMatrix<f64>,
    /// Rounding error of `omega`.
    pub omega_lo: DMatrix<f64>,
    pub sample_count: u64,
}

pub fn client_stats(phi_u: &DMatrix<f64>, y_u: &DMatrix<f64>, client_id: u32) -> Result<ClientStats> {
    if phi_u.ncols() != y_u.ncols() {
        return Err(Error::Input(format!(
            "client {client_id}: phi has {} samples but y has {}",
            phi_u.ncols(),
            y_u.ncols()
        )));
    }
    let (gamma, gamma_lo) = sums::cross(y_u, phi_u);
    let (omega, omega_lo) = sums::gram(phi_u);
    Ok(ClientStats {
        client_id,
        gamma,
        omega,
        gamma_lo,
        omega_lo,
        sample_count: phi_u.ncols() as u64,
    })
}

/// Adds a new batch to existing statistics.
pub fn incremental_update(prev: &ClientStats, new_phi: &DMatrix<f64>, new_y: &DMatrix<f64>) -> Result<ClientStats> {
    if new_phi.nrows() != prev.features() || new_y.nrows() != prev.classes() {
        return Err(Error::Input(format!(
            "client {}: batch is {}+{} rows, stats expect {} features and {} classes",
            prev.client_id,
            new_phi.nrows(),
            new_y.nrows(),
            prev.features(),
            prev.classes()
        )));
    }
    if new_phi.ncols() == 0 && new_y.ncols() == 0 {
        return Ok(prev.clone());
    }
    let batch = client_stats(new_phi, new_y, prev.client_id)?;
    let mut next = prev.clone();
    sums::add_into(&mut next.gamma, &mut next.gamma_lo, &batch.gamma, &batch.gamma_lo);
    sums::add_into(&mut next.omega, &mut next.omega_lo, &batch.omega, &batch.omega_lo);
    next.sample_count += batch.sample_count;
    Ok(next)
}

impl ClientStats {
    pub fn empty(client_id: u32, classes: usize, features: usize) -> Self {
        Self {
            client_id,
            gamma: DMatrix::zeros(classes, features),
            omega: DMatrix::zeros(features, features),
            gamma_lo: DMatrix::zeros(classes, features),
            omega_lo: DMatrix::zeros(features, features),
            sample_count: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn features(&self) -> usize {
        self.gamma.ncols()
    }

    /// Copy with `beta_u` added to the diagonal of `omega`, for the variant
    /// where each client regularizes locally.
    pub fn with_local_ridge(&self, beta_u: f64) -> Self {
        let mut out = self.clone();
        for i in 0..out.features() {
            let (h, l) = (out.omega[(i, i)], out.omega_lo[(i, i)]);
            (out.omega[(i, i)], out.omega_lo[(i, i)]) = sums::add(h, l, beta_u, 0.0);
        }
        out
    }

    fn check_shape(&self) -> Result<()> {
        let f = self.features();
        if self.gamma_lo.shape() != self.gamma.shape() || self.omega_lo.shape() != self.omega.shape() {
            return Err(Error::Protocol {
                client_id: self.client_id,
                reason: "compensation terms do not match the statistics".into(),
            });
        }
        if self.omega.nrows() != f || self.omega.ncols() != f {
            return Err(Error::Protocol {
                client_id: self.client_id,
                reason: format!(
                    "omega is {}x{} but gamma has {f} features",
                    self.omega.nrows(),
                    self.omega.ncols()
                ),
            });
        }
        Ok(())
    }

    /// Little-endian wire encoding: header, then gamma, omega, gamma_lo and
    /// omega_lo, each row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, f) = (self.classes(), self.features());
        let mut out = Vec::with_capacity(STATS_HEADER_LEN + 16 * (c * f + f * f));
        out.extend_from_slice(STATS_MAGIC);
        out.extend_from_slice(&STATS_VERSION.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&(f as u32).to_le_bytes());
        out.extend_from_slice(&self.sample_count.to_le_bytes());
        for m in [&self.gamma, &self.omega, &self.gamma_lo, &self.omega_lo] {
            for i in 0..m.nrows() {
                for v in m.row(i).iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::format("client stats", reason);
        if bytes.len() < STATS_HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != STATS_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != STATS_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let client_id = u32_at(6);
        let classes = u32_at(10) as usize;
        let features = u32_at(14) as usize;
        let sample_count = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
        let values = classes
            .checked_mul(features)
            .and_then(|g| features.checked_mul(features).and_then(|o| o.checked_add(g)))
            .ok_or_else(|| bad("dimensions overflow".into()))?;
        let expected = values
            .checked_mul(16)
            .and_then(|b| b.checked_add(STATS_HEADER_LEN))
            .ok_or_else(|| bad("dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(bad(format!(
                "expected {expected} bytes for {classes}x{features}, got {}",
                bytes.len()
            )));
        }
        let mut floats = bytes[STATS_HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let gamma = DMatrix::from_row_iterator(classes, features, floats.by_ref().take(classes * features));
        let omega = DMatrix::from_row_iterator(features, features, floats.by_ref().take(features * features));
        let gamma_lo = DMatrix::from_row_iterator(classes, features, floats.by_ref().take(classes * features));
        let omega_lo = DMatrix::from_row_iterator(features, features, floats);
        Ok(Self {
            client_id,
            gamma,
            omega,
            gamma_lo,
            omega_lo,
            sample_count,
        })
    }
}

/// Server-side sum of client statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStats {
    pub gamma: DMatrix<f64>,
    /// Sum of raw client moments, before regularization.
    pub omega: DMatrix<f64>,
    pub gamma_lo: DMatrix<f64>,
    pub omega_lo: DMatrix<f64>,
    pub total_samples: u64,
    /// Contributing client ids and the version of their upload last applied.
    pub contributors: BTreeMap<u32, u64>,
}

impl AggregateStats {
    pub fn classes(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn features(&self) -> usize {
        self.gamma.ncols()
    }
}

fn sum_sorted<'a>(
    mut items: Vec<(&'a ClientStats, u64)>,
) -> Result<AggregateStats> {
    items.sort_by_key(|(s, _)| s.client_id);
    let (first, _) = *items
        .first()
        .ok_or_else(|| Error::Input("aggregate needs at least one client".into()))?;
    let (classes, features) = (first.classes(), first.features());
    let mut gamma = DMatrix::zeros(classes, features);
    let mut omega = DMatrix::zeros(features, features);
    let mut gamma_lo = DMatrix::zeros(classes, features);
    let mut omega_lo = DMatrix::zeros(features, features);
    let mut total_samples = 0u64;
    let mut contributors = BTreeMap::new();
    for (stats, version) in items {
        stats.check_shape()?;
        if stats.classes() != classes || stats.features() != features {
            return Err(Error::Protocol {
                client_id: stats.client_id,
                reason: format!(
                    "stats are {}x{}, expected {classes}x{features}",
                    stats.classes(),
                    stats.features()
                ),
            });
        }
        if contributors.insert(stats.client_id, version).is_some() {
            return Err(Error::Protocol {
                client_id: stats.client_id,
                reason: "client appears more than once".into(),
            });
        }
        sums::add_into(&mut gamma, &mut gamma_lo, &stats.gamma, &stats.gamma_lo);
        sums::add_into(&mut omega, &mut omega_lo, &stats.omega, &stats.omega_lo);
        total_samples += stats.sample_count;
    }
    Ok(AggregateStats {
        gamma,
        omega,
        gamma_lo,
        omega_lo,
        total_samples,
        contributors,
    })
}

/// Sums client statistics in ascending client id order.
pub fn aggregate(stats: &[ClientStats]) -> Result<AggregateStats> {
    sum_sorted(stats.iter().map(|s| (s, 0)).collect())
}

/// `Θ = Γ (Ω + βI)⁻¹`
pub fn solve_global(agg: &AggregateStats, beta: f64) -> Result<ReadoutWeights> {
    ridge_solve(&agg.gamma, &agg.omega, beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round_index: usize,
    pub participants: BTreeSet<u32>,
    pub fraction: f64,
}

/// Number of clients taking part in each round.
pub fn participants_per_round(total_clients: usize, fraction: f64) -> usize {
    ((fraction * total_clients as f64).round() as usize).clamp(1, total_clients)
}

/// Samples the participants of one round, deterministically in `(seed, round_index)`.
pub fn plan_round(round_index: usize, total_clients: usize, fraction: f64, seed: u64) -> Result<RoundPlan> {
    if total_clients == 0 {
        return Err(Error::Config("at least one client is required".into()));
    }
    if total_clients > u32::MAX as usize {
        return Err(Error::Config(format!("{total_clients} clients exceed the id range")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} must lie in (0, 1]")));
    }
    let count = participants_per_round(total_clients, fraction);
    let mut rng = seeded_stream(derive_seed(seed, PLAN_DOMAIN), round_index as u64);
    let participants = index::sample(&mut rng, total_clients, count)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    Ok(RoundPlan {
        round_index,
        participants,
        fraction,
    })
}

/// A block of local training data: features, one-hot targets and the
/// caller's identifiers for the samples it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub phi: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub sample_ids: Vec<usize>,
}

/// A client's local state: cumulative statistics plus data that has arrived
/// but not been folded in yet.
#[derive(Debug, Clone)]
pub struct Client {
    stats: ClientStats,
    pending: VecDeque<Shard>,
    ingested: Vec<usize>,
    global: Option<Arc<ReadoutWeights>>,
}

impl Client {
    pub fn new(client_id: u32, classes: usize, features: usize) -> Self {
        Self {
            stats: ClientStats::empty(client_id, classes, features),
            pending: VecDeque::new(),
            ingested: Vec::new(),
            global: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.stats.client_id
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    /// Sample ids folded into the statistics so far, in arrival order.
    pub fn ingested(&self) -> &[usize] {
        &self.ingested
    }

    pub fn pending_shards(&self) -> usize {
        self.pending.len()
    }

    /// Latest readout broadcast by the server.
    pub fn global_model(&self) -> Option<&ReadoutWeights> {
        self.global.as_deref()
    }

    /// Queues newly arrived local data.
    pub fn receive(&mut self, shard: Shard) {
        self.pending.push_back(shard);
    }

    /// Folds every pending shard into the statistics, oldest first.
    pub fn ingest_pending(&mut self) -> Result<()> {
        while let Some(shard) = self.pending.pop_front() {
            self.stats = incremental_update(&self.stats, &shard.phi, &shard.y)?;
            self.ingested.extend_from_slice(&shard.sample_ids);
        }
        Ok(())
    }
}

/// Where the ridge term enters the solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularization {
    /// `βI` added once by the server.
    #[default]
    Server,
    /// Each upload carries `β/clients · I`; the server adds nothing.
    ClientSide,
}

/// Server state: the last upload of every client that has taken part.
#[derive(Debug, Clone)]
pub struct Server {
    classes: usize,
    features: usize,
    total_clients: usize,
    beta: f64,
    regularization: Regularization,
    uploads: BTreeMap<u32, (ClientStats, u64)>,
}

impl Server {
    pub fn new(classes: usize, features: usize, total_clients: usize, beta: f64, regularization: Regularization) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta {beta} must be finite and nonnegative")));
        }
        if total_clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        Ok(Self {
            classes,
            features,
            total_clients,
            beta,
            regularization,
            uploads: BTreeMap::new(),
        })
    }

    /// Replaces the sender's previous contribution with `upload`.
    pub fn receive(&mut self, upload: &[u8]) -> Result<()> {
        let stats = ClientStats::from_bytes(upload)?;
        if stats.classes() != self.classes || stats.features() != self.features {
            return Err(Error::Protocol {
                client_id: stats.client_id,
                reason: format!(
                    "stats are {}x{}, server expects {}x{}",
                    stats.classes(),
                    stats.features(),
                    self.classes,
                    self.features
                ),
            });
        }
        let version = self.uploads.get(&stats.client_id).map_or(1, |(_, v)| v + 1);
        self.uploads.insert(stats.client_id, (stats, version));
        Ok(())
    }

    pub fn aggregate(&self) -> Result<AggregateStats> {
        sum_sorted(self.uploads.values().map(|(s, v)| (s, *v)).collect())
    }

    pub fn solve(&self) -> Result<ReadoutWeights> {
        let agg = self.aggregate()?;
        let beta = match self.regularization {
            Regularization::Server => self.beta,
            Regularization::ClientSide => 0.0,
        };
        solve_global(&agg, beta)
    }

    fn encode(&self, stats: &ClientStats) -> Vec<u8> {
        match self.regularization {
            Regularization::Server => stats.to_bytes(),
            Regularization::ClientSide => stats
                .with_local_ridge(self.beta / self.total_clients as f64)
                .to_bytes(),
        }
    }
}

/// One federated round: participants fold in their pending data and upload
/// their full statistics, the server replaces their contributions, re-sums
/// and solves, and the new readout is broadcast to every client.
pub fn run_round(
    server: &mut Server,
    clients: &mut [Client],
    plan: &RoundPlan,
    exec: Execution,
) -> Result<(AggregateStats, ReadoutWeights)> {
    let known: BTreeSet<u32> = clients.iter().map(Client::id).collect();
    if let Some(missing) = plan.participants.iter().find(|id| !known.contains(id)) {
        return Err(Error::Protocol {
            client_id: *missing,
            reason: "planned participant does not exist".into(),
        });
    }

    try_for_each_mut(exec, clients, |c| {
        if plan.participants.contains(&c.id()) {
            c.ingest_pending()?;
        }
        Ok(())
    })?;

    let mut participants: Vec<&Client> = clients
        .iter()
        .filter(|c| plan.participants.contains(&c.id()))
        .collect();
    participants.sort_by_key(|c| c.id());
    for client in participants {
        let upload = server.encode(client.stats());
        server.receive(&upload)?;
    }

    let agg = server.aggregate()?;
    let readout = Arc::new(server.solve()?);
    for c in clients.iter_mut() {
        c.global = Some(Arc::clone(&readout));
    }
    Ok((agg, (*readout).clone()))
}
