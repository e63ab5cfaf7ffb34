//! Federated training of one model by `n` clients and a server on top of
//! the two-party engine, with pairwise masks that hide each client's
//! share from the aggregator unless more than `k` clients collude.
//!
//! Every client trains its own shared copy of the global model with the
//! server as the other party. Client `i` then adds a mask `mu_i` to its
//! share and sends it to a randomly chosen aggregator `C*`, while the
//! server sums its own shares. The masks cancel, so the two sums are
//! shares of the sum of the client models.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::prg::{expand_batch, SEED_MASK};
use crate::ring::{mask, RingTensor};
use crate::runtime::RoundLedger;
use crate::sharing::AdditiveShare;
use crate::train::{train_shared, Model, PrivateConfig, TrainConfig};

/// Clients in a ring; client `i` shares a seed with each of its `k`
/// successors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlTopology {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    seeds: BTreeMap<(usize, usize), u128>,
}

impl FlTopology {
    /// Builds the topology and runs the simulated seed exchange.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 1 || k >= n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k < n, got n={n} k={k}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut seeds = BTreeMap::new();
        for i in 0..n {
            for j in 1..=k {
                seeds.insert((i, (i + j) % n), rng.gen::<u128>() & SEED_MASK);
            }
        }
        Ok(Self { n, k, seed, seeds })
    }

    /// Directed seed-sharing edges `(sender, receiver)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.seeds.keys().copied().collect()
    }

    pub fn from_config(cfg: &FlConfig) -> Result<Self> {
        Self::new(cfg.n, cfg.k, cfg.seed)
    }

    /// Aggregator for `round`, drawn from public randomness.
    pub fn aggregator(&self, round: u64) -> usize {
        let mut rng =
            ChaCha20Rng::seed_from_u64(self.seed ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng.gen_range(0..self.n)
    }
}

/// `len` mask words in `Z_2^bits` from one shared seed. Chunk `c` of
/// round `r` expands the seed XOR `(r << 64) | c`.
fn mask_stream(seed: u128, round: u64, len: usize, bits: u32) -> Result<Vec<u64>> {
    let chunks = len.div_ceil(4);
    let inputs: Vec<u128> = (0..chunks as u128)
        .map(|c| seed ^ (((round as u128) << 64) | c))
        .collect();
    let blocks = expand_batch(&inputs, 2)?;
    let m = mask(bits);
    let mut out = Vec::with_capacity(chunks * 4);
    for c in 0..chunks {
        for b in &blocks {
            out.push(b[c] as u64 & m);
            out.push((b[c] >> 64) as u64 & m);
        }
    }
    out.truncate(len);
    Ok(out)
}

/// Client `i`'s mask: streams of seeds it sent minus streams of seeds it
/// received.
pub fn client_mask(
    topo: &FlTopology,
    client: usize,
    round: u64,
    len: usize,
    bits: u32,
) -> Result<Vec<u64>> {
    if client >= topo.n {
        return Err(Error::InvalidArgument(format!("no client {client}")));
    }
    let m = mask(bits);
    let mut mu = vec![0u64; len];
    for (&(from, to), &seed) in &topo.seeds {
        let sign = if from == client {
            1u64
        } else if to == client {
            m
        } else {
            continue;
        };
        for (a, s) in mu.iter_mut().zip(mask_stream(seed, round, len, bits)?) {
            *a = a.wrapping_add(s.wrapping_mul(sign)) & m;
        }
    }
    Ok(mu)
}

fn param_len(model: &Model<AdditiveShare>) -> usize {
    model.layer_params().map(|p| p.w.len() + p.b.len()).sum()
}

fn model_bits(model: &Model<AdditiveShare>) -> Result<u32> {
    model
        .layer_params()
        .next()
        .map(|p| p.w.bits())
        .ok_or_else(|| Error::InvalidArgument("model has no parameters".into()))
}

/// Adds `words` elementwise to the concatenated parameters.
fn offset_model(model: &Model<AdditiveShare>, words: &[u64]) -> Result<Model<AdditiveShare>> {
    let mut at = 0;
    model.try_map(|t| {
        let w = &words[at..at + t.len()];
        at += t.len();
        let add = RingTensor::new(w.to_vec(), t.shape().to_vec(), t.bits())?;
        AdditiveShare::new(t.party, t.value.add(&add)?, t.precision)
    })
}

/// Shares the server's model once per client. The server keeps share 0 of
/// every copy; client `i` holds share 1 of copy `i`.
pub fn fl_init<R: Rng + ?Sized>(
    server_model: &Model<RingTensor>,
    topo: &FlTopology,
    precision: u32,
    rng: &mut R,
) -> Result<Vec<[Model<AdditiveShare>; 2]>> {
    (0..topo.n)
        .map(|_| server_model.share(precision, rng))
        .collect()
}

/// Client `i`'s share with its mask added.
pub fn fl_mask(
    topo: &FlTopology,
    client: usize,
    round: u64,
    share: &Model<AdditiveShare>,
) -> Result<Model<AdditiveShare>> {
    let mu = client_mask(topo, client, round, param_len(share), model_bits(share)?)?;
    offset_model(share, &mu)
}

fn sum_models(models: &[&Model<AdditiveShare>]) -> Result<Model<AdditiveShare>> {
    let (first, rest) = models
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("nothing to sum".into()))?;
    let mut acc = (*first).clone();
    for m in rest {
        let mut flat = m.layer_params().flat_map(|p| [&p.w, &p.b]);
        acc = acc.try_map(|t| {
            let o = flat
                .next()
                .ok_or_else(|| Error::InvalidArgument("models differ".into()))?;
            t.add(o)
        })?;
    }
    Ok(acc)
}

/// Sums the server's shares and the aggregator's sum of masked client
/// shares into a new shared model. A missing client share aborts the
/// round.
pub fn fl_aggregate(
    server: &[Model<AdditiveShare>],
    masked: &[Option<Model<AdditiveShare>>],
) -> Result<[Model<AdditiveShare>; 2]> {
    if server.len() != masked.len() {
        return Err(Error::FederatedAbort(format!(
            "{} server shares for {} clients",
            server.len(),
            masked.len()
        )));
    }
    let mut received = Vec::with_capacity(masked.len());
    for (i, m) in masked.iter().enumerate() {
        received.push(
            m.as_ref()
                .ok_or_else(|| Error::FederatedAbort(format!("client {i} sent no share")))?,
        );
    }
    let s: Vec<&Model<AdditiveShare>> = server.iter().collect();
    Ok([sum_models(&s)?, sum_models(&received)?])
}

/// Divides both shares by `n` locally.
pub fn fl_normalize(
    agg: &[Model<AdditiveShare>; 2],
    n: usize,
) -> Result<[Model<AdditiveShare>; 2]> {
    Ok([
        agg[0].try_map(|t| Ok(t.div_public(n as u64)))?,
        agg[1].try_map(|t| Ok(t.div_public(n as u64)))?,
    ])
}

/// Fresh per-client copies of the shared global model. The server draws
/// `r_i`, keeps `g_0 - r_i` and hands `r_i` to client `i`, who adds it to
/// the aggregator's `g_1`.
pub fn fl_redistribute<R: Rng + ?Sized>(
    global: &[Model<AdditiveShare>; 2],
    n: usize,
    rng: &mut R,
) -> Result<Vec<[Model<AdditiveShare>; 2]>> {
    let len = param_len(&global[0]);
    let bits = model_bits(&global[0])?;
    let m = mask(bits);
    (0..n)
        .map(|_| {
            let r: Vec<u64> = (0..len).map(|_| rng.gen::<u64>() & m).collect();
            let neg: Vec<u64> = r.iter().map(|v| v.wrapping_neg() & m).collect();
            Ok([
                offset_model(&global[0], &neg)?,
                offset_model(&global[1], &r)?,
            ])
        })
        .collect()
}

/// One client's plaintext fixed-point data.
#[derive(Debug, Clone)]
pub struct FlClient {
    pub x: RingTensor,
    pub y: RingTensor,
}

/// Shared per-client model copies between rounds.
#[derive(Debug, Clone)]
pub struct FlState {
    pub topology: FlTopology,
    pub copies: Vec<[Model<AdditiveShare>; 2]>,
    pub round: u64,
}

#[derive(Debug)]
pub struct FlRoundReport {
    pub round: u64,
    pub aggregator: usize,
    /// Party 0's ledger of each client's training session.
    pub training: Vec<RoundLedger>,
    /// Client shares sent to the aggregator and copies sent back out.
    pub aggregation_messages: usize,
}

impl FlState {
    pub fn new(
        server_model: &Model<RingTensor>,
        topology: FlTopology,
        precision: u32,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let copies = fl_init(server_model, &topology, precision, &mut rng)?;
        Ok(Self {
            topology,
            copies,
            round: 0,
        })
    }

    /// Trains every client's copy in parallel, then masks, aggregates,
    /// normalizes and redistributes. No role reconstructs the model.
    pub fn round(
        &mut self,
        clients: &[FlClient],
        cfg: &TrainConfig,
        pc: &PrivateConfig,
    ) -> Result<FlRoundReport> {
        let n = self.topology.n;
        if clients.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} datasets for {n} clients",
                clients.len()
            )));
        }
        let round = self.round;
        let copies = std::mem::take(&mut self.copies);
        let results: Vec<Result<_>> = std::thread::scope(|scope| {
            let handles: Vec<_> = copies
                .into_iter()
                .zip(clients)
                .enumerate()
                .map(|(i, (copy, data))| {
                    scope.spawn(move || {
                        let mut rng =
                            ChaCha20Rng::seed_from_u64(pc.share_seed ^ (round << 32) ^ i as u64);
                        let xs = AdditiveShare::share_ring(&data.x, pc.precision, &mut rng);
                        let ys = AdditiveShare::share_ring(&data.y, pc.precision, &mut rng);
                        let pc = PrivateConfig {
                            dealer_seed: pc.dealer_seed ^ (round << 32) ^ (i as u64 + 1),
                            ..*pc
                        };
                        train_shared(copy, &xs, &ys, cfg, &pc)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(Error::FederatedAbort("client thread panicked".into()))
                    })
                })
                .collect()
        });
        let mut server = Vec::with_capacity(n);
        let mut masked = Vec::with_capacity(n);
        let mut training = Vec::with_capacity(n);
        for (i, r) in results.into_iter().enumerate() {
            let run = r.map_err(|e| Error::FederatedAbort(format!("client {i}: {e}")))?;
            let [s, c] = run.models;
            masked.push(Some(fl_mask(&self.topology, i, round, &c)?));
            server.push(s);
            training.push(run.ledgers[0].clone());
        }
        let aggregator = self.topology.aggregator(round);
        let global = fl_normalize(&fl_aggregate(&server, &masked)?, n)?;
        let mut rng = ChaCha20Rng::seed_from_u64(self.topology.seed ^ 0x5eed ^ round);
        self.copies = fl_redistribute(&global, n, &mut rng)?;
        self.round += 1;
        Ok(FlRoundReport {
            round,
            aggregator,
            training,
            aggregation_messages: 2 * n,
        })
    }
}

/// Topology file: `key=value` lines with `n`, `k`, `seed` and optional
/// `client.<i>=host:port` endpoints. `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlConfig {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub endpoints: BTreeMap<usize, String>,
}

impl FlConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = BTreeMap::new();
        let mut endpoints = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<u64>().map_err(|_| {
                    Error::InvalidArgument(format!("line {}: {key} must be an integer", lineno + 1))
                })
            };
            if let Some(idx) = key.strip_prefix("client.") {
                endpoints.insert(num(idx)? as usize, value.to_string());
            } else if matches!(key, "n" | "k" | "seed") {
                vals.insert(key.to_string(), num(value)?);
            } else {
                return Err(Error::InvalidArgument(format!(
                    "line {}: unknown key {key}",
                    lineno + 1
                )));
            }
        }
        let get = |k: &str| {
            vals.get(k)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("missing {k}")))
        };
        let cfg = Self {
            n: get("n")? as usize,
            k: get("k")? as usize,
            seed: vals.get("seed").copied().unwrap_or(0),
            endpoints,
        };
        if cfg.k < 1 || cfg.k >= cfg.n {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k < n, got n={} k={}",
                cfg.n, cfg.k
            )));
        }
        if let Some(&i) = cfg.endpoints.keys().find(|&&i| i >= cfg.n) {
            return Err(Error::InvalidArgument(format!(
                "endpoint for client {i} but n={}",
                cfg.n
            )));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::ModelSpec;

    #[test]
    fn masks_cancel_for_all_small_topologies() {
        for n in 2..=8 {
            for k in 1..n {
                let t = FlTopology::new(n, k, (n * 10 + k) as u64).unwrap();
                assert_eq!(t.edges().len(), n * k);
                let mut sum = vec![0u64; 37];
                for i in 0..n {
                    let mu = client_mask(&t, i, 3, 37, 64).unwrap();
                    for (s, v) in sum.iter_mut().zip(mu) {
                        *s = s.wrapping_add(v);
                    }
                }
                assert!(sum.iter().all(|&v| v == 0), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn two_clients_have_opposite_masks() {
        let t = FlTopology::new(2, 1, 0).unwrap();
        let a = client_mask(&t, 0, 0, 10, 32).unwrap();
        let b = client_mask(&t, 1, 0, 10, 32).unwrap();
        assert!(a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.wrapping_add(*y) & mask(32) == 0));
        assert!(a.iter().any(|&v| v != 0));
        assert_ne!(client_mask(&t, 0, 1, 10, 32).unwrap(), a);
    }

    #[test]
    fn three_nodes_one_neighbour() {
        let t = FlTopology::new(3, 1, 0).unwrap();
        assert_eq!(t.edges(), vec![(0, 1), (1, 2), (2, 0)]);
        assert!(FlTopology::new(3, 3, 0).is_err());
        assert!(FlTopology::new(3, 0, 0).is_err());
    }

    fn sample_model(seed: u64) -> Model<RingTensor> {
        ModelSpec::mlp(&[3, 4, 2])
            .init(seed)
            .unwrap()
            .to_fixed(64, 3)
            .unwrap()
    }

    #[test]
    fn init_shares_are_fresh() {
        let m = sample_model(0);
        let t = FlTopology::new(3, 1, 0).unwrap();
        let copies = fl_init(&m, &t, 3, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        for c in &copies {
            assert_eq!(
                crate::train::reconstruct_model(&c[0], &c[1])
                    .unwrap()
                    .params,
                m.params
            );
        }
        assert_ne!(copies[0][1].params, copies[1][1].params);
    }

    #[test]
    fn aggregate_is_plain_sum() {
        let t = FlTopology::new(3, 2, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let models: Vec<_> = (0..3).map(sample_model).collect();
        let shared: Vec<_> = models
            .iter()
            .map(|m| m.share(3, &mut rng).unwrap())
            .collect();
        let server: Vec<_> = shared.iter().map(|s| s[0].clone()).collect();
        let masked: Vec<_> = shared
            .iter()
            .enumerate()
            .map(|(i, s)| Some(fl_mask(&t, i, 0, &s[1]).unwrap()))
            .collect();
        let agg = fl_aggregate(&server, &masked).unwrap();
        let got = crate::train::reconstruct_model(&agg[0], &agg[1]).unwrap();
        for (li, p) in got.params.iter().enumerate() {
            let Some(p) = p else { continue };
            let want = models
                .iter()
                .map(|m| m.params[li].as_ref().unwrap().w.clone())
                .reduce(|a, b| a.add(&b).unwrap())
                .unwrap();
            assert_eq!(p.w, want);
        }
        let mut missing = masked.clone();
        missing[1] = None;
        assert!(matches!(
            fl_aggregate(&server, &missing),
            Err(Error::FederatedAbort(_))
        ));
    }

    #[test]
    fn identical_models_sum_to_double() {
        let t = FlTopology::new(2, 1, 0).unwrap();
        let m = sample_model(4);
        let copies = fl_init(&m, &t, 3, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let server: Vec<_> = copies.iter().map(|c| c[0].clone()).collect();
        let masked: Vec<_> = copies
            .iter()
            .enumerate()
            .map(|(i, c)| Some(fl_mask(&t, i, 0, &c[1]).unwrap()))
            .collect();
        let agg = fl_aggregate(&server, &masked).unwrap();
        let got = crate::train::reconstruct_model(&agg[0], &agg[1]).unwrap();
        let doubled = m.try_map(|t| Ok(t.scale(2))).unwrap();
        assert_eq!(got.params, doubled.params);
        let back = fl_redistribute(&agg, 2, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(
            crate::train::reconstruct_model(&back[1][0], &back[1][1])
                .unwrap()
                .params,
            doubled.params
        );
    }

    #[test]
    fn config_parsing() {
        let c = FlConfig::parse("# demo\nn = 3\nk=1\nseed=9\nclient.0 = 127.0.0.1:9000\n").unwrap();
        assert_eq!((c.n, c.k, c.seed), (3, 1, 9));
        assert_eq!(c.endpoints[&0], "127.0.0.1:9000");
        assert!(FlConfig::parse("n=3\nk=3").is_err());
        assert!(FlConfig::parse("n=3").is_err());
        assert!(FlConfig::parse("n=3\nk=1\nfoo=2").is_err());
        assert!(FlConfig::parse("n=2\nk=1\nclient.5=x").is_err());
    }
}
