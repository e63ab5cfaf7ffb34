//! Federated rounds must never rebuild the global model in one place, and
//! what a single colluding client sees must look uniform.

use ariann::federated::{client_mask, fl_init, fl_mask, FlClient, FlState, FlTopology};
use ariann::ring::RingTensor;
use ariann::sharing::{reconstruction_count, AdditiveShare};
use ariann::train::{Model, ModelSpec, PrivateConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64)
        .unwrap()
        .cdf(stat)
}

fn byte_histogram(words: impl Iterator<Item = u64>) -> [u64; 256] {
    let mut h = [0u64; 256];
    for w in words {
        for b in w.to_le_bytes() {
            h[b as usize] += 1;
        }
    }
    h
}

fn values(m: &Model<AdditiveShare>) -> Vec<u64> {
    m.layer_params()
        .flat_map(|p| {
            p.w.value
                .data()
                .iter()
                .chain(p.b.value.data())
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn rounds_never_reconstruct() {
    let pc = PrivateConfig::default();
    let data = ariann::data::xor_blobs(40, 0.3, 1);
    let model = ModelSpec::mlp(&[2, 4, 1])
        .init(3)
        .unwrap()
        .to_fixed(64, pc.precision)
        .unwrap();
    let clients: Vec<FlClient> = (0..3)
        .map(|i| {
            let part = data.subset(&(i * 10..(i + 1) * 10).collect::<Vec<_>>());
            FlClient {
                x: part.x_tensor().unwrap().to_fixed(64, pc.precision).unwrap(),
                y: part.y_tensor().unwrap().to_fixed(64, pc.precision).unwrap(),
            }
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 5,
        lr: 0.1,
        momentum: 0.0,
        shuffle_seed: 0,
        allow_loss_reveal: false,
    };
    let mut state =
        FlState::new(&model, FlTopology::new(3, 2, 9).unwrap(), pc.precision, 4).unwrap();
    let before = reconstruction_count();
    for _ in 0..2 {
        state.round(&clients, &cfg, &pc).unwrap();
    }
    assert_eq!(reconstruction_count(), before);
    // The hook does see an explicit reconstruction.
    ariann::train::reconstruct_model(&state.copies[0][0], &state.copies[0][1]).unwrap();
    assert!(reconstruction_count() > before);
}

#[test]
fn colluding_view_is_uniform() {
    // n = 3, k = 1: client 0 colludes with the server. Their joint view of
    // client 1's contribution is share 0 plus the masked share 1, i.e. the
    // model plus client 1's mask. With an all-zero model that is the mask.
    let spec = ModelSpec::mlp(&[32, 32, 8]);
    let zero: Model<RingTensor> = spec
        .init(0)
        .unwrap()
        .to_fixed(64, 3)
        .unwrap()
        .try_map(|t| Ok(t.scale(0)))
        .unwrap();
    let topo = FlTopology::new(3, 1, 11).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut words = Vec::new();
    for round in 0..8 {
        let copies = fl_init(&zero, &topo, 3, &mut rng).unwrap();
        let masked = fl_mask(&topo, 1, round, &copies[1][1]).unwrap();
        words.extend(
            values(&copies[1][0])
                .into_iter()
                .zip(values(&masked))
                .map(|(a, b)| a.wrapping_add(b)),
        );
    }
    let p = chi_square_p(&byte_histogram(words.into_iter()));
    assert!(p > 1e-4, "p = {p}");
}

#[test]
fn single_masked_share_is_uniform() {
    let topo = FlTopology::new(5, 2, 1).unwrap();
    let mask = client_mask(&topo, 2, 0, 40_000, 64).unwrap();
    let p = chi_square_p(&byte_histogram(mask.into_iter()));
    assert!(p > 1e-4, "p = {p}");
}
