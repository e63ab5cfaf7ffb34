//! Trains the same initial model in plaintext, fixed point and under
//! secret sharing, then saves party 0's share of the private model.

use ariann::data::xor_blobs;
use ariann::experiments::{training_parity, Task};
use ariann::train::{
    checkpoint_bytes, checkpoint_from_bytes, train_private, ModelSpec, PrivateConfig, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ariann::Result<()> {
    let pc = PrivateConfig::default();
    for task in [Task::Xor, Task::Moons] {
        let (p, ledger) = training_parity(task, 500, 10, &pc, 3)?;
        println!(
            "{task:?}: plaintext {:.1}%, fixed point {:.1}%, private {:.1}% after {} online rounds",
            100.0 * p.plaintext,
            100.0 * p.fixed,
            100.0 * p.private,
            ledger.rounds()
        );
    }

    let d = xor_blobs(100, 0.3, 1);
    let model = ModelSpec::mlp(&[2, 8, 1])
        .init(0)?
        .to_fixed(64, pc.precision)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 10,
        lr: 0.1,
        momentum: 0.9,
        shuffle_seed: 0,
        allow_loss_reveal: true,
    };
    let x = d.x_tensor()?.to_fixed(64, pc.precision)?;
    let y = d.y_tensor()?.to_fixed(64, pc.precision)?;
    let run = train_private(&model, &x, &y, &cfg, &pc)?;
    println!("revealed loss per epoch: {:?}", run.losses);
    let [share0, _] = run
        .model
        .share(pc.precision, &mut ChaCha20Rng::seed_from_u64(2))?;
    let bytes = checkpoint_bytes(&share0)?;
    println!(
        "party 0 checkpoint: {} bytes, round trip ok: {}",
        bytes.len(),
        checkpoint_bytes(&checkpoint_from_bytes(&bytes)?)? == bytes
    );
    Ok(())
}
