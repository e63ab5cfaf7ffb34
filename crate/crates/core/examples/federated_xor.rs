//! Federated training of noisy XOR: the server and each client hold
//! shares of the model, and pairwise masks hide each client's update from
//! the aggregating client.

use ariann::experiments::federated_xor;

fn main() -> ariann::Result<()> {
    for (clients, k) in [(2, 1), (4, 2)] {
        let d = federated_xor(clients, k, 10, 2, 5)?;
        println!(
            "{clients} clients, k = {k}: federated {:.1}%, centralized {:.1}%, aggregators per round {:?}",
            100.0 * d.federated,
            100.0 * d.centralized,
            d.aggregators
        );
    }
    Ok(())
}
