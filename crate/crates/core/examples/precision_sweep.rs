//! Label agreement between private and plaintext inference as the
//! comparison domain shrinks, on a ten-class toy MLP.

use ariann::experiments::precision_sweep;

fn main() -> ariann::Result<()> {
    for p in [2, 3, 4] {
        for row in precision_sweep(&[12, 16, 20, 24, 32], p, 7)? {
            println!(
                "{p} decimals, comparisons in Z_2^{:<2}: agreement {:5.1}%, accuracy {:5.1}%",
                row.k,
                100.0 * row.agreement,
                100.0 * row.accuracy
            );
        }
    }
    Ok(())
}
