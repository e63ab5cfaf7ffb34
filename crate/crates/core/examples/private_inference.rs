//! Trains a small MLP in plaintext, then classifies held-out points in
//! plaintext, in fixed point and under secret sharing.

use ariann::experiments::inference_parity;
use ariann::train::PrivateConfig;

fn main() -> ariann::Result<()> {
    let p = inference_parity(1000, &PrivateConfig::default(), 3)?;
    println!("{} held-out samples", p.samples);
    println!("plaintext   {:.1}%", 100.0 * p.plaintext);
    println!("fixed point {:.1}%", 100.0 * p.fixed);
    println!("private     {:.1}%", 100.0 * p.private);
    println!(
        "private labels equal fixed-point labels on {:.2}% of samples",
        100.0 * p.agreement
    );
    Ok(())
}
