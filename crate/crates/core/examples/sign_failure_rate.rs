//! The sign protocol fails when masking wraps around the ring, with
//! probability `|y| / 2^n`. Measures it in a 16-bit domain.

use ariann::experiments::sign_failure_rate;

fn main() -> ariann::Result<()> {
    println!(
        "{:>6} {:>10} {:>10} {:>7}",
        "y", "observed", "expected", "sigma"
    );
    for (i, y) in [16i64, -16, 256, -256, 1024, -1024, 8192]
        .into_iter()
        .enumerate()
    {
        let f = sign_failure_rate(y, 16, 100_000, i as u64)?;
        println!(
            "{y:>6} {:>10.5} {:>10.5} {:>7.2}",
            f.rate(),
            f.expected_rate,
            f.sigmas()
        );
    }
    Ok(())
}
