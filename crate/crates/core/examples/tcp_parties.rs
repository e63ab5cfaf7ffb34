//! Runs every benchmark program with both parties connected over loopback
//! TCP and compares outputs and round counts with the in-process transport.

use ariann::experiments::{run_bench, BenchSpec, Program, TransportChoice};

fn main() -> ariann::Result<()> {
    for program in Program::ALL {
        let spec = BenchSpec {
            program,
            batch: 256,
            bits: 64,
            precision: 3,
            k: 32,
            seed: 1,
        };
        let local = run_bench(&spec, &TransportChoice::Local)?;
        let addr = std::net::TcpListener::bind("127.0.0.1:0")?
            .local_addr()?
            .to_string();
        let tcp = run_bench(&spec, &TransportChoice::Tcp(addr))?;
        println!(
            "{:<10} rounds {} | local {:>7.2} ms | tcp {:>7.2} ms | identical outputs: {} | agreement {:.3}",
            program.name(),
            tcp.ledger.rounds(),
            local.wall.as_secs_f64() * 1e3,
            tcp.wall.as_secs_f64() * 1e3,
            local.output == tcp.output && local.ledger == tcp.ledger,
            tcp.agreement
        );
    }
    Ok(())
}
