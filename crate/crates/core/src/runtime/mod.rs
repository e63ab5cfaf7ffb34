//! Two-party execution: framing, transports, round accounting and
//! preprocessing supply.

mod frame;
mod ledger;
mod prep;
mod session;
mod transport;

pub use frame::{decode_frame, encode_frame, pack, unpack, Tag, MAX_FRAME};
pub use ledger::{Counters, RoundLedger};
pub use prep::{
    audit_bundles, Dealer, PrepBundle, PrepItem, PrepPlan, PrepSource, PrepStore, SharedDealer,
    TapeRecord,
};
pub use session::{run_pair, Session};
pub use transport::{
    timeout_from_env, LocalTransport, TcpTransport, Transport, DEFAULT_TIMEOUT_MS,
};
