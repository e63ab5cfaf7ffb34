//! A party's view of a two-party session: transport, ledger, preprocessing.

use std::net::TcpListener;
use std::time::Duration;

use super::frame::{decode_frame, encode_frame, pack, unpack, Tag};
use super::ledger::RoundLedger;
use super::prep::{Dealer, PrepSource, PrepStore, SharedDealer};
use super::transport::{timeout_from_env, LocalTransport, TcpTransport, Transport};
use crate::beaver::{BilinearOp, TripleShare};
use crate::error::{Error, Result};
use crate::fss::{CmpKeyBatch, EqKeyBatch, FssParams};
use crate::ring::RingTensor;
use crate::sharing::AdditiveShare;

pub struct Session {
    party: usize,
    transport: Box<dyn Transport>,
    ledger: RoundLedger,
    prep: PrepStore,
    closed: bool,
}

impl Session {
    pub fn new(party: usize, transport: Box<dyn Transport>, prep: PrepStore) -> Result<Self> {
        if party > 1 || prep.party() != party {
            return Err(Error::InvalidArgument(format!(
                "bad party {party} for this store"
            )));
        }
        Ok(Self {
            party,
            transport,
            ledger: RoundLedger::default(),
            prep,
            closed: false,
        })
    }

    /// Two in-process sessions backed by a shared seeded dealer.
    pub fn local_pair(dealer_seed: u64) -> [Session; 2] {
        Self::local_pair_with(
            SharedDealer::new(Dealer::new(dealer_seed)),
            timeout_from_env(),
        )
    }

    pub fn local_pair_with(
        dealer: std::sync::Arc<SharedDealer>,
        timeout: Duration,
    ) -> [Session; 2] {
        let (t0, t1) = LocalTransport::pair(timeout);
        let s0 = PrepStore::new(0, PrepSource::OnDemand(dealer.clone()));
        let s1 = PrepStore::new(1, PrepSource::OnDemand(dealer));
        [
            Session::new(0, Box::new(t0), s0).expect("party 0"),
            Session::new(1, Box::new(t1), s1).expect("party 1"),
        ]
    }

    /// Two in-process sessions over explicit stores.
    pub fn local_pair_from(stores: [PrepStore; 2], timeout: Duration) -> Result<[Session; 2]> {
        let (t0, t1) = LocalTransport::pair(timeout);
        let [s0, s1] = stores;
        Ok([
            Session::new(0, Box::new(t0), s0)?,
            Session::new(1, Box::new(t1), s1)?,
        ])
    }

    /// Party 0 listens, party 1 connects.
    pub fn tcp(party: usize, addr: &str, prep: PrepStore) -> Result<Session> {
        let timeout = timeout_from_env();
        let transport = if party == 0 {
            let listener = TcpListener::bind(addr)?;
            TcpTransport::accept(&listener, timeout)?
        } else {
            TcpTransport::connect(addr, timeout)?
        };
        Session::new(party, Box::new(transport), prep)
    }

    pub fn party(&self) -> usize {
        self.party
    }

    pub fn ledger(&self) -> &RoundLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut RoundLedger {
        &mut self.ledger
    }

    pub fn prep(&mut self) -> &mut PrepStore {
        &mut self.prep
    }

    /// Runs `f` with `tag` pushed on the ledger's scope stack.
    pub fn scope<T>(&mut self, tag: &str, f: impl FnOnce(&mut Session) -> Result<T>) -> Result<T> {
        self.ledger.enter(tag);
        let r = f(self);
        self.ledger.exit();
        r
    }

    fn send(&mut self, tag: Tag, payload: &[u8]) -> Result<usize> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let frame = encode_frame(tag, payload);
        self.transport.send_frame(&frame)?;
        Ok(frame.len())
    }

    fn recv(&mut self, expected: Tag) -> Result<(Vec<u8>, usize)> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let frame = self.transport.recv_frame()?;
        let (tag, payload) = decode_frame(&frame)?;
        if tag == Tag::Abort {
            self.closed = true;
            return Err(Error::PeerAborted(
                String::from_utf8_lossy(payload).into_owned(),
            ));
        }
        if tag != expected {
            return Err(Error::Desync {
                expected: expected as u8,
                got: tag as u8,
            });
        }
        Ok((payload.to_vec(), frame.len()))
    }

    /// Sends `payload` and receives the peer's, in one round. Party 0 sends
    /// first and party 1 receives first, so neither blocks on a full pipe.
    fn swap(&mut self, tag: Tag, payload: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
        if self.party == 0 {
            let sent = self.send(tag, payload)?;
            let (got, recv) = self.recv(tag)?;
            Ok((got, sent, recv))
        } else {
            let (got, recv) = self.recv(tag)?;
            let sent = self.send(tag, payload)?;
            Ok((got, sent, recv))
        }
    }

    /// Opens several tensors of shares in one round and returns the sums.
    pub fn open(&mut self, tag: Tag, tensors: &[&RingTensor]) -> Result<Vec<RingTensor>> {
        let mut payload = Vec::new();
        let mut elements = 0u64;
        for t in tensors {
            payload.extend_from_slice(&pack(t.data(), t.bits()));
            elements += t.len() as u64;
        }
        let (got, sent, recv) = self.swap(tag, &payload)?;
        self.ledger.record_round(sent as u64, recv as u64, elements);
        let mut offset = 0;
        let mut out = Vec::with_capacity(tensors.len());
        for t in tensors {
            let w = t.bits().div_ceil(8) as usize;
            let end = offset + t.len() * w;
            if end > got.len() {
                return Err(Error::Transport("peer sent a short payload".into()));
            }
            let theirs = unpack(&got[offset..end], t.len(), t.bits())?;
            offset = end;
            let peer = RingTensor::new(theirs, t.shape().to_vec(), t.bits())?;
            out.push(t.add(&peer)?);
        }
        if offset != got.len() {
            return Err(Error::Transport("peer sent a long payload".into()));
        }
        Ok(out)
    }

    /// Reveals secret-shared values to both parties. Counted as a reveal.
    pub fn reveal(&mut self, share: &AdditiveShare) -> Result<RingTensor> {
        let mut v = self.open(Tag::Reveal, &[&share.value])?;
        self.ledger.record_reveal(share.len() as u64);
        Ok(v.remove(0))
    }

    /// Exchanges a control string and fails if the peer's differs.
    pub fn handshake(&mut self, descriptor: &str) -> Result<()> {
        let (got, _, _) = self.swap(Tag::Control, descriptor.as_bytes())?;
        if got != descriptor.as_bytes() {
            return Err(Error::InvalidArgument(format!(
                "peer configuration differs: {:?} vs {:?}",
                descriptor,
                String::from_utf8_lossy(&got)
            )));
        }
        Ok(())
    }

    /// Tells the peer this party is giving up, then closes the session.
    pub fn abort(&mut self, reason: &str) {
        if !self.closed {
            let _ = self.send(Tag::Abort, reason.as_bytes());
            self.closed = true;
        }
    }

    pub fn take_cmp(&mut self, params: FssParams, count: usize) -> Result<CmpKeyBatch> {
        self.prep.take_cmp(params, count)
    }

    pub fn take_eq(&mut self, params: FssParams, count: usize) -> Result<EqKeyBatch> {
        self.prep.take_eq(params, count)
    }

    pub fn take_triple(&mut self, op: &BilinearOp, bits: u32) -> Result<TripleShare> {
        self.prep.take_triple(op, bits)
    }

    pub fn take_coins(&mut self, count: usize, bound: u64) -> Result<Vec<u64>> {
        self.prep.take_coins(count, bound)
    }
}

/// Runs `f` for both parties on two threads. If a party fails it aborts
/// the session so the peer does not wait for a timeout. When both fail,
/// the error that did not come from the peer's abort is returned.
pub fn run_pair<T, F>(sessions: &mut [Session; 2], f: F) -> Result<(T, T)>
where
    T: Send,
    F: Fn(&mut Session) -> Result<T> + Sync,
{
    let [s0, s1] = sessions;
    let f = &f;
    let (r0, r1) = std::thread::scope(|scope| {
        let run = |s: &mut Session| {
            let r = f(s);
            if let Err(e) = &r {
                s.abort(&e.to_string());
            }
            r
        };
        let h0 = scope.spawn(move || run(s0));
        let h1 = scope.spawn(move || run(s1));
        (
            h0.join()
                .unwrap_or_else(|_| Err(Error::Transport("party 0 panicked".into()))),
            h1.join()
                .unwrap_or_else(|_| Err(Error::Transport("party 1 panicked".into()))),
        )
    });
    match (r0, r1) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        (Err(e @ Error::PeerAborted(_)), Err(other))
        | (Err(other), Err(e @ Error::PeerAborted(_))) => {
            let _ = e;
            Err(other)
        }
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn open_and_reveal_count_rounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let [a, b] = AdditiveShare::share_plain(&[1.5, -2.0], vec![2], 32, 3, &mut rng).unwrap();
        let shares = [a, b];
        let mut s = Session::local_pair(0);
        let (v0, v1) = run_pair(&mut s, |sess| {
            let mine = &shares[sess.party()];
            sess.scope("outer", |sess| sess.reveal(mine))
        })
        .unwrap();
        assert_eq!(v0, v1);
        assert_eq!(v0.signed_values(), vec![1500, -2000]);
        for sess in &s {
            assert_eq!(sess.ledger().rounds(), 1);
            assert_eq!(sess.ledger().reveals, 2);
            assert_eq!(sess.ledger().tag("outer").rounds, 1);
            // 5-byte header plus two 4-byte elements
            assert_eq!(sess.ledger().total.bytes_sent, 13);
        }
    }

    #[test]
    fn failure_propagates_as_abort() {
        let mut s = Session::local_pair(0);
        let r = run_pair(&mut s, |sess| {
            if sess.party() == 1 {
                return Err::<(), _>(Error::InvalidArgument("boom".into()));
            }
            let t = RingTensor::from_vec(vec![1], 8)?;
            sess.open(Tag::MaskedShare, &[&t])?;
            Ok(())
        });
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn desync_detected() {
        let mut s = Session::local_pair(0);
        let r = run_pair(&mut s, |sess| {
            let t = RingTensor::from_vec(vec![1], 8)?;
            let tag = if sess.party() == 0 {
                Tag::MaskedShare
            } else {
                Tag::TripleDelta
            };
            sess.open(tag, &[&t])?;
            Ok(())
        });
        assert!(matches!(r, Err(Error::Desync { .. })));
    }

    #[test]
    fn timeout_when_peer_silent() {
        let dealer = SharedDealer::new(Dealer::new(0));
        let mut s = Session::local_pair_with(dealer, Duration::from_millis(50));
        let r = run_pair(&mut s, |sess| {
            if sess.party() == 0 {
                let t = RingTensor::from_vec(vec![1], 8)?;
                sess.open(Tag::MaskedShare, &[&t])?;
            } else {
                std::thread::sleep(Duration::from_millis(200));
            }
            Ok(())
        });
        assert!(matches!(r, Err(Error::Timeout(50))));
    }

    #[test]
    fn handshake_mismatch() {
        let mut s = Session::local_pair(0);
        let r = run_pair(&mut s, |sess| {
            sess.handshake(if sess.party() == 0 { "a" } else { "b" })
        });
        assert!(r.is_err());
    }
}
