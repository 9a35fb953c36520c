//! Datagram transports between the two agents.
//!
//! Every transport carries opaque datagrams. Delivery may drop, delay or
//! reorder them; none of the implementations here corrupt or duplicate.

use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub trait Transport {
    fn send(&mut self, datagram: &[u8]) -> Result<()>;
    /// Returns every datagram available now, in delivery order.
    fn poll(&mut self) -> Result<Vec<Vec<u8>>>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, datagram: &[u8]) -> Result<()> {
        (**self).send(datagram)
    }

    fn poll(&mut self) -> Result<Vec<Vec<u8>>> {
        (**self).poll()
    }
}

/// Lossless FIFO endpoint backed by channels; usable across threads.
#[derive(Debug)]
pub struct InProcTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl InProcTransport {
    /// Two connected endpoints.
    pub fn pair() -> (Self, Self) {
        let (tx_ab, rx_ab) = channel();
        let (tx_ba, rx_ba) = channel();
        (
            Self { tx: tx_ab, rx: rx_ba },
            Self { tx: tx_ba, rx: rx_ab },
        )
    }
}

impl Transport for InProcTransport {
    fn send(&mut self, datagram: &[u8]) -> Result<()> {
        // a hung-up peer behaves like a lossy link
        let _ = self.tx.send(datagram.to_vec());
        Ok(())
    }

    fn poll(&mut self) -> Result<Vec<Vec<u8>>> {
        // empty and disconnected both end the drain
        Ok(self.rx.try_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

/// Wraps a transport with independent Bernoulli loss on send and a fixed
/// delivery delay counted in polls.
#[derive(Debug)]
pub struct LossyTransport<T> {
    inner: T,
    loss_rate: f64,
    delay_steps: u64,
    rng: ChaCha8Rng,
    polls: u64,
    pending: VecDeque<(u64, Vec<u8>)>,
    pub stats: LinkStats,
}

impl<T: Transport> LossyTransport<T> {
    pub fn new(inner: T, loss_rate: f64, delay_steps: u64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&loss_rate) {
            return Err(Error::config("transport.loss_rate", "must be in [0, 1)"));
        }
        Ok(Self {
            inner,
            loss_rate,
            delay_steps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            polls: 0,
            pending: VecDeque::new(),
            stats: LinkStats::default(),
        })
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Transport> Transport for LossyTransport<T> {
    fn send(&mut self, datagram: &[u8]) -> Result<()> {
        self.stats.sent += 1;
        // draw unconditionally so the stream does not depend on loss_rate == 0
        let draw: f64 = self.rng.random();
        if draw < self.loss_rate {
            self.stats.dropped += 1;
            return Ok(());
        }
        self.inner.send(datagram)
    }

    fn poll(&mut self) -> Result<Vec<Vec<u8>>> {
        let now = self.polls;
        self.polls += 1;
        for d in self.inner.poll()? {
            self.pending.push_back((now + self.delay_steps, d));
        }
        let mut out = Vec::new();
        while let Some((due, _)) = self.pending.front() {
            if *due > now {
                break;
            }
            out.push(self.pending.pop_front().expect("front checked").1);
        }
        self.stats.delivered += out.len() as u64;
        Ok(out)
    }
}

/// Connected pair of in-process endpoints with loss and delay on both directions.
pub fn lossy_transport(
    loss_rate: f64,
    delay_steps: u64,
    seed: u64,
) -> Result<(LossyTransport<InProcTransport>, LossyTransport<InProcTransport>)> {
    let (a, b) = InProcTransport::pair();
    Ok((
        LossyTransport::new(a, loss_rate, delay_steps, seed)?,
        LossyTransport::new(b, loss_rate, delay_steps, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?,
    ))
}

/// Non-blocking UDP endpoint on loopback.
#[derive(Debug)]
pub struct UdpTransport {
    socket: UdpSocket,
    peer: SocketAddr,
    receive_wait: Option<Duration>,
}

impl UdpTransport {
    pub fn bind(local_port: u16, peer_port: u16) -> Result<Self> {
        let socket = UdpSocket::bind(("127.0.0.1", local_port))?;
        socket.set_nonblocking(true)?;
        Ok(Self {
            socket,
            peer: SocketAddr::from(([127, 0, 0, 1], peer_port)),
            receive_wait: None,
        })
    }

    /// Makes an empty `poll` wait up to `wait` for the first datagram.
    /// Lock-step harnesses use this so loopback delivery keeps up with the clock.
    pub fn with_receive_wait(mut self, wait: Duration) -> Self {
        self.receive_wait = Some(wait);
        self
    }

    pub fn local_port(&self) -> Result<u16> {
        Ok(self.socket.local_addr()?.port())
    }

    pub fn set_peer_port(&mut self, port: u16) {
        self.peer.set_port(port);
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, datagram: &[u8]) -> Result<()> {
        match self.socket.send_to(datagram, self.peer) {
            Ok(_) => Ok(()),
            // nobody listening yet: treat as a lost datagram
            Err(e) if e.kind() == ErrorKind::ConnectionRefused || e.kind() == ErrorKind::WouldBlock => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn poll(&mut self) -> Result<Vec<Vec<u8>>> {
        let mut out = self.drain()?;
        if let (true, Some(wait)) = (out.is_empty(), self.receive_wait) {
            let deadline = Instant::now() + wait;
            while out.is_empty() && Instant::now() < deadline {
                std::thread::sleep(Duration::from_micros(100));
                out = self.drain()?;
            }
        }
        Ok(out)
    }
}

impl UdpTransport {
    fn drain(&mut self) -> Result<Vec<Vec<u8>>> {
        let mut out = Vec::new();
        let mut buf = [0u8; 65536];
        loop {
            match self.socket.recv_from(&mut buf) {
                Ok((n, from)) => {
                    if from.ip().is_loopback() {
                        out.push(buf[..n].to_vec());
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inproc_is_fifo() {
        let (mut a, mut b) = InProcTransport::pair();
        for i in 0..5u8 {
            a.send(&[i]).unwrap();
        }
        let got = b.poll().unwrap();
        assert_eq!(got, (0..5u8).map(|i| vec![i]).collect::<Vec<_>>());
        assert!(b.poll().unwrap().is_empty());
        assert!(a.poll().unwrap().is_empty());
    }

    #[test]
    fn lossless_lossy_is_fifo() {
        let (mut a, mut b) = lossy_transport(0.0, 0, 3).unwrap();
        for i in 0..10u8 {
            a.send(&[i]).unwrap();
            assert_eq!(b.poll().unwrap(), vec![vec![i]]);
        }
        assert_eq!(a.stats.dropped, 0);
    }

    #[test]
    fn delay_counts_polls() {
        let (mut a, mut b) = lossy_transport(0.0, 3, 3).unwrap();
        let mut arrivals = Vec::new();
        for k in 0..10u8 {
            if k < 4 {
                a.send(&[k]).unwrap();
            }
            for d in b.poll().unwrap() {
                arrivals.push((d[0], k));
            }
        }
        assert_eq!(arrivals, vec![(0, 3), (1, 4), (2, 5), (3, 6)]);
    }

    #[test]
    fn rejects_invalid_loss_rate() {
        let (a, _) = InProcTransport::pair();
        assert!(LossyTransport::new(a, 1.0, 0, 0).is_err());
    }

    #[test]
    fn udp_loopback_round_trip() {
        let mut a = UdpTransport::bind(0, 0).unwrap();
        let mut b = UdpTransport::bind(0, a.local_port().unwrap()).unwrap();
        a.set_peer_port(b.local_port().unwrap());
        a.send(b"hello").unwrap();
        let mut got = Vec::new();
        for _ in 0..200 {
            got.extend(b.poll().unwrap());
            if !got.is_empty() {
                break;
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
        assert_eq!(got, vec![b"hello".to_vec()]);
    }
}
