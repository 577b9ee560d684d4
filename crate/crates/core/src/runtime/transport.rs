//! Transports that carry frames between instances.
//!
//! Two are provided: bounded in-memory queues for running every instance as
//! a thread of one process, and real TCP for everything else. Both present
//! the same two-trait face ([`FrameSink`], [`FrameSource`]) to the
//! interpreter, so instance behavior cannot depend on which one is under it.
//!
//! A TCP connection belongs to exactly one channel and one direction. The
//! connecting (sending) side opens with a one-line handshake:
//!
//! ```text
//! CHANNEL <id>\n
//! ```
//!
//! after which only frames flow, sender to receiver. The receiving side
//! accepts connections until every expected peer has arrived (the count is
//! known from the plan and manifest), demultiplexing by the handshake line.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::codec::{read_frame, write_frame, Frame};
use super::exec::{FrameSink, FrameSource};
use crate::error::RunError;
use crate::ir::ChannelId;

/// Tuning for connection establishment.
#[derive(Debug, Clone)]
pub struct NetOptions {
    /// How long to keep retrying connects, and how long to wait for inbound
    /// peers, before giving up.
    pub handshake_timeout: Duration,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions { handshake_timeout: Duration::from_secs(10) }
    }
}

/// In-flight frames an in-memory channel may hold before senders block.
pub const MEM_CHANNEL_DEPTH: usize = 1024;

/// How long a source waits for a frame before reporting "nothing yet".
const POLL_WAIT: Duration = Duration::from_millis(1);

// ---- in-memory transport ----

pub struct MemSink(pub mpsc::SyncSender<Frame>);

impl FrameSink for MemSink {
    fn send(&mut self, frame: Frame) -> Result<(), RunError> {
        self.0
            .send(frame)
            .map_err(|_| RunError::Transport("peer instance hung up".into()))
    }

    fn flush(&mut self) -> Result<(), RunError> {
        Ok(())
    }
}

pub struct MemSource(pub mpsc::Receiver<Frame>);

impl FrameSource for MemSource {
    fn try_next(&mut self) -> Result<Option<Frame>, RunError> {
        match self.0.recv_timeout(POLL_WAIT) {
            Ok(frame) => Ok(Some(frame)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            // Disconnection is normal here: senders drop their handles after
            // the end-of-stream marker, which the interpreter counts.
            Err(mpsc::RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

// ---- TCP transport ----

#[derive(Debug)]
pub struct TcpSink {
    writer: BufWriter<TcpStream>,
}

impl FrameSink for TcpSink {
    fn send(&mut self, frame: Frame) -> Result<(), RunError> {
        write_frame(&mut self.writer, &frame)
    }

    fn flush(&mut self) -> Result<(), RunError> {
        self.writer
            .flush()
            .map_err(|e| RunError::Transport(format!("flush failed: {e}")))
    }
}

/// Frames forwarded off reader threads, all senders of one channel merged.
pub struct TcpSource(pub mpsc::Receiver<Result<Frame, RunError>>);

impl FrameSource for TcpSource {
    fn try_next(&mut self) -> Result<Option<Frame>, RunError> {
        match self.0.recv_timeout(POLL_WAIT) {
            Ok(result) => result.map(Some),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

/// Bind a listener; port 0 asks the OS for an ephemeral port. Returns the
/// actual port.
pub fn bind_listener(addr: &str, port: u16) -> Result<(TcpListener, u16), RunError> {
    let listener = TcpListener::bind((addr, port)).map_err(|e| RunError::Bind {
        addr: format!("{addr}:{port}"),
        msg: e.to_string(),
    })?;
    let actual = listener
        .local_addr()
        .map_err(|e| RunError::Bind { addr: format!("{addr}:{port}"), msg: e.to_string() })?
        .port();
    Ok((listener, actual))
}

/// Connect to a peer's listener and announce the channel, retrying until the
/// peer is up or the timeout lapses.
pub fn connect_sink(
    addr: &str,
    port: u16,
    channel: ChannelId,
    opts: &NetOptions,
) -> Result<TcpSink, RunError> {
    let deadline = Instant::now() + opts.handshake_timeout;
    let mut stream = loop {
        match TcpStream::connect((addr, port)) {
            Ok(stream) => break stream,
            Err(_) if Instant::now() < deadline => {
                thread::sleep(Duration::from_millis(10));
            }
            Err(_) => return Err(RunError::HandshakeTimeout(opts.handshake_timeout)),
        }
    };
    stream
        .set_nodelay(true)
        .map_err(|e| RunError::Transport(format!("set_nodelay: {e}")))?;
    stream
        .write_all(format!("CHANNEL {}\n", channel.0).as_bytes())
        .map_err(|e| RunError::Transport(format!("handshake write: {e}")))?;
    Ok(TcpSink { writer: BufWriter::new(stream) })
}

/// Read the `CHANNEL <id>\n` line that opens every connection.
fn read_handshake(stream: &mut TcpStream) -> Result<ChannelId, RunError> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        stream
            .read_exact(&mut byte)
            .map_err(|e| RunError::Transport(format!("handshake read: {e}")))?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 64 {
            return Err(RunError::Decode("handshake line too long".into()));
        }
    }
    let text = std::str::from_utf8(&line)
        .map_err(|_| RunError::Decode("handshake is not UTF-8".into()))?;
    let id = text
        .strip_prefix("CHANNEL ")
        .and_then(|rest| rest.parse::<u32>().ok())
        .ok_or_else(|| RunError::Decode(format!("bad handshake line {text:?}")))?;
    Ok(ChannelId(id))
}

/// Accept inbound connections until every expected sender has arrived,
/// spawning a reader thread per connection that forwards frames into its
/// channel's queue.
///
/// `expected` lists (channel, sender count). The whole accept phase shares
/// one deadline; channels still missing senders when it passes get a
/// handshake-timeout error queued so the instance fails rather than hangs.
pub fn accept_inbound(
    listener: TcpListener,
    expected: &[(ChannelId, usize)],
    opts: &NetOptions,
) -> Result<Vec<(ChannelId, TcpSource)>, RunError> {
    let mut queues = Vec::new();
    let mut txs: Vec<(ChannelId, mpsc::Sender<Result<Frame, RunError>>)> = Vec::new();
    for (channel, _) in expected {
        let (tx, rx) = mpsc::channel();
        txs.push((*channel, tx));
        queues.push((*channel, TcpSource(rx)));
    }
    let total: usize = expected.iter().map(|(_, n)| n).sum();
    let mut remaining: Vec<(ChannelId, usize)> = expected.to_vec();
    let opts = opts.clone();

    listener
        .set_nonblocking(true)
        .map_err(|e| RunError::Transport(format!("set_nonblocking: {e}")))?;
    thread::spawn(move || {
        let deadline = Instant::now() + opts.handshake_timeout;
        let mut accepted = 0usize;
        while accepted < total {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    if stream.set_nonblocking(false).is_err() {
                        continue;
                    }
                    let _ = stream.set_nodelay(true);
                    let channel = match read_handshake(&mut stream) {
                        Ok(channel) => channel,
                        Err(_) => continue,
                    };
                    let Some(slot) = remaining
                        .iter_mut()
                        .find(|(c, n)| *c == channel && *n > 0)
                    else {
                        // Unexpected channel: drop the connection.
                        continue;
                    };
                    slot.1 -= 1;
                    accepted += 1;
                    let tx = txs
                        .iter()
                        .find(|(c, _)| *c == channel)
                        .map(|(_, tx)| tx.clone())
                        .expect("every expected channel has a queue");
                    thread::spawn(move || {
                        let mut reader = BufReader::new(stream);
                        loop {
                            match read_frame(&mut reader) {
                                Ok(Some(frame)) => {
                                    let eos = frame == Frame::Eos;
                                    if tx.send(Ok(frame)).is_err() || eos {
                                        break;
                                    }
                                }
                                Ok(None) => break,
                                Err(e) => {
                                    let _ = tx.send(Err(e));
                                    break;
                                }
                            }
                        }
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        break;
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break,
            }
        }
        // Report any senders that never showed up.
        for (channel, missing) in remaining {
            if missing > 0 {
                if let Some((_, tx)) = txs.iter().find(|(c, _)| *c == channel) {
                    for _ in 0..missing {
                        let _ = tx.send(Err(RunError::HandshakeTimeout(opts.handshake_timeout)));
                    }
                }
            }
        }
    });

    Ok(queues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::codec;
    use crate::staging::{TypeTag, Value};

    #[test]
    fn frames_cross_a_real_socket_in_order() {
        let (listener, port) = bind_listener("127.0.0.1", 0).unwrap();
        let opts = NetOptions::default();
        let sender = thread::spawn(move || {
            let mut sink = connect_sink("127.0.0.1", port, ChannelId(7), &opts).unwrap();
            for n in 0..100i64 {
                let bytes = codec::encode(&Value::Int(n), &TypeTag::Int).unwrap();
                sink.send(Frame::Data(bytes)).unwrap();
            }
            sink.send(Frame::Eos).unwrap();
            sink.flush().unwrap();
        });
        let sources = accept_inbound(listener, &[(ChannelId(7), 1)], &NetOptions::default()).unwrap();
        let (channel, mut source) = sources.into_iter().next().unwrap();
        assert_eq!(channel, ChannelId(7));
        let mut got = Vec::new();
        loop {
            match source.try_next().unwrap() {
                Some(Frame::Data(bytes)) => {
                    got.push(codec::decode(&bytes, &TypeTag::Int).unwrap())
                }
                Some(Frame::Eos) => break,
                None => {}
            }
        }
        assert_eq!(got, (0..100).map(Value::Int).collect::<Vec<_>>());
        sender.join().unwrap();
    }

    #[test]
    fn missing_peers_surface_as_handshake_timeouts() {
        let (listener, _) = bind_listener("127.0.0.1", 0).unwrap();
        let opts = NetOptions { handshake_timeout: Duration::from_millis(50) };
        let sources = accept_inbound(listener, &[(ChannelId(0), 1)], &opts).unwrap();
        let (_, mut source) = sources.into_iter().next().unwrap();
        let start = Instant::now();
        loop {
            match source.try_next() {
                Err(RunError::HandshakeTimeout(_)) => break,
                Ok(_) if start.elapsed() < Duration::from_secs(5) => {}
                other => panic!("expected handshake timeout, got {other:?}"),
            }
        }
    }

    #[test]
    fn connecting_to_a_dead_port_times_out() {
        // Bind then drop, so the port is very likely unoccupied.
        let port = {
            let (listener, port) = bind_listener("127.0.0.1", 0).unwrap();
            drop(listener);
            port
        };
        let opts = NetOptions { handshake_timeout: Duration::from_millis(50) };
        match connect_sink("127.0.0.1", port, ChannelId(0), &opts) {
            Err(RunError::HandshakeTimeout(_)) => {}
            other => panic!("expected handshake timeout, got {other:?}"),
        }
    }
}
