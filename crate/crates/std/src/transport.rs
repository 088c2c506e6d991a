//! Coordinator links over threads and TCP, plus the worker-side serving loop.
//!
//! Socket frames are exactly the bytes of `protocol::encode`: a 4-byte big-endian payload
//! length followed by the payload.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use fedboost_core::federation::{Link, Worker};
use fedboost_core::protocol::{decode_payload, encode, frame_len, Frame, ProtocolMessage};
use fedboost_core::Error as CoreError;

use crate::error::{Error, Result};

fn transport(msg: impl Into<String>) -> CoreError {
    CoreError::Transport(msg.into())
}

/// Runs every worker on its own thread; frames travel over channels without encoding.
pub struct ThreadLink {
    to_workers: Vec<Sender<Frame>>,
    from_workers: Vec<Receiver<fedboost_core::Result<Frame>>>,
    handles: Vec<JoinHandle<Worker>>,
}

impl ThreadLink {
    pub fn spawn(workers: Vec<Worker>) -> Self {
        let mut link = Self { to_workers: Vec::new(), from_workers: Vec::new(), handles: Vec::new() };
        for mut worker in workers {
            let (tx, rx) = channel::<Frame>();
            let (reply_tx, reply_rx) = channel();
            link.to_workers.push(tx);
            link.from_workers.push(reply_rx);
            link.handles.push(std::thread::spawn(move || {
                if reply_tx.send(Ok(worker.hello())).is_err() {
                    return worker;
                }
                while let Ok(frame) = rx.recv() {
                    match worker.handle(frame) {
                        Ok(out) => {
                            if out.into_iter().any(|f| reply_tx.send(Ok(f)).is_err()) {
                                break;
                            }
                        }
                        Err(e) => {
                            let _ = reply_tx.send(Err(e));
                            break;
                        }
                    }
                    if worker.is_shut_down() {
                        break;
                    }
                }
                worker
            }));
        }
        link
    }

    /// Closes the channels and returns the workers in id order.
    pub fn join(self) -> Result<Vec<Worker>> {
        drop(self.to_workers);
        self.handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Core(transport("worker thread panicked"))))
            .collect()
    }
}

impl Link for ThreadLink {
    fn workers(&self) -> usize {
        self.to_workers.len()
    }

    fn send(&mut self, worker: usize, frame: &Frame) -> fedboost_core::Result<()> {
        self.to_workers[worker].send(frame.clone()).map_err(|_| transport(format!("worker {worker} has stopped")))
    }

    fn recv(&mut self, worker: usize) -> fedboost_core::Result<Frame> {
        self.from_workers[worker].recv().map_err(|_| transport(format!("worker {worker} has stopped")))?
    }
}

/// Reads one length-prefixed frame.
pub fn read_frame(r: &mut impl Read) -> fedboost_core::Result<Frame> {
    let mut prefix = [0u8; 4];
    r.read_exact(&mut prefix).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => transport("connection closed"),
        _ => transport(e.to_string()),
    })?;
    let mut payload = vec![0u8; frame_len(prefix)?];
    r.read_exact(&mut payload).map_err(|e| transport(format!("reading frame body: {e}")))?;
    decode_payload(&payload)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> fedboost_core::Result<()> {
    w.write_all(&encode(frame)).and_then(|()| w.flush()).map_err(|e| transport(e.to_string()))
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// One TCP connection per worker, ordered by the id each worker announces in its hello.
pub struct SocketLink {
    conns: Vec<Connection>,
    hellos: Vec<Option<Frame>>,
}

impl SocketLink {
    /// Accepts `workers` connections and reads their hellos. Each id in `0..workers`
    /// must appear exactly once.
    pub fn accept(listener: &TcpListener, workers: usize) -> Result<Self> {
        let mut slots: Vec<Option<(Connection, Frame)>> = (0..workers).map(|_| None).collect();
        for _ in 0..workers {
            let (stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            let mut reader = BufReader::new(stream.try_clone()?);
            let hello = read_frame(&mut reader)?;
            let id = match hello.message {
                ProtocolMessage::Hello { worker_id } => worker_id as usize,
                ref other => return Err(transport(format!("expected hello, got {other:?}")).into()),
            };
            let slot = slots
                .get_mut(id)
                .ok_or_else(|| transport(format!("worker id {id} out of range for {workers} workers")))?;
            if slot.is_some() {
                return Err(transport(format!("worker id {id} connected twice")).into());
            }
            *slot = Some((Connection { reader, writer: BufWriter::new(stream) }, hello));
        }
        let (conns, hellos) = slots.into_iter().map(|s| s.expect("every slot filled")).map(|(c, h)| (c, Some(h))).unzip();
        Ok(Self { conns, hellos })
    }
}

impl Link for SocketLink {
    fn workers(&self) -> usize {
        self.conns.len()
    }

    fn send(&mut self, worker: usize, frame: &Frame) -> fedboost_core::Result<()> {
        write_frame(&mut self.conns[worker].writer, frame)
    }

    fn recv(&mut self, worker: usize) -> fedboost_core::Result<Frame> {
        match self.hellos[worker].take() {
            Some(hello) => Ok(hello),
            None => read_frame(&mut self.conns[worker].reader),
        }
    }
}

/// Connects to a coordinator, retrying until `timeout` runs out.
pub fn connect(addr: impl ToSocketAddrs + Copy, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() >= deadline => return Err(e.into()),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Sends the worker's hello, then answers coordinator frames until shutdown.
pub fn serve(stream: TcpStream, worker: &mut Worker) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    write_frame(&mut writer, &worker.hello())?;
    while !worker.is_shut_down() {
        let frame = read_frame(&mut reader)?;
        for reply in worker.handle(frame)? {
            write_frame(&mut writer, &reply)?;
        }
    }
    Ok(())
}
