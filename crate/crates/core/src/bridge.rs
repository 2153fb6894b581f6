//! Out-of-process denoisers over a framed binary protocol on stdio.
//!
//! Frame layout, all integers little-endian:
//!
//! ```text
//! "SSDN" | u8 type (1 request, 2 response, 3 error) | u32 timestep | u8 tensor count
//! per tensor: u8 rank | rank x u64 dims | f32 payload
//! error frames: tensor count 0, then u32 byte length | UTF-8 message
//! ```
//!
//! A request carries `(z_t, condition)`, a response carries the predicted
//! noise with the dims of `z_t`. Latent tensors are `[frames, height, width, channels]`.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::diffusion::{Denoiser, LatentVideo, NoiseSchedule};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SSDN";
/// Refuse frames announcing more payload than this.
const MAX_FRAME_BYTES: usize = 1 << 30;
const MAX_RANK: usize = 8;
const STDERR_TAIL_LINES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageType {
    Request = 1,
    Response = 2,
    Error = 3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl WireTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims).ok_or_else(|| Error::shape("tensor dims overflow"))?;
        if n != data.len() {
            return Err(Error::shape(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn from_latent(z: &LatentVideo) -> Self {
        Self {
            dims: vec![z.frames(), z.height(), z.width(), z.channels()],
            data: z.data().iter().map(|v| *v as f32).collect(),
        }
    }

    /// Rebuilds a latent video with frames numbered from `first_index`.
    pub fn to_latent(&self, first_index: usize) -> Result<LatentVideo> {
        let [f, h, w, c] = self.dims[..] else {
            return Err(Error::shape(format!("latent tensors have rank 4, got dims {:?}", self.dims)));
        };
        LatentVideo::new(
            h,
            w,
            c,
            1,
            (first_index..first_index + f).collect(),
            self.data.iter().map(|v| *v as f64).collect(),
        )
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

#[derive(Clone, Debug, PartialEq)]
pub enum BridgeFrame {
    Request {
        timestep: u32,
        z_t: WireTensor,
        condition: WireTensor,
    },
    Response {
        timestep: u32,
        eps: WireTensor,
    },
    Error {
        timestep: u32,
        message: String,
    },
}

impl BridgeFrame {
    pub fn timestep(&self) -> u32 {
        match self {
            BridgeFrame::Request { timestep, .. }
            | BridgeFrame::Response { timestep, .. }
            | BridgeFrame::Error { timestep, .. } => *timestep,
        }
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &WireTensor) {
    out.push(t.dims.len() as u8);
    for d in &t.dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_frame(frame: &BridgeFrame) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let (kind, tensors): (MessageType, Vec<&WireTensor>) = match frame {
        BridgeFrame::Request { z_t, condition, .. } => (MessageType::Request, vec![z_t, condition]),
        BridgeFrame::Response { eps, .. } => (MessageType::Response, vec![eps]),
        BridgeFrame::Error { .. } => (MessageType::Error, vec![]),
    };
    out.push(kind as u8);
    out.extend_from_slice(&frame.timestep().to_le_bytes());
    out.push(tensors.len() as u8);
    for t in tensors {
        put_tensor(&mut out, t);
    }
    if let BridgeFrame::Error { message, .. } = frame {
        out.extend_from_slice(&(message.len() as u32).to_le_bytes());
        out.extend_from_slice(message.as_bytes());
    }
    out
}

/// Why a buffer did not yield a frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeError {
    /// More bytes are needed.
    Incomplete,
    Malformed(String),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Incomplete)?;
        let s = self.bytes.get(self.pos..end).ok_or(DecodeError::Incomplete)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> std::result::Result<WireTensor, DecodeError> {
        let rank = self.u8()? as usize;
        if rank > MAX_RANK {
            return Err(DecodeError::Malformed(format!("tensor rank {rank} above {MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(self.u64()?).map_err(|_| DecodeError::Malformed("dimension overflows".into()))?;
            dims.push(d);
        }
        let bytes = element_count(&dims)
            .and_then(|n| n.checked_mul(4))
            .filter(|b| *b <= MAX_FRAME_BYTES)
            .ok_or_else(|| DecodeError::Malformed(format!("tensor dims {dims:?} too large")))?;
        let raw = self.take(bytes)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(WireTensor { dims, data })
    }
}

/// Decodes one frame from the start of `bytes`, returning it with its encoded length.
pub fn decode_frame(bytes: &[u8]) -> std::result::Result<(BridgeFrame, usize), DecodeError> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(DecodeError::Malformed(format!("bad magic {magic:02x?}")));
    }
    let kind = c.u8()?;
    let timestep = c.u32()?;
    let count = c.u8()? as usize;
    match (kind, count) {
        (1, 2) | (2, 1) | (3, 0) => {}
        (1..=3, n) => return Err(DecodeError::Malformed(format!("message type {kind} with {n} tensors"))),
        _ => return Err(DecodeError::Malformed(format!("unknown message type {kind}"))),
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(c.tensor()?);
    }
    let frame = match (kind, count) {
        (1, 2) => {
            let condition = tensors.pop().expect("two tensors");
            let z_t = tensors.pop().expect("two tensors");
            BridgeFrame::Request {
                timestep,
                z_t,
                condition,
            }
        }
        (2, 1) => BridgeFrame::Response {
            timestep,
            eps: tensors.pop().expect("one tensor"),
        },
        (3, 0) => {
            let len = c.u32()? as usize;
            if len > MAX_FRAME_BYTES {
                return Err(DecodeError::Malformed(format!("error message of {len} bytes")));
            }
            let message = String::from_utf8_lossy(c.take(len)?).into_owned();
            BridgeFrame::Error { timestep, message }
        }
        _ => unreachable!("checked above"),
    };
    Ok((frame, c.pos))
}

fn find_magic(bytes: &[u8], from: usize) -> Option<usize> {
    bytes
        .get(from..)?
        .windows(MAGIC.len())
        .position(|w| w == MAGIC)
        .map(|p| p + from)
}

/// Outcome of scanning a stream buffer.
#[derive(Debug, PartialEq)]
pub enum Scan {
    Frame(BridgeFrame),
    /// Bytes were discarded; the message says why.
    Garbage(String),
    NeedMore,
}

/// Incremental frame reader that resynchronizes on the magic after bad input.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn discard_to_magic(&mut self, from: usize) -> usize {
        let cut = find_magic(&self.buf, from).unwrap_or(self.buf.len());
        self.buf.drain(..cut);
        cut
    }

    /// Next frame, discarded garbage, or a request for more input.
    ///
    /// A frame that is incomplete while a later magic is already buffered, or
    /// whose body contains a magic, is treated as truncated.
    pub fn scan(&mut self) -> Scan {
        if self.buf.is_empty() {
            return Scan::NeedMore;
        }
        if !self.buf.starts_with(MAGIC) {
            if MAGIC.starts_with(&self.buf[..self.buf.len().min(MAGIC.len())]) {
                return Scan::NeedMore;
            }
            let n = self.discard_to_magic(1);
            return Scan::Garbage(format!("unknown magic; skipped {n} bytes"));
        }
        match decode_frame(&self.buf) {
            Ok((frame, len)) => {
                if find_magic(&self.buf[..len], 1).is_some() {
                    let n = self.discard_to_magic(1);
                    return Scan::Garbage(format!("truncated frame; skipped {n} bytes"));
                }
                self.buf.drain(..len);
                Scan::Frame(frame)
            }
            Err(DecodeError::Incomplete) => {
                if find_magic(&self.buf, 1).is_some() {
                    let n = self.discard_to_magic(1);
                    Scan::Garbage(format!("truncated frame; skipped {n} bytes"))
                } else {
                    Scan::NeedMore
                }
            }
            Err(DecodeError::Malformed(m)) => {
                let n = self.discard_to_magic(1);
                Scan::Garbage(format!("malformed frame ({m}); skipped {n} bytes"))
            }
        }
    }

    /// Drops everything; returns how many bytes were pending.
    pub fn clear(&mut self) -> usize {
        let n = self.buf.len();
        self.buf.clear();
        n
    }
}

/// Reads the next well-formed frame; `Ok(None)` on clean end of stream.
pub fn read_frame(reader: &mut impl Read, buffer: &mut FrameBuffer) -> Result<Option<BridgeFrame>> {
    let mut chunk = [0u8; 64 * 1024];
    loop {
        match buffer.scan() {
            Scan::Frame(f) => return Ok(Some(f)),
            Scan::Garbage(m) => return Err(Error::parse("bridge stream", m)),
            Scan::NeedMore => {}
        }
        let n = reader
            .read(&mut chunk)
            .map_err(|e| Error::io("reading bridge stream", e))?;
        if n == 0 {
            return if buffer.is_empty() {
                Ok(None)
            } else {
                let pending = buffer.clear();
                Err(Error::parse("bridge stream", format!("stream ended inside a frame ({pending} bytes)")))
            };
        }
        buffer.extend(&chunk[..n]);
    }
}

/// Request and response tallies of a serve loop or client.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BridgeCounters {
    pub requests: usize,
    pub responses: usize,
    pub errors: usize,
}

fn answer(denoiser: &dyn Denoiser, schedule: &NoiseSchedule, frame: BridgeFrame) -> BridgeFrame {
    let BridgeFrame::Request {
        timestep,
        z_t,
        condition,
    } = frame
    else {
        return BridgeFrame::Error {
            timestep: frame.timestep(),
            message: "expected a request frame".into(),
        };
    };
    let fail = |message: String| BridgeFrame::Error { timestep, message };
    let t = timestep as usize;
    if t == 0 || t > schedule.steps() {
        return fail(format!("timestep {t} outside 1..={}", schedule.steps()));
    }
    let (z, c) = match (z_t.to_latent(0), condition.to_latent(0)) {
        (Ok(z), Ok(c)) => (z, c),
        (Err(e), _) | (_, Err(e)) => return fail(e.to_string()),
    };
    match denoiser.predict(&z, t, &c, schedule) {
        Ok(eps) if eps.len() == z_t.data.len() => BridgeFrame::Response {
            timestep,
            eps: WireTensor {
                dims: z_t.dims.clone(),
                data: eps.iter().map(|v| *v as f32).collect(),
            },
        },
        Ok(eps) => fail(format!("denoiser returned {} values for {}", eps.len(), z_t.data.len())),
        Err(e) => fail(e.to_string()),
    }
}

/// Answers request frames until end of input. Malformed input yields an error
/// frame and the loop resumes at the next magic.
///
/// Served latents are numbered from frame 0 in request order.
pub fn serve(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    input: &mut impl Read,
    output: &mut impl Write,
) -> Result<BridgeCounters> {
    let mut buffer = FrameBuffer::new();
    let mut counters = BridgeCounters::default();
    let mut chunk = [0u8; 64 * 1024];
    let mut emit = |frame: &BridgeFrame, counters: &mut BridgeCounters| -> Result<()> {
        match frame {
            BridgeFrame::Error { .. } => counters.errors += 1,
            _ => counters.responses += 1,
        }
        output
            .write_all(&encode_frame(frame))
            .and_then(|_| output.flush())
            .map_err(|e| Error::io("writing bridge response", e))
    };
    loop {
        match buffer.scan() {
            Scan::Frame(frame) => {
                counters.requests += 1;
                let reply = answer(denoiser, schedule, frame);
                emit(&reply, &mut counters)?;
                continue;
            }
            Scan::Garbage(message) => {
                log::warn!("bridge: {message}");
                emit(&BridgeFrame::Error { timestep: 0, message }, &mut counters)?;
                continue;
            }
            Scan::NeedMore => {}
        }
        let n = input.read(&mut chunk).map_err(|e| Error::io("reading bridge input", e))?;
        if n == 0 {
            if !buffer.is_empty() {
                let pending = buffer.clear();
                emit(
                    &BridgeFrame::Error {
                        timestep: 0,
                        message: format!("input ended inside a frame ({pending} bytes)"),
                    },
                    &mut counters,
                )?;
            }
            return Ok(counters);
        }
        buffer.extend(&chunk[..n]);
    }
}

struct ChildLink {
    child: Child,
    stdin: ChildStdin,
    responses: Receiver<Result<Option<BridgeFrame>>>,
}

/// A denoiser served by a child process speaking the frame protocol.
///
/// The child is spawned once through `sh -c` and receives one request at a
/// time.
pub struct ExternalDenoiser {
    command: String,
    timeout: Duration,
    link: Mutex<Option<ChildLink>>,
    stderr_tail: Arc<Mutex<VecDeque<String>>>,
    requests: AtomicUsize,
    responses: AtomicUsize,
}

impl ExternalDenoiser {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(format!("spawning denoiser bridge {command:?}"), e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut buffer = FrameBuffer::new();
            loop {
                let item = read_frame(&mut stdout, &mut buffer);
                let stop = !matches!(item, Ok(Some(_)));
                if tx.send(item).is_err() || stop {
                    return;
                }
            }
        });
        let stderr_tail = Arc::new(Mutex::new(VecDeque::new()));
        let tail = Arc::clone(&stderr_tail);
        std::thread::spawn(move || {
            for line in BufReader::new(stderr).lines() {
                let Ok(line) = line else { return };
                let mut t = tail.lock().expect("stderr tail lock");
                if t.len() == STDERR_TAIL_LINES {
                    t.pop_front();
                }
                t.push_back(line);
            }
        });
        Ok(Self {
            command: command.to_string(),
            timeout,
            link: Mutex::new(Some(ChildLink {
                child,
                stdin,
                responses: rx,
            })),
            stderr_tail,
            requests: AtomicUsize::new(0),
            responses: AtomicUsize::new(0),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn counters(&self) -> BridgeCounters {
        BridgeCounters {
            requests: self.requests.load(Ordering::SeqCst),
            responses: self.responses.load(Ordering::SeqCst),
            errors: 0,
        }
    }

    fn stderr_summary(&self) -> String {
        // give the stderr reader a moment to drain a dying child
        std::thread::sleep(Duration::from_millis(50));
        let tail = self.stderr_tail.lock().expect("stderr tail lock");
        if tail.is_empty() {
            "no stderr output".into()
        } else {
            format!("stderr tail:\n{}", tail.iter().cloned().collect::<Vec<_>>().join("\n"))
        }
    }

    fn broken(&self, link: &mut Option<ChildLink>, t: usize, what: &str) -> Error {
        let status = link.take().map(|mut l| {
            let _ = l.child.kill();
            l.child.wait().map(|s| s.to_string()).unwrap_or_else(|e| e.to_string())
        });
        Error::Denoiser {
            timestep: t,
            message: format!(
                "bridge {:?} {what} (exit status: {}); {}",
                self.command,
                status.unwrap_or_else(|| "unknown".into()),
                self.stderr_summary()
            ),
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict(&self, z_t: &LatentVideo, t: usize, condition: &LatentVideo, _: &NoiseSchedule) -> Result<Vec<f64>> {
        let mut guard = self.link.lock().expect("bridge lock");
        let Some(link) = guard.as_mut() else {
            return Err(Error::Denoiser {
                timestep: t,
                message: format!("bridge {:?} is no longer running", self.command),
            });
        };
        let request = BridgeFrame::Request {
            timestep: t as u32,
            z_t: WireTensor::from_latent(z_t),
            condition: WireTensor::from_latent(condition),
        };
        self.requests.fetch_add(1, Ordering::SeqCst);
        if link
            .stdin
            .write_all(&encode_frame(&request))
            .and_then(|_| link.stdin.flush())
            .is_err()
        {
            return Err(self.broken(&mut guard, t, "stopped accepting requests"));
        }
        let reply = match link.responses.recv_timeout(self.timeout) {
            Ok(Ok(Some(frame))) => frame,
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                return Err(self.broken(&mut guard, t, "exited before answering"));
            }
            Ok(Err(e)) => return Err(self.broken(&mut guard, t, &format!("sent an unreadable reply ({e})"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(self.broken(&mut guard, t, &format!("timed out after {:?}", self.timeout)));
            }
        };
        self.responses.fetch_add(1, Ordering::SeqCst);
        match reply {
            BridgeFrame::Response { timestep, eps } => {
                let want = [z_t.frames(), z_t.height(), z_t.width(), z_t.channels()];
                if timestep as usize != t || eps.dims != want {
                    return Err(Error::Denoiser {
                        timestep: t,
                        message: format!(
                            "bridge answered timestep {timestep} with dims {:?}, expected {t} and {want:?}",
                            eps.dims
                        ),
                    });
                }
                Ok(eps.data.iter().map(|v| *v as f64).collect())
            }
            BridgeFrame::Error { message, .. } => Err(Error::Denoiser {
                timestep: t,
                message: format!("bridge reported: {message}"),
            }),
            BridgeFrame::Request { .. } => Err(Error::Denoiser {
                timestep: t,
                message: "bridge sent a request frame".into(),
            }),
        }
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.link.lock() {
            if let Some(mut link) = guard.take() {
                drop(link.stdin);
                let _ = link.child.kill();
                let _ = link.child.wait();
            }
        }
    }
}
