//! Host side of the device link: transports, the echo check, stop-and-wait
//! window streaming and evaluation reports.

use std::collections::VecDeque;
use std::fs;
use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::micro::{Device, MODE_CLASSIFY, MODE_ECHO, READY};
use crate::nn::{EvalReport, PROB_FLOOR};
use crate::windows::{Origin, Window, WINDOW_VALUES};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum HostError {
    #[error("no reply within {0:?}")]
    TransportTimeout(Duration),
    #[error("expected {expected} reply bytes, got {got}")]
    ShortReply { expected: usize, got: usize },
    #[error("device sent {0:#04x} instead of the ready byte")]
    NotReady(u8),
    #[error("window has {0} values, frames carry {WINDOW_VALUES}")]
    BadWindow(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A byte pipe to a device.
pub trait Transport {
    fn send(&mut self, bytes: &[u8]) -> Result<(), HostError>;
    /// Blocks until exactly `n` bytes arrive.
    fn recv(&mut self, n: usize) -> Result<Vec<u8>, HostError>;
}

/// An in-process link driving a [`Device`] directly.
pub struct LocalLink {
    device: Device,
    inbox: VecDeque<u8>,
}

impl LocalLink {
    /// `boot` is what the device emitted on init.
    pub fn new(device: Device, boot: Vec<u8>) -> Self {
        Self { device, inbox: boot.into() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }
}

impl Transport for LocalLink {
    fn send(&mut self, bytes: &[u8]) -> Result<(), HostError> {
        for &b in bytes {
            self.inbox.extend(self.device.push_byte(b));
        }
        Ok(())
    }

    fn recv(&mut self, n: usize) -> Result<Vec<u8>, HostError> {
        if self.inbox.len() < n {
            return Err(HostError::ShortReply { expected: n, got: self.inbox.len() });
        }
        Ok(self.inbox.drain(..n).collect())
    }
}

/// A device served over TCP.
pub struct TcpLink {
    stream: TcpStream,
    timeout: Duration,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, HostError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(Self { stream, timeout })
    }
}

impl Transport for TcpLink {
    fn send(&mut self, bytes: &[u8]) -> Result<(), HostError> {
        self.stream.write_all(bytes)?;
        Ok(())
    }

    fn recv(&mut self, n: usize) -> Result<Vec<u8>, HostError> {
        let mut buf = vec![0u8; n];
        let mut got = 0;
        while got < n {
            match self.stream.read(&mut buf[got..]) {
                Ok(0) => return Err(HostError::ShortReply { expected: n, got }),
                Ok(k) => got += k,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(HostError::TransportTimeout(self.timeout))
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(buf)
    }
}

/// Consumes the ready byte and selects a mode.
fn start(t: &mut dyn Transport, mode: u8) -> Result<(), HostError> {
    let ready = t.recv(1)?[0];
    if ready != READY {
        return Err(HostError::NotReady(ready));
    }
    t.send(&[mode])
}

/// Waits for a freshly booted device and puts it in echo mode.
pub fn start_echo(t: &mut dyn Transport) -> Result<(), HostError> {
    start(t, MODE_ECHO)
}

/// Waits for a freshly booted device and puts it in classify mode.
pub fn start_classify(t: &mut dyn Transport) -> Result<(), HostError> {
    start(t, MODE_CLASSIFY)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoMismatch {
    pub index: usize,
    pub sent: f32,
    pub expected: f32,
    pub received: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoReport {
    pub sent: usize,
    pub mismatches: Vec<EchoMismatch>,
}

impl EchoReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = format!("echo: {}/{} replies exact\n", self.sent - self.mismatches.len(), self.sent);
        for m in &self.mismatches {
            s += &format!(
                "  #{}: sent {:e}, expected {:e} ({:#010x}), got {:e} ({:#010x})\n",
                m.index,
                m.sent,
                m.expected,
                m.expected.to_bits(),
                m.received,
                m.received.to_bits()
            );
        }
        s
    }
}

/// Sends each value and checks the reply is `value + 1.0` bit for bit. The
/// device must already be in echo mode.
pub fn echo_check(t: &mut dyn Transport, values: &[f32]) -> Result<EchoReport, HostError> {
    let mut mismatches = Vec::new();
    for (index, &v) in values.iter().enumerate() {
        t.send(&v.to_le_bytes())?;
        let reply = t.recv(4)?;
        let received = f32::from_le_bytes(reply.try_into().unwrap());
        let expected = v + 1.0;
        if received.to_bits() != expected.to_bits() {
            mismatches.push(EchoMismatch { index, sent: v, expected, received });
        }
    }
    Ok(EchoReport { sent: values.len(), mismatches })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub origin: Origin,
    pub true_label: u8,
    pub device_label: u8,
    pub prob_uint8: u8,
    pub round_trip_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamLog {
    pub entries: Vec<StreamEntry>,
}

impl StreamLog {
    pub fn labels(&self) -> (Vec<u8>, Vec<u8>) {
        self.entries.iter().map(|e| (e.true_label, e.device_label)).unzip()
    }
}

/// Streams raw windows one at a time, waiting for each 2-byte reply. The
/// device must already be in classify mode.
pub fn stream_windows<'a>(
    t: &mut dyn Transport,
    windows: impl IntoIterator<Item = &'a Window>,
) -> Result<StreamLog, HostError> {
    let mut log = StreamLog::default();
    let mut frame = Vec::with_capacity(WINDOW_VALUES * 4);
    for w in windows {
        if w.values.len() != WINDOW_VALUES {
            return Err(HostError::BadWindow(w.values.len()));
        }
        frame.clear();
        frame.extend(w.values.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        let started = Instant::now();
        t.send(&frame)?;
        let reply = t.recv(2)?;
        let round_trip_ms = started.elapsed().as_secs_f64() * 1e3;
        log.entries.push(StreamEntry {
            origin: w.origin,
            true_label: w.label,
            device_label: reply[0],
            prob_uint8: reply[1],
            round_trip_ms,
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// The `report.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub confusion: [[usize; 2]; 2],
    pub accuracy: f64,
    pub per_class: [f64; 2],
    pub latency_ms: Latency,
    pub n_windows: usize,
}

/// Evaluation of a stream log. The loss uses the device's 8-bit probabilities.
pub fn report(log: &StreamLog) -> (EvalReport, StreamReport) {
    let (truth, predicted) = log.labels();
    let loss = if log.entries.is_empty() {
        0.0
    } else {
        log.entries
            .iter()
            .map(|e| {
                let p = e.prob_uint8 as f64 / 255.0;
                let p_true = if e.device_label == e.true_label { p } else { 1.0 - p };
                -p_true.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln()
            })
            .sum::<f64>()
            / log.entries.len() as f64
    };
    let eval = EvalReport::from_predictions(&truth, &predicted, loss);
    let mut times: Vec<f64> = log.entries.iter().map(|e| e.round_trip_ms).collect();
    times.sort_by(f64::total_cmp);
    let latency_ms = Latency {
        p50: percentile(&times, 50.0),
        p95: percentile(&times, 95.0),
        max: times.last().copied().unwrap_or(0.0),
    };
    let summary = StreamReport {
        confusion: eval.confusion,
        accuracy: eval.accuracy_overall,
        per_class: eval.accuracy_per_class,
        latency_ms,
        n_windows: log.entries.len(),
    };
    (eval, summary)
}

pub fn write_report(path: &Path, report: &StreamReport) -> Result<(), HostError> {
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

impl StreamReport {
    pub fn table(&self) -> String {
        format!(
            "windows {}  latency p50 {:.3} ms  p95 {:.3} ms  max {:.3} ms\n",
            self.n_windows, self.latency_ms.p50, self.latency_ms.p95, self.latency_ms.max
        )
    }
}
