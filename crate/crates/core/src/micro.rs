//! A simulated microcontroller running a packed model behind a byte protocol.
//!
//! After boot the device sends [`READY`]. The first byte selects the mode:
//! [`MODE_ECHO`] or [`MODE_CLASSIFY`]; anything else is answered with [`NAK`].
//!
//! * Echo: every 4 bytes form a little-endian f32 `x`; the device replies with
//!   the 4 bytes of `x + 1.0`.
//! * Classify: bytes fill a 387-value f32 frame (time-major, x y z per step).
//!   When the frame is full the device standardizes, quantizes and classifies
//!   it, replies `[label, prob_uint8]` and starts reading the next frame.
//!
//! Flash use is the model blob plus [`RUNTIME_FLASH_BYTES`]. RAM use is
//! [`RUNTIME_RAM_BYTES`] plus the input frame, and after the first inference
//! also the scratch arena (prepared input and two ping-pong activation
//! buffers).

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use thiserror::Error;

use crate::export::{forward_into, prepare_into, ExportError, PackedModel, Prediction};
use crate::windows::WINDOW_VALUES;

pub const READY: u8 = 0xA5;
pub const NAK: u8 = 0x15;
pub const MODE_ECHO: u8 = 0x45;
pub const MODE_CLASSIFY: u8 = 0x43;

/// Bytes in one classify frame.
pub const FRAME_BYTES: usize = WINDOW_VALUES * 4;
pub const DEFAULT_FLASH_BUDGET: usize = 1_048_576;
pub const DEFAULT_RAM_BUDGET: usize = 262_144;
/// Flash taken by the runtime image itself.
pub const RUNTIME_FLASH_BYTES: usize = 86_352;
/// RAM taken by the runtime outside the model buffers: stack, I/O and globals.
pub const RUNTIME_RAM_BYTES: usize = 16_384;

#[derive(Debug, Error)]
pub enum MicroError {
    #[error("flash budget exceeded: need {needed} bytes, have {budget}")]
    FlashBudgetExceeded { needed: usize, budget: usize },
    #[error("RAM budget exceeded: need {needed} bytes, have {budget}")]
    RamBudgetExceeded { needed: usize, budget: usize },
    #[error("model does not load: {0}")]
    BadModel(#[from] ExportError),
    #[error("model expects {0} input values, the protocol carries {WINDOW_VALUES}")]
    InputShape(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceConfig {
    pub flash_budget: usize,
    pub ram_budget: usize,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self { flash_budget: DEFAULT_FLASH_BUDGET, ram_budget: DEFAULT_RAM_BUDGET }
    }
}

/// Byte accounting for flash and RAM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arena {
    pub flash_budget: usize,
    pub ram_budget: usize,
    pub flash_used: usize,
    ram_used: usize,
    ram_high_water: usize,
}

impl Arena {
    fn new(cfg: DeviceConfig, flash_used: usize) -> Result<Self, MicroError> {
        if flash_used > cfg.flash_budget {
            return Err(MicroError::FlashBudgetExceeded { needed: flash_used, budget: cfg.flash_budget });
        }
        Ok(Self {
            flash_budget: cfg.flash_budget,
            ram_budget: cfg.ram_budget,
            flash_used,
            ram_used: 0,
            ram_high_water: 0,
        })
    }

    pub fn alloc(&mut self, bytes: usize) -> Result<(), MicroError> {
        let needed = self.ram_used + bytes;
        if needed > self.ram_budget {
            return Err(MicroError::RamBudgetExceeded { needed, budget: self.ram_budget });
        }
        self.ram_used = needed;
        self.ram_high_water = self.ram_high_water.max(needed);
        Ok(())
    }

    pub fn ram_used(&self) -> usize {
        self.ram_used
    }

    pub fn ram_high_water(&self) -> usize {
        self.ram_high_water
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryReport {
    pub flash_used: usize,
    pub flash_pct: f64,
    pub ram_high_water: usize,
    pub ram_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Unset,
    Echo,
    Classify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Read,
    Process,
}

struct Scratch {
    input: Vec<i8>,
    a: Vec<i8>,
    b: Vec<i8>,
}

pub struct Device {
    model: PackedModel,
    config: DeviceConfig,
    arena: Arena,
    mode: Mode,
    state: State,
    frame: Box<[f32; WINDOW_VALUES]>,
    fill_count: usize,
    pending: [u8; 4],
    pending_len: usize,
    scratch: Option<Scratch>,
    inferences: u64,
}

fn scratch_bytes(model: &PackedModel) -> usize {
    WINDOW_VALUES + 2 * model.max_activation_len()
}

impl Device {
    /// Loads `model_bytes` and boots the device. Returns the device and the
    /// bytes it emits on boot.
    pub fn init(model_bytes: &[u8], config: DeviceConfig) -> Result<(Self, Vec<u8>), MicroError> {
        let flash_used = model_bytes.len() + RUNTIME_FLASH_BYTES;
        let arena = Arena::new(config, flash_used)?;
        let model = PackedModel::from_bytes(model_bytes)?;
        let inputs = model.input_shape.0 * model.input_shape.1;
        if inputs != WINDOW_VALUES {
            return Err(MicroError::InputShape(inputs));
        }
        let peak = RUNTIME_RAM_BYTES + FRAME_BYTES + scratch_bytes(&model);
        if peak > config.ram_budget {
            return Err(MicroError::RamBudgetExceeded { needed: peak, budget: config.ram_budget });
        }
        let mut device = Self {
            model,
            config,
            arena,
            mode: Mode::Unset,
            state: State::Read,
            frame: Box::new([0.0; WINDOW_VALUES]),
            fill_count: 0,
            pending: [0; 4],
            pending_len: 0,
            scratch: None,
            inferences: 0,
        };
        let ready = device.reinit();
        Ok((device, ready))
    }

    /// Resets to the freshly booted state and returns the boot bytes.
    pub fn reinit(&mut self) -> Vec<u8> {
        self.arena = Arena::new(self.config, self.arena.flash_used).expect("checked at init");
        self.arena.alloc(RUNTIME_RAM_BYTES + FRAME_BYTES).expect("checked at init");
        self.mode = Mode::Unset;
        self.state = State::Read;
        self.frame.fill(0.0);
        self.fill_count = 0;
        self.pending_len = 0;
        self.scratch = None;
        self.inferences = 0;
        vec![READY]
    }

    pub fn model(&self) -> &PackedModel {
        &self.model
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn fill_count(&self) -> usize {
        self.fill_count
    }

    pub fn inferences(&self) -> u64 {
        self.inferences
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn memory_report(&self) -> MemoryReport {
        MemoryReport {
            flash_used: self.arena.flash_used,
            flash_pct: 100.0 * self.arena.flash_used as f64 / self.arena.flash_budget as f64,
            ram_high_water: self.arena.ram_high_water,
            ram_pct: 100.0 * self.arena.ram_high_water as f64 / self.arena.ram_budget as f64,
        }
    }

    /// Feeds one byte and returns whatever the device sends back.
    pub fn push_byte(&mut self, b: u8) -> Vec<u8> {
        match self.mode {
            Mode::Unset => match b {
                MODE_ECHO => {
                    self.mode = Mode::Echo;
                    Vec::new()
                }
                MODE_CLASSIFY => {
                    self.mode = Mode::Classify;
                    Vec::new()
                }
                _ => vec![NAK],
            },
            Mode::Echo => match self.take_f32(b) {
                Some(x) => (x + 1.0).to_le_bytes().to_vec(),
                None => Vec::new(),
            },
            Mode::Classify => {
                let Some(x) = self.take_f32(b) else {
                    return Vec::new();
                };
                self.frame[self.fill_count] = x;
                self.fill_count += 1;
                if self.fill_count < WINDOW_VALUES {
                    return Vec::new();
                }
                self.state = State::Process;
                let p = self.process();
                self.fill_count = 0;
                self.state = State::Read;
                vec![p.label, p.prob_uint8]
            }
        }
    }

    /// Feeds a run of bytes and concatenates the replies.
    pub fn push_bytes(&mut self, bytes: &[u8]) -> Vec<u8> {
        bytes.iter().flat_map(|&b| self.push_byte(b)).collect()
    }

    fn take_f32(&mut self, b: u8) -> Option<f32> {
        self.pending[self.pending_len] = b;
        self.pending_len += 1;
        if self.pending_len < 4 {
            return None;
        }
        self.pending_len = 0;
        Some(f32::from_le_bytes(self.pending))
    }

    fn process(&mut self) -> Prediction {
        if self.scratch.is_none() {
            self.arena.alloc(scratch_bytes(&self.model)).expect("checked at init");
            let n = self.model.max_activation_len();
            self.scratch = Some(Scratch { input: vec![0; WINDOW_VALUES], a: vec![0; n], b: vec![0; n] });
        }
        let s = self.scratch.as_mut().unwrap();
        prepare_into(&self.model, &self.frame[..], &mut s.input);
        self.inferences += 1;
        forward_into(&self.model, &s.input, &mut s.a, &mut s.b)
    }
}

/// Runs one device session over `stream`: boot bytes first, then replies to
/// every byte received until the peer closes.
pub fn serve_connection<S: Read + Write>(
    mut stream: S,
    model_bytes: &[u8],
    config: DeviceConfig,
) -> Result<(), MicroError> {
    let (mut device, boot) = Device::init(model_bytes, config)?;
    stream.write_all(&boot)?;
    stream.flush()?;
    let mut buf = [0u8; 4096];
    loop {
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        let out = device.push_bytes(&buf[..n]);
        if !out.is_empty() {
            stream.write_all(&out)?;
            stream.flush()?;
        }
    }
}

/// Accepts connections forever, each with a freshly booted device.
pub fn serve(listener: TcpListener, model_bytes: Vec<u8>, config: DeviceConfig) -> Result<(), MicroError> {
    Device::init(&model_bytes, config)?;
    let model_bytes = std::sync::Arc::new(model_bytes);
    for stream in listener.incoming() {
        let stream: TcpStream = stream?;
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        log::info!("device session opened for {peer}");
        let bytes = model_bytes.clone();
        thread::spawn(move || {
            if let Err(e) = serve_connection(stream, &bytes, config) {
                log::warn!("device session for {peer} ended: {e}");
            }
        });
    }
    Ok(())
}
