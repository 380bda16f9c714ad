// SPDX-License-Identifier: Apache-2.0

//! Synthetic message bodies.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    /// Uniform random bytes; incompressible.
    #[default]
    Random,
    /// Telemetry-like text records.
    Compressible,
    Zeros,
}

/// Deterministic body generator for one publisher.
#[derive(Debug)]
pub struct PayloadGen {
    kind: PayloadKind,
    size: usize,
    rng: ChaCha8Rng,
    /// Text the compressible frames are cut from.
    corpus: Vec<u8>,
    frame: u64,
}

impl PayloadGen {
    pub fn new(kind: PayloadKind, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = match kind {
            PayloadKind::Compressible => compressible_from(&mut rng, size.max(1) * 2),
            _ => Vec::new(),
        };
        Self { kind, size, rng, corpus, frame: 0 }
    }

    pub fn next_payload(&mut self) -> Vec<u8> {
        match self.kind {
            PayloadKind::Zeros => vec![0; self.size],
            PayloadKind::Random => {
                let mut buf = vec![0; self.size];
                self.rng.fill_bytes(&mut buf);
                buf
            }
            PayloadKind::Compressible => {
                // a window into the corpus, stamped with the frame number
                self.frame += 1;
                let start = self.rng.gen_range(0..=self.corpus.len() - self.size);
                let mut buf = self.corpus[start..start + self.size].to_vec();
                let stamp = self.frame.to_le_bytes();
                let n = stamp.len().min(buf.len());
                buf[..n].copy_from_slice(&stamp[..n]);
                buf
            }
        }
    }
}

/// The bundled compressible corpus: `len` bytes of sensor-log text.
pub fn compressible_corpus(len: usize, seed: u64) -> Vec<u8> {
    compressible_from(&mut ChaCha8Rng::seed_from_u64(seed), len)
}

fn compressible_from(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    const FIELDS: [&str; 6] = ["imu", "odom", "scan", "tf", "pose", "battery"];
    let mut out = String::with_capacity(len + 128);
    let mut seq: u64 = rng.gen_range(0..1_000_000);
    while out.len() < len {
        seq += 1;
        let field = FIELDS[rng.gen_range(0..FIELDS.len())];
        let _ = writeln!(
            out,
            "{{\"seq\":{seq},\"sensor\":\"{field}\",\"x\":{:.4},\"y\":{:.4},\"z\":{:.4},\"ok\":true}}",
            rng.gen_range(-10.0..10.0f64),
            rng.gen_range(-10.0..10.0f64),
            rng.gen_range(-1.0..1.0f64),
        );
    }
    let mut bytes = out.into_bytes();
    bytes.truncate(len);
    bytes
}
