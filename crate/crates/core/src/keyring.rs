//! Seeds, reproducible random streams and decoder weight initialization.
//!
//! Both parties of the protocol rebuild the cover image and every decoder
//! from 64-bit seeds alone, so everything here has to be bit-reproducible.
//!
//! # Stream construction
//!
//! A stream is identified by a `(seed, label)` pair. Its generator is
//! ChaCha20 (20 rounds, 64-bit block counter, stream id 0) keyed with
//!
//! ```text
//! key = SHA-256( "fnsteg/stream/v1" || 0x00 || seed as 8 little-endian bytes || label )
//! ```
//!
//! Uniform reals take the top 53 bits of each 64-bit output, giving
//! `k * 2^-53` for `k` in `[0, 2^53)`. Gaussian draws use the Box–Muller
//! transform on consecutive uniform pairs, emitting both the cosine and the
//! sine branch; the transcendental functions come from the pure-Rust `libm`
//! port so results do not depend on the platform's math library.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ConvWeights, DecoderSpec, DecoderWeights};

const STREAM_DOMAIN: &[u8] = b"fnsteg/stream/v1";

/// Current key-file schema version.
pub const KEY_FILE_VERSION: u32 = 1;

/// Seeded pseudorandom stream. See the module docs for the exact construction.
#[derive(Debug, Clone)]
pub struct DeterministicRng {
    inner: ChaCha20Rng,
    label: Vec<u8>,
    spare_gaussian: Option<f64>,
}

/// 32-byte ChaCha20 key for the stream `(seed, label)`.
pub fn stream_key(seed: u64, label: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(STREAM_DOMAIN);
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(label);
    h.finalize().into()
}

pub fn derive_stream(seed: u64, label: impl AsRef<[u8]>) -> DeterministicRng {
    let label = label.as_ref();
    DeterministicRng {
        inner: ChaCha20Rng::from_seed(stream_key(seed, label)),
        label: label.to_vec(),
        spare_gaussian: None,
    }
}

impl DeterministicRng {
    pub fn label(&self) -> &[u8] {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` on the 2^-53 grid.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }
}

/// `n` standard normal draws from `rng`.
pub fn sample_gaussian(rng: &mut DeterministicRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian()).collect()
}

/// Weight initialization schemes for the fixed decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitAlgorithm {
    /// Every weight uniform in `[0, 1)`.
    Uniform01,
    /// Every weight standard normal.
    StdGaussian,
    /// Glorot uniform.
    #[default]
    Xavier,
    /// Orthonormal rows (or columns) of the kernel reshaped to `out x (in*k*k)`.
    Orthogonal,
    /// He normal, `N(0, 2 / fan_in)`.
    Kaiming,
}

impl InitAlgorithm {
    pub const ALL: [InitAlgorithm; 5] = [
        InitAlgorithm::Uniform01,
        InitAlgorithm::StdGaussian,
        InitAlgorithm::Xavier,
        InitAlgorithm::Orthogonal,
        InitAlgorithm::Kaiming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitAlgorithm::Uniform01 => "uniform01",
            InitAlgorithm::StdGaussian => "std_gaussian",
            InitAlgorithm::Xavier => "xavier",
            InitAlgorithm::Orthogonal => "orthogonal",
            InitAlgorithm::Kaiming => "kaiming",
        }
    }
}

impl fmt::Display for InitAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitAlgorithm::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = InitAlgorithm::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!(
                "unknown init algorithm {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

/// Glorot fan convention for a convolution: channels times kernel area.
pub fn conv_fans(in_channels: usize, out_channels: usize, kernel: usize) -> (usize, usize) {
    let area = kernel * kernel;
    (in_channels * area, out_channels * area)
}

/// Builds the frozen decoder parameters for `spec` from `seed`.
///
/// Layer `i` draws its kernel from the stream labelled `weights/<i>`, so
/// inserting or resizing a layer leaves the draws of the others unchanged.
/// Biases are zero for every algorithm.
pub fn init_weights(spec: &DecoderSpec, seed: u64, algorithm: InitAlgorithm) -> Result<DecoderWeights> {
    spec.validate()?;
    let layers = spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let mut rng = derive_stream(seed, format!("weights/{i}"));
            let (fan_in, fan_out) = conv_fans(layer.in_channels, layer.out_channels, layer.kernel);
            let n = layer.out_channels * fan_in;
            let kernel = match algorithm {
                InitAlgorithm::Uniform01 => (0..n).map(|_| rng.next_f64()).collect(),
                InitAlgorithm::StdGaussian => sample_gaussian(&mut rng, n),
                InitAlgorithm::Xavier => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| rng.uniform(-a, a)).collect()
                }
                InitAlgorithm::Kaiming => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    sample_gaussian(&mut rng, n).into_iter().map(|z| z * std).collect()
                }
                InitAlgorithm::Orthogonal => orthogonal_matrix(&mut rng, layer.out_channels, fan_in),
            };
            ConvWeights::new(kernel, vec![0.0; layer.out_channels], layer)
        })
        .collect::<Result<Vec<_>>>()?;
    DecoderWeights::new(spec, layers)
}

/// Row-major `rows x cols` matrix with orthonormal rows when `rows <= cols`,
/// orthonormal columns otherwise. Haar-distributed: Gram–Schmidt on a
/// Gaussian matrix.
pub(crate) fn orthogonal_matrix(rng: &mut DeterministicRng, rows: usize, cols: usize) -> Vec<f64> {
    let g = sample_gaussian(rng, rows * cols);
    if rows <= cols {
        orthonormalize_rows(g, rows, cols)
    } else {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = g[r * cols + c];
            }
        }
        let q = orthonormalize_rows(t, cols, rows);
        let mut out = vec![0.0; rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                out[r * cols + c] = q[c * rows + r];
            }
        }
        out
    }
}

// Modified Gram–Schmidt, two passes per vector.
fn orthonormalize_rows(mut m: Vec<f64>, rows: usize, cols: usize) -> Vec<f64> {
    for i in 0..rows {
        for _ in 0..2 {
            for j in 0..i {
                let (done, rest) = m.split_at_mut(i * cols);
                let qj = &done[j * cols..(j + 1) * cols];
                let vi = &mut rest[..cols];
                let p: f64 = qj.iter().zip(vi.iter()).map(|(a, b)| a * b).sum();
                for (v, q) in vi.iter_mut().zip(qj) {
                    *v -= p * q;
                }
            }
        }
        let row = &mut m[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    m
}

/// Pre-shared secrets: the cover seed and one decoder seed per receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub cover_seed: u64,
    pub decoder_seeds: Vec<u64>,
    pub init_algorithm: InitAlgorithm,
}

impl KeyMaterial {
    pub fn new(cover_seed: u64, decoder_seeds: Vec<u64>) -> Result<Self> {
        let k = Self {
            cover_seed,
            decoder_seeds,
            init_algorithm: InitAlgorithm::default(),
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_init(mut self, init_algorithm: InitAlgorithm) -> Self {
        self.init_algorithm = init_algorithm;
        self
    }

    pub fn receivers(&self) -> usize {
        self.decoder_seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.decoder_seeds.is_empty() {
            return Err(Error::KeyFile("at least one decoder seed is required".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.decoder_seeds {
            if !seen.insert(s) {
                return Err(Error::KeyFile(format!(
                    "decoder seed {} appears more than once",
                    format_seed(*s)
                )));
            }
        }
        Ok(())
    }

    pub fn decoder_seed(&self, receiver: usize) -> Result<u64> {
        self.decoder_seeds.get(receiver).copied().ok_or_else(|| {
            Error::Protocol(format!(
                "receiver index {receiver} out of range for {} decoder seed(s)",
                self.decoder_seeds.len()
            ))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = KeyFile {
            version: KEY_FILE_VERSION,
            cover_seed: HexSeed(self.cover_seed),
            decoder_seeds: self.decoder_seeds.iter().copied().map(HexSeed).collect(),
            init_algorithm: self.init_algorithm,
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::KeyFile(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(text).map_err(|e| Error::KeyFile(e.to_string()))?;
        if file.version != KEY_FILE_VERSION {
            return Err(Error::KeyFile(format!(
                "unsupported key file version {} (expected {KEY_FILE_VERSION})",
                file.version
            )));
        }
        let k = KeyMaterial {
            cover_seed: file.cover_seed.0,
            decoder_seeds: file.decoder_seeds.into_iter().map(|s| s.0).collect(),
            init_algorithm: file.init_algorithm,
        };
        k.validate()?;
        Ok(k)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    version: u32,
    cover_seed: HexSeed,
    decoder_seeds: Vec<HexSeed>,
    init_algorithm: InitAlgorithm,
}

pub fn format_seed(seed: u64) -> String {
    format!("{seed:#018x}")
}

pub fn parse_seed(s: &str) -> Result<u64> {
    let digits = s
        .strip_prefix("0x")
        .ok_or_else(|| Error::KeyFile(format!("seed {s:?} lacks the 0x prefix")))?;
    if digits.is_empty() || digits.len() > 16 {
        return Err(Error::KeyFile(format!("seed {s:?} is not 1-16 hex digits")));
    }
    u64::from_str_radix(digits, 16).map_err(|e| Error::KeyFile(format!("seed {s:?}: {e}")))
}

struct HexSeed(u64);

impl Serialize for HexSeed {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_seed(self.0))
    }
}

impl<'de> Deserialize<'de> for HexSeed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_seed(&s).map(HexSeed).map_err(serde::de::Error::custom)
    }
}
