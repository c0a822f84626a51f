//! Sender and receiver paths.
//!
//! The sender regenerates the cover from the cover seed, builds one decoder
//! per receiver from its decoder seed, searches for a perturbation that every
//! decoder maps to its own secret, and transmits `quantize8(cover + delta)`.
//! A receiver regenerates the same cover, subtracts it and runs its decoder.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cover::{generate_cover, CoverProvider};
use crate::distort::{is_on_lattice, quantize8, Channel, CriticHandle};
use crate::error::{Error, Result, Stage, StageExt};
use crate::keyring::KeyMaterial;
use crate::metrics::{quality_report, QualityReport};
use crate::nn::{Decoder, DecoderSpec, ImagePlane, Tensor};
use crate::sps::{search_with_progress, SpsConfig, TraceRow};

/// Payload rates with a stride plan.
pub const SUPPORTED_BPP: [f64; 2] = [6.0, 1.5];

/// Default self-check recovery PSNR below which the result carries a warning.
pub const DEFAULT_WARNING_FLOOR_DB: f64 = 15.0;

/// Payload rate and the decoder strides that realize it: a secret of
/// `H / s x W / s` with `s` the stride product carries `24 / s^2` bits per
/// cover pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CapacityPlan {
    bpp: f64,
    strides: [usize; 3],
}

impl CapacityPlan {
    pub fn bpp(&self) -> f64 {
        self.bpp
    }

    pub fn strides(&self) -> [usize; 3] {
        self.strides
    }

    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn secret_size(&self, cover_height: usize, cover_width: usize) -> (usize, usize) {
        let s = self.stride_product();
        (cover_height / s, cover_width / s)
    }

    /// The default decoder architecture with this plan's strides.
    pub fn decoder_spec(&self) -> DecoderSpec {
        DecoderSpec::standard(self.strides)
    }

    /// Checks that `spec` downsamples by this plan's ratio.
    pub fn check_decoder(&self, spec: &DecoderSpec) -> Result<()> {
        spec.validate()?;
        if spec.stride_product() != self.stride_product() {
            return Err(Error::Config(format!(
                "decoder strides {:?} do not realize {} bpp (needs product {})",
                spec.strides(),
                self.bpp,
                self.stride_product()
            )));
        }
        Ok(())
    }
}

impl Default for CapacityPlan {
    fn default() -> Self {
        plan_capacity(6.0).expect("supported")
    }
}

impl TryFrom<f64> for CapacityPlan {
    type Error = Error;
    fn try_from(bpp: f64) -> Result<Self> {
        plan_capacity(bpp)
    }
}

impl From<CapacityPlan> for f64 {
    fn from(p: CapacityPlan) -> f64 {
        p.bpp
    }
}

impl fmt::Display for CapacityPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.strides;
        write!(f, "{} bpp (strides {a},{b},{c})", self.bpp)
    }
}

pub fn plan_capacity(bpp: f64) -> Result<CapacityPlan> {
    let strides = if bpp == 6.0 {
        [1, 1, 2]
    } else if bpp == 1.5 {
        [1, 2, 2]
    } else {
        return Err(Error::Config(format!(
            "unsupported capacity {bpp} bpp; supported: {SUPPORTED_BPP:?}"
        )));
    };
    Ok(CapacityPlan { bpp, strides })
}

/// Everything the sender needs.
#[derive(Debug, Clone)]
pub struct EmbedRequest {
    pub keys: KeyMaterial,
    /// One secret per receiver, any size; resized to the plan's secret size.
    pub secrets: Vec<ImagePlane>,
    pub cover: CoverProvider,
    pub sps: SpsConfig,
    pub plan: CapacityPlan,
    pub decoder: DecoderSpec,
    /// Channel modelled during the search.
    pub robustness: Channel,
    pub critics: Vec<CriticHandle>,
    pub warning_floor_db: f64,
}

impl EmbedRequest {
    /// A request with the default search settings, the plan's standard
    /// decoder, a lossless channel and no critics.
    pub fn new(keys: KeyMaterial, secrets: Vec<ImagePlane>, cover: CoverProvider, plan: CapacityPlan) -> Self {
        Self {
            keys,
            secrets,
            cover,
            sps: SpsConfig::default(),
            decoder: plan.decoder_spec(),
            plan,
            robustness: Channel::Lossless,
            critics: Vec::new(),
            warning_floor_db: DEFAULT_WARNING_FLOOR_DB,
        }
    }
}

/// Self-check of one receiver.
#[derive(Debug, Clone)]
pub struct ReceiverCheck {
    pub seed: u64,
    /// Secret after resizing to the plan size.
    pub secret: ImagePlane,
    pub original_size: (usize, usize),
    /// What the receiver extracts from the lossless stego.
    pub recovered: ImagePlane,
    pub recovery: QualityReport,
    /// Extraction after the stego went through the robustness channel, when
    /// one is modelled.
    pub after_channel: Option<(ImagePlane, QualityReport)>,
    /// Recovery (after the channel, if any) is under the warning floor.
    pub below_floor: bool,
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    /// The transmitted image, on the 8-bit lattice.
    pub stego: ImagePlane,
    pub cover: ImagePlane,
    /// Perturbation before quantization.
    pub delta: Tensor,
    pub trace: Vec<TraceRow>,
    pub best_iteration: usize,
    /// Stego against cover.
    pub stego_quality: QualityReport,
    pub receivers: Vec<ReceiverCheck>,
}

impl EmbedResult {
    pub fn warnings(&self) -> Vec<String> {
        self.receivers
            .iter()
            .enumerate()
            .filter(|(_, r)| r.below_floor)
            .map(|(t, r)| {
                let db = r.after_channel.as_ref().map_or(r.recovery.psnr_db, |(_, q)| q.psnr_db);
                format!("receiver {t}: self-check recovery {db:.2} dB is below the warning floor")
            })
            .collect()
    }
}

fn build_decoders(keys: &KeyMaterial, spec: &DecoderSpec) -> Result<Vec<Decoder>> {
    keys.decoder_seeds
        .iter()
        .map(|&s| Decoder::from_seed(spec, s, keys.init_algorithm))
        .collect()
}

pub fn embed(req: &EmbedRequest) -> Result<EmbedResult> {
    embed_with_progress(req, |_| {})
}

/// [`embed`] with a callback on every search iteration.
pub fn embed_with_progress(req: &EmbedRequest, progress: impl FnMut(&TraceRow)) -> Result<EmbedResult> {
    req.keys.validate().stage(Stage::Keys)?;
    if req.secrets.len() != req.keys.receivers() {
        return Err(Error::Config(format!(
            "{} secrets for {} decoder seeds",
            req.secrets.len(),
            req.keys.receivers()
        )))
        .stage(Stage::Keys);
    }
    req.sps.validate().stage(Stage::Search)?;
    if !(req.warning_floor_db.is_finite() || req.warning_floor_db == f64::NEG_INFINITY) {
        return Err(Error::Config("warning floor must not be NaN or +inf".into()));
    }
    req.plan.check_decoder(&req.decoder).stage(Stage::Decoder)?;
    let decoders = build_decoders(&req.keys, &req.decoder).stage(Stage::Decoder)?;
    let cover = generate_cover(&req.cover, req.plan.stride_product()).stage(Stage::Cover)?;
    let (sh, sw) = req
        .decoder
        .check_input(cover.height(), cover.width())
        .stage(Stage::Cover)?;

    let mut secrets = Vec::with_capacity(req.secrets.len());
    let mut original = Vec::with_capacity(req.secrets.len());
    for (t, s) in req.secrets.iter().enumerate() {
        let prepared = (|| {
            if s.channels() != 3 {
                return Err(Error::Shape(format!("secret {t} has {} channels", s.channels())));
            }
            s.check_unit_range(&format!("secret {t}"))?;
            Ok(s.resize_bilinear(sh, sw))
        })()
        .stage(Stage::Secret)?;
        original.push((s.height(), s.width()));
        secrets.push(prepared);
    }

    let outcome = search_with_progress(
        &cover,
        &secrets,
        &decoders,
        &req.critics,
        req.robustness,
        &req.sps,
        progress,
    )
    .stage(Stage::Search)?;

    let stego = quantize8(&cover.add(&outcome.delta)?);
    let stego_quality = quality_report(&stego, &cover).stage(Stage::Quantize)?;
    let received_stego = match req.robustness {
        Channel::Lossless => None,
        ch => Some(ch.transmit(&stego).stage(Stage::Quantize)?),
    };

    let mut receivers = Vec::with_capacity(decoders.len());
    for (t, ((decoder, secret), size)) in decoders.iter().zip(secrets).zip(original).enumerate() {
        let recovered = decode_from(&stego, &cover, decoder).stage(Stage::Extract)?;
        let recovery = quality_report(&recovered, &secret).stage(Stage::Extract)?;
        let after_channel = match &received_stego {
            None => None,
            Some(rx) => {
                let r = decode_from(rx, &cover, decoder).stage(Stage::Extract)?;
                let q = quality_report(&r, &secret).stage(Stage::Extract)?;
                Some((r, q))
            }
        };
        // with a channel in the loop the search targets what survives it
        let checked = after_channel.as_ref().map_or(recovery.psnr_db, |(_, q)| q.psnr_db);
        receivers.push(ReceiverCheck {
            seed: req.keys.decoder_seeds[t],
            secret,
            original_size: size,
            below_floor: checked < req.warning_floor_db,
            recovered,
            recovery,
            after_channel,
        });
    }

    Ok(EmbedResult {
        stego,
        cover,
        delta: outcome.delta,
        trace: outcome.trace,
        best_iteration: outcome.best_iteration,
        stego_quality,
        receivers,
    })
}

fn decode_from(stego: &ImagePlane, cover: &ImagePlane, decoder: &Decoder) -> Result<ImagePlane> {
    Ok(quantize8(&decoder.forward(&stego.sub(cover)?)?))
}

/// Receiver path: regenerate the cover, subtract it from the stego and decode
/// with receiver `receiver`'s decoder. The output is quantized to 8 bits.
pub fn extract(
    stego: &ImagePlane,
    keys: &KeyMaterial,
    receiver: usize,
    cover: &CoverProvider,
    decoder: &DecoderSpec,
) -> Result<ImagePlane> {
    let seed = keys.decoder_seed(receiver).stage(Stage::Keys)?;
    if !is_on_lattice(stego) {
        return Err(Error::Range("stego is not an 8-bit image".into())).stage(Stage::Extract);
    }
    let c = generate_cover(cover, decoder.stride_product()).stage(Stage::Cover)?;
    if c.shape() != stego.shape() {
        return Err(Error::Protocol(format!(
            "stego is {}x{} but the regenerated cover is {}x{}; wrong key or plan",
            stego.height(),
            stego.width(),
            c.height(),
            c.width()
        )))
        .stage(Stage::Extract);
    }
    let d = Decoder::from_seed(decoder, seed, keys.init_algorithm).stage(Stage::Decoder)?;
    decode_from(stego, &c, &d).stage(Stage::Extract)
}

/// PSNR of each receiver's extraction against its secret; a convenience for
/// batch evaluation.
pub fn recovery_psnrs(result: &EmbedResult) -> Vec<f64> {
    result.receivers.iter().map(|r| r.recovery.psnr_db).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::synthetic_image;

    #[test]
    fn capacity_plans() {
        let p = plan_capacity(6.0).unwrap();
        assert_eq!(p.strides(), [1, 1, 2]);
        assert_eq!(p.secret_size(512, 512), (256, 256));
        let bits = 24.0 * 256.0 * 256.0 / (512.0 * 512.0);
        assert_eq!(bits, p.bpp());
        let q = plan_capacity(1.5).unwrap();
        assert_eq!(q.strides(), [1, 2, 2]);
        assert_eq!(q.secret_size(512, 512), (128, 128));
        let err = plan_capacity(3.0).unwrap_err().to_string();
        assert!(err.contains("[6.0, 1.5]"), "{err}");
        for p in [p, q] {
            let s = p.stride_product() as f64;
            assert_eq!(p.bpp(), 24.0 / (s * s));
        }
    }

    #[test]
    fn plan_serializes_as_number() {
        let p: CapacityPlan = serde_json::from_str("1.5").unwrap();
        assert_eq!(p.strides(), [1, 2, 2]);
        assert_eq!(serde_json::to_string(&p).unwrap(), "1.5");
        assert!(serde_json::from_str::<CapacityPlan>("3.0").is_err());
    }

    #[test]
    fn decoder_must_match_plan() {
        let p = plan_capacity(6.0).unwrap();
        assert!(p.check_decoder(&DecoderSpec::standard([1, 2, 2])).is_err());
        assert!(p.check_decoder(&DecoderSpec::standard([2, 1, 1])).is_ok());
    }

    fn small_request(seeds: Vec<u64>) -> EmbedRequest {
        let keys = KeyMaterial::new(11, seeds.clone()).unwrap();
        let secrets = seeds.iter().map(|&s| synthetic_image(s, 40, 40)).collect();
        let mut req = EmbedRequest::new(
            keys,
            secrets,
            CoverProvider::procedural(11, 32, 32),
            plan_capacity(6.0).unwrap(),
        );
        req.sps.total_iters = 40;
        req.sps.gamma_start_iter = 40;
        req
    }

    #[test]
    fn embed_then_extract_round_trip() {
        let req = small_request(vec![5]);
        let res = embed(&req).unwrap();
        assert!(is_on_lattice(&res.stego));
        assert_eq!(res.receivers[0].original_size, (40, 40));
        assert_eq!(res.receivers[0].secret.shape(), (3, 16, 16));
        let (linf, _) = crate::metrics::residual_stats(&res.stego, &res.cover).unwrap();
        assert!(linf <= req.sps.epsilon + 1.0 / 510.0);
        assert!(res.delta.max_abs() <= req.sps.epsilon);
        // stego - C is the quantized perturbation
        let dprime = res.stego.sub(&res.cover).unwrap();
        assert!(dprime.sub(&res.delta).unwrap().max_abs() <= 1.0 / 510.0 + 1e-12);
        let out = extract(&res.stego, &req.keys, 0, &req.cover, &req.decoder).unwrap();
        assert_eq!(out, res.receivers[0].recovered);
        let psnr = res.receivers[0].recovery.psnr_db;
        assert_eq!(psnr, crate::metrics::psnr(&out, &res.receivers[0].secret).unwrap());
    }

    #[test]
    fn request_errors_carry_stage() {
        let mut req = small_request(vec![5]);
        req.secrets.push(synthetic_image(9, 16, 16));
        let e = embed(&req).unwrap_err();
        assert!(matches!(e, Error::InStage { stage: Stage::Keys, .. }), "{e}");

        let mut req = small_request(vec![5]);
        req.cover = CoverProvider::procedural(1, 31, 32);
        let e = embed(&req).unwrap_err();
        assert!(
            matches!(
                e,
                Error::InStage {
                    stage: Stage::Cover,
                    ..
                }
            ),
            "{e}"
        );

        let mut req = small_request(vec![5]);
        req.secrets[0] = req.secrets[0].map(|v| v * 2.0);
        let e = embed(&req).unwrap_err();
        assert!(
            matches!(
                e,
                Error::InStage {
                    stage: Stage::Secret,
                    ..
                }
            ),
            "{e}"
        );
        assert!(matches!(e.root(), Error::Range(_)));
    }

    #[test]
    fn extract_rejects_mismatches() {
        let keys = KeyMaterial::new(1, vec![2]).unwrap();
        let stego = quantize8(&Tensor::filled(3, 32, 32, 0.5));
        let spec = plan_capacity(6.0).unwrap().decoder_spec();
        let other = CoverProvider::procedural(1, 64, 64);
        let e = extract(&stego, &keys, 0, &other, &spec).unwrap_err();
        assert!(matches!(e.root(), Error::Protocol(_)), "{e}");
        let e = extract(&stego, &keys, 1, &CoverProvider::procedural(1, 32, 32), &spec).unwrap_err();
        assert!(matches!(e.root(), Error::Protocol(_)), "{e}");
        let off = Tensor::filled(3, 32, 32, 0.1234);
        let e = extract(&off, &keys, 0, &CoverProvider::procedural(1, 32, 32), &spec).unwrap_err();
        assert!(matches!(e.root(), Error::Range(_)), "{e}");
    }
}
