//! Explicit feedback: the channel at each pilot location, scaled to unit mean
//! power and scalar-quantized per real/imaginary component.
//!
//! Payload: for each pilot location, each port, real then imaginary index,
//! `bits` each. The scale factor is not reported; only directions matter downstream.

use serde::{Deserialize, Serialize};

use super::{BitWriter, FeedbackMessage, FeedbackOverhead, SchemeTag};
use crate::channel::ChannelTensor;
use crate::error::{Error, Result};
use crate::hash::config_hash;
use crate::numerics::C64;
use crate::pilots::{build_pattern, interpolate, ChannelEstimate, Density, Interpolation, SUBCARRIERS_PER_RB};
use crate::quantizer::UniformQuantizer;

pub const DEFAULT_EXPLICIT_BITS: u32 = 5;
/// Three times the per-component RMS (`1/√2`) of unit-power entries.
pub const DEFAULT_EXPLICIT_CLIP: f64 = 3.0 * std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplicitConfig {
    pub density: Density,
    pub ports: usize,
    pub rb_count: usize,
    pub bits: u32,
    pub clip: f64,
}

impl ExplicitConfig {
    pub fn new(density: Density, ports: usize, rb_count: usize) -> Self {
        Self {
            density,
            ports,
            rb_count,
            bits: DEFAULT_EXPLICIT_BITS,
            clip: DEFAULT_EXPLICIT_CLIP,
        }
    }

    pub fn quantizer(&self) -> Result<UniformQuantizer> {
        UniformQuantizer::new(self.bits, self.clip)
    }

    pub fn locations(&self) -> usize {
        self.density.locations(self.rb_count)
    }

    fn hash(&self) -> [u8; 8] {
        config_hash(self)
    }
}

impl FeedbackOverhead for ExplicitConfig {
    /// `locations × ports × 2 × bits`.
    fn bits_per_report(&self) -> usize {
        self.locations() * self.ports * 2 * self.bits as usize
    }
}

pub fn explicit_encode(est: &ChannelEstimate, cfg: &ExplicitConfig) -> Result<FeedbackMessage> {
    let q = cfg.quantizer()?;
    let h = &est.channel;
    if est.pattern.density != cfg.density || h.nt() != cfg.ports || est.pattern.rb_count != cfg.rb_count {
        return Err(Error::InvalidArgument(format!(
            "estimate (density {}, {} ports, {} RBs) does not match explicit config (density {}, {} ports, {} RBs)",
            est.pattern.density,
            h.nt(),
            est.pattern.rb_count,
            cfg.density,
            cfg.ports,
            cfg.rb_count
        )));
    }
    if h.nr() != 1 {
        return Err(Error::InvalidArgument("explicit feedback reports a single rx port".into()));
    }
    let values: Vec<C64> = est
        .pattern
        .positions
        .iter()
        .flat_map(|&p| h.row(p, 0).iter().copied())
        .collect();
    let power = values.iter().map(|v| v.norm_sqr()).sum::<f64>() / values.len().max(1) as f64;
    let scale = if power > 0.0 { 1.0 / power.sqrt() } else { 1.0 };
    let mut w = BitWriter::new();
    for v in &values {
        w.push(q.index(v.re * scale), cfg.bits);
        w.push(q.index(v.im * scale), cfg.bits);
    }
    let msg = FeedbackMessage::from_writer(SchemeTag::Explicit, cfg.hash(), w);
    assert_eq!(msg.bit_len, cfg.bits_per_report(), "explicit payload length diverged from overhead formula");
    Ok(msg)
}

/// Dequantizes and interpolates to `rb_count·12` subcarriers.
pub fn explicit_decode(msg: &FeedbackMessage, cfg: &ExplicitConfig, mode: Interpolation) -> Result<ChannelTensor> {
    msg.expect(SchemeTag::Explicit, cfg.hash(), cfg.bits_per_report())?;
    let q = cfg.quantizer()?;
    let pattern = build_pattern(cfg.density, cfg.ports, cfg.rb_count)?;
    let mut r = msg.reader();
    let mut rows = Vec::with_capacity(cfg.locations() * cfg.ports);
    for _ in 0..cfg.locations() * cfg.ports {
        let re = q.value(r.read(cfg.bits)?);
        let im = q.value(r.read(cfg.bits)?);
        rows.push(C64::new(re, im));
    }
    interpolate(
        &pattern.positions,
        &rows,
        cfg.rb_count * SUBCARRIERS_PER_RB,
        1,
        cfg.ports,
        mode,
    )
}
