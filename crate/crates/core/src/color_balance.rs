//! Global online color balancing of the stitched frame.
//!
//! Each channel gets a tone curve made of three pieces: a gamma segment for
//! the dark tail below `m1`, a straight line between `m1` and `m2`, and a
//! gamma segment for the bright tail above `m2`. The thresholds are the
//! `lambda` and `1 - lambda` quantiles of the channel histogram, averaged over
//! the last three frames so the curve does not flicker.
//!
//! The segment formulas are an interpretation; only the function families are
//! fixed by the method. With anchors `L(m) = lerp(black, white, m / 255)`:
//!
//! ```text
//! dark    F(x) = black + (L(m1) - black) * (x / m1)^gamma_dark
//! linear  F(x) = line through (m1, L(m1)) and (m2, L(m2))
//! bright  F(x) = L(m2) + (white - L(m2)) * ((x - m2) / (255 - m2))^gamma_bright
//! ```

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StitchError};
use crate::frame::{to_level, Frame, Region};
use crate::histogram::{cdf, Histogram256};

pub const DEFAULT_LAMBDA: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 1.5;

/// Per-channel dark and bright thresholds for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceThresholds {
    pub m1: [u8; 3],
    pub m2: [u8; 3],
    pub frame_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub lambda: f64,
    pub gamma_dark: f64,
    pub gamma_bright: f64,
    pub target_black: f64,
    pub target_white: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            lambda: DEFAULT_LAMBDA,
            gamma_dark: DEFAULT_GAMMA,
            gamma_bright: DEFAULT_GAMMA,
            target_black: 0.0,
            target_white: 255.0,
        }
    }
}

impl BalanceConfig {
    /// The curve that leaves every level unchanged.
    pub fn identity() -> Self {
        BalanceConfig {
            gamma_dark: 1.0,
            gamma_bright: 1.0,
            ..BalanceConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 0.5) {
            return Err(StitchError::config("balance.lambda", "must lie in (0, 0.5)"));
        }
        if !(self.gamma_dark > 0.0 && self.gamma_dark.is_finite()) {
            return Err(StitchError::config("balance.gamma_dark", "must be positive"));
        }
        if !(self.gamma_bright > 0.0 && self.gamma_bright.is_finite()) {
            return Err(StitchError::config("balance.gamma_bright", "must be positive"));
        }
        let ok = |v: f64| (0.0..=255.0).contains(&v);
        if !ok(self.target_black) || !ok(self.target_white) || self.target_black >= self.target_white {
            return Err(StitchError::config(
                "balance.target_black",
                "targets must satisfy 0 <= black < white <= 255",
            ));
        }
        Ok(())
    }
}

/// Per-channel output levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToneLut {
    pub table: [[u8; 256]; 3],
}

impl ToneLut {
    pub fn identity() -> Self {
        ToneLut {
            table: [std::array::from_fn(|v| v as u8); 3],
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.table.iter().all(|t| t.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// Smallest levels whose CDF reaches `lambda` and `1 - lambda`.
pub fn find_thresholds(hist: &Histogram256, lambda: f64) -> Result<BalanceThresholds> {
    let c = cdf(hist)?;
    let first = |ch: &[f64; 256], q: f64| ch.iter().position(|&p| p >= q).unwrap_or(255) as u8;
    let mut m1 = [0u8; 3];
    let mut m2 = [0u8; 3];
    for ch in 0..3 {
        m1[ch] = first(c.channel(ch), lambda);
        m2[ch] = first(c.channel(ch), 1.0 - lambda);
    }
    Ok(BalanceThresholds { m1, m2, frame_index: 0 })
}

/// Mean of the available history (oldest first, newest last), rounded to the
/// nearest level. Crossed thresholds are swapped.
pub fn smooth_thresholds(history: &[BalanceThresholds]) -> Result<BalanceThresholds> {
    let newest = history.last().ok_or(StitchError::MissingState("threshold history"))?;
    let n = history.len() as f64;
    let mut m1 = [0u8; 3];
    let mut m2 = [0u8; 3];
    for c in 0..3 {
        let s1: f64 = history.iter().map(|h| h.m1[c] as f64).sum();
        let s2: f64 = history.iter().map(|h| h.m2[c] as f64).sum();
        let (a, b) = (to_level(s1 / n), to_level(s2 / n));
        m1[c] = a.min(b);
        m2[c] = a.max(b);
    }
    Ok(BalanceThresholds {
        m1,
        m2,
        frame_index: newest.frame_index,
    })
}

/// Bounded threshold history, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdHistory {
    entries: VecDeque<BalanceThresholds>,
}

impl ThresholdHistory {
    pub const CAPACITY: usize = 3;

    pub fn push(&mut self, th: BalanceThresholds) {
        self.entries.push_back(th);
        while self.entries.len() > Self::CAPACITY {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn smoothed(&self) -> Result<BalanceThresholds> {
        let v: Vec<_> = self.entries.iter().copied().collect();
        smooth_thresholds(&v)
    }
}

/// Real-valued tone curve for one channel.
pub fn curve_value(m1: u8, m2: u8, cfg: &BalanceConfig, x: f64) -> f64 {
    let (tb, tw) = (cfg.target_black, cfg.target_white);
    let lerp = |t: f64| tb + (tw - tb) * t;
    if m1 >= m2 {
        return lerp(x / 255.0);
    }
    let (m1, m2) = (m1 as f64, m2 as f64);
    let (l1, l2) = (lerp(m1 / 255.0), lerp(m2 / 255.0));
    if x < m1 {
        tb + (l1 - tb) * (x / m1).powf(cfg.gamma_dark)
    } else if x > m2 {
        l2 + (tw - l2) * ((x - m2) / (255.0 - m2)).powf(cfg.gamma_bright)
    } else {
        l1 + (l2 - l1) * (x - m1) / (m2 - m1)
    }
}

pub fn build_curve(th: &BalanceThresholds, cfg: &BalanceConfig) -> ToneLut {
    let mut table = [[0u8; 256]; 3];
    for c in 0..3 {
        for (v, e) in table[c].iter_mut().enumerate() {
            *e = to_level(curve_value(th.m1[c], th.m2[c], cfg, v as f64));
        }
    }
    ToneLut { table }
}

/// Per-channel lookup over every valid pixel.
pub fn apply_balance(frame: &Frame, lut: &ToneLut) -> Frame {
    let full = Region::full(frame.width(), frame.height());
    frame
        .map_region(&full, |p| {
            [
                lut.table[0][p[0] as usize],
                lut.table[1][p[1] as usize],
                lut.table[2][p[2] as usize],
            ]
        })
        .expect("full region always fits its frame")
}
