use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BOS, PAD};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskOrigin {
    Gri,
    Random,
    GradMagnitude,
    WeightMagnitude,
    LastLayers,
    Full,
    External,
}

impl MaskOrigin {
    pub const ALL: [MaskOrigin; 7] = [
        MaskOrigin::Gri,
        MaskOrigin::Random,
        MaskOrigin::GradMagnitude,
        MaskOrigin::WeightMagnitude,
        MaskOrigin::LastLayers,
        MaskOrigin::Full,
        MaskOrigin::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskOrigin::Gri => "gri",
            MaskOrigin::Random => "random",
            MaskOrigin::GradMagnitude => "grad_magnitude",
            MaskOrigin::WeightMagnitude => "weight_magnitude",
            MaskOrigin::LastLayers => "last_layers",
            MaskOrigin::Full => "full",
            MaskOrigin::External => "external",
        }
    }

    /// Whether the popcount is `ceil(p * n)` by construction.
    pub fn has_exact_budget(self) -> bool {
        !matches!(self, MaskOrigin::LastLayers | MaskOrigin::Full | MaskOrigin::External)
    }
}

impl fmt::Display for MaskOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskOrigin::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown mask origin `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionMask {
    pub bits: Vec<bool>,
    pub p_fraction: f64,
    pub origin: MaskOrigin,
    /// Seed used by seeded origins.
    pub seed: Option<u64>,
}

impl SelectionMask {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Selected fraction of all coordinates.
    pub fn coverage(&self) -> f64 {
        self.popcount() as f64 / self.len() as f64
    }
}

/// `ceil(p * n)`, the number of coordinates a top-p mask selects.
pub fn mask_budget(p: f64, n: usize) -> usize {
    ((p * n as f64).ceil() as usize).min(n)
}

fn check_fraction(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("mask fraction must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// Indices of the `k` best coordinates. Ranking is by `priority` first (true
/// before false), then by descending score, then by ascending index.
fn top_k(scores: &[f64], k: usize, priority: Option<&[bool]>) -> Vec<usize> {
    let rank = |i: usize| priority.is_none_or(|p| p[i]);
    let cmp = |a: &usize, b: &usize| -> Ordering {
        rank(*b)
            .cmp(&rank(*a))
            .then_with(|| scores[*b].total_cmp(&scores[*a]))
            .then_with(|| a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx
}

fn bits_from(indices: &[usize], n: usize) -> Vec<bool> {
    let mut bits = vec![false; n];
    for &i in indices {
        bits[i] = true;
    }
    bits
}

/// Top `ceil(p * n)` coordinates by score; ties go to the lower index.
pub fn build_mask(scores: &[f64], p: f64) -> Result<SelectionMask> {
    check_fraction(p)?;
    let k = mask_budget(p, scores.len());
    Ok(SelectionMask {
        bits: bits_from(&top_k(scores, k, None), scores.len()),
        p_fraction: p,
        origin: MaskOrigin::Gri,
        seed: None,
    })
}

/// Coordinates worth spending mask budget on: everything except the
/// embedding rows of the padding and begin-of-sequence tokens.
pub fn maskable(params: &ParamSet) -> Vec<bool> {
    let mut ok = vec![true; params.total_count()];
    if let Some(e) = params.entry("tok_emb") {
        let d = e.tensor.shape()[1];
        for row in [PAD, BOS] {
            let start = e.offset() + row * d;
            ok[start..start + d].iter_mut().for_each(|b| *b = false);
        }
    }
    ok
}

/// Top-p selection over model parameters. Non-maskable coordinates are only
/// chosen once every maskable one is, so the budget stays `ceil(p * n)`.
pub fn model_mask(scores: &[f64], params: &ParamSet, p: f64, origin: MaskOrigin) -> Result<SelectionMask> {
    check_fraction(p)?;
    params.check_len(scores.len())?;
    let priority = maskable(params);
    let k = mask_budget(p, scores.len());
    Ok(SelectionMask {
        bits: bits_from(&top_k(scores, k, Some(&priority)), scores.len()),
        p_fraction: p,
        origin,
        seed: None,
    })
}

fn random_mask(params: &ParamSet, p: f64, seed: u64) -> SelectionMask {
    let n = params.total_count();
    let k = mask_budget(p, n);
    let priority = maskable(params);
    let eligible: Vec<usize> = (0..n).filter(|&i| priority[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, eligible.len(), k.min(eligible.len()))
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    chosen.extend((0..n).filter(|&i| !priority[i]).take(k.saturating_sub(eligible.len())));
    SelectionMask {
        bits: bits_from(&chosen, n),
        p_fraction: p,
        origin: MaskOrigin::Random,
        seed: Some(seed),
    }
}

/// Every parameter in the last `L` transformer blocks, with `L` the block
/// count whose coverage is closest to `p` (at least one block).
fn last_layers_mask(model: &Model, p: f64) -> SelectionMask {
    let params = model.params();
    let n_layers = model.config().n_layers;
    let total = params.total_count() as f64;
    let coverage = |l: usize| -> f64 {
        params
            .entries()
            .iter()
            .filter(|e| e.layer.is_some_and(|x| x + l >= n_layers))
            .map(|e| e.tensor.numel())
            .sum::<usize>() as f64
            / total
    };
    let best = (1..=n_layers)
        .min_by(|a, b| (coverage(*a) - p).abs().total_cmp(&(coverage(*b) - p).abs()))
        .expect("at least one layer");
    let mut bits = vec![false; params.total_count()];
    for e in params.entries() {
        if e.layer.is_some_and(|x| x + best >= n_layers) {
            bits[e.range()].iter_mut().for_each(|b| *b = true);
        }
    }
    SelectionMask {
        bits,
        p_fraction: p,
        origin: MaskOrigin::LastLayers,
        seed: None,
    }
}

/// Baseline selections. `g_forget` is needed by `grad_magnitude` only.
pub fn baseline_mask(
    kind: MaskOrigin,
    model: &Model,
    g_forget: Option<&[f64]>,
    p: f64,
    seed: u64,
) -> Result<SelectionMask> {
    check_fraction(p)?;
    let params = model.params();
    let n = params.total_count();
    match kind {
        MaskOrigin::Random => Ok(random_mask(params, p, seed)),
        MaskOrigin::GradMagnitude => {
            let g = g_forget.ok_or_else(|| Error::contract("grad_magnitude mask needs the forget gradient"))?;
            let abs: Vec<f64> = g.iter().map(|x| x.abs()).collect();
            model_mask(&abs, params, p, kind)
        }
        MaskOrigin::WeightMagnitude => {
            let abs: Vec<f64> = params.to_flat().iter().map(|x| x.abs()).collect();
            model_mask(&abs, params, p, kind)
        }
        MaskOrigin::LastLayers => Ok(last_layers_mask(model, p)),
        MaskOrigin::Full => Ok(SelectionMask {
            bits: vec![true; n],
            p_fraction: 1.0,
            origin: kind,
            seed: None,
        }),
        MaskOrigin::Gri | MaskOrigin::External => {
            Err(Error::contract(format!("`{kind}` is not a baseline mask kind")))
        }
    }
}

pub const MASK_MAGIC: &str = "GRINMASK1";

/// Text form: a header of `key value` lines followed by `bits <hex>`, with
/// bit `i` stored MSB-first in byte `i / 8` and zero padding at the end.
pub fn write_mask(mask: &SelectionMask) -> String {
    let mut bytes = vec![0u8; mask.len().div_ceil(8)];
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        bytes[i / 8] |= 0x80 >> (i % 8);
    }
    let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    let seed = mask.seed.map_or_else(|| "-".to_string(), |s| s.to_string());
    format!(
        "{MASK_MAGIC}\norigin {}\np {}\nseed {seed}\ntotal_count {}\npopcount {}\nbits {hex}\n",
        mask.origin,
        mask.p_fraction,
        mask.len(),
        mask.popcount()
    )
}

fn header<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines
        .next()
        .ok_or_else(|| Error::corruption(format!("mask file ends before `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::corruption(format!("expected `{key}` in mask file, found `{line}`")))
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::corruption(format!("bad {what} `{s}` in mask file")))
}

pub fn read_mask(text: &str) -> Result<SelectionMask> {
    let mut lines = text.lines();
    if lines.next() != Some(MASK_MAGIC) {
        return Err(Error::corruption("missing GRINMASK1 magic"));
    }
    let origin: MaskOrigin = header(&mut lines, "origin")?
        .parse()
        .map_err(|e: Error| Error::corruption(e.to_string()))?;
    let p: f64 = parse(header(&mut lines, "p")?, "p")?;
    let seed = match header(&mut lines, "seed")? {
        "-" => None,
        s => Some(parse(s, "seed")?),
    };
    let total: usize = parse(header(&mut lines, "total_count")?, "total_count")?;
    let popcount: usize = parse(header(&mut lines, "popcount")?, "popcount")?;
    let hex = header(&mut lines, "bits")?;
    if hex.len() != total.div_ceil(8) * 2 {
        return Err(Error::corruption(format!(
            "bit field holds {} hex digits, {total} bits need {}",
            hex.len(),
            total.div_ceil(8) * 2
        )));
    }
    let mut bits = Vec::with_capacity(total);
    for (j, pair) in hex.as_bytes().chunks(2).enumerate() {
        let s = std::str::from_utf8(pair).map_err(|_| Error::corruption("bit field is not ASCII"))?;
        let byte = u8::from_str_radix(s, 16).map_err(|_| Error::corruption(format!("bad hex byte `{s}`")))?;
        for b in 0..8 {
            let set = byte & (0x80 >> b) != 0;
            if j * 8 + b < total {
                bits.push(set);
            } else if set {
                return Err(Error::corruption("padding bits are set"));
            }
        }
    }
    let mask = SelectionMask {
        bits,
        p_fraction: p,
        origin,
        seed,
    };
    if mask.popcount() != popcount {
        return Err(Error::corruption(format!(
            "header popcount {popcount} but {} bits are set",
            mask.popcount()
        )));
    }
    Ok(mask)
}
