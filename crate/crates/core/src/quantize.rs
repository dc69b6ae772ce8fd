//! Per-kernel weight quantizers.
//!
//! A quantized kernel stores `bits` positive scaling factors (the basis) and,
//! per weight, one sign per basis element. A weight is reconstructed as
//! `Σ_b basis[b] * sign[b]`, so the representable levels are all signed sums
//! of the basis.
//!
//! [`quantize_uniform`] uses a power-of-two basis, which yields evenly spaced
//! odd multiples of a step `s`. [`quantize_learned_basis`] alternates between
//! choosing the best sign pattern per weight and refitting the basis by least
//! squares.

use crate::error::{Error, Result};

/// Smallest basis entry; keeps degenerate (all-zero) kernels representable.
pub const BASIS_FLOOR: f64 = 1e-12;

/// Relative MSE change below which the alternating fit stops.
const REL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedKernel {
    pub bits: u8,
    /// Strictly positive, sorted descending.
    pub basis: Vec<f64>,
    /// Per-weight sign masks: bit `b` set means `+basis[b]`, clear means `-basis[b]`.
    pub codes: Vec<u16>,
}

impl QuantizedKernel {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Signs of weight `n`, one per basis element.
    pub fn signs(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let mask = self.codes[n];
        (0..self.bits).map(move |b| if mask >> b & 1 == 1 { 1.0 } else { -1.0 })
    }

    fn level(&self, mask: u16) -> f64 {
        level_of(&self.basis, mask)
    }
}

fn level_of(basis: &[f64], mask: u16) -> f64 {
    basis
        .iter()
        .enumerate()
        .map(|(b, &v)| if mask >> b & 1 == 1 { v } else { -v })
        .sum()
}

fn check_args(weights: &[f64], bits: u8) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("cannot quantize an empty kernel".into()));
    }
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidArgument(format!("bits {bits} outside 1..=8")));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("kernel holds a non-finite weight".into()));
    }
    Ok(())
}

/// Symmetric uniform quantizer with step `2s`, `s = max|w| / (2^bits - 1)`.
///
/// Every weight lands within `s` of its reconstruction and the largest
/// magnitude weight is reproduced exactly (up to the basis floor). Grids of
/// different widths are not nested, so the MSE can rise with `bits`.
pub fn quantize_uniform(weights: &[f64], bits: u8) -> Result<QuantizedKernel> {
    check_args(weights, bits)?;
    let top = (1u32 << bits) - 1;
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let s = (max_abs / f64::from(top)).max(BASIS_FLOOR);
    let basis: Vec<f64> = (0..bits).map(|b| s * f64::from(1u32 << (bits - 1 - b))).collect();
    let codes = weights
        .iter()
        .map(|&w| {
            // level j in 0..=top has value (2j - top) * s
            let j = ((w / s + f64::from(top)) / 2.0).round().clamp(0.0, f64::from(top)) as u32;
            // basis b carries weight 2^(bits-1-b), i.e. bit (bits-1-b) of j
            (0..bits).fold(0u16, |m, b| m | ((((j >> (bits - 1 - b)) & 1) as u16) << b))
        })
        .collect();
    Ok(QuantizedKernel { bits, basis, codes })
}

/// Learned-basis quantizer; see [`fit_learned_basis`] for the per-iteration trace.
pub fn quantize_learned_basis(weights: &[f64], bits: u8, max_iters: usize) -> Result<QuantizedKernel> {
    Ok(fit_learned_basis(weights, bits, max_iters)?.0)
}

/// Fits a learned basis and returns the MSE after every alternating step.
///
/// Starting points are refined and the best result kept: the uniform
/// quantizer at `bits`, the `bits - 1` learned solution extended by a
/// floor-sized basis element, and, when the kernel holds exactly `2^bits`
/// distinct values, the basis read off those values as a level set. The
/// first keeps the MSE no worse than the uniform quantizer, the second keeps
/// it non-increasing in `bits`, the third recovers realizable kernels.
pub fn fit_learned_basis(weights: &[f64], bits: u8, max_iters: usize) -> Result<(QuantizedKernel, Vec<f64>)> {
    check_args(weights, bits)?;
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let mut best = refine(weights, quantize_uniform(weights, bits)?, max_iters);
    if bits > 1 {
        let (lower, _) = fit_learned_basis(weights, bits - 1, max_iters)?;
        let mut basis = lower.basis.clone();
        basis.push(BASIS_FLOOR);
        let extended = assign_codes(weights, bits, basis);
        let alt = refine(weights, extended, max_iters);
        if alt.1.last() < best.1.last() {
            best = alt;
        }
    }
    if let Some(basis) = level_set_basis(weights, bits) {
        let alt = refine(weights, assign_codes(weights, bits, basis), max_iters);
        if alt.1.last() < best.1.last() {
            best = alt;
        }
    }
    Ok(best)
}

/// Basis whose levels are the kernel's distinct values, if they form a full
/// level set. The top two levels differ by twice the smallest basis element;
/// pairing every level with the one that element flips leaves the level set
/// of the remaining basis.
fn level_set_basis(weights: &[f64], bits: u8) -> Option<Vec<f64>> {
    let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let tol = 1e-9 * scale;
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut levels: Vec<f64> = Vec::new();
    for w in sorted {
        if levels.last().is_none_or(|&l| w - l > tol) {
            levels.push(w);
        }
    }
    if levels.len() != 1usize << bits {
        return None;
    }
    let mut basis = Vec::with_capacity(bits as usize);
    while levels.len() > 1 {
        let n = levels.len();
        let b = (levels[n - 1] - levels[n - 2]) / 2.0;
        if b <= tol {
            return None;
        }
        let mut used = vec![false; n];
        let mut rest = Vec::with_capacity(n / 2);
        for i in (0..n).rev() {
            if used[i] {
                continue;
            }
            let partner = (0..i)
                .rev()
                .find(|&j| !used[j] && (levels[i] - 2.0 * b - levels[j]).abs() <= tol)?;
            used[i] = true;
            used[partner] = true;
            rest.push(levels[i] - b);
        }
        rest.reverse();
        basis.push(b);
        levels = rest;
    }
    // a full level set is symmetric about zero
    if levels[0].abs() > tol {
        return None;
    }
    basis.reverse();
    Some(basis)
}

fn refine(weights: &[f64], start: QuantizedKernel, max_iters: usize) -> (QuantizedKernel, Vec<f64>) {
    let mut current = start;
    let mut mse = mse_of(weights, &current);
    let mut trace = vec![mse];
    for _ in 0..max_iters {
        let coded = assign_codes(weights, current.bits, current.basis.clone());
        let coded_mse = mse_of(weights, &coded);
        let (candidate, candidate_mse) = match refit_basis(weights, &coded) {
            Some(q) => {
                let m = mse_of(weights, &q);
                if m <= coded_mse {
                    (q, m)
                } else {
                    (coded, coded_mse)
                }
            }
            None => (coded, coded_mse),
        };
        if candidate_mse > mse {
            break;
        }
        let improvement = mse - candidate_mse;
        current = candidate;
        trace.push(candidate_mse);
        let done = improvement <= REL_TOL * mse.max(f64::MIN_POSITIVE);
        mse = candidate_mse;
        if done {
            break;
        }
    }
    (current, trace)
}

/// Best sign pattern per weight for a fixed basis.
fn assign_codes(weights: &[f64], bits: u8, basis: Vec<f64>) -> QuantizedKernel {
    let mut table: Vec<(f64, u16)> = (0..(1u16 << bits)).map(|m| (level_of(&basis, m), m)).collect();
    table.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let codes = weights
        .iter()
        .map(|&w| {
            let i = table.partition_point(|&(v, _)| v < w);
            let below = i.checked_sub(1).map(|j| table[j]);
            let above = table.get(i).copied();
            match (below, above) {
                (Some(lo), Some(hi)) => {
                    if (w - lo.0).abs() <= (hi.0 - w).abs() {
                        lo.1
                    } else {
                        hi.1
                    }
                }
                (Some(lo), None) => lo.1,
                (None, Some(hi)) => hi.1,
                (None, None) => unreachable!("level table is never empty"),
            }
        })
        .collect();
    QuantizedKernel { bits, basis, codes }
}

/// Least-squares basis for fixed codes, normalized to positive descending order.
fn refit_basis(weights: &[f64], q: &QuantizedKernel) -> Option<QuantizedKernel> {
    let k = q.bits as usize;
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut signs = vec![0.0; k];
    for (n, &w) in weights.iter().enumerate() {
        for (b, s) in q.signs(n).enumerate() {
            signs[b] = s;
        }
        for i in 0..k {
            rhs[i] += signs[i] * w;
            for j in 0..k {
                gram[i * k + j] += signs[i] * signs[j];
            }
        }
    }
    let solution = solve_spd(&mut gram, &mut rhs, k)?;

    // Flip negative entries (and their sign bits), then sort descending.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| solution[b].abs().total_cmp(&solution[a].abs()).then(a.cmp(&b)));
    let basis: Vec<f64> = order.iter().map(|&b| solution[b].abs().max(BASIS_FLOOR)).collect();
    let codes = q
        .codes
        .iter()
        .map(|&mask| {
            order.iter().enumerate().fold(0u16, |m, (new_b, &old_b)| {
                let mut bit = mask >> old_b & 1;
                if solution[old_b] < 0.0 {
                    bit ^= 1;
                }
                m | (bit << new_b)
            })
        })
        .collect();
    Some(QuantizedKernel {
        bits: q.bits,
        basis,
        codes,
    })
}

/// Cholesky solve of a small symmetric system; `None` when numerically singular.
fn solve_spd(a: &mut [f64], rhs: &mut [f64], k: usize) -> Option<Vec<f64>> {
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    for j in 0..k {
        let mut d = a[j * k + j];
        for p in 0..j {
            d -= a[j * k + p] * a[j * k + p];
        }
        if d <= 1e-12 * scale {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for p in 0..j {
                v -= a[i * k + p] * a[j * k + p];
            }
            a[i * k + j] = v / d;
        }
    }
    for i in 0..k {
        let mut v = rhs[i];
        for p in 0..i {
            v -= a[i * k + p] * rhs[p];
        }
        rhs[i] = v / a[i * k + i];
    }
    for i in (0..k).rev() {
        let mut v = rhs[i];
        for p in i + 1..k {
            v -= a[p * k + i] * rhs[p];
        }
        rhs[i] = v / a[i * k + i];
    }
    Some(rhs.to_vec())
}

pub fn dequantize(q: &QuantizedKernel) -> Vec<f64> {
    q.codes.iter().map(|&m| q.level(m)).collect()
}

fn mse_of(weights: &[f64], q: &QuantizedKernel) -> f64 {
    weights
        .iter()
        .zip(&q.codes)
        .map(|(&w, &m)| (w - q.level(m)).powi(2))
        .sum::<f64>()
        / weights.len() as f64
}

/// Mean squared reconstruction error.
pub fn quantization_mse(weights: &[f64], q: &QuantizedKernel) -> Result<f64> {
    if weights.len() != q.len() || weights.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights against {} codes",
            weights.len(),
            q.len()
        )));
    }
    Ok(mse_of(weights, q))
}
