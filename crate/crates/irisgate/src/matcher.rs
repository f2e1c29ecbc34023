//! Bit-packed masked fractional Hamming distance with rotation minimization.
//!
//! Codes pack into 64-bit words, one padded word group per (plane, radial
//! row) so angular rotation is a per-row funnel shift on whole words. The
//! packed path is pinned to a per-bit oracle by tests; padding bits are zero
//! in both planes, so XOR/AND/popcount never see garbage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::IrisCode;
use crate::error::{Error, Result};

/// Matcher tuning: shift search range and the minimum overlap below which a
/// result is flagged unreliable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Rotation search half-range in angular positions.
    pub max_shift: u32,
    /// Minimum mutually valid bits for a reliable comparison.
    pub min_overlap: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            max_shift: 8,
            min_overlap: 1024,
        }
    }
}

/// Outcome of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Fraction of disagreeing bits among mutually valid bits.
    pub hd: f64,
    /// Angular shift applied to the second code at the minimum (0 for
    /// fixed-orientation comparisons).
    pub shift: i64,
    /// Mutually valid bits at that shift.
    pub overlap_bits: u64,
    /// False when `overlap_bits` fell below the configured minimum.
    pub reliable: bool,
}

/// Word-packed iris code. Each of the `2 * radial_code` rows (two planes,
/// angular index fastest) occupies `words_per_row` words; bits at angular
/// index >= `angular_res` are padding and always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedIrisCode {
    radial_code: u32,
    angular_res: u32,
    words_per_row: usize,
    words: Vec<u64>,
    mask_words: Vec<u64>,
    params: crate::encode::GaborParams,
}

impl PackedIrisCode {
    pub fn dims(&self) -> (u32, u32) {
        (self.radial_code, self.angular_res)
    }

    pub fn total_bits(&self) -> u64 {
        2 * self.radial_code as u64 * self.angular_res as u64
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn mask_words(&self) -> &[u64] {
        &self.mask_words
    }

    /// Usable (unmasked) bits in this code.
    pub fn usable_bits(&self) -> u64 {
        self.mask_words.iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// Pack a code into words. Lossless; layout documented on
/// [`PackedIrisCode`].
pub fn pack(code: &IrisCode) -> PackedIrisCode {
    let rc = code.radial_code();
    let ar = code.angular_res();
    let words_per_row = (ar as usize).div_ceil(64);
    let rows = 2 * rc as usize;
    let mut words = vec![0u64; rows * words_per_row];
    let mut mask_words = vec![0u64; rows * words_per_row];
    for plane in 0..2u32 {
        for row in 0..rc {
            let row_base = ((plane * rc + row) as usize) * words_per_row;
            for j in 0..ar {
                let w = row_base + (j as usize) / 64;
                let bit = 1u64 << (j % 64);
                if code.bit(plane, row, j) {
                    words[w] |= bit;
                }
                if code.mask_bit(plane, row, j) {
                    mask_words[w] |= bit;
                }
            }
        }
    }
    PackedIrisCode {
        radial_code: rc,
        angular_res: ar,
        words_per_row,
        words,
        mask_words,
        params: code.params,
    }
}

/// Exact inverse of [`pack`].
pub fn unpack(packed: &PackedIrisCode) -> IrisCode {
    let rc = packed.radial_code;
    let ar = packed.angular_res;
    let mut code = IrisCode::new(rc, ar, packed.params);
    for row in 0..rc {
        for j in 0..ar {
            let lookup = |plane: u32, store: &[u64]| {
                let row_base = ((plane * rc + row) as usize) * packed.words_per_row;
                store[row_base + (j as usize) / 64] & (1u64 << (j % 64)) != 0
            };
            let re = lookup(0, &packed.words);
            let im = lookup(1, &packed.words);
            let valid = lookup(0, &packed.mask_words);
            code.set_cell(row, j, re, im, valid);
        }
    }
    code
}

/// Rotate one padded row by `t` source-offset positions: output bit `j`
/// takes source bit `(j + t) mod angular_res`.
fn rotate_row_into(src: &[u64], dst: &mut [u64], angular_res: usize, t: usize) {
    let take_mask = |n: usize| -> u64 {
        if n >= 64 {
            !0u64
        } else {
            (1u64 << n) - 1
        }
    };
    for (w, slot) in dst.iter_mut().enumerate() {
        let base = w * 64;
        if base >= angular_res {
            *slot = 0;
            continue;
        }
        let remaining = (angular_res - base).min(64);
        let mut out = 0u64;
        let mut filled = 0usize;
        let mut pos = (base + t) % angular_res;
        while filled < remaining {
            let word_idx = pos / 64;
            let bit_off = pos % 64;
            let grab = (remaining - filled)
                .min(64 - bit_off)
                .min(angular_res - pos);
            let chunk = (src[word_idx] >> bit_off) & take_mask(grab);
            out |= chunk << filled;
            filled += grab;
            pos = (pos + grab) % angular_res;
        }
        *slot = out;
    }
}

/// Rotate every row of both planes (and the mask) by `shift` angular
/// positions, matching [`IrisCode::rotate_angular`].
fn rotate_packed(code: &PackedIrisCode, shift: i64) -> PackedIrisCode {
    let ar = code.angular_res as usize;
    let t = (-shift).rem_euclid(ar as i64) as usize;
    let wpr = code.words_per_row;
    let mut out = code.clone();
    let rows = 2 * code.radial_code as usize;
    for row in 0..rows {
        let span = row * wpr..(row + 1) * wpr;
        rotate_row_into(&code.words[span.clone()], &mut out.words[span.clone()], ar, t);
        rotate_row_into(
            &code.mask_words[span.clone()],
            &mut out.mask_words[span],
            ar,
            t,
        );
    }
    out
}

fn check_dims(a: &PackedIrisCode, b: &PackedIrisCode) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Invalid(format!(
            "code dims {:?} vs {:?} cannot be compared",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn hd_words(a: &PackedIrisCode, b: &PackedIrisCode) -> (u64, u64) {
    let mut disagree = 0u64;
    let mut overlap = 0u64;
    for i in 0..a.words.len() {
        let mask = a.mask_words[i] & b.mask_words[i];
        disagree += ((a.words[i] ^ b.words[i]) & mask).count_ones() as u64;
        overlap += mask.count_ones() as u64;
    }
    (disagree, overlap)
}

/// Masked fractional Hamming distance at fixed orientation (shift 0).
/// When the overlap is below `min_overlap` the result is flagged
/// unreliable; with zero overlap the distance reports 1.0.
pub fn fractional_hd(
    a: &PackedIrisCode,
    b: &PackedIrisCode,
    min_overlap: u64,
) -> Result<MatchResult> {
    check_dims(a, b)?;
    let (disagree, overlap) = hd_words(a, b);
    let hd = if overlap == 0 {
        1.0
    } else {
        disagree as f64 / overlap as f64
    };
    Ok(MatchResult {
        hd,
        shift: 0,
        overlap_bits: overlap,
        reliable: overlap >= min_overlap,
    })
}

/// Minimum fractional HD over angular shifts of `b` in
/// `[-max_shift, +max_shift]`; the mask rotates with the code. Ties break
/// toward the smallest |shift|, then toward the negative shift.
pub fn rotation_min_hd(
    a: &PackedIrisCode,
    b: &PackedIrisCode,
    cfg: &MatcherConfig,
) -> Result<MatchResult> {
    check_dims(a, b)?;
    if 2 * cfg.max_shift >= a.angular_res {
        return Err(Error::Invalid(format!(
            "max_shift {} too large for angular_res {}",
            cfg.max_shift, a.angular_res
        )));
    }
    let mut best: Option<MatchResult> = None;
    let mut shifts = Vec::with_capacity(2 * cfg.max_shift as usize + 1);
    shifts.push(0i64);
    for s in 1..=cfg.max_shift as i64 {
        shifts.push(-s);
        shifts.push(s);
    }
    for shift in shifts {
        let rotated = rotate_packed(b, shift);
        let (disagree, overlap) = hd_words(a, &rotated);
        let hd = if overlap == 0 {
            1.0
        } else {
            disagree as f64 / overlap as f64
        };
        let candidate = MatchResult {
            hd,
            shift,
            overlap_bits: overlap,
            reliable: overlap >= cfg.min_overlap,
        };
        if best.is_none_or(|b| candidate.hd < b.hd) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least shift 0 evaluated"))
}

/// Match every pair in input order; identical to mapping
/// [`rotation_min_hd`] but parallel, with each result written to its
/// pre-assigned slot.
pub fn batch_match(
    pairs: &[(&PackedIrisCode, &PackedIrisCode)],
    cfg: &MatcherConfig,
) -> Result<Vec<MatchResult>> {
    pairs
        .par_iter()
        .map(|(a, b)| rotation_min_hd(a, b, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::GaborParams;
    use rand::Rng;

    use crate::seeding::rng_from_seed;

    fn random_code(rng: &mut impl Rng, rc: u32, ar: u32, mask_density: f64) -> IrisCode {
        let mut code = IrisCode::new(rc, ar, GaborParams::default());
        for row in 0..rc {
            for j in 0..ar {
                code.set_cell(
                    row,
                    j,
                    rng.gen_bool(0.5),
                    rng.gen_bool(0.5),
                    rng.gen_bool(mask_density),
                );
            }
        }
        code
    }

    /// Per-bit reference for the packed kernel.
    fn naive_hd(a: &IrisCode, b: &IrisCode, shift: i64) -> (u64, u64) {
        let rc = a.radial_code();
        let ar = a.angular_res() as i64;
        let mut disagree = 0;
        let mut overlap = 0;
        for plane in 0..2 {
            for row in 0..rc {
                for j in 0..ar {
                    let src = (j - shift).rem_euclid(ar) as u32;
                    if a.mask_bit(plane, row, j as u32) && b.mask_bit(plane, row, src) {
                        overlap += 1;
                        if a.bit(plane, row, j as u32) != b.bit(plane, row, src) {
                            disagree += 1;
                        }
                    }
                }
            }
        }
        (disagree, overlap)
    }

    #[test]
    fn pack_roundtrip_exact() {
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let rc = rng.gen_range(1..=12);
            let ar = rng.gen_range(5..=300);
            let code = random_code(&mut rng, rc, ar, 0.8);
            assert_eq!(unpack(&pack(&code)), code);
        }
    }

    #[test]
    fn alternating_bits_pack_to_known_words() {
        let mut code = IrisCode::new(8, 200, GaborParams::default());
        for row in 0..8 {
            for j in 0..200 {
                code.set_cell(row, j, j % 2 == 1, j % 2 == 1, true);
            }
        }
        let packed = pack(&code);
        assert_eq!(packed.words_per_row, 4);
        for row in 0..16 {
            let base = row * 4;
            assert_eq!(packed.words()[base], 0xAAAA_AAAA_AAAA_AAAA);
            assert_eq!(packed.words()[base + 1], 0xAAAA_AAAA_AAAA_AAAA);
            assert_eq!(packed.words()[base + 2], 0xAAAA_AAAA_AAAA_AAAA);
            // Row tail: bits 192..200 only, padding zero.
            assert_eq!(packed.words()[base + 3], 0xAA);
            assert_eq!(packed.mask_words()[base + 3], 0xFF);
        }
    }

    #[test]
    fn padding_bits_stay_zero() {
        let mut rng = rng_from_seed(2);
        let code = random_code(&mut rng, 4, 100, 1.0);
        let packed = pack(&code);
        let tail_mask = !((1u64 << (100 - 64)) - 1);
        for row in 0..8 {
            assert_eq!(packed.words()[row * 2 + 1] & tail_mask, 0);
            assert_eq!(packed.mask_words()[row * 2 + 1] & tail_mask, 0);
        }
    }

    #[test]
    fn hd_of_self_is_zero_and_complement_is_one() {
        let mut rng = rng_from_seed(3);
        let code = random_code(&mut rng, 8, 200, 1.0);
        let packed = pack(&code);
        let result = fractional_hd(&packed, &packed, 1024).unwrap();
        assert_eq!(result.hd, 0.0);
        assert_eq!(result.overlap_bits, 3200);
        assert!(result.reliable);

        let mut complement = code.clone();
        for row in 0..8 {
            for j in 0..200 {
                let re = code.bit(0, row, j);
                let im = code.bit(1, row, j);
                complement.set_cell(row, j, !re, !im, true);
            }
        }
        let result = fractional_hd(&packed, &pack(&complement), 1024).unwrap();
        assert_eq!(result.hd, 1.0);
    }

    #[test]
    fn packed_hd_equals_naive_oracle() {
        let mut rng = rng_from_seed(4);
        for _ in 0..300 {
            let a = random_code(&mut rng, 8, 200, 0.7);
            let b = random_code(&mut rng, 8, 200, 0.7);
            let (disagree, overlap) = naive_hd(&a, &b, 0);
            let got = fractional_hd(&pack(&a), &pack(&b), 0).unwrap();
            assert_eq!(got.overlap_bits, overlap);
            let want = if overlap == 0 {
                1.0
            } else {
                disagree as f64 / overlap as f64
            };
            assert_eq!(got.hd, want);
        }
    }

    #[test]
    fn rotate_packed_equals_rotate_unpacked() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let ar = rng.gen_range(65..=260);
            let code = random_code(&mut rng, 6, ar, 0.6);
            let packed = pack(&code);
            for shift in [-9i64, -1, 0, 1, 5, 63, 64, 65] {
                let via_packed = rotate_packed(&packed, shift);
                let via_code = pack(&code.rotate_angular(shift));
                assert_eq!(via_packed, via_code, "shift {shift} ar {ar}");
            }
        }
    }

    #[test]
    fn random_full_mask_pairs_center_at_half() {
        let mut rng = rng_from_seed(6);
        let mut sum = 0.0;
        let n = 1000;
        for _ in 0..n {
            let a = pack(&random_code(&mut rng, 8, 200, 1.0));
            let b = pack(&random_code(&mut rng, 8, 200, 1.0));
            sum += fractional_hd(&a, &b, 1024).unwrap().hd;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() <= 0.01, "mean hd {mean}");
    }

    #[test]
    fn rotation_recovers_known_shift() {
        let mut rng = rng_from_seed(7);
        let a = random_code(&mut rng, 8, 200, 1.0);
        let b = a.rotate_angular(3);
        let cfg = MatcherConfig::default();
        let result = rotation_min_hd(&pack(&a), &pack(&b), &cfg).unwrap();
        // b carries a's content rotated by +3; shifting b by -3 restores it.
        assert_eq!(result.hd, 0.0);
        assert_eq!(result.shift, -3);

        let same = rotation_min_hd(&pack(&a), &pack(&a), &cfg).unwrap();
        assert_eq!(same.hd, 0.0);
        assert_eq!(same.shift, 0);
    }

    #[test]
    fn rotation_min_never_exceeds_shift_zero() {
        let mut rng = rng_from_seed(8);
        let cfg = MatcherConfig::default();
        for _ in 0..100 {
            let a = pack(&random_code(&mut rng, 8, 200, 0.8));
            let b = pack(&random_code(&mut rng, 8, 200, 0.8));
            let fixed = fractional_hd(&a, &b, cfg.min_overlap).unwrap();
            let min = rotation_min_hd(&a, &b, &cfg).unwrap();
            assert!(min.hd <= fixed.hd);
        }
    }

    #[test]
    fn rotation_min_is_symmetric() {
        let mut rng = rng_from_seed(9);
        let cfg = MatcherConfig::default();
        for _ in 0..100 {
            let a = pack(&random_code(&mut rng, 8, 200, 0.8));
            let b = pack(&random_code(&mut rng, 8, 200, 0.8));
            let ab = rotation_min_hd(&a, &b, &cfg).unwrap();
            let ba = rotation_min_hd(&b, &a, &cfg).unwrap();
            assert_eq!(ab.hd, ba.hd);
            assert_eq!(ab.shift, -ba.shift);
        }
    }

    #[test]
    fn masking_more_cells_matches_recomputation() {
        let mut rng = rng_from_seed(10);
        for _ in 0..50 {
            let a = random_code(&mut rng, 8, 200, 1.0);
            let mut b = random_code(&mut rng, 8, 200, 1.0);
            let before = fractional_hd(&pack(&a), &pack(&b), 0).unwrap();
            // Mask out a random subset of b's cells.
            for row in 0..8 {
                for j in 0..200 {
                    if rng.gen_bool(0.3) {
                        let re = b.bit(0, row, j);
                        let im = b.bit(1, row, j);
                        b.set_cell(row, j, re, im, false);
                    }
                }
            }
            let after = fractional_hd(&pack(&a), &pack(&b), 0).unwrap();
            let (disagree, overlap) = naive_hd(&a, &b, 0);
            assert_eq!(after.overlap_bits, overlap);
            assert_eq!(after.hd, disagree as f64 / overlap as f64);
            assert!(after.overlap_bits <= before.overlap_bits);
        }
    }

    #[test]
    fn zero_overlap_flags_unreliable() {
        let mut a = IrisCode::new(8, 200, GaborParams::default());
        let b = a.clone();
        a.set_cell(0, 0, true, false, true); // b has no valid cells
        let result = fractional_hd(&pack(&a), &pack(&b), 1024).unwrap();
        assert_eq!(result.overlap_bits, 0);
        assert!(!result.reliable);
        assert_eq!(result.hd, 1.0);
    }

    #[test]
    fn batch_matches_sequential_map() {
        // ~10k pairs: the parallel batch must be bit-exact against the
        // sequential map, in input order.
        let mut rng = rng_from_seed(11);
        let cfg = MatcherConfig::default();
        let codes: Vec<PackedIrisCode> = (0..101)
            .map(|_| pack(&random_code(&mut rng, 8, 200, 0.9)))
            .collect();
        let mut pairs = Vec::new();
        for i in 0..codes.len() {
            for j in 0..codes.len() {
                if i != j {
                    pairs.push((&codes[i], &codes[j]));
                }
            }
        }
        assert!(pairs.len() >= 10_000);
        let batch = batch_match(&pairs, &cfg).unwrap();
        assert_eq!(batch.len(), pairs.len());
        for (k, (a, b)) in pairs.iter().enumerate() {
            assert_eq!(batch[k], rotation_min_hd(a, b, &cfg).unwrap());
        }
        assert!(batch_match(&[], &cfg).unwrap().is_empty());

        // Single-pair batch equals the single call.
        let one = batch_match(&pairs[..1], &cfg).unwrap();
        assert_eq!(one[0], rotation_min_hd(pairs[0].0, pairs[0].1, &cfg).unwrap());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arbitrary_code()
                (dims in (1u32..6, 5u32..140))
                (
                    cells in proptest::collection::vec(
                        (any::<bool>(), any::<bool>(), any::<bool>()),
                        (dims.0 * dims.1) as usize,
                    ),
                    shift in -150i64..150,
                    dims in Just(dims),
                )
            -> (IrisCode, i64) {
                let (rc, ar) = dims;
                let mut code = IrisCode::new(rc, ar, GaborParams::default());
                for (i, (re, im, valid)) in cells.iter().enumerate() {
                    code.set_cell(i as u32 / ar, i as u32 % ar, *re, *im, *valid);
                }
                (code, shift)
            }
        }

        proptest! {
            #[test]
            fn pack_roundtrip((code, _shift) in arbitrary_code()) {
                prop_assert_eq!(unpack(&pack(&code)), code);
            }

            #[test]
            fn packed_rotation_matches_unpacked((code, shift) in arbitrary_code()) {
                let via_packed = rotate_packed(&pack(&code), shift);
                let via_code = pack(&code.rotate_angular(shift));
                prop_assert_eq!(via_packed, via_code);
            }
        }
    }

    #[test]
    fn oversized_shift_is_rejected() {
        let mut rng = rng_from_seed(12);
        let a = pack(&random_code(&mut rng, 2, 10, 1.0));
        let cfg = MatcherConfig {
            max_shift: 5,
            min_overlap: 0,
        };
        assert!(rotation_min_hd(&a, &a, &cfg).is_err());
    }
}
