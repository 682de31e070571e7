//! Fixed-width numeric codes and the shift-only arithmetic primitives.
//!
//! The datapath knows exactly one weight representation: a 4-bit
//! power-of-two code ([`LogWeight`]) whose decoded values span the same
//! dynamic range as 8-bit signed integers. Activations are 4-bit unsigned
//! ([`QAct`]), biases 14-bit signed ([`QBias`]), per-PE products 12-bit
//! signed ([`PeOut`]) and accumulators 18-bit signed ([`Accum`]).
//!
//! All value-path arithmetic here is built from shifts, adds and compares
//! and reports itself to [`crate::audit`].

use crate::audit;

/// Sign of a non-zero weight code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Pos,
    Neg,
}

/// 4-bit signed power-of-two weight code.
///
/// Bit 3 is the sign, bits 0..2 the exponent. The pattern `0b1000`
/// (negative sign, exponent 0 — the slot a sign-magnitude integer would
/// waste on −0) is reserved as the exact-zero code, so the 16 codes decode
/// to `0`, `+1..+128` (powers of two) and `-2..-128` (powers of two).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LogWeight(u8);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(0b1000);
    /// Number of distinct codes.
    pub const CODES: u8 = 16;
    /// Largest decodable magnitude (same range as `i8`).
    pub const MAX_MAGNITUDE: i32 = 128;

    /// Builds a non-zero code. Panics if `exp > 7` or on the unrepresentable
    /// pair (negative, exponent 0), which is the zero code's bit pattern.
    pub fn new(sign: Sign, exp: u8) -> LogWeight {
        assert!(exp <= 7, "exponent {exp} out of range");
        match sign {
            Sign::Pos => LogWeight(exp),
            Sign::Neg => {
                assert!(exp > 0, "-1 is not representable; its pattern encodes zero");
                LogWeight(0b1000 | exp)
            }
        }
    }

    /// Reinterprets a raw 4-bit pattern. Every pattern is a valid code.
    pub fn from_code(code: u8) -> LogWeight {
        assert!(code < 16, "weight code {code} wider than 4 bits");
        LogWeight(code)
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0b1000
    }

    /// Exponent field for non-zero codes.
    pub fn exponent(self) -> Option<u8> {
        if self.is_zero() {
            None
        } else {
            Some(self.0 & 0b0111)
        }
    }

    pub fn sign(self) -> Option<Sign> {
        if self.is_zero() {
            None
        } else if self.0 & 0b1000 == 0 {
            Some(Sign::Pos)
        } else {
            Some(Sign::Neg)
        }
    }

    /// Decoded integer value: `0` or `±2^exp`.
    pub fn decode(self) -> i32 {
        decode_log_weight(self)
    }

    /// All 16 codes, zero first then by raw pattern.
    pub fn all() -> impl Iterator<Item = LogWeight> {
        (0u8..16).map(LogWeight)
    }
}

/// Decodes a weight code to its exact integer value.
pub fn decode_log_weight(w: LogWeight) -> i32 {
    match (w.sign(), w.exponent()) {
        (Some(Sign::Pos), Some(e)) => 1i32 << e,
        (Some(Sign::Neg), Some(e)) => -(1i32 << e),
        _ => 0,
    }
}

/// 4-bit unsigned activation (post-ReLU).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QAct(u8);

impl QAct {
    pub const MAX: QAct = QAct(15);
    pub const ZERO: QAct = QAct(0);

    pub fn new(v: u8) -> QAct {
        assert!(v <= 15, "activation {v} out of 4-bit range");
        QAct(v)
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// 14-bit signed bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QBias(i16);

impl QBias {
    pub const MIN: i32 = -8192;
    pub const MAX: i32 = 8191;

    pub fn new(v: i16) -> QBias {
        assert!(
            (QBias::MIN..=QBias::MAX).contains(&(v as i32)),
            "bias {v} out of 14-bit range"
        );
        QBias(v)
    }

    /// Clamps into the 14-bit range; `saturated` reports whether it had to.
    pub fn saturating_from(v: i64, saturated: &mut bool) -> QBias {
        audit::record_compare();
        if v > QBias::MAX as i64 {
            *saturated = true;
            QBias(QBias::MAX as i16)
        } else if v < QBias::MIN as i64 {
            *saturated = true;
            QBias(QBias::MIN as i16)
        } else {
            QBias(v as i16)
        }
    }

    pub fn get(self) -> i16 {
        self.0
    }
}

/// 12-bit signed product of one shift PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeOut(i16);

impl PeOut {
    pub const MIN: i32 = -2048;
    pub const MAX: i32 = 2047;

    pub fn new(v: i32) -> PeOut {
        assert!(
            (PeOut::MIN..=PeOut::MAX).contains(&v),
            "PE output {v} out of 12-bit range"
        );
        PeOut(v as i16)
    }

    pub fn get(self) -> i32 {
        self.0 as i32
    }
}

/// 18-bit signed accumulator with saturating arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accum(i32);

impl Accum {
    pub const MIN: i32 = -131072;
    pub const MAX: i32 = 131071;
    pub const ZERO: Accum = Accum(0);

    pub fn new(v: i32) -> Accum {
        assert!(
            (Accum::MIN..=Accum::MAX).contains(&v),
            "accumulator {v} out of 18-bit range"
        );
        Accum(v)
    }

    pub fn get(self) -> i32 {
        self.0
    }

    /// Saturating add of an arbitrary addend (the addend itself may exceed
    /// the 18-bit range, the result never does).
    pub fn saturating_add(self, rhs: i32) -> Accum {
        audit::record_add();
        audit::record_compare();
        let v = self.0 as i64 + rhs as i64;
        Accum(v.clamp(Accum::MIN as i64, Accum::MAX as i64) as i32)
    }
}

/// How requantization maps out-of-range values into 4 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowMode {
    /// Keep the low 4 bits (models the overflow behaviour trained against).
    #[default]
    Wrap,
    /// Clamp to 15.
    Clamp,
}

/// Per-layer rescaling of the OPE pipeline.
///
/// `input_shift` aligns the residual branch (positive = left shift),
/// `output_shift` is the arithmetic right shift applied before the 4-bit
/// mapping. Scales are powers of two throughout, so rescaling never needs
/// a multiplier. A non-zero activation `zero_point` is representable in
/// checkpoints but rejected by validation: the datapath only supports the
/// fixed unsigned-ReLU scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RescaleSpec {
    pub input_shift: i8,
    pub output_shift: u8,
    pub overflow: OverflowMode,
    pub zero_point: i8,
}

impl RescaleSpec {
    pub const MAX_INPUT_SHIFT: i8 = 7;
    pub const MAX_OUTPUT_SHIFT: u8 = 17;

    pub fn valid(&self) -> bool {
        self.input_shift.unsigned_abs() as i8 <= Self::MAX_INPUT_SHIFT
            && self.output_shift <= Self::MAX_OUTPUT_SHIFT
    }
}

/// Rounding used when projecting a value onto the exponent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    /// Round to the nearest exponent in the log domain, ties toward the
    /// larger exponent.
    #[default]
    Nearest,
    Floor,
    Ceil,
}

/// Saturation and overflow events observed by the quantizing primitives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuantStats {
    /// `quantize_log2` inputs whose exponent had to be clamped to 7.
    pub log2_saturations: u64,
    /// Requantized values that exceeded the 4-bit range (wrapped or clamped).
    pub requant_overflows: u64,
    /// Bias extractions clamped into the 14-bit range.
    pub bias_saturations: u64,
}

impl QuantStats {
    pub fn absorb(&mut self, other: &QuantStats) {
        self.log2_saturations += other.log2_saturations;
        self.requant_overflows += other.requant_overflows;
        self.bias_saturations += other.bias_saturations;
    }
}

// Largest |v| that still rounds to exponent e in the log domain, i.e.
// floor(2^(e+0.5)). Integer compares against this table replace the
// floating-point log on the integer path.
const LOG2_UPPER: [i64; 8] = [1, 2, 5, 11, 22, 45, 90, 181];

/// Quantizes a real value to the nearest power-of-two code in the log
/// domain, preserving sign. Zero maps to the zero code; exponents clamp to
/// `[0, 7]` (clamping from above is counted as a saturation). `-1` rounds
/// to `-2`: its natural pattern is the zero code.
pub fn quantize_log2(v: f64, mode: Rounding, stats: &mut QuantStats) -> LogWeight {
    if v == 0.0 || v.is_nan() {
        return LogWeight::ZERO;
    }
    let sign = if v < 0.0 { Sign::Neg } else { Sign::Pos };
    let l = v.abs().log2();
    let ideal = match mode {
        Rounding::Nearest => {
            // floor + half-up keeps ties toward the larger exponent
            (l + 0.5).floor()
        }
        Rounding::Floor => l.floor(),
        Rounding::Ceil => l.ceil(),
    };
    clamp_exponent(ideal as i64, sign, stats)
}

/// Integer-only variant of [`quantize_log2`]: shifts and compares, no
/// floating point. Agrees with the float path on every integer input.
pub fn quantize_log2_int(v: i64, mode: Rounding, stats: &mut QuantStats) -> LogWeight {
    audit::record_compare();
    if v == 0 {
        return LogWeight::ZERO;
    }
    let sign = if v < 0 { Sign::Neg } else { Sign::Pos };
    let mag = v.unsigned_abs() as i64;
    let ideal = match mode {
        Rounding::Nearest => {
            let mut e: i64 = 8;
            for (cand, upper) in LOG2_UPPER.iter().enumerate() {
                audit::record_compare();
                if mag <= *upper {
                    e = cand as i64;
                    break;
                }
            }
            e
        }
        Rounding::Floor => {
            // exponent of the highest set bit
            63 - mag.leading_zeros() as i64
        }
        Rounding::Ceil => {
            let floor = 63 - mag.leading_zeros() as i64;
            audit::record_compare();
            if mag == 1i64 << floor {
                floor
            } else {
                floor + 1
            }
        }
    };
    clamp_exponent(ideal, sign, stats)
}

fn clamp_exponent(ideal: i64, sign: Sign, stats: &mut QuantStats) -> LogWeight {
    let mut e = ideal;
    if e > 7 {
        stats.log2_saturations += 1;
        e = 7;
    }
    if e < 0 {
        e = 0;
    }
    // (Neg, 0) is the zero pattern; the nearest representable same-sign
    // value is one octave up.
    if sign == Sign::Neg && e == 0 {
        e = 1;
    }
    LogWeight::new(sign, e as u8)
}

/// One shift PE: multiplies activation by weight using only a left shift
/// and sign correction. Exact for every (activation, code) pair.
pub fn shift_mac(a: QAct, w: LogWeight) -> PeOut {
    audit::record_compare();
    match (w.sign(), w.exponent()) {
        (Some(sign), Some(e)) => {
            audit::record_shift();
            let shifted = (a.get() as i32) << e;
            match sign {
                Sign::Pos => PeOut::new(shifted),
                Sign::Neg => {
                    audit::record_add();
                    PeOut::new(-shifted)
                }
            }
        }
        _ => PeOut::new(0),
    }
}

/// Maps an accumulator back to a 4-bit activation: arithmetic right shift,
/// ReLU, then wrap or clamp per `spec.overflow`.
pub fn requantize(acc: Accum, spec: &RescaleSpec, stats: &mut QuantStats) -> QAct {
    audit::record_shift();
    let shifted = acc.get() >> spec.output_shift;
    audit::record_compare();
    if shifted < 0 {
        return QAct::ZERO;
    }
    audit::record_compare();
    if shifted > 15 {
        stats.requant_overflows += 1;
        match spec.overflow {
            OverflowMode::Wrap => QAct::new((shifted & 0xF) as u8),
            OverflowMode::Clamp => QAct::MAX,
        }
    } else {
        QAct::new(shifted as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats() -> QuantStats {
        QuantStats::default()
    }

    #[test]
    fn zero_code_decodes_to_zero() {
        assert_eq!(LogWeight::ZERO.decode(), 0);
    }

    #[test]
    fn unit_code_decodes_to_one() {
        assert_eq!(LogWeight::new(Sign::Pos, 0).decode(), 1);
    }

    #[test]
    fn largest_negative_code() {
        assert_eq!(LogWeight::new(Sign::Neg, 7).decode(), -128);
    }

    #[test]
    fn sixteen_codes_injective_on_nonzero() {
        let decoded: Vec<i32> = LogWeight::all().map(|w| w.decode()).collect();
        assert_eq!(decoded.len(), 16);
        let nonzero: std::collections::HashSet<i32> =
            decoded.iter().copied().filter(|v| *v != 0).collect();
        assert_eq!(nonzero.len(), 15);
        assert_eq!(decoded.iter().filter(|v| **v == 0).count(), 1);
        let max = decoded.iter().map(|v| v.abs()).max().unwrap();
        assert_eq!(max, 128);
    }

    #[test]
    fn decode_encode_round_trips_all_codes() {
        for w in LogWeight::all() {
            assert_eq!(LogWeight::from_code(w.code()), w);
            if !w.is_zero() {
                let back = quantize_log2(w.decode() as f64, Rounding::Nearest, &mut stats());
                assert_eq!(back, w, "decoded {} did not re-encode", w.decode());
            }
        }
    }

    #[test]
    fn quantize_zero_maps_to_zero_code() {
        assert!(quantize_log2(0.0, Rounding::Nearest, &mut stats()).is_zero());
        assert!(quantize_log2_int(0, Rounding::Nearest, &mut stats()).is_zero());
    }

    #[test]
    fn quantize_five_rounds_down_to_four() {
        let w = quantize_log2(5.0, Rounding::Nearest, &mut stats());
        assert_eq!((w.sign(), w.exponent()), (Some(Sign::Pos), Some(2)));
        assert_eq!(w.decode(), 4);
    }

    #[test]
    fn quantize_minus_six_rounds_up_to_minus_eight() {
        let w = quantize_log2(-6.0, Rounding::Nearest, &mut stats());
        assert_eq!((w.sign(), w.exponent()), (Some(Sign::Neg), Some(3)));
        assert_eq!(w.decode(), -8);
    }

    /// Nearest-in-log-domain reference: scan all same-sign codes.
    fn nearest_code_oracle(v: f64) -> LogWeight {
        if v == 0.0 {
            return LogWeight::ZERO;
        }
        let target = v.abs().log2();
        let want = if v < 0.0 {
            Some(Sign::Neg)
        } else {
            Some(Sign::Pos)
        };
        let mut best: Option<(f64, u8)> = None;
        for w in LogWeight::all() {
            if w.sign() != want {
                continue;
            }
            let e = w.exponent().unwrap();
            let d = (target - e as f64).abs();
            // ties toward the larger exponent
            let better = match best {
                None => true,
                Some((bd, be)) => d < bd || (d == bd && e > be),
            };
            if better {
                best = Some((d, e));
            }
        }
        let (_, e) = best.unwrap();
        LogWeight::new(want.unwrap(), e)
    }

    #[test]
    fn quantize_matches_log_domain_oracle_on_integer_sweep() {
        for v in -192i64..=192 {
            let got = quantize_log2(v as f64, Rounding::Nearest, &mut stats());
            assert_eq!(got, nearest_code_oracle(v as f64), "v = {v}");
            let int = quantize_log2_int(v, Rounding::Nearest, &mut stats());
            assert_eq!(int, got, "int/float disagree at v = {v}");
        }
    }

    #[test]
    fn oversized_magnitudes_saturate_and_count() {
        let mut s = stats();
        let w = quantize_log2(300.0, Rounding::Nearest, &mut s);
        assert_eq!(w.decode(), 128);
        assert_eq!(s.log2_saturations, 1);
    }

    #[test]
    fn shift_mac_zero_activation() {
        for w in LogWeight::all() {
            assert_eq!(shift_mac(QAct::ZERO, w).get(), 0);
        }
    }

    #[test]
    fn shift_mac_extremes() {
        assert_eq!(
            shift_mac(QAct::new(15), LogWeight::new(Sign::Neg, 7)).get(),
            -1920
        );
        assert_eq!(
            shift_mac(QAct::new(3), LogWeight::new(Sign::Pos, 2)).get(),
            12
        );
    }

    #[test]
    fn shift_mac_equals_multiply_exhaustively() {
        for a in 0u8..16 {
            for w in LogWeight::all() {
                let got = shift_mac(QAct::new(a), w).get();
                assert_eq!(got, a as i32 * w.decode(), "a={a} code={}", w.code());
            }
        }
    }

    #[test]
    fn requantize_relu_and_modes() {
        let mut s = stats();
        let wrap = RescaleSpec {
            output_shift: 2,
            ..Default::default()
        };
        let clamp = RescaleSpec {
            output_shift: 2,
            overflow: OverflowMode::Clamp,
            ..Default::default()
        };
        assert_eq!(requantize(Accum::new(-100), &wrap, &mut s).get(), 0);
        assert_eq!(requantize(Accum::new(-100), &clamp, &mut s).get(), 0);
        assert_eq!(requantize(Accum::new(48), &clamp, &mut s).get(), 12);
        assert_eq!(requantize(Accum::new(80), &wrap, &mut s).get(), 4);
        assert_eq!(s.requant_overflows, 1);
    }

    #[test]
    fn accum_saturates_instead_of_wrapping() {
        let near_max = Accum::new(Accum::MAX - 1);
        assert_eq!(near_max.saturating_add(100).get(), Accum::MAX);
        let near_min = Accum::new(Accum::MIN + 1);
        assert_eq!(near_min.saturating_add(-100).get(), Accum::MIN);
        assert_eq!(Accum::new(5).saturating_add(0).get(), 5);
    }

    proptest! {
        #[test]
        fn requantize_clamp_is_monotone(a in Accum::MIN..Accum::MAX, shift in 0u8..12) {
            let spec = RescaleSpec {
                output_shift: shift,
                overflow: OverflowMode::Clamp,
                ..Default::default()
            };
            let mut s = stats();
            let lo = requantize(Accum::new(a), &spec, &mut s).get();
            let hi = requantize(Accum::new(a + 1), &spec, &mut s).get();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn float_and_int_quantizers_agree(v in -200i64..200) {
            let f = quantize_log2(v as f64, Rounding::Nearest, &mut stats());
            let i = quantize_log2_int(v, Rounding::Nearest, &mut stats());
            prop_assert_eq!(f, i);
        }

        #[test]
        fn quantize_idempotent_on_decoded_values(code in 0u8..16) {
            let w = LogWeight::from_code(code);
            prop_assume!(!w.is_zero());
            let again = quantize_log2_int(w.decode() as i64, Rounding::Nearest, &mut stats());
            prop_assert_eq!(again, w);
        }
    }
}
