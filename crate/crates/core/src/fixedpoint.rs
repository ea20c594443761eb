//! Two's-complement fixed-point numbers.
//!
//! A [`FixedPointFormat`] with `W` total bits and `I` integer bits (the sign
//! bit counts as an integer bit for signed formats) has `F = W - I`
//! fractional bits and a step of `2^-F`. Values are stored as integer codes;
//! the real value of a code `c` is `c * 2^-F`.
//!
//! Bit `0` of a code is the LSB and bit `W - 1` is the MSB, which is the sign
//! bit for signed formats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rounding {
    /// Round to nearest, ties to even.
    #[default]
    #[serde(rename = "rne")]
    HalfEven,
    /// Round toward negative infinity (drop fractional bits).
    #[serde(rename = "trn")]
    Truncate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Overflow {
    #[default]
    #[serde(rename = "sat")]
    Saturate,
    #[serde(rename = "wrap")]
    Wrap,
}

/// Fixed-point numeric format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FormatRepr", into = "FormatRepr")]
pub struct FixedPointFormat {
    total_bits: u32,
    int_bits: u32,
    signed: bool,
    rounding: Rounding,
    overflow: Overflow,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatRepr {
    #[serde(rename = "W")]
    total_bits: u32,
    #[serde(rename = "I")]
    int_bits: u32,
    #[serde(default = "default_signed")]
    signed: bool,
    #[serde(default)]
    round: Rounding,
    #[serde(default)]
    overflow: Overflow,
}

fn default_signed() -> bool {
    true
}

impl TryFrom<FormatRepr> for FixedPointFormat {
    type Error = Error;

    fn try_from(r: FormatRepr) -> Result<Self> {
        FixedPointFormat::with_options(r.total_bits, r.int_bits, r.signed, r.round, r.overflow)
    }
}

impl From<FixedPointFormat> for FormatRepr {
    fn from(f: FixedPointFormat) -> Self {
        FormatRepr {
            total_bits: f.total_bits,
            int_bits: f.int_bits,
            signed: f.signed,
            round: f.rounding,
            overflow: f.overflow,
        }
    }
}

impl FixedPointFormat {
    pub const MAX_BITS: u32 = 32;

    /// Signed format with round-half-even and saturation.
    pub fn signed(total_bits: u32, int_bits: u32) -> Result<Self> {
        Self::with_options(
            total_bits,
            int_bits,
            true,
            Rounding::default(),
            Overflow::default(),
        )
    }

    /// Unsigned format with round-half-even and saturation; range `[0, 2^I - 2^-F]`.
    pub fn unsigned(total_bits: u32, int_bits: u32) -> Result<Self> {
        Self::with_options(
            total_bits,
            int_bits,
            false,
            Rounding::default(),
            Overflow::default(),
        )
    }

    pub fn with_options(
        total_bits: u32,
        int_bits: u32,
        signed: bool,
        rounding: Rounding,
        overflow: Overflow,
    ) -> Result<Self> {
        if !(2..=Self::MAX_BITS).contains(&total_bits) {
            return Err(Error::InvalidFormat(format!(
                "total bits W={total_bits} must be in [2, {}]",
                Self::MAX_BITS
            )));
        }
        if int_bits < 1 || int_bits > total_bits {
            return Err(Error::InvalidFormat(format!(
                "integer bits I={int_bits} must be in [1, W={total_bits}]"
            )));
        }
        Ok(FixedPointFormat {
            total_bits,
            int_bits,
            signed,
            rounding,
            overflow,
        })
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn with_overflow(mut self, overflow: Overflow) -> Self {
        self.overflow = overflow;
        self
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.total_bits - self.int_bits
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn overflow(&self) -> Overflow {
        self.overflow
    }

    /// Value of one LSB, `2^-F`.
    pub fn step(&self) -> f64 {
        pow2(-(self.frac_bits() as i32))
    }

    pub fn min_code(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn max_code(&self) -> i64 {
        if self.signed {
            (1i64 << (self.total_bits - 1)) - 1
        } else {
            (1i64 << self.total_bits) - 1
        }
    }

    pub fn min_value(&self) -> f64 {
        self.decode_code(self.min_code())
    }

    pub fn max_value(&self) -> f64 {
        self.decode_code(self.max_code())
    }

    /// Number of distinct codes, `2^W`.
    pub fn code_count(&self) -> u64 {
        1u64 << self.total_bits
    }

    /// True when `x` lies inside the representable range (the straight-through
    /// estimator passes gradients only there).
    pub fn in_range(&self, x: f64) -> bool {
        x >= self.min_value() && x <= self.max_value()
    }

    pub fn decode_code(&self, code: i64) -> f64 {
        code as f64 * self.step()
    }

    /// Integer code nearest to `x` under this format's rounding and overflow modes.
    pub fn code_of(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::NonFinite(x));
        }
        let scaled = x * pow2(self.frac_bits() as i32);
        let rounded = match self.rounding {
            Rounding::HalfEven => scaled.round_ties_even(),
            Rounding::Truncate => scaled.floor(),
        };
        Ok(match self.overflow {
            Overflow::Saturate => {
                rounded.clamp(self.min_code() as f64, self.max_code() as f64) as i64
            }
            Overflow::Wrap => {
                let modulus = self.code_count() as f64;
                // rem_euclid is exact on f64; infinities only arise for |x| near f64::MAX,
                // which are multiples of 2^W.
                let r = if rounded.is_finite() {
                    rounded.rem_euclid(modulus) as i64
                } else {
                    0
                };
                self.wrap_code(r as i128)
            }
        })
    }

    pub fn quantize(&self, x: f64) -> Result<f64> {
        Ok(self.decode_code(self.code_of(x)?))
    }

    pub fn encode(&self, x: f64) -> Result<BitCode> {
        Ok(BitCode {
            code: self.code_of(x)?,
            format: *self,
        })
    }

    /// Build a code, checking it is representable.
    pub fn code(&self, code: i64) -> Result<BitCode> {
        if code < self.min_code() || code > self.max_code() {
            return Err(Error::InvalidArgument(format!(
                "code {code} outside [{}, {}]",
                self.min_code(),
                self.max_code()
            )));
        }
        Ok(BitCode {
            code,
            format: *self,
        })
    }

    fn wrap_code(&self, v: i128) -> i64 {
        let w = self.total_bits;
        let bits = (v & ((1i128 << w) - 1)) as i64;
        if self.signed && bits >= (1i64 << (w - 1)) {
            bits - (1i64 << w)
        } else {
            bits
        }
    }

    fn handle_overflow(&self, v: i128) -> i64 {
        match self.overflow {
            Overflow::Saturate => v.clamp(self.min_code() as i128, self.max_code() as i128) as i64,
            Overflow::Wrap => self.wrap_code(v),
        }
    }

    /// Convert an integer accumulator holding a value with `acc_frac` fractional
    /// bits into a code of this format, using only integer arithmetic.
    ///
    /// This is the requantization step of the bit-exact datapath and yields the
    /// same code as [`FixedPointFormat::code_of`] applied to the exact real value.
    pub fn requantize(&self, acc: i64, acc_frac: u32) -> i64 {
        let shift = acc_frac as i32 - self.frac_bits() as i32;
        let acc = acc as i128;
        let v = if shift > 0 {
            let floor = acc >> shift;
            match self.rounding {
                Rounding::Truncate => floor,
                Rounding::HalfEven => {
                    let rem = acc - (floor << shift);
                    let half = 1i128 << (shift - 1);
                    if rem > half || (rem == half && floor & 1 == 1) {
                        floor + 1
                    } else {
                        floor
                    }
                }
            }
        } else {
            acc << (-shift)
        };
        self.handle_overflow(v)
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}fixed<{},{}>",
            if self.signed { "" } else { "u" },
            self.total_bits,
            self.int_bits
        )
    }
}

/// An integer code together with the format that interprets it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BitCode {
    code: i64,
    format: FixedPointFormat,
}

impl BitCode {
    pub fn code(&self) -> i64 {
        self.code
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn value(&self) -> f64 {
        self.format.decode_code(self.code)
    }

    /// Raw `W`-bit pattern.
    pub fn bits(&self) -> u64 {
        (self.code as u64) & ((1u64 << self.format.total_bits) - 1)
    }

    pub fn bit(&self, j: u32) -> Result<bool> {
        self.check_bit(j)?;
        Ok(self.bits() >> j & 1 == 1)
    }

    fn check_bit(&self, j: u32) -> Result<()> {
        if j >= self.format.total_bits {
            return Err(Error::BitOutOfRange {
                bit: j,
                width: self.format.total_bits,
            });
        }
        Ok(())
    }

    /// Toggle bit `j` of the `W`-bit pattern.
    pub fn flip(&self, j: u32) -> Result<BitCode> {
        self.check_bit(j)?;
        let bits = self.bits() ^ (1u64 << j);
        Ok(BitCode {
            code: self.format.wrap_code(bits as i128),
            format: self.format,
        })
    }
}

pub fn quantize(x: f64, fmt: &FixedPointFormat) -> Result<f64> {
    fmt.quantize(x)
}

pub fn encode(x: f64, fmt: &FixedPointFormat) -> Result<BitCode> {
    fmt.encode(x)
}

pub fn decode(c: &BitCode) -> f64 {
    c.value()
}

pub fn flip_bit(c: &BitCode, j: u32) -> Result<BitCode> {
    c.flip(j)
}

/// `decode(flip_bit(c, j)) - decode(c)`.
pub fn bit_value_delta(c: &BitCode, j: u32) -> Result<f64> {
    Ok(c.flip(j)?.value() - c.value())
}

/// Exact power of two as f64.
pub(crate) fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w6() -> FixedPointFormat {
        FixedPointFormat::signed(6, 1).unwrap()
    }

    #[test]
    fn format_validation() {
        assert!(FixedPointFormat::signed(1, 1).is_err());
        assert!(FixedPointFormat::signed(33, 1).is_err());
        assert!(FixedPointFormat::signed(6, 0).is_err());
        assert!(FixedPointFormat::signed(6, 7).is_err());
        assert!(FixedPointFormat::signed(6, 6).is_ok());
        let f = w6();
        assert_eq!(f.frac_bits(), 5);
        assert_eq!(f.min_value(), -1.0);
        assert_eq!(f.max_value(), 1.0 - 1.0 / 32.0);
        let u = FixedPointFormat::unsigned(6, 2).unwrap();
        assert_eq!(u.min_value(), 0.0);
        assert_eq!(u.max_value(), 4.0 - 1.0 / 16.0);
    }

    #[test]
    fn quantize_examples() {
        let f = w6();
        assert_eq!(f.quantize(0.0).unwrap(), 0.0);
        assert_eq!(f.quantize(0.30).unwrap(), 0.3125);
        assert_eq!(f.quantize(2.0).unwrap(), 31.0 / 32.0);
        assert_eq!(f.quantize(-7.0).unwrap(), -1.0);
        assert!(matches!(f.quantize(f64::NAN), Err(Error::NonFinite(_))));
        assert!(f.quantize(f64::INFINITY).is_err());
    }

    #[test]
    fn ties_go_to_even() {
        let f = w6();
        // 0.5/32 and 1.5/32 sit exactly between codes.
        assert_eq!(f.code_of(0.5 / 32.0).unwrap(), 0);
        assert_eq!(f.code_of(1.5 / 32.0).unwrap(), 2);
        assert_eq!(f.code_of(-0.5 / 32.0).unwrap(), 0);
        let t = f.with_rounding(Rounding::Truncate);
        assert_eq!(t.code_of(1.9 / 32.0).unwrap(), 1);
        assert_eq!(t.code_of(-0.1 / 32.0).unwrap(), -1);
    }

    #[test]
    fn wrap_mode() {
        let f = w6().with_overflow(Overflow::Wrap);
        // 1.0 is code 32, which wraps to -32.
        assert_eq!(f.code_of(1.0).unwrap(), -32);
        assert_eq!(f.code_of(-1.0 - 1.0 / 32.0).unwrap(), 31);
        assert_eq!(f.code_of(1e300).unwrap(), 0);
    }

    #[test]
    fn encode_decode_examples() {
        let f = w6();
        let c = f.encode(0.5).unwrap();
        assert_eq!(c.code(), 16);
        assert_eq!(c.bits(), 0b010000);
        assert_eq!(f.code(-16).unwrap().value(), -0.5);
        assert!(f.code(32).is_err());
    }

    #[test]
    fn exhaustive_code_roundtrip_w6() {
        let f = w6();
        for code in f.min_code()..=f.max_code() {
            let c = f.code(code).unwrap();
            assert_eq!(f.encode(c.value()).unwrap(), c);
        }
        let u = FixedPointFormat::unsigned(6, 3).unwrap();
        for code in u.min_code()..=u.max_code() {
            assert_eq!(u.code_of(u.decode_code(code)).unwrap(), code);
        }
    }

    #[test]
    fn flip_examples() {
        let f = w6();
        let c = f.code(16).unwrap();
        let flipped = flip_bit(&c, 5).unwrap();
        assert_eq!(flipped.bits(), 0b110000);
        assert_eq!(flipped.code(), -16);
        assert_eq!(flipped.value(), -0.5);
        assert_eq!(flip_bit(&f.code(0).unwrap(), 0).unwrap().code(), 1);
        assert!(matches!(
            flip_bit(&c, 6),
            Err(Error::BitOutOfRange { bit: 6, width: 6 })
        ));
    }

    #[test]
    fn flip_is_involution_exhaustive() {
        let f = w6();
        for code in f.min_code()..=f.max_code() {
            let c = f.code(code).unwrap();
            for j in 0..6 {
                assert_eq!(c.flip(j).unwrap().flip(j).unwrap(), c);
            }
        }
    }

    #[test]
    fn delta_examples() {
        let f = w6();
        let zero = f.code(0).unwrap();
        assert_eq!(bit_value_delta(&zero, 0).unwrap(), 1.0 / 32.0);
        assert_eq!(bit_value_delta(&zero, 5).unwrap(), -1.0);
    }

    /// Independent oracle: interpret the W-bit pattern by summing bit weights.
    fn pattern_value(bits: u64, w: u32, frac: u32, signed: bool) -> f64 {
        let mut v = 0.0;
        for j in 0..w {
            if bits >> j & 1 == 1 {
                let weight = 2f64.powi(j as i32 - frac as i32);
                v += if signed && j == w - 1 {
                    -weight
                } else {
                    weight
                };
            }
        }
        v
    }

    #[test]
    fn delta_matches_pattern_oracle_w4() {
        for &(signed, int_bits) in &[(true, 1), (true, 2), (false, 1), (false, 3)] {
            let f = FixedPointFormat::with_options(
                4,
                int_bits,
                signed,
                Rounding::HalfEven,
                Overflow::Saturate,
            )
            .unwrap();
            for bits in 0u64..16 {
                let v = pattern_value(bits, 4, f.frac_bits(), signed);
                let c = f.encode(v).unwrap();
                assert_eq!(c.bits(), bits);
                for j in 0..4 {
                    let want = pattern_value(bits ^ (1 << j), 4, f.frac_bits(), signed) - v;
                    assert_eq!(bit_value_delta(&c, j).unwrap(), want);
                    let mag = 2f64.powi(j as i32 - f.frac_bits() as i32);
                    assert_eq!(want.abs(), mag);
                }
            }
        }
    }

    #[test]
    fn serde_shape() {
        let f = w6();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(
            s,
            r#"{"W":6,"I":1,"signed":true,"round":"rne","overflow":"sat"}"#
        );
        let back: FixedPointFormat = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<FixedPointFormat>(r#"{"W":6,"I":9}"#).is_err());
        assert!(serde_json::from_str::<FixedPointFormat>(r#"{"W":6,"I":1,"x":1}"#).is_err());
    }

    fn any_format() -> impl Strategy<Value = FixedPointFormat> {
        (2u32..=16, any::<bool>(), any::<bool>(), any::<bool>()).prop_flat_map(
            |(w, signed, trunc, wrap)| {
                (1u32..=w).prop_map(move |i| {
                    FixedPointFormat::with_options(
                        w,
                        i,
                        signed,
                        if trunc {
                            Rounding::Truncate
                        } else {
                            Rounding::HalfEven
                        },
                        if wrap {
                            Overflow::Wrap
                        } else {
                            Overflow::Saturate
                        },
                    )
                    .unwrap()
                })
            },
        )
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(f in any_format(), x in -100.0f64..100.0) {
            let q = f.quantize(x).unwrap();
            prop_assert_eq!(f.quantize(q).unwrap(), q);
        }

        #[test]
        fn half_lsb_bound(w in 2u32..=16, x in -1.0f64..1.0) {
            let f = FixedPointFormat::signed(w, 1).unwrap();
            prop_assume!(f.in_range(x));
            let bound = f.step() / 2.0;
            prop_assert!((f.quantize(x).unwrap() - x).abs() <= bound);
        }

        #[test]
        fn saturating_quantize_is_monotone(w in 2u32..=16, a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let f = FixedPointFormat::signed(w, 2).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(f.quantize(lo).unwrap() <= f.quantize(hi).unwrap());
        }

        #[test]
        fn delta_is_antisymmetric(f in any_format(), x in -10.0f64..10.0, j in 0u32..16) {
            prop_assume!(j < f.total_bits());
            let c = f.encode(x).unwrap();
            let d = bit_value_delta(&c, j).unwrap();
            let back = bit_value_delta(&c.flip(j).unwrap(), j).unwrap();
            prop_assert_eq!(d, -back);
        }

        #[test]
        fn integer_requantize_matches_real_quantize(
            f in any_format(),
            acc in -(1i64 << 40)..(1i64 << 40),
            acc_frac in 0u32..30,
        ) {
            let real = acc as f64 * 2f64.powi(-(acc_frac as i32));
            prop_assert_eq!(f.requantize(acc, acc_frac), f.code_of(real).unwrap());
        }
    }
}
