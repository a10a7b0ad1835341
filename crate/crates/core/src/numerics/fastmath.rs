//! Branch-free `exp` and `ln` for inner loops the compiler can vectorize.
//!
//! Both are accurate to a few ulp over the ranges used by the point-process
//! kernels (arguments of `exp` in [−700, 700], positive normal arguments of
//! `ln`).

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
const SHIFT: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
const SQRT_HALF_BITS: u64 = 0x3fe6_a09e_667f_3bcd;
const TWO52: f64 = 4_503_599_627_370_496.0;

/// e^x for x in [−700, 700]; arguments outside are clamped.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let x = x.clamp(-700.0, 700.0);
    let kd = x * std::f64::consts::LOG2_E + SHIFT;
    let k = kd - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor polynomial through r^12 on |r| ≤ ln2/2.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale_bits = kd
        .to_bits()
        .wrapping_sub(SHIFT.to_bits())
        .wrapping_add(1023)
        << 52;
    p * f64::from_bits(scale_bits)
}

/// Natural logarithm of a positive normal number.
#[inline(always)]
pub fn ln(x: f64) -> f64 {
    let bits = x.to_bits();
    let tmp = bits.wrapping_sub(SQRT_HALF_BITS);
    // Sign-extend the 12-bit exponent field of `tmp`.
    let e_field = (tmp >> 52) & 0xfff;
    let e_shifted = (e_field ^ 0x800).wrapping_sub(0x800);
    let m = f64::from_bits(bits.wrapping_sub(e_shifted << 52));
    let e = f64::from_bits(0x4330_0000_0000_0000 | e_shifted.wrapping_add(2048) & 0xfff) - TWO52 - 2048.0;
    let f = m - 1.0;
    let s = f / (2.0 + f);
    let z = s * s;
    let mut q = 1.0 / 21.0;
    q = q * z + 1.0 / 19.0;
    q = q * z + 1.0 / 17.0;
    q = q * z + 1.0 / 15.0;
    q = q * z + 1.0 / 13.0;
    q = q * z + 1.0 / 11.0;
    q = q * z + 1.0 / 9.0;
    q = q * z + 1.0 / 7.0;
    q = q * z + 1.0 / 5.0;
    q = q * z + 1.0 / 3.0;
    // ln m = 2s + 2s·z·q, and 2s = f − s·f.
    let ln_m = f - s * (f - 2.0 * z * q);
    e * LN2_HI + (e * LN2_LO + ln_m)
}
