//! Branch-free transcendental kernels for the rollout and training inner
//! loops.
//!
//! `f64::exp` is a libm call and cannot be auto-vectorized; at millions of
//! particle-steps per planner invocation it dominates the profile. The
//! polynomial `exp` here is accurate to ~1e-14 relative error and compiles to
//! straight-line SIMD code. Slice kernels dispatch to an AVX2+FMA-enabled
//! version when the CPU supports it; Rust does not contract `a * b + c` into
//! fused ops, so the dispatched and fallback paths produce bit-identical
//! results.

const LOG2_E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;

/// Polynomial `exp`, valid over the full finite range (clamped at ±708).
///
/// Maximum observed relative error vs `f64::exp` is below 1e-14.
#[inline(always)]
pub fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 708.0);
    let kf = (x * LOG2_E).round_ties_even();
    // Two-part ln2 keeps the reduced argument accurate near the split points.
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    let mut p: f64 = 1.0 / 39_916_800.0; // 1/11!
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
    let k = kf as i64;
    let scale = f64::from_bits(((k + 1023) as u64) << 52);
    p * scale
}

/// Logistic sigmoid `1 / (1 + e^-x)`.
#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Numerically stable `ln(1 + e^x)`.
#[inline(always)]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + exp(-x.abs())).ln()
}

/// Swish activation `x * sigmoid(x)`.
#[inline(always)]
pub fn swish(x: f64) -> f64 {
    x / (1.0 + exp(-x))
}

#[inline(always)]
fn swish_body(xs: &mut [f64]) {
    for v in xs.iter_mut() {
        *v = *v / (1.0 + exp(-*v));
    }
}

/// Swish applied alongside its sigmoid, used by the training forward pass
/// which caches both the activation and the gate.
#[inline(always)]
fn swish_with_sigmoid_body(zs: &[f64], act: &mut [f64], sig: &mut [f64]) {
    for i in 0..zs.len() {
        let s = 1.0 / (1.0 + exp(-zs[i]));
        sig[i] = s;
        act[i] = zs[i] * s;
    }
}

#[inline(always)]
fn exp_body(xs: &mut [f64]) {
    for v in xs.iter_mut() {
        *v = exp(*v);
    }
}

#[cfg(target_arch = "x86_64")]
mod dispatch {
    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn swish_avx2(xs: &mut [f64]) {
        super::swish_body(xs)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn swish_with_sigmoid_avx2(zs: &[f64], act: &mut [f64], sig: &mut [f64]) {
        super::swish_with_sigmoid_body(zs, act, sig)
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn exp_avx2(xs: &mut [f64]) {
        super::exp_body(xs)
    }

    #[inline]
    pub fn simd_available() -> bool {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
}

/// In-place swish over a slice.
#[inline]
pub fn swish_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if dispatch::simd_available() {
        // Same instruction semantics as the fallback; only wider.
        return unsafe { dispatch::swish_avx2(xs) };
    }
    swish_body(xs)
}

/// Computes `act = z * sigmoid(z)` and `sig = sigmoid(z)` in one pass.
#[inline]
pub fn swish_with_sigmoid(zs: &[f64], act: &mut [f64], sig: &mut [f64]) {
    assert_eq!(zs.len(), act.len());
    assert_eq!(zs.len(), sig.len());
    #[cfg(target_arch = "x86_64")]
    if dispatch::simd_available() {
        return unsafe { dispatch::swish_with_sigmoid_avx2(zs, act, sig) };
    }
    swish_with_sigmoid_body(zs, act, sig)
}

/// In-place exp over a slice.
#[inline]
pub fn exp_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if dispatch::simd_available() {
        return unsafe { dispatch::exp_avx2(xs) };
    }
    exp_body(xs)
}
