//! Ring parameter derivation and the golden NTT/iNTT software model.
//!
//! Everything downstream — the butterfly model, the constant optimizer, the
//! generated datapath — is judged against the functions in this module, so
//! they stay deliberately simple: plain integer arithmetic with explicit
//! reduction, no Montgomery domain, no platform tricks.
//!
//! Conventions (fixed here, relied on everywhere else):
//! - The transform is the merged-twist negacyclic DIT: twiddles are powers of
//!   a root `psi` of order `2^(stages+1)`, so no separate pre/post twist pass
//!   exists. `zeta[k] = psi^bitrev(k)` exactly as in the Kyber/Dilithium
//!   reference transforms.
//! - Forward takes natural-order input and produces output whose slot `j`
//!   holds the residue of tree leaf `bitrev(j)`; the inverse consumes that
//!   layout directly and produces natural-order coefficients, scaled by
//!   `inv_scale = (2^stages)^-1`.
//! - The incomplete variant (Kyber style) stops one stage early: the transform
//!   acts on `N/2` degree-1 residue pairs that always travel together.

use crate::{Error, Result};

/// Whether the last butterfly stage is performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// All log2(N) stages; output slots are single evaluations.
    Full,
    /// log2(N)-1 stages; output slots are degree-1 residue pairs (Kyber).
    Incomplete,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Incomplete => "incomplete",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "incomplete" => Ok(Variant::Incomplete),
            other => Err(Error::Parse {
                what: "variant",
                detail: format!("expected `full` or `incomplete`, got `{other}`"),
            }),
        }
    }
}

/// Transform direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// All design-time constants of one ring instance.
///
/// `bits` is the coefficient width `ceil(log2 q)` and `barrett_r` the Barrett
/// constant `floor(4^bits / q)`; both are fixed at derivation so the
/// hardware generator never recomputes them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingParams {
    /// Coefficient modulus Q (odd prime).
    pub q: u64,
    /// Polynomial length N (power of two).
    pub n: usize,
    /// Coefficient bit width, ceil(log2 Q).
    pub bits: u32,
    /// Barrett constant floor(4^bits / Q).
    pub barrett_r: u64,
    /// Root generating all twiddles; order 2N (full) or N (incomplete).
    pub psi: u64,
    /// psi^2 mod Q.
    pub omega: u64,
    /// Number of butterfly stages: log2(N), minus one for incomplete.
    pub stages: u32,
    /// Modular inverse of 2^stages, applied to every iNTT output.
    pub inv_scale: u64,
    pub variant: Variant,
}

/// Named ring presets for the schemes the generator targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Kyber,
    Dilithium,
    Falcon512,
    Falcon1024,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Kyber,
        Scheme::Dilithium,
        Scheme::Falcon512,
        Scheme::Falcon1024,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Kyber => "kyber",
            Scheme::Dilithium => "dilithium",
            Scheme::Falcon512 => "falcon512",
            Scheme::Falcon1024 => "falcon1024",
        }
    }

    pub fn parameters(self) -> (u64, usize, Variant) {
        match self {
            Scheme::Kyber => (3329, 256, Variant::Incomplete),
            Scheme::Dilithium => (8_380_417, 256, Variant::Full),
            Scheme::Falcon512 => (12_289, 512, Variant::Full),
            Scheme::Falcon1024 => (12_289, 1024, Variant::Full),
        }
    }

    pub fn params(self) -> RingParams {
        let (q, n, variant) = self.parameters();
        derive_params(q, n, variant).expect("preset parameters are valid")
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sch| sch.name() == s)
            .ok_or_else(|| Error::Parse {
                what: "scheme",
                detail: format!("unknown scheme `{s}`"),
            })
    }
}

pub(crate) fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

pub(crate) fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

pub(crate) fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

pub fn mod_pow(mut base: u64, mut exp: u64, q: u64) -> u64 {
    base %= q;
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Modular inverse mod prime q (Fermat).
pub fn mod_inverse(a: u64, q: u64) -> u64 {
    mod_pow(a, q - 2, q)
}

/// Deterministic Miller-Rabin, valid for all u64.
pub fn is_prime(x: u64) -> bool {
    if x < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if x == p {
            return true;
        }
        if x % p == 0 {
            return false;
        }
    }
    let mut d = x - 1;
    let mut s = 0u32;
    while d & 1 == 0 {
        d >>= 1;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut y = mod_pow(a, d, x);
        if y == 1 || y == x - 1 {
            continue;
        }
        for _ in 1..s {
            y = mul_mod(y, y, x);
            if y == x - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn prime_factors(mut x: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= x {
        if x % p == 0 {
            out.push(p);
            while x % p == 0 {
                x /= p;
            }
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if x > 1 {
        out.push(x);
    }
    out
}

fn has_order(r: u64, order: u64, order_primes: &[u64], q: u64) -> bool {
    if mod_pow(r, order, q) != 1 {
        return false;
    }
    order_primes.iter().all(|&p| mod_pow(r, order / p, q) != 1)
}

/// Smallest residue in [2, Q-1] with multiplicative order exactly `order`.
///
/// `order = 1` returns 1, the only element of that order.
pub fn find_root(q: u64, order: u64) -> Result<u64> {
    if order == 0 || (q - 1) % order != 0 {
        return Err(Error::BadOrder { order, qm1: q - 1 });
    }
    if order == 1 {
        return Ok(1);
    }
    let primes = prime_factors(order);
    (2..q)
        .find(|&r| has_order(r, order, &primes, q))
        .ok_or(Error::NoRoot { q, order })
}

/// Index with its `bits`-wide binary representation reversed.
pub fn bit_reverse(i: usize, bits: u32) -> Result<usize> {
    if bits > 32 || i >= (1usize << bits) {
        return Err(Error::IndexRange { index: i, bits });
    }
    Ok(brv(i, bits))
}

pub(crate) fn brv(i: usize, bits: u32) -> usize {
    let mut out = 0usize;
    for b in 0..bits {
        out |= ((i >> b) & 1) << (bits - 1 - b);
    }
    out
}

fn ceil_log2(q: u64) -> u32 {
    64 - (q - 1).leading_zeros()
}

/// Derive every design-time constant from (Q, N, variant).
///
/// Rejects non-prime Q, lengths that are not powers of two, and rings where
/// the root of the required order does not exist.
pub fn derive_params(q: u64, n: usize, variant: Variant) -> Result<RingParams> {
    if q < 3 || q >= (1 << 31) {
        return Err(Error::ModulusRange(q));
    }
    if q & 1 == 0 || !is_prime(q) {
        return Err(Error::NotPrime(q));
    }
    let min_n = match variant {
        Variant::Full => 2,
        Variant::Incomplete => 4,
    };
    if !n.is_power_of_two() || n < min_n || n > (1 << 20) {
        return Err(Error::BadLength(n));
    }
    let log2n = n.trailing_zeros();
    let stages = match variant {
        Variant::Full => log2n,
        Variant::Incomplete => log2n - 1,
    };
    // Root order is 2^(stages+1) in both variants: 2N for full, N for
    // incomplete. Divisibility of Q-1 by it is the usual ring condition,
    // Q = 1 mod 2N (full) resp. Q = 1 mod N (incomplete).
    let order = 1u64 << (stages + 1);
    if (q - 1) % order != 0 {
        return Err(Error::BadDivisibility {
            q,
            modulus: order,
            what: variant.name(),
        });
    }
    let psi = find_root(q, order)?;
    let bits = ceil_log2(q);
    let barrett_r = ((1u128 << (2 * bits)) / q as u128) as u64;
    let params = RingParams {
        q,
        n,
        bits,
        barrett_r,
        psi,
        omega: mul_mod(psi, psi, q),
        stages,
        inv_scale: mod_inverse(1 << stages, q),
        variant,
    };
    params.validate()?;
    Ok(params)
}

impl RingParams {
    /// Number of scalar lanes per transform element (1 full, 2 incomplete).
    pub fn lane_width(&self) -> usize {
        self.n >> self.stages
    }

    /// Number of transform elements, 2^stages.
    pub fn element_count(&self) -> usize {
        1 << self.stages
    }

    /// Scalar butterflies per stage.
    pub fn butterflies_per_stage(&self) -> usize {
        self.n / 2
    }

    /// Total scalar butterflies, (N/2) * stages.
    pub fn total_butterflies(&self) -> usize {
        self.butterflies_per_stage() * self.stages as usize
    }

    /// Twiddle table: zeta[k] = psi^bitrev(k, stages), k in [0, 2^stages).
    pub fn zetas(&self) -> Vec<u64> {
        (0..self.element_count())
            .map(|k| mod_pow(self.psi, brv(k, self.stages) as u64, self.q))
            .collect()
    }

    /// Re-check every derived-constant invariant.
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Error::Parse {
            what: "ring params",
            detail: d,
        };
        if self.bits != ceil_log2(self.q) {
            return Err(bad(format!("bit width {} wrong for q={}", self.bits, self.q)));
        }
        // R*Q <= 4^bits < (R+1)*Q
        let four_n = 1u128 << (2 * self.bits);
        let r = self.barrett_r as u128;
        let q = self.q as u128;
        if r * q > four_n || (r + 1) * q <= four_n {
            return Err(bad(format!("barrett constant {} wrong", self.barrett_r)));
        }
        let half_order = 1u64 << self.stages;
        if mod_pow(self.psi, half_order, self.q) != self.q - 1 {
            return Err(bad(format!("psi={} has wrong order", self.psi)));
        }
        if mod_mul_check(self.inv_scale, half_order, self.q) != 1 {
            return Err(bad(format!("inv_scale={} wrong", self.inv_scale)));
        }
        if self.omega != mul_mod(self.psi, self.psi, self.q) {
            return Err(bad("omega is not psi^2".into()));
        }
        Ok(())
    }

    /// Human-readable key-value export of every derived constant.
    pub fn to_text(&self, label: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("scheme = {label}\n"));
        s.push_str(&format!("q = {}\n", self.q));
        s.push_str(&format!("n = {}\n", self.n));
        s.push_str(&format!("bits = {}\n", self.bits));
        s.push_str(&format!("barrett_r = {}\n", self.barrett_r));
        s.push_str(&format!("psi = {}\n", self.psi));
        s.push_str(&format!("omega = {}\n", self.omega));
        s.push_str(&format!("stages = {}\n", self.stages));
        s.push_str(&format!("inv_scale = {}\n", self.inv_scale));
        s.push_str(&format!("variant = {}\n", self.variant.name()));
        s
    }
}

fn mod_mul_check(a: u64, b: u64, q: u64) -> u64 {
    mul_mod(a % q, b % q, q)
}

/// One butterfly position and its folded constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    /// Scalar butterfly ordinal within the stage, 0..N/2.
    pub butterfly: usize,
    /// Twiddle constant in [1, Q-1].
    pub constant: u64,
}

/// Per-stage, per-butterfly twiddle constants in hardware placement order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwiddleSchedule {
    pub direction: Direction,
    pub stages: Vec<Vec<ScheduleEntry>>,
}

impl TwiddleSchedule {
    pub fn total_butterflies(&self) -> usize {
        self.stages.iter().map(|s| s.len()).sum()
    }

    pub fn constant_at(&self, stage: usize, butterfly: usize) -> Option<u64> {
        self.stages
            .get(stage)?
            .get(butterfly)
            .map(|e| e.constant)
    }
}

/// Twiddle constants for every butterfly of the chosen direction.
///
/// The inverse schedule is the forward schedule with every constant replaced
/// by its modular inverse; positions are unchanged.
pub fn twiddle_schedule(params: &RingParams, direction: Direction) -> TwiddleSchedule {
    let zetas = params.zetas();
    let lanes = params.lane_width();
    let e_count = params.element_count();
    let mut stages = Vec::with_capacity(params.stages as usize);
    for s in 0..params.stages {
        let len = e_count >> (s + 1);
        let mut entries = Vec::with_capacity(params.butterflies_per_stage());
        for block in 0..(1usize << s) {
            let c = zetas[(1usize << s) + block];
            let c = match direction {
                Direction::Forward => c,
                Direction::Inverse => mod_inverse(c, params.q),
            };
            for _t in 0..len {
                for _lane in 0..lanes {
                    entries.push(ScheduleEntry {
                        butterfly: entries.len(),
                        constant: c,
                    });
                }
            }
        }
        stages.push(entries);
    }
    TwiddleSchedule { direction, stages }
}

fn check_coeffs(v: &[u64], params: &RingParams) -> Result<()> {
    if v.len() != params.n {
        return Err(Error::LengthMismatch {
            got: v.len(),
            expected: params.n,
        });
    }
    for (pos, &c) in v.iter().enumerate() {
        if c >= params.q {
            return Err(Error::CoeffRange {
                value: c,
                pos,
                q: params.q,
            });
        }
    }
    Ok(())
}

/// Forward transform driven by an arbitrary butterfly implementation
/// (a, b, w) -> (a + b*w, a - b*w) mod Q. Used to swap the plain modular
/// butterfly for the Barrett model without duplicating the flow.
pub(crate) fn ntt_forward_with<F>(coeffs: &[u64], params: &RingParams, mut bf: F) -> Result<Vec<u64>>
where
    F: FnMut(u64, u64, u64) -> (u64, u64),
{
    check_coeffs(coeffs, params)?;
    let mut a = coeffs.to_vec();
    let zetas = params.zetas();
    let lanes = params.lane_width();
    let e_count = params.element_count();
    for s in 0..params.stages {
        let len = e_count >> (s + 1);
        for block in 0..(1usize << s) {
            let zeta = zetas[(1usize << s) + block];
            for t in 0..len {
                let lo = (block * 2 * len + t) * lanes;
                let hi = lo + len * lanes;
                for c in 0..lanes {
                    let (x, y) = bf(a[lo + c], a[hi + c], zeta);
                    a[lo + c] = x;
                    a[hi + c] = y;
                }
            }
        }
    }
    Ok(a)
}

/// Forward NTT: natural-order coefficients in, tree-leaf (bit-reversed)
/// ordered residues out. All values stay in [0, Q).
pub fn ntt_forward(coeffs: &[u64], params: &RingParams) -> Result<Vec<u64>> {
    let q = params.q;
    ntt_forward_with(coeffs, params, |a, b, w| {
        let t = mul_mod(b, w, q);
        (add_mod(a, t, q), sub_mod(a, t, q))
    })
}

/// Inverse NTT: consumes the forward output layout directly, returns
/// natural-order coefficients with the 2^-stages normalization applied.
pub fn ntt_inverse(values: &[u64], params: &RingParams) -> Result<Vec<u64>> {
    check_coeffs(values, params)?;
    let q = params.q;
    let mut a = values.to_vec();
    let zetas = params.zetas();
    let lanes = params.lane_width();
    let e_count = params.element_count();
    // Gentleman-Sande merges, smallest blocks first. The merge of the split
    // made by forward stage `level` uses the inverse of that stage's twiddle.
    for s in 0..params.stages {
        let len = 1usize << s;
        let level = params.stages - 1 - s;
        for block in 0..(e_count >> (s + 1)) {
            let g_inv = mod_inverse(zetas[(1usize << level) + block], q);
            let base = block * 2 * len;
            for t in 0..len {
                let lo = (base + t) * lanes;
                let hi = lo + len * lanes;
                for c in 0..lanes {
                    let u = a[lo + c];
                    let v = a[hi + c];
                    a[lo + c] = add_mod(u, v, q);
                    a[hi + c] = mul_mod(sub_mod(u, v, q), g_inv, q);
                }
            }
        }
    }
    for x in a.iter_mut() {
        *x = mul_mod(*x, params.inv_scale, q);
    }
    Ok(a)
}

/// O(N^2) negacyclic product in Z_Q[X]/(X^N + 1). This is the independent
/// oracle that closes the polynomial-multiplication equivalence loop.
pub fn negacyclic_mul_schoolbook(a: &[u64], b: &[u64], params: &RingParams) -> Result<Vec<u64>> {
    check_coeffs(a, params)?;
    check_coeffs(b, params)?;
    let n = params.n;
    let q = params.q as u128;
    let mut acc = vec![(0u128, 0u128); n]; // (positive, wrapped-negative)
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            let p = (ai as u128 * bj as u128) % q;
            let k = i + j;
            if k < n {
                acc[k].0 += p;
            } else {
                acc[k - n].1 += p;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(pos, neg)| ((pos % q + q - neg % q) % q) as u64)
        .collect())
}

/// Product in the transform domain.
///
/// Full variant: elementwise product. Incomplete variant: per residue pair
/// `i`, degree-1 multiplication modulo X^2 - psi^(2*bitrev(i)+1), matching
/// the forward output layout.
pub fn pointwise_mul(ahat: &[u64], bhat: &[u64], params: &RingParams) -> Result<Vec<u64>> {
    check_coeffs(ahat, params)?;
    check_coeffs(bhat, params)?;
    let q = params.q;
    match params.variant {
        Variant::Full => Ok(ahat
            .iter()
            .zip(bhat)
            .map(|(&x, &y)| mul_mod(x, y, q))
            .collect()),
        Variant::Incomplete => {
            let mut out = vec![0u64; params.n];
            for i in 0..params.element_count() {
                let gamma = mod_pow(
                    params.psi,
                    (2 * brv(i, params.stages) + 1) as u64,
                    q,
                );
                let (a0, a1) = (ahat[2 * i], ahat[2 * i + 1]);
                let (b0, b1) = (bhat[2 * i], bhat[2 * i + 1]);
                out[2 * i] = add_mod(mul_mod(a0, b0, q), mul_mod(mul_mod(a1, b1, q), gamma, q), q);
                out[2 * i + 1] = add_mod(mul_mod(a0, b1, q), mul_mod(a1, b0, q), q);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> RingParams {
        derive_params(17, 8, Variant::Full).unwrap()
    }

    fn random_poly(rng: &mut ChaCha8Rng, params: &RingParams) -> Vec<u64> {
        (0..params.n).map(|_| rng.gen_range(0..params.q)).collect()
    }

    // Big-integer division oracle for R, independent of ceil_log2 etc.
    fn barrett_r_oracle(q: u64) -> (u32, u64) {
        let mut bits = 0u32;
        while (1u128 << bits) < q as u128 {
            bits += 1;
        }
        (bits, ((1u128 << (2 * bits)) / q as u128) as u64)
    }

    // Extended Euclid oracle for modular inverses.
    fn ext_euclid_inverse(a: u64, q: u64) -> u64 {
        let (mut r0, mut r1) = (q as i128, a as i128);
        let (mut s0, mut s1) = (0i128, 1i128);
        while r1 != 0 {
            let d = r0 / r1;
            (r0, r1) = (r1, r0 - d * r1);
            (s0, s1) = (s1, s0 - d * s1);
        }
        assert_eq!(r0, 1);
        (s0.rem_euclid(q as i128)) as u64
    }

    // Exhaustive order check over all residues.
    fn smallest_root_oracle(q: u64, order: u64) -> Option<u64> {
        'outer: for r in 2..q {
            let mut acc = 1u64;
            for e in 1..=order {
                acc = mul_mod(acc, r, q);
                if acc == 1 {
                    if e == order {
                        return Some(r);
                    }
                    continue 'outer;
                }
            }
        }
        None
    }

    #[test]
    fn derive_kyber() {
        let p = derive_params(3329, 256, Variant::Incomplete).unwrap();
        assert_eq!(p.bits, 12);
        assert_eq!(p.stages, 7);
        let (bits, r) = barrett_r_oracle(3329);
        assert_eq!(bits, 12);
        assert_eq!(r, 5039);
        assert_eq!(p.barrett_r, 5039);
        let inv = ext_euclid_inverse(128, 3329);
        assert_eq!(inv, 3303);
        assert_eq!(p.inv_scale, 3303);
        assert_eq!(mul_mod(128, p.inv_scale, 3329), 1);
        assert_eq!(p.psi, 17);
        // psi is a primitive N-th root: psi^N = 1, psi^(N/2) = -1.
        assert_eq!(mod_pow(p.psi, 256, p.q), 1);
        assert_eq!(mod_pow(p.psi, 128, p.q), p.q - 1);
    }

    #[test]
    fn derive_dilithium() {
        let p = derive_params(8_380_417, 256, Variant::Full).unwrap();
        assert_eq!(p.bits, 23);
        assert_eq!(p.stages, 8);
        let (_, r) = barrett_r_oracle(8_380_417);
        assert_eq!(r, 8_396_807);
        assert_eq!(p.barrett_r, 8_396_807);
        let inv = ext_euclid_inverse(256, 8_380_417);
        assert_eq!(inv, 8_347_681);
        assert_eq!(p.inv_scale, 8_347_681);
        assert_eq!(mul_mod(256, p.inv_scale, p.q), 1);
        // psi^(2N) = 1, psi^N = -1.
        assert_eq!(mod_pow(p.psi, 512, p.q), 1);
        assert_eq!(mod_pow(p.psi, 256, p.q), p.q - 1);
    }

    #[test]
    fn derive_toy() {
        let p = toy();
        assert_eq!(p.psi, 3);
        assert_eq!(p.omega, 9);
        assert_eq!(smallest_root_oracle(17, 16), Some(3));
        assert_eq!(mod_pow(3, 8, 17), 16); // 3^8 = -1 mod 17
    }

    #[test]
    fn derive_rejects_bad_inputs() {
        assert!(matches!(
            derive_params(15, 8, Variant::Full),
            Err(Error::NotPrime(15))
        ));
        assert!(matches!(
            derive_params(17, 12, Variant::Full),
            Err(Error::BadLength(12))
        ));
        // 17 = 1 mod 16 but not 1 mod 64.
        assert!(matches!(
            derive_params(17, 32, Variant::Full),
            Err(Error::BadDivisibility { .. })
        ));
    }

    #[test]
    fn find_root_matches_oracle() {
        assert_eq!(find_root(17, 8).unwrap(), 2);
        assert_eq!(smallest_root_oracle(17, 8), Some(2));
        assert_eq!(find_root(17, 1).unwrap(), 1);
        assert_eq!(find_root(3329, 256).unwrap(), 17);
        assert_eq!(smallest_root_oracle(3329, 256), Some(17));
        assert!(find_root(17, 5).is_err());
    }

    #[test]
    fn bit_reverse_examples() {
        assert_eq!(bit_reverse(0, 3).unwrap(), 0);
        assert_eq!(bit_reverse(1, 3).unwrap(), 4);
        assert_eq!(bit_reverse(6, 3).unwrap(), 3);
        assert!(bit_reverse(8, 3).is_err());
    }

    #[test]
    fn schedule_shape_and_inverse_involution() {
        let p = toy();
        let fwd = twiddle_schedule(&p, Direction::Forward);
        assert_eq!(fwd.stages.len(), 3);
        assert!(fwd.stages.iter().all(|s| s.len() == 4));
        assert_eq!(fwd.total_butterflies(), 12);

        let inv = twiddle_schedule(&p, Direction::Inverse);
        for (fs, is) in fwd.stages.iter().zip(&inv.stages) {
            for (fe, ie) in fs.iter().zip(is) {
                assert_eq!(fe.butterfly, ie.butterfly);
                assert_eq!(mul_mod(fe.constant, ie.constant, p.q), 1);
            }
        }
    }

    #[test]
    fn schedule_kyber_count() {
        let p = Scheme::Kyber.params();
        let fwd = twiddle_schedule(&p, Direction::Forward);
        assert_eq!(fwd.stages.len(), 7);
        assert_eq!(fwd.total_butterflies(), 896);
        // Every constant is a power of psi with psi of order N; the last
        // stage's constants are the odd powers that name the residue pairs.
        let last = fwd.stages.last().unwrap();
        for entry in last {
            let mut found = false;
            for e in (1..256u64).step_by(2) {
                if mod_pow(p.psi, e, p.q) == entry.constant {
                    found = true;
                    break;
                }
            }
            assert!(found, "last-stage constant {} not an odd power", entry.constant);
        }
    }

    // Naive negacyclic evaluation at psi^(2*bitrev(j)+1): the independent
    // O(N^2) oracle for the forward transform layout.
    fn naive_forward(a: &[u64], p: &RingParams) -> Vec<u64> {
        let lanes = p.lane_width();
        let mut out = vec![0u64; p.n];
        for e in 0..p.element_count() {
            let gamma = mod_pow(p.psi, (2 * brv(e, p.stages) + 1) as u64, p.q);
            // Residue of a(X) mod (X^lanes... ) -- for lanes=1 this is plain
            // evaluation, for lanes=2 the degree-1 residue mod (X^2 - gamma).
            if lanes == 1 {
                let mut acc = 0u64;
                for &c in a.iter().rev() {
                    acc = add_mod(mul_mod(acc, gamma, p.q), c, p.q);
                }
                out[e] = acc;
            } else {
                let (mut r0, mut r1) = (0u64, 0u64);
                let mut g = 1u64;
                for k in 0..(p.n / 2) {
                    r0 = add_mod(r0, mul_mod(a[2 * k], g, p.q), p.q);
                    r1 = add_mod(r1, mul_mod(a[2 * k + 1], g, p.q), p.q);
                    g = mul_mod(g, gamma, p.q);
                }
                out[2 * e] = r0;
                out[2 * e + 1] = r1;
            }
        }
        out
    }

    fn naive_inverse_full(x: &[u64], p: &RingParams) -> Vec<u64> {
        assert_eq!(p.lane_width(), 1);
        let order = 2 * p.n as u64;
        let mut out = vec![0u64; p.n];
        for i in 0..p.n {
            let mut acc = 0u64;
            for j in 0..p.n {
                let e = ((2 * brv(j, p.stages) + 1) * i) as u64 % order;
                let point = mod_inverse(mod_pow(p.psi, e, p.q), p.q);
                acc = add_mod(acc, mul_mod(x[j], point, p.q), p.q);
            }
            out[i] = mul_mod(acc, p.inv_scale, p.q);
        }
        out
    }

    #[test]
    fn forward_matches_naive_evaluation() {
        let p = toy();
        // X^7 example plus random vectors.
        let mut a = vec![0u64; 8];
        a[7] = 1;
        assert_eq!(ntt_forward(&a, &p).unwrap(), naive_forward(&a, &p));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = random_poly(&mut rng, &p);
            assert_eq!(ntt_forward(&a, &p).unwrap(), naive_forward(&a, &p));
        }
        let pk = Scheme::Kyber.params();
        for _ in 0..5 {
            let a = random_poly(&mut rng, &pk);
            assert_eq!(ntt_forward(&a, &pk).unwrap(), naive_forward(&a, &pk));
        }
        let pd = Scheme::Dilithium.params();
        for _ in 0..5 {
            let a = random_poly(&mut rng, &pd);
            assert_eq!(ntt_forward(&a, &pd).unwrap(), naive_forward(&a, &pd));
        }
    }

    #[test]
    fn forward_delta_and_zero() {
        let p = toy();
        let mut delta = vec![0u64; 8];
        delta[0] = 1;
        assert_eq!(ntt_forward(&delta, &p).unwrap(), vec![1u64; 8]);
        assert_eq!(ntt_forward(&vec![0; 8], &p).unwrap(), vec![0u64; 8]);
        assert!(ntt_forward(&vec![17; 8], &p).is_err());
    }

    #[test]
    fn inverse_all_ones_is_delta() {
        let p = toy();
        let got = ntt_inverse(&vec![1u64; 8], &p).unwrap();
        let mut delta = vec![0u64; 8];
        delta[0] = 1;
        assert_eq!(got, delta);
        assert_eq!(got, naive_inverse_full(&vec![1u64; 8], &p));
    }

    #[test]
    fn roundtrip_all_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for scheme in Scheme::ALL {
            let p = scheme.params();
            let trials = if p.n <= 256 { 1000 } else { 200 };
            for _ in 0..trials {
                let a = random_poly(&mut rng, &p);
                let back = ntt_inverse(&ntt_forward(&a, &p).unwrap(), &p).unwrap();
                assert_eq!(back, a, "roundtrip failed for {}", scheme.name());
            }
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scheme in [Scheme::Kyber, Scheme::Dilithium] {
            let p = scheme.params();
            for _ in 0..1000 {
                let a = random_poly(&mut rng, &p);
                let b = random_poly(&mut rng, &p);
                let alpha = rng.gen_range(0..p.q);
                let beta = rng.gen_range(0..p.q);
                let mixed: Vec<u64> = a
                    .iter()
                    .zip(&b)
                    .map(|(&x, &y)| add_mod(mul_mod(alpha, x, p.q), mul_mod(beta, y, p.q), p.q))
                    .collect();
                let lhs = ntt_forward(&mixed, &p).unwrap();
                let fa = ntt_forward(&a, &p).unwrap();
                let fb = ntt_forward(&b, &p).unwrap();
                let rhs: Vec<u64> = fa
                    .iter()
                    .zip(&fb)
                    .map(|(&x, &y)| add_mod(mul_mod(alpha, x, p.q), mul_mod(beta, y, p.q), p.q))
                    .collect();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn schoolbook_identities() {
        let p = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random_poly(&mut rng, &p);
        let mut one = vec![0u64; 8];
        one[0] = 1;
        assert_eq!(negacyclic_mul_schoolbook(&one, &b, &p).unwrap(), b);

        // X^(N-1) * X = -1.
        let mut xn1 = vec![0u64; 8];
        xn1[7] = 1;
        let mut x1 = vec![0u64; 8];
        x1[1] = 1;
        let mut expect = vec![0u64; 8];
        expect[0] = p.q - 1;
        assert_eq!(negacyclic_mul_schoolbook(&xn1, &x1, &p).unwrap(), expect);
    }

    #[test]
    fn convolution_theorem_all_schemes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for scheme in Scheme::ALL {
            let p = scheme.params();
            let trials = if p.n <= 256 { 25 } else { 5 };
            for _ in 0..trials {
                let a = random_poly(&mut rng, &p);
                let b = random_poly(&mut rng, &p);
                let via_ntt = ntt_inverse(
                    &pointwise_mul(
                        &ntt_forward(&a, &p).unwrap(),
                        &ntt_forward(&b, &p).unwrap(),
                        &p,
                    )
                    .unwrap(),
                    &p,
                )
                .unwrap();
                let school = negacyclic_mul_schoolbook(&a, &b, &p).unwrap();
                assert_eq!(via_ntt, school, "scheme {}", scheme.name());
            }
        }
    }

    #[test]
    fn pointwise_identity_incomplete() {
        let p = Scheme::Kyber.params();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_poly(&mut rng, &p);
        let mut one = vec![0u64; p.n];
        one[0] = 1;
        let ahat = ntt_forward(&a, &p).unwrap();
        let onehat = ntt_forward(&one, &p).unwrap();
        let prod = pointwise_mul(&ahat, &onehat, &p).unwrap();
        assert_eq!(ntt_inverse(&prod, &p).unwrap(), a);
    }

    #[test]
    fn params_text_export() {
        let text = Scheme::Kyber.params().to_text("kyber");
        assert!(text.contains("q = 3329"));
        assert!(text.contains("barrett_r = 5039"));
        assert!(text.contains("variant = incomplete"));
    }
}
