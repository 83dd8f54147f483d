//! Counter-based deterministic randomness.
//!
//! Every draw is a pure function of `(seed, stream, epoch, sample, op, index)`,
//! so results do not depend on call order or on which thread asks.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Sampling = 1,
    Noise = 2,
    Data = 3,
    Init = 4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngContext {
    pub seed: u64,
    pub stream: Stream,
    pub epoch: u64,
    pub sample: u64,
    pub op: u64,
}

impl RngContext {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self { seed, stream, epoch: 0, sample: 0, op: 0 }
    }

    pub fn at(self, epoch: u64, sample: u64, op: u64) -> Self {
        Self { epoch, sample, op, ..self }
    }

    fn key(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        for word in [self.stream as u64, self.epoch, self.sample, self.op] {
            h = splitmix64(h ^ word);
        }
        h
    }

    /// Raw 64 random bits for draw number `index`.
    pub fn bits(&self, index: u64) -> u64 {
        splitmix64(self.key() ^ splitmix64(index.wrapping_add(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&self, index: u64) -> f64 {
        to_unit(self.bits(index))
    }

    /// Fills `out` with uniforms for indices `0..out.len()`.
    pub fn fill_uniform(&self, out: &mut [f64]) {
        let key = self.key();
        for (i, v) in out.iter_mut().enumerate() {
            *v = to_unit(splitmix64(key ^ splitmix64((i as u64).wrapping_add(GOLDEN))));
        }
    }

    /// Standard normals by Box-Muller, two per pair of uniforms.
    pub fn fill_normal(&self, out: &mut [f64]) {
        let key = self.key();
        let draw = |i: u64| to_unit(splitmix64(key ^ splitmix64(i.wrapping_add(GOLDEN))));
        for (pair, chunk) in out.chunks_mut(2).enumerate() {
            // 1 - u lies in (0, 1], keeping the log finite
            let u1 = 1.0 - draw(2 * pair as u64);
            let u2 = draw(2 * pair as u64 + 1);
            let r = libm::sqrt(-2.0 * libm::log(u1));
            let (cos, sin) = unit_circle(u2);
            chunk[0] = r * cos;
            if let Some(second) = chunk.get_mut(1) {
                *second = r * sin;
            }
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&self, index: u64, n: u64) -> u64 {
        // multiply-shift; bias is below 2^-64 * n
        ((self.bits(index) as u128 * n as u128) >> 64) as u64
    }
}

/// `(cos, sin)` of `2 pi t` for `t` in `[0, 1)`, reduced to `[-pi/4, pi/4]` by quadrant.
fn unit_circle(t: f64) -> (f64, f64) {
    let q = libm::round(4.0 * t);
    let r = 2.0 * core::f64::consts::PI * (t - 0.25 * q);
    let (s, c) = (libm::sin(r), libm::cos(r));
    match q as u32 % 4 {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

#[inline]
fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
