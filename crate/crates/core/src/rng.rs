//! Deterministic counter-based random number generation.
//!
//! Every stochastic piece of the crate (weight init, mixture sampling,
//! injected noise) draws from this generator so that a run is a pure
//! function of its seeds. The core stream is SplitMix64: the k-th output
//! depends only on `(seed, k)`, which makes substreams cheap to derive
//! and keeps draws independent of iteration order.

use std::sync::OnceLock;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded deterministic generator. Identical seed and call sequence
/// produce a bit-identical stream.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent substream keyed by `tag`. The result depends
    /// only on `(self.seed, tag)`, never on how many draws have already
    /// been made, so substreams can be derived in any order.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng::new(mix64(
            self.seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA)),
        ))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard Gaussian draw (ziggurat method).
    pub fn normal(&mut self) -> f64 {
        let tables = zig_tables();
        loop {
            let bits = self.next_u64();
            let layer = (bits & 0x7F) as usize;
            let sign = if bits & 0x80 != 0 { 1.0 } else { -1.0 };
            let u = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let x = u * tables.x[layer];
            if x < tables.accept_below[layer] {
                return sign * x;
            }
            if layer == 0 {
                // Tail sample beyond R (Marsaglia's method).
                loop {
                    let u1 = 1.0 - self.next_f64();
                    let u2 = 1.0 - self.next_f64();
                    let xt = -u1.ln() / ZIG_R;
                    let yt = -u2.ln();
                    if 2.0 * yt > xt * xt {
                        return sign * (ZIG_R + xt);
                    }
                }
            }
            // Wedge test between the layer's floor and ceiling densities.
            let f_hi = if layer == 1 { 1.0 } else { tables.f[layer - 1] };
            let f_lo = tables.f[layer];
            if f_lo + self.next_f64() * (f_hi - f_lo) < (-0.5 * x * x).exp() {
                return sign * x;
            }
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normal(&mut v);
        v
    }

    /// Categorical draw over `probs` (assumed to sum to 1).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }
}

// ── Ziggurat tables (128 layers, Marsaglia & Tsang) ──────────────────────────

const ZIG_LAYERS: usize = 128;
const ZIG_R: f64 = 3.442619855899;
const ZIG_V: f64 = 9.91256303526217e-3;

struct ZigTables {
    /// Layer widths. `x[0]` is the virtual base width `V / f(R)`;
    /// `x[127] = R`; widths increase from `x[1]` up to `x[127]`.
    x: [f64; ZIG_LAYERS],
    /// Density at each layer boundary, `f[i] = exp(-x[i]^2 / 2)`.
    f: [f64; ZIG_LAYERS],
    /// Fast-accept bound per layer: a candidate `|x|` strictly below this
    /// is inside the next narrower rectangle and therefore under the curve.
    accept_below: [f64; ZIG_LAYERS],
}

fn zig_tables() -> &'static ZigTables {
    static TABLES: OnceLock<ZigTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut x = [0.0; ZIG_LAYERS];
        let mut f = [0.0; ZIG_LAYERS];
        x[0] = ZIG_V / (-0.5 * ZIG_R * ZIG_R).exp();
        f[0] = 1.0; // ceiling used by the top wedge (layer 1)
        x[ZIG_LAYERS - 1] = ZIG_R;
        f[ZIG_LAYERS - 1] = (-0.5 * ZIG_R * ZIG_R).exp();
        let mut d = ZIG_R;
        for i in (1..ZIG_LAYERS - 1).rev() {
            d = (-2.0 * (ZIG_V / d + (-0.5 * d * d).exp()).ln()).sqrt();
            x[i] = d;
            f[i] = (-0.5 * d * d).exp();
        }
        let mut accept_below = [0.0; ZIG_LAYERS];
        accept_below[0] = ZIG_R;
        accept_below[1] = 0.0; // top layer always runs the wedge test
        for i in 2..ZIG_LAYERS {
            accept_below[i] = x[i - 1];
        }
        ZigTables { x, f, accept_below }
    })
}
