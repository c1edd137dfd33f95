//! Reproducible driving noises under the reference probability: independent
//! Wiener increments on a fixed grid and Poisson jump times.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid on `[0, t_end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridConfig", into = "GridConfig")]
pub struct GridSpec {
    t_end: f64,
    step: f64,
    n_steps: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    t_end: f64,
    step: f64,
}

impl TryFrom<GridConfig> for GridSpec {
    type Error = Error;
    fn try_from(g: GridConfig) -> Result<Self> {
        GridSpec::new(g.t_end, g.step)
    }
}

impl From<GridSpec> for GridConfig {
    fn from(g: GridSpec) -> Self {
        GridConfig { t_end: g.t_end, step: g.step }
    }
}

impl GridSpec {
    /// `t_end` must be an integer multiple of `step` (to 1e-12 relative).
    pub fn new(t_end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("grid step must be > 0, got {step}")));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::invalid(format!("grid t_end must be >= 0, got {t_end}")));
        }
        let n = (t_end / step).round();
        if (n * step - t_end).abs() > 1e-12 * t_end.max(1.0) {
            return Err(Error::invalid(format!(
                "t_end = {t_end} is not a multiple of step = {step}"
            )));
        }
        Ok(GridSpec { t_end, step, n_steps: n as usize })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.step
    }

    /// Index of the grid point nearest to `t`, clamped to the grid.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.step).round().max(0.0) as usize).min(self.n_steps)
    }

    /// Index of the step `(t_n, t_{n+1}]` containing `t > 0`.
    #[inline]
    pub fn step_containing(&self, t: f64) -> usize {
        let k = (t / self.step).ceil() as usize;
        k.saturating_sub(1).min(self.n_steps.saturating_sub(1))
    }

    /// Same horizon with `factor` times larger steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps
            )));
        }
        Ok(GridSpec {
            t_end: self.t_end,
            step: self.step * factor as f64,
            n_steps: self.n_steps / factor,
        })
    }
}

/// Number of Wiener and Poisson drivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelLayout {
    pub wiener: usize,
    pub counting: usize,
}

/// One realization of all driving noises.
///
/// `jump_marks` carries an independent uniform `[0, 1)` variable per jump,
/// used for thinning when the path drives the nonlinear equations.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub grid: GridSpec,
    pub wiener_increments: Vec<Vec<f64>>,
    pub jump_times: Vec<Vec<f64>>,
    pub jump_marks: Vec<Vec<f64>>,
    pub intensities: Vec<f64>,
    pub seed: u64,
}

const WIENER_STREAM: u64 = 1;
const POISSON_STREAM: u64 = 1 << 32;

/// Samples Wiener increments `N(0, step)` and Poisson jump times at the given
/// intensities. Every channel has its own ChaCha stream, so changing an
/// intensity leaves the other channels untouched.
pub fn sample_path(grid: GridSpec, layout: ChannelLayout, intensities: &[f64], seed: u64) -> Result<NoisePath> {
    if intensities.len() != layout.counting {
        return Err(Error::invalid(format!(
            "{} intensities for {} counting channels",
            intensities.len(),
            layout.counting
        )));
    }
    if let Some(bad) = intensities.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!("reference intensity must be > 0, got {bad}")));
    }
    let sd = grid.step.sqrt();
    let wiener_increments = (0..layout.wiener)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(WIENER_STREAM + c as u64);
            (0..grid.n_steps)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut jump_times = Vec::with_capacity(layout.counting);
    let mut jump_marks = Vec::with_capacity(layout.counting);
    for (k, &lambda) in intensities.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(POISSON_STREAM + k as u64);
        let mut times = Vec::new();
        let mut marks = Vec::new();
        let mut t = 0.0;
        loop {
            t += rng.sample::<f64, _>(Exp1) / lambda;
            if t > grid.t_end {
                break;
            }
            times.push(t);
            marks.push(rng.random::<f64>());
        }
        jump_times.push(times);
        jump_marks.push(marks);
    }
    Ok(NoisePath {
        grid,
        wiener_increments,
        jump_times,
        jump_marks,
        intensities: intensities.to_vec(),
        seed,
    })
}

/// SplitMix64 finalizer; a bijection on `u64`.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trajectory seed. Injective in `trajectory_index` for a fixed master
/// seed and in the master seed for a fixed index.
pub fn split_seed(master_seed: u64, trajectory_index: u64) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    mix64(master_seed.wrapping_add(GOLDEN.wrapping_mul(trajectory_index.wrapping_add(1))))
}

const MAGIC: &[u8; 8] = b"QTRJNP01";

impl NoisePath {
    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout {
            wiener: self.wiener_increments.len(),
            counting: self.jump_times.len(),
        }
    }

    /// Cumulative Wiener value `B_c(t_n)`.
    pub fn wiener_value(&self, channel: usize, n: usize) -> f64 {
        self.wiener_increments[channel][..n].iter().sum()
    }

    /// Number of jumps of channel `k` in `(0, t]`.
    pub fn count_until(&self, k: usize, t: f64) -> usize {
        self.jump_times[k].partition_point(|&s| s <= t)
    }

    /// Same path on a grid `factor` times coarser: increments are summed,
    /// jump times are kept.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        let grid = self.grid.coarsen(factor)?;
        let wiener_increments = self
            .wiener_increments
            .iter()
            .map(|w| w.chunks(factor).map(|c| c.iter().sum()).collect())
            .collect();
        Ok(NoisePath {
            grid,
            wiener_increments,
            ..self.clone()
        })
    }

    /// Binary dump, all little-endian:
    ///
    /// ```text
    /// magic "QTRJNP01" | seed u64 | t_end f64 | step f64 | n_steps u64
    /// n_wiener u64 | n_counting u64
    /// per Wiener channel: n_steps f64 increments
    /// per counting channel: intensity f64 | n_jumps u64 | n_jumps f64 times | n_jumps f64 marks
    /// ```
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.grid.t_end.to_le_bytes())?;
        w.write_all(&self.grid.step.to_le_bytes())?;
        w.write_all(&(self.grid.n_steps as u64).to_le_bytes())?;
        w.write_all(&(self.wiener_increments.len() as u64).to_le_bytes())?;
        w.write_all(&(self.jump_times.len() as u64).to_le_bytes())?;
        for ch in &self.wiener_increments {
            for x in ch {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for k in 0..self.jump_times.len() {
            w.write_all(&self.intensities[k].to_le_bytes())?;
            w.write_all(&(self.jump_times[k].len() as u64).to_le_bytes())?;
            for x in self.jump_times[k].iter().chain(&self.jump_marks[k]) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> io::Result<NoisePath> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a noise path dump"));
        }
        let mut buf = [0u8; 8];
        let mut u = |r: &mut R| -> io::Result<u64> {
            r.read_exact(&mut buf)?;
            Ok(u64::from_le_bytes(buf))
        };
        let seed = u(&mut r)?;
        let t_end = f64::from_bits(u(&mut r)?);
        let step = f64::from_bits(u(&mut r)?);
        let n_steps = u(&mut r)? as usize;
        let n_wiener = u(&mut r)? as usize;
        let n_counting = u(&mut r)? as usize;
        let grid = GridSpec::new(t_end, step).map_err(|e| bad(&e.to_string()))?;
        if grid.n_steps != n_steps {
            return Err(bad("inconsistent step count"));
        }
        let mut read_f64s = |r: &mut R, n: usize| -> io::Result<Vec<f64>> {
            (0..n).map(|_| u(r).map(f64::from_bits)).collect()
        };
        let wiener_increments = (0..n_wiener)
            .map(|_| read_f64s(&mut r, n_steps))
            .collect::<io::Result<Vec<_>>>()?;
        let mut intensities = Vec::new();
        let mut jump_times = Vec::new();
        let mut jump_marks = Vec::new();
        for _ in 0..n_counting {
            let head = read_f64s(&mut r, 2)?;
            intensities.push(head[0]);
            let n = head[1].to_bits() as usize;
            jump_times.push(read_f64s(&mut r, n)?);
            jump_marks.push(read_f64s(&mut r, n)?);
        }
        Ok(NoisePath {
            grid,
            wiener_increments,
            jump_times,
            jump_marks,
            intensities,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn layout(w: usize, c: usize) -> ChannelLayout {
        ChannelLayout { wiener: w, counting: c }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 0.0).is_err());
        assert!(GridSpec::new(1.0, 0.3).is_err());
        let g = GridSpec::new(20.0, 0.005).unwrap();
        assert_eq!(g.n_steps(), 4000);
        assert_eq!(g.step_containing(0.005), 0);
        assert_eq!(g.step_containing(0.0051), 1);
        assert_eq!(g.step_containing(20.0), 3999);
    }

    #[test]
    fn empty_horizon() {
        let p = sample_path(GridSpec::new(0.0, 0.1).unwrap(), layout(3, 2), &[1.0, 2.0], 5).unwrap();
        assert!(p.wiener_increments.iter().all(Vec::is_empty));
        assert!(p.jump_times.iter().all(Vec::is_empty));
    }

    #[test]
    fn rejects_nonpositive_intensity() {
        let g = GridSpec::new(1.0, 0.1).unwrap();
        assert!(sample_path(g, layout(1, 1), &[0.0], 1).is_err());
        assert!(sample_path(g, layout(1, 1), &[-1.0], 1).is_err());
        assert!(sample_path(g, layout(1, 2), &[1.0], 1).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let g = GridSpec::new(5.0, 0.01).unwrap();
        let a = sample_path(g, layout(5, 4), &[1.0, 0.5, 2.0, 1.0], 42).unwrap();
        let b = sample_path(g, layout(5, 4), &[1.0, 0.5, 2.0, 1.0], 42).unwrap();
        assert_eq!(a, b);
        let c = sample_path(g, layout(5, 4), &[1.0, 0.5, 2.0, 1.0], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn intensity_change_keeps_wiener_stream() {
        let g = GridSpec::new(5.0, 0.01).unwrap();
        let a = sample_path(g, layout(2, 1), &[1.0], 7).unwrap();
        let b = sample_path(g, layout(2, 1), &[2.0], 7).unwrap();
        assert_eq!(a.wiener_increments, b.wiener_increments);
    }

    #[test]
    fn jump_times_sorted_in_horizon() {
        let g = GridSpec::new(50.0, 0.01).unwrap();
        let p = sample_path(g, layout(0, 3), &[0.3, 1.0, 4.0], 9).unwrap();
        for times in &p.jump_times {
            assert!(times.windows(2).all(|w| w[0] < w[1]));
            assert!(times.iter().all(|&t| t > 0.0 && t <= 50.0));
        }
        for marks in &p.jump_marks {
            assert!(marks.iter().all(|&u| (0.0..1.0).contains(&u)));
        }
    }

    #[test]
    fn poisson_rate_law_of_large_numbers() {
        // lambda = 1, T = 1000: count within 3 sqrt(lambda T) of lambda T.
        let g = GridSpec::new(1000.0, 1.0).unwrap();
        for seed in 0..20 {
            let p = sample_path(g, layout(0, 1), &[1.0], seed).unwrap();
            let n = p.jump_times[0].len() as f64;
            assert!((n - 1000.0).abs() <= 3.0 * 1000f64.sqrt(), "seed {seed}: {n}");
        }
    }

    #[test]
    fn split_seed_properties() {
        assert_ne!(split_seed(3, 0), split_seed(3, 1));
        assert_ne!(split_seed(3, 17), split_seed(4, 17));
        let seen: HashSet<u64> = (0..10_000).map(|i| split_seed(12345, i)).collect();
        assert_eq!(seen.len(), 10_000);
    }

    #[test]
    fn coarsen_sums_increments() {
        let g = GridSpec::new(1.0, 0.01).unwrap();
        let p = sample_path(g, layout(2, 1), &[3.0], 1).unwrap();
        let q = p.coarsen(4).unwrap();
        assert_eq!(q.grid.n_steps(), 25);
        let total: f64 = p.wiener_increments[1].iter().sum();
        let total_c: f64 = q.wiener_increments[1].iter().sum();
        assert!((total - total_c).abs() < 1e-12);
        assert_eq!(q.jump_times, p.jump_times);
        assert!(p.coarsen(3).is_err());
    }

    #[test]
    fn binary_dump_round_trip() {
        let g = GridSpec::new(2.0, 0.01).unwrap();
        let p = sample_path(g, layout(5, 4), &[1.0, 0.5, 2.0, 1.0], 99).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        let q = NoisePath::read_binary(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert!(NoisePath::read_binary(&b"garbage!"[..]).is_err());
    }
}
