//! Time partitions and reproducible path families.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{param, MeshError, Result};
use crate::exec::Execution;
use crate::models::ModelSpec;

/// How the grid between 0 and the last maturity is laid out before the
/// maturities are inserted.
#[derive(Debug, Clone, PartialEq)]
pub enum GridRule {
    /// `n` equal steps on `[0, T_K]`.
    Steps(usize),
    /// The coarsest uniform grid whose spacing does not exceed `h`.
    MaxSpacing(f64),
    /// Caller-supplied points; must start at 0 and end at `T_K`.
    Explicit(Vec<f64>),
}

/// A grid `0 = t₀ < … < t_n = T` containing every maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
    maturities: Vec<f64>,
    maturity_indices: Vec<usize>,
    mesh_width: f64,
    eps0: f64,
}

// Grid points closer than this to a maturity are snapped onto it.
const SNAP: f64 = 1e-12;

impl Partition {
    pub fn build(maturities: &[f64], rule: GridRule) -> Result<Self> {
        if maturities.is_empty()
            || maturities.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || maturities.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(MeshError::BadMaturities);
        }
        let horizon = *maturities.last().unwrap();
        let mut times = match rule {
            GridRule::Steps(0) => return Err(MeshError::BadGrid("zero steps".into())),
            GridRule::Steps(n) => uniform(horizon, n),
            GridRule::MaxSpacing(h) => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(MeshError::BadGrid(format!("spacing {h}")));
                }
                uniform(horizon, (horizon / h).ceil().max(1.0) as usize)
            }
            GridRule::Explicit(t) => {
                if t.first() != Some(&0.0) || t.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(MeshError::BadGrid(
                        "explicit grid must start at 0 and increase strictly".into(),
                    ));
                }
                if (t.last().unwrap() - horizon).abs() > SNAP {
                    return Err(MeshError::BadGrid("explicit grid must end at the last maturity".into()));
                }
                t
            }
        };
        for &tk in maturities {
            match times.iter().position(|&t| (t - tk).abs() <= SNAP) {
                Some(i) => times[i] = tk,
                None => {
                    let at = times.partition_point(|&t| t < tk);
                    times.insert(at, tk);
                }
            }
        }
        let maturity_indices = maturities
            .iter()
            .map(|tk| times.iter().position(|t| t == tk).unwrap())
            .collect();
        let mesh_width = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let eps0 = std::iter::once(0.0)
            .chain(maturities.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        Ok(Partition {
            times,
            maturities: maturities.to_vec(),
            maturity_indices,
            mesh_width,
            eps0,
        })
    }

    /// `t_i = i·T/n`, the uniform grid.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        Self::build(&[horizon], GridRule::Steps(n))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps `n`; there are `n + 1` grid points.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    /// `T_k` for 1-based `k`.
    pub fn maturity(&self, k: usize) -> Result<f64> {
        self.check_maturity(k)?;
        Ok(self.maturities[k - 1])
    }

    /// Grid index `i` with `t_i = T_k`, 1-based `k`.
    pub fn maturity_index(&self, k: usize) -> Result<usize> {
        self.check_maturity(k)?;
        Ok(self.maturity_indices[k - 1])
    }

    pub fn num_maturities(&self) -> usize {
        self.maturities.len()
    }

    fn check_maturity(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.maturities.len() {
            return Err(MeshError::MaturityIndex {
                index: k,
                max: self.maturities.len(),
            });
        }
        Ok(())
    }

    /// `|Δ| = max (t_{i+1} - t_i)`.
    pub fn mesh_width(&self) -> f64 {
        self.mesh_width
    }

    /// `ε₀ = min_k (T_k - T_{k-1})` with `T₀ = 0`.
    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// Index of `t` on the grid, if it is a grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }
}

fn uniform(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 * horizon / n as f64).collect()
}

/// Distinguishes the mesh family from the independent evaluation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyTag {
    Mesh,
    Evaluation,
    Other(u32),
}

impl FamilyTag {
    fn key(self) -> u64 {
        match self {
            FamilyTag::Mesh => 0x4d45_5348,
            FamilyTag::Evaluation => 0x4556_414c,
            FamilyTag::Other(k) => 0x1_0000_0000 | k as u64,
        }
    }

    fn label(self) -> String {
        match self {
            FamilyTag::Mesh => "mesh".into(),
            FamilyTag::Evaluation => "evaluation".into(),
            FamilyTag::Other(k) => format!("other:{k}"),
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "mesh" => Some(FamilyTag::Mesh),
            "evaluation" => Some(FamilyTag::Evaluation),
            _ => s.strip_prefix("other:")?.parse().ok().map(FamilyTag::Other),
        }
    }
}

/// Random stream for path `ell` of the family `(seed, tag)`.
///
/// The ChaCha key is derived from `(seed, tag)` and the path index selects
/// the stream, so path `ell` does not depend on how many paths are drawn.
pub fn path_stream(seed: u64, tag: FamilyTag, ell: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.key().to_le_bytes());
    key[16..24].copy_from_slice(b"meshcva\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(ell as u64);
    rng
}

/// SplitMix64 finalizer; derives well-separated child seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `L` independent paths sampled on the grid points of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFamily {
    /// Row-major `[ℓ][i][dim]`.
    data: Vec<f64>,
    num_paths: usize,
    dim: usize,
    partition: Partition,
    seed: u64,
    tag: FamilyTag,
}

impl PathFamily {
    pub fn simulate(
        model: &ModelSpec,
        partition: &Partition,
        num_paths: usize,
        seed: u64,
        tag: FamilyTag,
        exec: Execution,
    ) -> Result<Self> {
        if num_paths == 0 {
            return Err(param("L", "at least one path is required"));
        }
        let dim = model.total_dim();
        let stride = partition.times().len() * dim;
        let mut data = vec![0.0; num_paths * stride];
        let times = partition.times();
        exec.for_each_chunk_mut(&mut data, stride, |ell, path| {
            let mut rng = path_stream(seed, tag, ell);
            let mut scratch = vec![0.0; dim];
            path[..dim].copy_from_slice(model.initial_state());
            for i in 1..times.len() {
                let (prev, next) = path.split_at_mut(i * dim);
                let state = &mut next[..dim];
                state.copy_from_slice(&prev[(i - 1) * dim..]);
                model
                    .step_full_in_place(times[i] - times[i - 1], state, &mut scratch, &mut rng)
                    .expect("partition steps are positive");
            }
        });
        Ok(PathFamily {
            data,
            num_paths,
            dim,
            partition: partition.clone(),
            seed,
            tag,
        })
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tag(&self) -> FamilyTag {
        self.tag
    }

    /// `X_ℓ(t_i)`, 0-based `ell`.
    pub fn state(&self, ell: usize, i: usize) -> &[f64] {
        let stride = self.partition.times().len() * self.dim;
        let at = ell * stride + i * self.dim;
        &self.data[at..at + self.dim]
    }

    /// Whole path `ℓ` as `[i][dim]`.
    pub fn path(&self, ell: usize) -> &[f64] {
        let stride = self.partition.times().len() * self.dim;
        &self.data[ell * stride..(ell + 1) * stride]
    }

    /// Writes the family as text: `#` metadata lines, then
    /// `path,step,dim,value` rows in shortest round-trip decimal form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut head = String::new();
        writeln!(head, "# seed={}", self.seed).unwrap();
        writeln!(head, "# tag={}", self.tag.label()).unwrap();
        writeln!(head, "# paths={}", self.num_paths).unwrap();
        writeln!(head, "# dim={}", self.dim).unwrap();
        let join = |v: &[f64]| v.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(" ");
        writeln!(head, "# times={}", join(self.partition.times())).unwrap();
        writeln!(head, "# maturities={}", join(self.partition.maturities())).unwrap();
        writeln!(head, "path,step,dim,value").unwrap();
        out.write_all(head.as_bytes())?;
        let steps = self.partition.times().len();
        let mut line = String::new();
        for ell in 0..self.num_paths {
            for i in 0..steps {
                for (d, v) in self.state(ell, i).iter().enumerate() {
                    line.clear();
                    writeln!(line, "{ell},{i},{d},{v:?}").unwrap();
                    out.write_all(line.as_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| MeshError::Config(format!("path dump: {msg}"));
        let mut seed = None;
        let mut tag = None;
        let mut num_paths = None;
        let mut dim = None;
        let mut times: Option<Vec<f64>> = None;
        let mut maturities: Option<Vec<f64>> = None;
        let mut data: Vec<f64> = Vec::new();
        let mut expect = 0usize;
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect()
        };
        for line in input.lines() {
            let line = line?;
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta.split_once('=').ok_or_else(|| bad(line.clone()))?;
                match k {
                    "seed" => seed = v.parse().ok(),
                    "tag" => tag = FamilyTag::from_label(v),
                    "paths" => num_paths = v.parse().ok(),
                    "dim" => dim = v.parse().ok(),
                    "times" => times = Some(floats(v)?),
                    "maturities" => maturities = Some(floats(v)?),
                    _ => return Err(bad(format!("unknown key {k}"))),
                }
                continue;
            }
            if line == "path,step,dim,value" || line.is_empty() {
                continue;
            }
            let (Some(steps), Some(d)) = (times.as_ref().map(|t| t.len()), dim) else {
                return Err(bad("data before metadata".into()));
            };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(format!("bad row {line}")));
            }
            let idx: Vec<usize> = cols[..3]
                .iter()
                .map(|c| c.parse().map_err(|_| bad(format!("bad row {line}"))))
                .collect::<Result<_>>()?;
            if (idx[0] * steps + idx[1]) * d + idx[2] != expect {
                return Err(bad(format!("row out of order: {line}")));
            }
            data.push(cols[3].parse().map_err(|_| bad(format!("bad value {line}")))?);
            expect += 1;
        }
        let (Some(seed), Some(tag), Some(num_paths), Some(dim), Some(times), Some(maturities)) =
            (seed, tag, num_paths, dim, times, maturities)
        else {
            return Err(bad("missing metadata".into()));
        };
        if data.len() != num_paths * times.len() * dim {
            return Err(bad("truncated data".into()));
        }
        let partition = Partition::build(&maturities, GridRule::Explicit(times))?;
        Ok(PathFamily {
            data,
            num_paths,
            dim,
            partition,
            seed,
            tag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_hundred_steps() {
        let p = Partition::uniform(1.0, 100).unwrap();
        assert_eq!(p.times().len(), 101);
        assert_eq!(p.times()[0], 0.0);
        assert_eq!(p.times()[1], 0.01);
        assert_eq!(p.times()[37], 0.37);
        assert_eq!(p.horizon(), 1.0);
        assert_eq!(p.eps0(), 1.0);
        assert!((p.mesh_width() - 0.01).abs() < 1e-15);
        assert_eq!(p.maturity_index(1).unwrap(), 100);
    }

    #[test]
    fn maturities_are_inserted() {
        let p = Partition::build(&[0.5, 1.0], GridRule::MaxSpacing(0.3)).unwrap();
        assert!(p.times().contains(&0.5));
        assert!(p.times().contains(&1.0));
        assert!(p.mesh_width() <= 0.3);
        assert_eq!(p.eps0(), 0.5);
        assert_eq!(p.times()[p.maturity_index(1).unwrap()], 0.5);

        let p = Partition::build(&[0.35, 1.0], GridRule::Steps(4)).unwrap();
        assert_eq!(p.times(), &[0.0, 0.25, 0.35, 0.5, 0.75, 1.0]);
        assert!((p.eps0() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn coarsest_grid() {
        let p = Partition::uniform(1.0, 1).unwrap();
        assert_eq!(p.times(), &[0.0, 1.0]);
        assert_eq!(p.mesh_width(), 1.0);
    }

    #[test]
    fn bad_maturities() {
        for m in [vec![], vec![1.0, 1.0], vec![1.0, 0.5], vec![0.0, 1.0], vec![-1.0]] {
            assert_eq!(
                Partition::build(&m, GridRule::Steps(10)).unwrap_err(),
                MeshError::BadMaturities
            );
        }
        assert!(Partition::build(&[1.0], GridRule::Steps(0)).is_err());
        assert!(Partition::build(&[1.0], GridRule::Explicit(vec![0.0, 0.5])).is_err());
        assert!(Partition::build(&[1.0], GridRule::Explicit(vec![0.1, 1.0])).is_err());
    }

    #[test]
    fn maturity_index_bounds() {
        let p = Partition::uniform(1.0, 10).unwrap();
        assert!(p.maturity(0).is_err());
        assert!(p.maturity(2).is_err());
    }

    #[test]
    fn stream_independent_of_family_size() {
        let bm = ModelSpec::brownian_1d();
        let p = Partition::uniform(1.0, 5).unwrap();
        let small = PathFamily::simulate(&bm, &p, 3, 9, FamilyTag::Mesh, Execution::Sequential).unwrap();
        let big = PathFamily::simulate(&bm, &p, 10, 9, FamilyTag::Mesh, Execution::Parallel).unwrap();
        for ell in 0..3 {
            assert_eq!(small.path(ell), big.path(ell));
        }
        let other = PathFamily::simulate(&bm, &p, 3, 9, FamilyTag::Evaluation, Execution::Sequential).unwrap();
        assert_ne!(small.path(0), other.path(0));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|r| derive_seed(1, r)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn zero_paths_rejected() {
        let bm = ModelSpec::brownian_1d();
        let p = Partition::uniform(1.0, 5).unwrap();
        assert!(PathFamily::simulate(&bm, &p, 0, 1, FamilyTag::Mesh, Execution::Sequential).is_err());
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let m = ModelSpec::one_factor_abm(1.0, 0.1, &[0.5], &[0.0], &[0.4], vec![0.0, 1.0]).unwrap();
        let p = Partition::build(&[0.3, 1.0], GridRule::Steps(7)).unwrap();
        let fam = PathFamily::simulate(&m, &p, 4, 77, FamilyTag::Evaluation, Execution::Parallel).unwrap();
        let mut buf = Vec::new();
        fam.write_csv(&mut buf).unwrap();
        let back = PathFamily::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, fam);
    }

    #[test]
    fn csv_rejects_truncation() {
        let bm = ModelSpec::brownian_1d();
        let p = Partition::uniform(1.0, 3).unwrap();
        let fam = PathFamily::simulate(&bm, &p, 2, 1, FamilyTag::Mesh, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        fam.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(text.lines().count() - 1).collect::<Vec<_>>().join("\n");
        assert!(PathFamily::read_csv(std::io::Cursor::new(cut)).is_err());
    }
}
