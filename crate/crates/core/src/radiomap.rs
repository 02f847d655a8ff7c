//! The radio map M = {(x, C(x))}: per-cell Hermitian channel covariances over
//! a grid, with construction from ground-truth channels, binary
//! serialization, and inspection helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::scenario::{Grid, Scenario};

const MAGIC: &[u8; 5] = b"RMAP1";

/// Stored value precision of a serialized map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Immutable per-cell covariance map.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    grid: Grid,
    n_antennas: usize,
    covariances: Vec<CMat>,
    sample_counts: Vec<u64>,
}

impl RadioMap {
    pub fn new(
        grid: Grid,
        n_antennas: usize,
        covariances: Vec<CMat>,
        sample_counts: Vec<u64>,
    ) -> Result<Self> {
        if covariances.len() != grid.n_cells() || sample_counts.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                got: covariances.len(),
            });
        }
        for c in &covariances {
            if c.nrows() != n_antennas || c.ncols() != n_antennas {
                return Err(Error::DimensionMismatch { expected: n_antennas, got: c.nrows() });
            }
            if (c - c.adjoint()).norm() > 1e-10 * (1.0 + c.norm()) {
                return Err(Error::InvalidParameter("stored covariance is not Hermitian".into()));
            }
        }
        Ok(Self { grid, n_antennas, covariances, sample_counts })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn sample_count(&self, cell: usize) -> Result<u64> {
        self.sample_counts
            .get(cell)
            .copied()
            .ok_or(Error::CellOutOfRange { index: cell, n_cells: self.grid.n_cells() })
    }

    /// Stored covariance for a cell.
    pub fn lookup(&self, cell: usize) -> Result<&CMat> {
        self.covariances
            .get(cell)
            .ok_or(Error::CellOutOfRange { index: cell, n_cells: self.grid.n_cells() })
    }

    pub fn covariances(&self) -> &[CMat] {
        &self.covariances
    }

    /// Exact map from the scenario's true covariances.
    pub fn from_true_covariances(scenario: &Scenario) -> Result<Self> {
        let covs = scenario.covariances().to_vec();
        Self::new(scenario.grid.clone(), scenario.params.n_antennas, covs, vec![0; scenario.grid.n_cells()])
    }

    /// Per-cell sample mean of h h^H over fresh ground-truth channel draws,
    /// Hermitian-symmetrized. Cells with zero samples fall back to
    /// sigma_h^2 I and are reported in the returned list.
    pub fn build_perfect_map<R: Rng + ?Sized>(
        scenario: &Scenario,
        samples_per_cell: usize,
        rng: &mut R,
    ) -> Result<(Self, Vec<usize>)> {
        if samples_per_cell == 0 {
            return Err(Error::InvalidParameter("samples_per_cell must be >= 1".into()));
        }
        let n = scenario.params.n_antennas;
        let mut covs = Vec::with_capacity(scenario.grid.n_cells());
        let mut counts = Vec::with_capacity(scenario.grid.n_cells());
        let mut empty = Vec::new();
        for cell in 0..scenario.grid.n_cells() {
            let c_true = scenario.covariance(cell)?;
            if c_true.norm() == 0.0 {
                empty.push(cell);
                covs.push(CMat::identity(n, n).scale(scenario.layout.sigma_h2));
                counts.push(0);
                continue;
            }
            let mut acc = CMat::zeros(n, n);
            for _ in 0..samples_per_cell {
                let h = linalg::sample_cn(c_true, rng)?;
                acc += &h * h.adjoint();
            }
            acc /= Complex64::new(samples_per_cell as f64, 0.0);
            covs.push(linalg::hermitianize(&acc));
            counts.push(samples_per_cell as u64);
        }
        Ok((Self::new(scenario.grid.clone(), n, covs, counts)?, empty))
    }

    /// Projects every stored covariance onto the Hermitian PSD cone.
    pub fn psd_projected(&self) -> Self {
        let covs = self.covariances.iter().map(linalg::psd_project).collect();
        Self {
            grid: self.grid.clone(),
            n_antennas: self.n_antennas,
            covariances: covs,
            sample_counts: self.sample_counts.clone(),
        }
    }

    /// Binary serialization. Header: magic "RMAP1", n_rows, n_cols, resolution,
    /// origin, N_t, precision flag; then per cell the sample count and the
    /// row-major interleaved real/imag matrix entries.
    pub fn save(&self, path: &Path, precision: Precision) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid.n_rows as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n_cols as u32).to_le_bytes())?;
        w.write_all(&self.grid.resolution.to_le_bytes())?;
        w.write_all(&self.grid.origin[0].to_le_bytes())?;
        w.write_all(&self.grid.origin[1].to_le_bytes())?;
        w.write_all(&(self.n_antennas as u32).to_le_bytes())?;
        w.write_all(&[match precision {
            Precision::Single => 0u8,
            Precision::Double => 1u8,
        }])?;
        for (c, &count) in self.covariances.iter().zip(&self.sample_counts) {
            w.write_all(&count.to_le_bytes())?;
            for i in 0..self.n_antennas {
                for j in 0..self.n_antennas {
                    let z = c[(i, j)];
                    match precision {
                        Precision::Single => {
                            w.write_all(&(z.re as f32).to_le_bytes())?;
                            w.write_all(&(z.im as f32).to_le_bytes())?;
                        }
                        Precision::Double => {
                            w.write_all(&z.re.to_le_bytes())?;
                            w.write_all(&z.im.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| Error::MapFormat("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::MapFormat("bad magic bytes".into()));
        }
        let n_rows = read_u32(&mut r)? as usize;
        let n_cols = read_u32(&mut r)? as usize;
        let resolution = read_f64(&mut r)?;
        let origin = [read_f64(&mut r)?, read_f64(&mut r)?];
        let n_antennas = read_u32(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(|_| Error::MapFormat("truncated header".into()))?;
        let precision = match flag[0] {
            0 => Precision::Single,
            1 => Precision::Double,
            other => return Err(Error::MapFormat(format!("unknown precision flag {other}"))),
        };
        let grid = Grid::new(origin, resolution, n_rows, n_cols)
            .map_err(|e| Error::MapFormat(e.to_string()))?;
        let mut covariances = Vec::with_capacity(grid.n_cells());
        let mut counts = Vec::with_capacity(grid.n_cells());
        for _ in 0..grid.n_cells() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::MapFormat("truncated cell data".into()))?;
            counts.push(u64::from_le_bytes(b));
            let mut c = CMat::zeros(n_antennas, n_antennas);
            for i in 0..n_antennas {
                for j in 0..n_antennas {
                    let (re, im) = match precision {
                        Precision::Single => (read_f32(&mut r)? as f64, read_f32(&mut r)? as f64),
                        Precision::Double => (read_f64(&mut r)?, read_f64(&mut r)?),
                    };
                    c[(i, j)] = Complex64::new(re, im);
                }
            }
            covariances.push(c);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::MapFormat("trailing bytes after cell data".into()));
        }
        Self::new(grid, n_antennas, covariances, counts)
    }

    /// CSV summary: cell, x, y, trace, rank, sample count.
    pub fn inspect_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cell,x,y,trace,rank,samples")?;
        for cell in 0..self.grid.n_cells() {
            let c = &self.covariances[cell];
            let center = self.grid.center(cell)?;
            let (vals, _) = linalg::eigh_desc(c);
            let top = vals.first().copied().unwrap_or(0.0).abs();
            let rank = vals.iter().filter(|v| v.abs() > 1e-9 * top.max(1e-300)).count();
            writeln!(
                out,
                "{},{},{},{:.6e},{},{}",
                cell,
                center[0],
                center[1],
                c.trace().re,
                rank,
                self.sample_counts[cell]
            )?;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::MapFormat("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::MapFormat("truncated file".into()))?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::MapFormat("truncated file".into()))?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ChannelParams, MobilityModel, PathSpec, ScattererLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_scenario() -> Scenario {
        let grid = Grid::new([0.0, 0.0], 5.0, 2, 2).unwrap();
        let mobility = MobilityModel::new([0.0, 0.0], 12.0, 0.5).unwrap();
        let layout = ScattererLayout {
            paths: vec![
                vec![PathSpec { power: 1.0, angle: 0.2 }],
                vec![PathSpec { power: 1.0, angle: -0.4 }],
                vec![PathSpec { power: 0.5, angle: 0.9 }, PathSpec { power: 0.5, angle: -0.9 }],
                vec![PathSpec { power: 1.0, angle: 0.0 }],
            ],
            sigma_h2: 0.01,
            los: vec![true, true, false, true],
        };
        let params = ChannelParams { n_antennas: 4, ar_coefficient: 0.5, noise_variance: 0.1 };
        Scenario::new(grid, mobility, layout, params).unwrap()
    }

    #[test]
    fn perfect_map_converges_to_true_covariance() {
        let sc = tiny_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (map, empty) = RadioMap::build_perfect_map(&sc, 10_000, &mut rng).unwrap();
        assert!(empty.is_empty());
        for cell in 0..4 {
            let c_true = sc.covariance(cell).unwrap();
            let c_est = map.lookup(cell).unwrap();
            assert!((c_est - c_true).norm() / c_true.norm() < 0.05);
        }
    }

    #[test]
    fn one_sample_map_is_outer_product() {
        let sc = tiny_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (map, _) = RadioMap::build_perfect_map(&sc, 1, &mut rng).unwrap();
        for cell in 0..4 {
            let c = map.lookup(cell).unwrap();
            let (vals, _) = linalg::eigh_desc(c);
            // One-sample mean of h h^H is rank 1.
            assert!(vals[1].abs() < 1e-9 * vals[0]);
        }
    }

    #[test]
    fn lookup_out_of_range_errors() {
        let sc = tiny_scenario();
        let map = RadioMap::from_true_covariances(&sc).unwrap();
        assert!(map.lookup(3).is_ok());
        assert!(matches!(map.lookup(4), Err(Error::CellOutOfRange { .. })));
    }

    #[test]
    fn save_load_round_trip_double() {
        let sc = tiny_scenario();
        let map = RadioMap::from_true_covariances(&sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.rmap");
        map.save(&path, Precision::Double).unwrap();
        let loaded = RadioMap::load(&path).unwrap();
        assert_eq!(map, loaded);
        // Second save is byte-identical.
        let path2 = dir.path().join("map2.rmap");
        loaded.save(&path2, Precision::Double).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn save_load_round_trip_single_is_stable() {
        let sc = tiny_scenario();
        let map = RadioMap::from_true_covariances(&sc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.rmap");
        let p2 = dir.path().join("b.rmap");
        map.save(&p1, Precision::Single).unwrap();
        let loaded = RadioMap::load(&p1).unwrap();
        loaded.save(&p2, Precision::Single).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn malformed_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rmap");
        std::fs::write(&path, b"XMAP1rest").unwrap();
        assert!(matches!(RadioMap::load(&path), Err(Error::MapFormat(_))));

        let sc = tiny_scenario();
        let map = RadioMap::from_true_covariances(&sc).unwrap();
        let good = dir.path().join("good.rmap");
        map.save(&good, Precision::Single).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        let trunc = dir.path().join("trunc.rmap");
        std::fs::write(&trunc, bytes).unwrap();
        assert!(matches!(RadioMap::load(&trunc), Err(Error::MapFormat(_))));
    }

    #[test]
    fn inspect_emits_one_row_per_cell() {
        let sc = tiny_scenario();
        let map = RadioMap::from_true_covariances(&sc).unwrap();
        let mut buf = Vec::new();
        map.inspect_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        // NLOS cell 2 carries two static paths: rank 3 with the diffuse floor.
        let row: Vec<&str> = text.lines().nth(3).unwrap().split(',').collect();
        assert_eq!(row[0], "2");
    }
}
