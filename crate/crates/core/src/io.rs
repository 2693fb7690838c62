//! File formats: EWF1 field snapshots, trajectory directories, CSV
//! emission. All floats are written with full precision and fixed
//! formatting so identical runs produce byte-identical outputs.

use crate::error::{EwError, Result};
use crate::evolve::{FailureRecord, SeriesRow, State, Trajectory};
use crate::grid::{Field, Grid3, Rank};
use crate::material::MaterialSpec;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"EWFIELD1";

#[derive(Debug, Serialize, Deserialize)]
struct Ewf1Header {
    n: usize,
    box_len: f64,
    rank: Rank,
    components: usize,
    time: f64,
}

/// Writes one field snapshot: 8-byte magic, length-prefixed UTF-8 JSON
/// header, then little-endian 8-byte floats in component-major layout.
pub fn write_ewf1(path: &Path, field: &Field, time: f64) -> Result<()> {
    let header = Ewf1Header {
        n: field.grid().n(),
        box_len: field.grid().box_len(),
        rank: field.rank(),
        components: field.components(),
        time,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| EwError::Format(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(12 + header_bytes.len() + field.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_ewf1(path: &Path) -> Result<(Field, f64)> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EwError::Format(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let hlen = u32::from_le_bytes(len_bytes) as usize;
    let mut hbuf = vec![0u8; hlen];
    file.read_exact(&mut hbuf)?;
    let header: Ewf1Header = serde_json::from_slice(&hbuf)
        .map_err(|e| EwError::Format(format!("header decode: {e}")))?;
    if header.components != header.rank.components() {
        return Err(EwError::Format("component count inconsistent with rank".into()));
    }
    let grid = Grid3::new(header.n, header.box_len)?;
    let count = header.components * grid.points();
    let mut dbuf = vec![0u8; count * 8];
    file.read_exact(&mut dbuf)?;
    let mut data = Vec::with_capacity(count);
    for chunk in dbuf.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((Field::from_data(grid, header.rank, data)?, header.time))
}

/// Deterministic float formatting shared by every CSV emitter.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.17e}")
    }
}

pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryMeta {
    material: MaterialSpec,
    grid_n: usize,
    box_len: f64,
    dt: f64,
    out_stride: f64,
    config_hash: u64,
    failure: Option<FailureRecord>,
    snapshots: usize,
}

/// Writes a trajectory directory: config.json copy, series.csv, and the
/// EWF1 snapshots (state_%06d.ewf holds U, velocity_%06d.ewf holds V).
pub fn write_trajectory(
    dir: &Path,
    traj: &Trajectory,
    config_json: Option<&str>,
    energies: Option<&[f64]>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(cfg) = config_json {
        fs::write(dir.join("config.json"), cfg)?;
    }
    let meta = TrajectoryMeta {
        material: traj.spec.clone(),
        grid_n: traj.grid.n(),
        box_len: traj.grid.box_len(),
        dt: traj.dt,
        out_stride: traj.out_stride,
        config_hash: traj.config_hash,
        failure: traj.failure.clone(),
        snapshots: traj.len(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| EwError::Format(format!("meta encode: {e}")))?;
    fs::write(dir.join("trajectory.json"), meta_json)?;
    let mut rows = Vec::with_capacity(traj.len());
    for (j, s) in traj.series.iter().enumerate() {
        let e_std = energies.map(|e| e[j]).unwrap_or(f64::NAN);
        rows.push(vec![
            s.t,
            e_std,
            s.hyper_margin,
            s.max_grad,
            s.u_max,
            s.v_max,
        ]);
    }
    write_csv(
        &dir.join("series.csv"),
        &["t", "E_std", "hyper_margin", "max_grad", "u_max", "v_max"],
        &rows,
    )?;
    for (j, state) in traj.states.iter().enumerate() {
        write_ewf1(&dir.join(format!("state_{j:06}.ewf")), &state.u, state.t)?;
        write_ewf1(
            &dir.join(format!("velocity_{j:06}.ewf")),
            &state.v,
            state.t,
        )?;
    }
    if let Some(fr) = &traj.failure {
        let msg = serde_json::to_string_pretty(fr)
            .map_err(|e| EwError::Format(format!("failure encode: {e}")))?;
        fs::write(dir.join("failure.json"), msg)?;
    }
    Ok(())
}

/// Reads a trajectory directory back; the per-snapshot monitor series is
/// recomputed from the states (the metric is a function of the state).
pub fn read_trajectory(dir: &Path) -> Result<Trajectory> {
    let meta_json = fs::read_to_string(dir.join("trajectory.json"))?;
    let meta: TrajectoryMeta = serde_json::from_str(&meta_json)
        .map_err(|e| EwError::Format(format!("meta decode: {e}")))?;
    let grid = Grid3::new(meta.grid_n, meta.box_len)?;
    let mut states = Vec::with_capacity(meta.snapshots);
    let mut times = Vec::with_capacity(meta.snapshots);
    let mut series = Vec::with_capacity(meta.snapshots);
    for j in 0..meta.snapshots {
        let (u, t) = read_ewf1(&dir.join(format!("state_{j:06}.ewf")))?;
        let (v, _) = read_ewf1(&dir.join(format!("velocity_{j:06}.ewf")))?;
        if u.grid() != grid || v.grid() != grid {
            return Err(EwError::Format("snapshot grid mismatch".into()));
        }
        let du = crate::material::displacement_gradient(&u)?;
        let (margin, _) = crate::material::stability_scan(&du, &meta.material);
        series.push(SeriesRow {
            t,
            hyper_margin: margin,
            max_grad: du.max_abs(),
            u_max: u.max_abs(),
            v_max: v.max_abs(),
        });
        times.push(t);
        states.push(State::new(u, v, t)?);
    }
    Ok(Trajectory {
        grid,
        spec: meta.material,
        times,
        states,
        series,
        failure: meta.failure,
        dt: meta.dt,
        out_stride: meta.out_stride,
        config_hash: meta.config_hash,
    })
}

/// geodesics.csv per the bundle interfaces:
/// u, ray_id, t, x, y, z, L0..L3, trchi, zsmall, sigma, H, null_drift.
pub fn write_geodesics_csv(
    path: &Path,
    bundle: &crate::geometry::GeodesicBundle,
    geom: &crate::geometry::BundleGeometry,
) -> Result<()> {
    let mut rows = Vec::new();
    for (v, ray) in bundle.rays.iter().enumerate() {
        for (s, t) in bundle.times.iter().enumerate() {
            let cs = &geom.samples[s][v];
            rows.push(vec![
                bundle.tip_t,
                v as f64,
                *t,
                ray.x[s][0],
                ray.x[s][1],
                ray.x[s][2],
                1.0,
                ray.l[s][0],
                ray.l[s][1],
                ray.l[s][2],
                cs.trchi,
                cs.z,
                cs.sigma,
                cs.h_ll,
                ray.drift[s],
            ]);
        }
    }
    write_csv(
        path,
        &[
            "u", "ray_id", "t", "x", "y", "z", "L0", "L1", "L2", "L3", "trchi", "zsmall",
            "sigma", "H", "null_drift",
        ],
        &rows,
    )
}

pub fn write_fluxes_csv(path: &Path, rows: &[(f64, crate::geometry::FluxReport)]) -> Result<()> {
    let data: Vec<Vec<f64>> = rows
        .iter()
        .map(|(u, r)| vec![*u, r.f1, r.f2, r.denom, r.coercive_ratio])
        .collect();
    write_csv(path, &["u", "F1", "F2", "denom", "coercive_ratio"], &data)
}

/// diagnostics.csv: the spec's column set, one row per snapshot.
#[allow(clippy::too_many_arguments)]
pub fn write_diagnostics_csv(
    path: &Path,
    records: &[crate::diagnostics::EnergyRecord],
    decoupling: Option<&crate::diagnostics::DecouplingSeries>,
    divpart: Option<&[crate::diagnostics::DivpartRow]>,
) -> Result<()> {
    let mut columns: Vec<String> = vec!["t".into(), "E_std".into(), "E_kin".into()];
    if let Some(first) = records.first() {
        for (k, _) in first.div_ladder.iter().enumerate() {
            columns.push(format!("div_H_ladder_{k}"));
        }
        for (l, _) in first.curl_ladder.iter().enumerate() {
            columns.push(format!("curl_H_ladder_{l}"));
        }
    }
    columns.extend(
        ["curl_norm", "psi_gap", "eq_residual_psi", "eq_residual_div", "hyper_margin",
         "strichartz_partial", "lp_sum_delta0"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut rows = Vec::with_capacity(records.len());
    for (j, r) in records.iter().enumerate() {
        let mut row = vec![r.t, r.e_standard, r.e_kinetic];
        row.extend_from_slice(&r.div_ladder);
        row.extend_from_slice(&r.curl_ladder);
        let (curl, gap, resid) = decoupling
            .map(|d| {
                let row = &d.rows[j];
                (row.curl_h1, row.psi_gap_rel, row.ew_residual)
            })
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        let div_res = divpart.map(|d| d[j].residual_rel).unwrap_or(f64::NAN);
        row.extend_from_slice(&[
            curl,
            gap,
            resid,
            div_res,
            r.hyper_margin,
            r.strichartz_partial,
            r.lp_weighted,
        ]);
        rows.push(row);
    }
    let cols: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    write_csv(path, &cols, &rows)
}

/// Convenience: atomically collect a directory's bytes for determinism
/// comparisons (sorted file names, name + content).
pub fn dir_fingerprint(dir: &Path) -> Result<Vec<u8>> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut out = Vec::new();
    for p in names {
        out.extend_from_slice(p.file_name().unwrap().to_string_lossy().as_bytes());
        let mut f = fs::File::open(&p)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        out.extend_from_slice(&buf);
    }
    Ok(out)
}

/// Writes bytes only if the full content is ready (no partial output on
/// config errors upstream).
pub fn write_report(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ewf1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid3::new(8, 2.0).unwrap();
        let f = crate::random::rough_random_field(grid, Rank::Vector3, 2.0, 0.7, 5).unwrap();
        let path = dir.path().join("x.ewf");
        write_ewf1(&path, &f, 1.25).unwrap();
        let (g, t) = read_ewf1(&path).unwrap();
        assert_eq!(t, 1.25);
        assert_eq!(f.data(), g.data());
        assert_eq!(f.rank(), g.rank());
    }

    #[test]
    fn ewf1_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ewf");
        std::fs::write(&path, b"NOTEWF!!rest").unwrap();
        assert!(read_ewf1(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn ewf1_preserves_arbitrary_payloads(seed in 0u64..1000, scale in 0.0f64..10.0) {
            let dir = tempfile::tempdir().unwrap();
            let grid = Grid3::new(8, 1.0).unwrap();
            let mut f = crate::random::rough_random_field(grid, Rank::Scalar, 1.5, 1.0, seed).unwrap();
            f.scale(scale);
            let path = dir.path().join("p.ewf");
            write_ewf1(&path, &f, seed as f64).unwrap();
            let (g, _) = read_ewf1(&path).unwrap();
            prop_assert_eq!(f.data(), g.data());
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid3::new(8, 2.0 * std::f64::consts::PI).unwrap();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let state = crate::evolve::plane_wave_state(
            grid,
            &spec,
            [1, 0, 0],
            0.01,
            crate::evolve::Polarization::Transverse,
            true,
        )
        .unwrap();
        let traj = crate::evolve::simulate(
            state,
            &spec,
            &crate::evolve::SimOptions {
                t_end: 0.2,
                out_every: 2,
                ..Default::default()
            },
        )
        .unwrap();
        write_trajectory(dir.path(), &traj, Some("{}"), None).unwrap();
        let back = read_trajectory(dir.path()).unwrap();
        assert_eq!(back.len(), traj.len());
        for (a, b) in traj.states.iter().zip(&back.states) {
            assert_eq!(a.u.data(), b.u.data());
            assert_eq!(a.v.data(), b.v.data());
        }
        assert_eq!(back.out_stride, traj.out_stride);
    }
}
