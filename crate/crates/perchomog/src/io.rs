//! The PERC1 environment format and the CSV report writers.
//!
//! Writers return bytes so callers can checksum or compare them before they
//! touch the disk. Floats use Rust's shortest round-trip formatting.

use std::io::{Read, Write};

use crate::coarsen::PoincareReport;
use crate::energy::{EffectiveMatrixEstimate, EnergyRecord};
use crate::error::{Error, Result};
use crate::experiments::{CorrectorProfile, ErrorScalingTable, RegularityProfile};
use crate::lattice::{pow3, Point, Window};
use crate::partition::Partition;
use crate::percolation::{ConductanceLaw, Environment, LawKind, Mode};

pub const MAGIC: &[u8; 4] = b"PERC";
pub const VERSION: u8 = 1;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn write_environment<W: Write>(env: &Environment, mut w: W) -> Result<()> {
    let d = env.d();
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, d as u8])?;
    w.write_all(&(env.window.side() as u32).to_le_bytes())?;
    w.write_all(&env.law.lambda.to_le_bytes())?;
    w.write_all(&env.law.p.to_le_bytes())?;
    w.write_all(&[env.law.kind.code()])?;
    w.write_all(&env.master_seed.to_le_bytes())?;
    w.write_all(&env.env_index.to_le_bytes())?;
    let mut buf = Vec::with_capacity(4 * env.window.n_vertices());
    for dir in &env.values {
        buf.clear();
        for v in dir {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn environment_bytes(env: &Environment) -> Vec<u8> {
    let mut out = Vec::new();
    write_environment(env, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated PERC1 stream".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

pub fn read_environment<R: Read>(mut r: R) -> Result<Environment> {
    if &take::<4, _>(&mut r)? != MAGIC {
        return format_err("bad magic");
    }
    let [version, d] = take::<2, _>(&mut r)?;
    if version != VERSION {
        return format_err(format!("unsupported version {version}"));
    }
    let d = d as usize;
    let side = u32::from_le_bytes(take(&mut r)?) as i64;
    let lambda = f64::from_le_bytes(take(&mut r)?);
    let p = f64::from_le_bytes(take(&mut r)?);
    let [kind] = take::<1, _>(&mut r)?;
    let master_seed = u64::from_le_bytes(take(&mut r)?);
    let env_index = u64::from_le_bytes(take(&mut r)?);
    let m = (0..=crate::lattice::MAX_LEVEL).find(|&m| pow3(m) == side);
    let Some(m) = m else {
        return format_err(format!("side {side} is not a power of 3"));
    };
    let window = Window::new(d, m).map_err(|e| Error::Format(e.to_string()))?;
    let law = ConductanceLaw::new(LawKind::from_code(kind)?, p, lambda).map_err(|e| Error::Format(e.to_string()))?;
    let n = window.n_vertices();
    let mut raw = vec![0u8; 4 * n];
    let mut values = Vec::with_capacity(d);
    for _ in 0..d {
        r.read_exact(&mut raw).map_err(|_| Error::Format("truncated PERC1 body".into()))?;
        values.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect::<Vec<_>>());
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return format_err("trailing bytes after PERC1 body");
    }
    // Edges leaving the window are NaN whatever the file says.
    let bx = window.bbox();
    for (dir, v) in values.iter_mut().enumerate() {
        for (k, a) in v.iter_mut().enumerate() {
            if bx.point(k)[dir] == bx.hi[dir] {
                *a = f32::NAN;
            }
        }
    }
    Ok(Environment { window, law, master_seed, env_index, values })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Point as `x;y[;z]` so it fits one CSV field.
pub fn point_field(x: &Point, d: usize) -> String {
    x[..d].iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

fn vec_field(v: &[f64; 3], d: usize) -> String {
    v[..d].iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

pub fn energy_csv(records: &[EnergyRecord], d: usize, mode: Mode) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["env_index", "level", "cube_center", "kind", "dir", "value", "residual", "degenerate", "mode"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.env_index.to_string(),
            r.level.to_string(),
            point_field(&r.center, d),
            r.kind.name().to_string(),
            vec_field(&r.dir, d),
            r.value.to_string(),
            r.residual.to_string(),
            r.degenerate.to_string(),
            mode.name().to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// One row per level and matrix entry for ā (from ν) and ā^{-1} (from μ),
/// plus σ_eff at the largest level.
pub fn abar_csv(est: &EffectiveMatrixEstimate) -> Result<Vec<u8>> {
    let d = est.d;
    let mut w = csv_writer();
    w.write_record(["level", "component_ij", "estimate", "ci_lo", "ci_hi", "n_samples"]).map_err(csv_err)?;
    for l in &est.levels {
        for (name, m, ci) in [("abar", &l.abar_nu, &l.abar_nu_ci), ("abar_inv", &l.abar_mu_inv, &l.abar_mu_inv_ci)] {
            for i in 0..d {
                for j in 0..d {
                    w.write_record([
                        l.level.to_string(),
                        format!("{name}_{}{}", i + 1, j + 1),
                        m[i][j].to_string(),
                        ci[i][j].0.to_string(),
                        ci[i][j].1.to_string(),
                        l.n_samples.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
    }
    if let Some(last) = est.levels.last() {
        w.write_record([
            last.level.to_string(),
            "sigma_eff".to_string(),
            est.sigma_eff.to_string(),
            est.sigma_eff_ci.0.to_string(),
            est.sigma_eff_ci.1.to_string(),
            last.n_samples.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Partition dumps for several environments, one row per element.
pub fn partition_csv(parts: &[(u64, &Partition)]) -> Result<Vec<u8>> {
    let d = parts.first().map_or(2, |(_, p)| p.d());
    let mut w = csv_writer();
    let mut header = vec!["env_index".to_string(), "cube_level".to_string()];
    header.extend((0..d).map(|i| format!("cube_center_{}", i + 1)));
    header.extend(["oracle_tag".to_string(), "mode".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    for (e, p) in parts {
        for c in p.elements() {
            let mut row = vec![e.to_string(), c.level.to_string()];
            row.extend(c.center[..d].iter().map(|x| x.to_string()));
            row.extend([p.tag.name().to_string(), p.mode.name().to_string()]);
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn dirichlet_csv(table: &ErrorScalingTable, mode: Mode) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record([
        "env_index",
        "level",
        "family",
        "error",
        "grad_norm",
        "rescaled",
        "hom_energy",
        "bound_ratio",
        "boundary_mismatch",
        "degenerate",
        "mode",
    ])
    .map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.env_index.to_string(),
            r.level.to_string(),
            table.family.clone(),
            r.error.to_string(),
            r.grad_norm.to_string(),
            r.rescaled.to_string(),
            r.hom_energy.to_string(),
            r.bound_ratio.to_string(),
            r.boundary_mismatch.to_string(),
            r.degenerate.to_string(),
            mode.name().to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn corrector_csv(profiles: &[CorrectorProfile], d: usize) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["env_index", "p", "radius", "value", "degenerate"]).map_err(csv_err)?;
    for c in profiles {
        for (r, v) in c.radii.iter().zip(&c.values) {
            w.write_record([
                c.env_index.to_string(),
                vec_field(&c.p, d),
                r.to_string(),
                v.to_string(),
                c.degenerate.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn regularity_csv(profiles: &[(u64, RegularityProfile)]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["env_index", "k", "radius", "dk", "d0", "lipschitz", "rank_deficient"]).map_err(csv_err)?;
    for (e, p) in profiles {
        for i in 0..p.radii.len() {
            w.write_record([
                e.to_string(),
                p.k.to_string(),
                p.radii[i].to_string(),
                p.dk[i].to_string(),
                p.d0[i].to_string(),
                p.lipschitz[i].to_string(),
                p.rank_deficient[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// `(sample id, n, report)` rows of a Poincaré run.
pub fn poincare_csv(rows: &[(u64, u32, PoincareReport)]) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["sample", "n", "lhs", "rhs", "ratio", "gradient_term"]).map_err(csv_err)?;
    for (s, n, r) in rows {
        w.write_record([
            s.to_string(),
            n.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.ratio.to_string(),
            r.gradient_term.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}
