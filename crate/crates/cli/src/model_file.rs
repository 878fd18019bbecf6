//! Fitted-model files.
//!
//! Layout (little-endian): `b"ROMM"`, version byte `b'1'`, shape, ranks,
//! sample count, variant and rho tags, scalar metadata, then factors
//! (column-major), center, cores, `sigma_1`, cell weights, case weights and
//! the objective trace. Every float is stored by its bit pattern.

use std::path::Path;

use rompca_core::robust::{RhoSpec, TanhParams};
use rompca_core::rompca::{RompcaModel, Variant};
use rompca_core::tensor::{DenseTensor, Matrix};

use crate::error::{CliError, CliResult};
use crate::format::{read_bytes, read_header, write_bytes, write_shape, ByteReader, ByteWriter};

pub const MODEL_MAGIC: &[u8; 4] = b"ROMM";
pub const MODEL_VERSION: u8 = b'1';

fn variant_tag(v: Variant) -> u8 {
    match v {
        Variant::Full => 0,
        Variant::OnlyCase => 1,
        Variant::OnlyCell => 2,
    }
}

fn write_rho(w: &mut ByteWriter, rho: &RhoSpec) {
    match rho {
        RhoSpec::Tanh(p) => {
            w.u8(0);
            w.f64s(&[p.b, p.c, p.q1, p.q2]);
        }
        RhoSpec::Square => w.u8(1),
        RhoSpec::Abs => w.u8(2),
    }
}

fn read_rho(r: &mut ByteReader, path: &Path) -> CliResult<RhoSpec> {
    Ok(match r.u8()? {
        0 => {
            let v = r.f64s(4)?;
            RhoSpec::Tanh(TanhParams::new(v[0], v[1], v[2], v[3])?)
        }
        1 => RhoSpec::Square,
        2 => RhoSpec::Abs,
        t => return Err(CliError::format(path, format!("unknown rho tag {t}"))),
    })
}

pub fn encode_model(m: &RompcaModel) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MODEL_MAGIC);
    w.u8(MODEL_VERSION);
    write_shape(&mut w, m.shape());
    for &k in &m.ranks {
        w.usize(k);
    }
    w.usize(m.n_samples());
    w.u8(variant_tag(m.variant));
    write_rho(&mut w, &m.rho1);
    write_rho(&mut w, &m.rho2);
    w.f64(m.sigma2);
    w.u8(m.converged as u8);
    w.usize(m.iterations);
    w.u8(m.chosen_candidate);
    w.f64s(&m.candidate_sigma2);
    w.u64(m.seed);
    for v in &m.factors {
        w.f64s(v.as_slice());
    }
    w.f64s(m.center.as_slice());
    for u in &m.cores {
        w.f64s(u.as_slice());
    }
    w.f64s(m.sigma1.as_slice());
    for c in &m.cell_weights {
        w.f64s(c.as_slice());
    }
    w.f64s(&m.case_weights);
    w.usize(m.objective_trace.len());
    w.f64s(&m.objective_trace);
    w.buf
}

pub fn decode_model(bytes: &[u8], path: &Path) -> CliResult<RompcaModel> {
    let mut r = ByteReader::new(bytes, path);
    read_header(&mut r, MODEL_MAGIC, MODEL_VERSION, "model")?;
    let shape = r.shape()?;
    let ranks = (0..shape.len())
        .map(|_| r.count("rank"))
        .collect::<CliResult<Vec<_>>>()?;
    rompca_core::mpca::validate_ranks(&shape, &ranks)?;
    let n = r.count("sample count")?;
    let variant = match r.u8()? {
        0 => Variant::Full,
        1 => Variant::OnlyCase,
        2 => Variant::OnlyCell,
        t => return Err(CliError::format(path, format!("unknown variant tag {t}"))),
    };
    let rho1 = read_rho(&mut r, path)?;
    let rho2 = read_rho(&mut r, path)?;
    let sigma2 = r.f64()?;
    let converged = match r.u8()? {
        0 => false,
        1 => true,
        t => return Err(CliError::format(path, format!("bad convergence flag {t}"))),
    };
    let iterations = r.count("iteration count")?;
    let chosen_candidate = r.u8()?;
    let cs = r.f64s(2)?;
    let seed = r.u64()?;
    let factors = shape
        .iter()
        .zip(&ranks)
        .map(|(&p, &k)| Ok(Matrix::from_col_major(p, k, r.f64s(p * k)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let d: usize = shape.iter().product();
    let kd: usize = ranks.iter().product();
    let center = DenseTensor::from_vec(&shape, r.f64s(d)?)?;
    let cores = (0..n)
        .map(|_| Ok(DenseTensor::from_vec(&ranks, r.f64s(kd)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let sigma1 = DenseTensor::from_vec(&shape, r.f64s(d)?)?;
    let cell_weights = (0..n)
        .map(|_| Ok(DenseTensor::from_vec(&shape, r.f64s(d)?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let case_weights = r.f64s(n)?;
    let t = r.count("trace length")?;
    let objective_trace = r.f64s(t)?;
    r.finish()?;
    Ok(RompcaModel {
        ranks,
        factors,
        center,
        cores,
        sigma1,
        sigma2,
        cell_weights,
        case_weights,
        rho1,
        rho2,
        variant,
        objective_trace,
        converged,
        iterations,
        chosen_candidate,
        candidate_sigma2: [cs[0], cs[1]],
        seed,
    })
}

pub fn save_model(path: &Path, m: &RompcaModel) -> CliResult<()> {
    write_bytes(path, &encode_model(m))
}

pub fn load_model(path: &Path) -> CliResult<RompcaModel> {
    decode_model(&read_bytes(path)?, path)
}
