//! MNCK checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MNCK" | u32 version (1)
//! u32 input_dim | u32 hidden_dim | u32 n_noise_classes
//! u32 has_listeners (0/1)
//!   if 1: u32 n_listeners | u32 emb_dim | per listener: u32 len + utf-8 id
//! parameters as little-endian f32 in the order of PredictorHead::params()
//! (matrices row-major): w1, b1, mos_mean (w, b), mos_logvar (w, b),
//! stoi (w, b), snr (w, b), noise_w, noise_b, listener embeddings
//! ```
//!
//! Parameters live on the f32 grid in memory, so save -> load reproduces
//! bit-identical predictions. Loading a mismatched version is an error.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use nalgebra::{DMatrix, DVector};

use super::model::{ListenerTable, PredictorHead, Projection};
use super::NetError;

const MAGIC: &[u8; 4] = b"MNCK";
const VERSION: u32 = 1;

fn bad(path: &Path, reason: impl Into<String>) -> NetError {
    NetError::BadCheckpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn save_checkpoint(path: &Path, head: &PredictorHead) -> Result<(), NetError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(head.input_dim as u32)?;
    w.write_u32::<LE>(head.hidden_dim as u32)?;
    w.write_u32::<LE>(head.n_noise_classes as u32)?;
    match &head.listeners {
        Some(table) => {
            w.write_u32::<LE>(1)?;
            w.write_u32::<LE>(table.ids.len() as u32)?;
            w.write_u32::<LE>(table.emb_dim() as u32)?;
            for id in &table.ids {
                w.write_u32::<LE>(id.len() as u32)?;
                w.write_all(id.as_bytes())?;
            }
        }
        None => w.write_u32::<LE>(0)?,
    }

    write_matrix(&mut w, &head.w1)?;
    write_vector(&mut w, &head.b1)?;
    for p in [&head.mos_mean, &head.mos_logvar, &head.stoi, &head.snr] {
        write_vector(&mut w, &p.w)?;
        w.write_f32::<LE>(p.b as f32)?;
    }
    write_matrix(&mut w, &head.noise_w)?;
    write_vector(&mut w, &head.noise_b)?;
    if let Some(table) = &head.listeners {
        write_matrix(&mut w, &table.emb)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PredictorHead, NetError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic, expected MNCK"));
    }
    let version = r
        .read_u32::<LE>()
        .map_err(|_| bad(path, "truncated header"))?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let input_dim = read_dim(&mut r, path)?;
    let hidden_dim = read_dim(&mut r, path)?;
    let n_noise_classes = read_dim(&mut r, path)?;
    let has_listeners = r
        .read_u32::<LE>()
        .map_err(|_| bad(path, "truncated header"))?;
    let listener_shape = match has_listeners {
        0 => None,
        1 => {
            let n = read_dim(&mut r, path)?;
            let emb_dim = read_dim(&mut r, path)?;
            let mut ids = Vec::with_capacity(n);
            for _ in 0..n {
                let len = r.read_u32::<LE>().map_err(|_| bad(path, "truncated ids"))? as usize;
                let mut buf = vec![0u8; len];
                r.read_exact(&mut buf)
                    .map_err(|_| bad(path, "truncated ids"))?;
                ids.push(String::from_utf8(buf).map_err(|_| bad(path, "listener id not utf-8"))?);
            }
            Some((ids, emb_dim))
        }
        other => return Err(bad(path, format!("bad listener flag {other}"))),
    };

    let full_input = input_dim + listener_shape.as_ref().map_or(0, |(_, e)| *e);
    let w1 = read_matrix(&mut r, hidden_dim, full_input, path)?;
    let b1 = read_vector(&mut r, hidden_dim, path)?;
    let proj = |r: &mut BufReader<std::fs::File>| -> Result<Projection, NetError> {
        let w = read_vector(r, hidden_dim, path)?;
        let b = f64::from(
            r.read_f32::<LE>()
                .map_err(|_| bad(path, "truncated params"))?,
        );
        Ok(Projection { w, b })
    };
    let mos_mean = proj(&mut r)?;
    let mos_logvar = proj(&mut r)?;
    let stoi = proj(&mut r)?;
    let snr = proj(&mut r)?;
    let noise_w = read_matrix(&mut r, n_noise_classes, hidden_dim, path)?;
    let noise_b = read_vector(&mut r, n_noise_classes, path)?;
    let listeners = match listener_shape {
        Some((ids, emb_dim)) => {
            let emb = read_matrix(&mut r, ids.len() + 1, emb_dim, path)?;
            Some(ListenerTable { ids, emb })
        }
        None => None,
    };

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|_| bad(path, "read error"))? != 0 {
        return Err(bad(path, "trailing bytes after parameters"));
    }

    Ok(PredictorHead {
        input_dim,
        hidden_dim,
        n_noise_classes,
        w1,
        b1,
        mos_mean,
        mos_logvar,
        stoi,
        snr,
        noise_w,
        noise_b,
        listeners,
    })
}

fn read_dim(r: &mut impl Read, path: &Path) -> Result<usize, NetError> {
    Ok(r.read_u32::<LE>()
        .map_err(|_| bad(path, "truncated header"))? as usize)
}

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> Result<(), NetError> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_f32::<LE>(m[(i, j)] as f32)?;
        }
    }
    Ok(())
}

fn write_vector(w: &mut impl Write, v: &DVector<f64>) -> Result<(), NetError> {
    for x in v.iter() {
        w.write_f32::<LE>(*x as f32)?;
    }
    Ok(())
}

fn read_matrix(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<DMatrix<f64>, NetError> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = f64::from(
                r.read_f32::<LE>()
                    .map_err(|_| bad(path, "truncated params"))?,
            );
        }
    }
    Ok(m)
}

fn read_vector(r: &mut impl Read, len: usize, path: &Path) -> Result<DVector<f64>, NetError> {
    let mut v = DVector::zeros(len);
    for i in 0..len {
        v[i] = f64::from(
            r.read_f32::<LE>()
                .map_err(|_| bad(path, "truncated params"))?,
        );
    }
    Ok(v)
}
