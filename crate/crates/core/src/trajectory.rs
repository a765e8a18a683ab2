//! Time-ordered frames at a fixed lag, plus the on-disk format:
//! a text header line `dynae-traj v1, dims=D, frames=N, lag=L` followed by
//! `N·D` little-endian `f64`, frame-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndmath::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Mat,
    lag: f64,
}

impl Trajectory {
    pub fn new(frames: Mat, lag: f64) -> Result<Self> {
        if !(lag > 0.0) || !lag.is_finite() {
            return Err(Error::invalid(format!("trajectory lag must be positive, got {lag}")));
        }
        Ok(Self { frames, lag })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dims(&self) -> usize {
        self.frames.cols()
    }

    /// Time between consecutive frames.
    pub fn lag(&self) -> f64 {
        self.lag
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.frames.row(i)
    }

    pub fn frames(&self) -> &Mat {
        &self.frames
    }

    pub fn into_frames(self) -> Mat {
        self.frames
    }

    pub fn header(&self) -> String {
        format!(
            "dynae-traj v1, dims={}, frames={}, lag={}",
            self.dims(),
            self.num_frames(),
            self.lag
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.frames.as_slice().len() * 8);
        out.extend_from_slice(self.header().as_bytes());
        out.push(b'\n');
        for v in self.frames.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
        let (dims, frames, lag) = parse_header(header).ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let body = &bytes[nl + 1..];
        if body.len() != dims * frames * 8 {
            return Err(bad(format!(
                "expected {} payload bytes for {frames}x{dims}, found {}",
                dims * frames * 8,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Trajectory::new(Mat::from_vec(frames, dims, data)?, lag)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }

    /// Inspection mirror: header `t,x0,x1,...`, one row per frame.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        let cols: Vec<String> = (0..self.dims()).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{}", cols.join(","))?;
        for (i, row) in self.frames.iter_rows().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", i as f64 * self.lag, vals.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_header(h: &str) -> Option<(usize, usize, f64)> {
    let mut parts = h.split(',').map(str::trim);
    if parts.next()? != "dynae-traj v1" {
        return None;
    }
    let mut field = |key: &str| parts.next()?.strip_prefix(key).map(str::to_string);
    let dims = field("dims=")?.parse().ok()?;
    let frames = field("frames=")?.parse().ok()?;
    let lag = field("lag=")?.parse().ok()?;
    Some((dims, frames, lag))
}
