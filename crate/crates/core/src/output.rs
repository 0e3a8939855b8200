//! CSV and JSON output. Floats are written with 17 significant digits so they
//! round-trip exactly.
//!
//! CSV schemas (one header line, then data rows):
//!
//! | file | header |
//! |------|--------|
//! | `paths.csv` | `path,n_defaults,mean_hit,n_active,terminal_mean,dispersion` |
//! | `trajectories.csv` | `path,t,bank_0,...,bank_{N-1}` (`NaN` after default) |
//! | `loss_distribution.csv` | `k,count,probability` |
//! | `risk.csv` | `definition,probability,std_error,n_paths` |
//! | `riccati.csv` | `t,a,b,c` |
//! | `control_law.csv` | `t,alpha,gamma,xbar,b,c,beta` |
//! | `meanfield.csv` | `t,bank_0,system_mean,x,xbar` |
//! | `decisions.csv` | `j,tau1,sigma,n,probability,std_error,chosen,fallback` |
//! | `timeseries.csv` | `t,xi,mean,n_active` |

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const PATHS_HEADER: &str = "path,n_defaults,mean_hit,n_active,terminal_mean,dispersion";
pub const LOSS_HEADER: &str = "k,count,probability";
pub const RISK_HEADER: &str = "definition,probability,std_error,n_paths";
pub const RICCATI_HEADER: &str = "t,a,b,c";
pub const CONTROL_LAW_HEADER: &str = "t,alpha,gamma,xbar,b,c,beta";
pub const MEANFIELD_HEADER: &str = "t,bank_0,system_mean,x,xbar";
pub const DECISIONS_HEADER: &str = "j,tau1,sigma,n,probability,std_error,chosen,fallback";
pub const TIMESERIES_HEADER: &str = "t,xi,mean,n_active";

pub fn trajectories_header(n_banks: usize) -> String {
    let mut h = String::from("path,t");
    for i in 0..n_banks {
        let _ = write!(h, ",bank_{i}");
    }
    h
}

/// Round-trip float formatting.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

/// A CSV field: floats are formatted with [`fmt_f64`], others with `Display`.
pub enum Field {
    F(f64),
    I(i64),
    U(u64),
    B(bool),
    S(String),
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::F(x)
    }
}

impl From<usize> for Field {
    fn from(x: usize) -> Self {
        Field::U(x as u64)
    }
}

impl From<u64> for Field {
    fn from(x: u64) -> Self {
        Field::U(x)
    }
}

impl From<i32> for Field {
    fn from(x: i32) -> Self {
        Field::I(x as i64)
    }
}

impl From<bool> for Field {
    fn from(x: bool) -> Self {
        Field::B(x)
    }
}

impl From<&str> for Field {
    fn from(x: &str) -> Self {
        Field::S(x.into())
    }
}

impl Field {
    fn render(&self, out: &mut String) {
        match self {
            Field::F(x) => out.push_str(&fmt_f64(*x)),
            Field::I(x) => {
                let _ = write!(out, "{x}");
            }
            Field::U(x) => {
                let _ = write!(out, "{x}");
            }
            Field::B(x) => out.push_str(if *x { "1" } else { "0" }),
            Field::S(s) => out.push_str(s),
        }
    }
}

/// In-memory CSV document.
pub struct Csv {
    text: String,
    n_columns: usize,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        Csv {
            text: format!("{header}\n"),
            n_columns: header.split(',').count(),
        }
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = Field>) {
        let mut n = 0;
        for (i, f) in fields.into_iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            f.render(&mut self.text);
            n += 1;
        }
        debug_assert_eq!(n, self.n_columns, "CSV row width");
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Collects the files of one run and writes them atomically per file.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> io::Result<()> {
        self.write(name, csv.as_str())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> io::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        self.write(name, &(text + "\n"))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Run manifest: everything needed to reproduce the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub quick: bool,
    pub threads: usize,
    pub config_sha256: String,
    /// Fully resolved configuration (TOML); re-running with it as `--config`
    /// reproduces every file bit for bit.
    pub config: String,
    pub files: Vec<String>,
    pub wall_time_seconds: f64,
}
