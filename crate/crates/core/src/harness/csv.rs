//! CSV output with a fixed column set; unused columns stay empty.

use std::io::Write;

use super::parse::format_g9;

pub const CSV_HEADER: &str = "experiment,detector,nt,nr,channel,snr_db,ell,k,value,stderr,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub experiment: &'static str,
    pub detector: String,
    pub nt: usize,
    pub nr: usize,
    pub channel: &'static str,
    pub snr_db: Option<f64>,
    pub ell: Option<usize>,
    pub k: Option<usize>,
    pub value: f64,
    pub stderr: Option<f64>,
    pub seed: u64,
}

impl CsvRow {
    pub fn to_line(&self) -> String {
        let opt_f = |v: Option<f64>| v.map(format_g9).unwrap_or_default();
        let opt_u = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.detector,
            self.nt,
            self.nr,
            self.channel,
            opt_f(self.snr_db),
            opt_u(self.ell),
            opt_u(self.k),
            format_g9(self.value),
            opt_f(self.stderr),
            self.seed
        )
    }
}

/// Header plus one line per row.
pub fn write_csv<W: Write>(rows: &[CsvRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_line())?;
    }
    out.flush()
}
