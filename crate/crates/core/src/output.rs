//! Deterministic file output: exact number formatting, CSV, atomic writes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::{RunSummary, Setting, SlotRecord, SweepRow, TraceSink};

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// A file written under a temporary name and renamed into place on `commit`.
pub struct AtomicFile {
    tmp: PathBuf,
    dest: PathBuf,
    file: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(dest: &Path) -> Result<Self> {
        let name = dest
            .file_name()
            .ok_or_else(|| Error::Io(std::io::Error::other(format!("bad output path {}", dest.display()))))?;
        let tmp = dest.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
        let file = BufWriter::new(File::create(&tmp)?);
        Ok(Self {
            tmp,
            dest: dest.to_path_buf(),
            file: Some(file),
        })
    }

    pub fn writer(&mut self) -> &mut BufWriter<File> {
        self.file.as_mut().expect("writer used after commit")
    }

    pub fn commit(mut self) -> Result<()> {
        let file = self.file.take().expect("committed twice");
        file.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&self.tmp, &self.dest)?;
        Ok(())
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.file.is_some() {
            let _ = std::fs::remove_file(&self.tmp);
        }
    }
}

pub fn write_atomic(dest: &Path, contents: &str) -> Result<()> {
    let mut f = AtomicFile::create(dest)?;
    f.writer().write_all(contents.as_bytes())?;
    f.commit()
}

pub const TRACE_HEADER: [&str; 15] = [
    "t", "device", "beta_or_ms", "m_x", "rate_bps", "freq_hz", "f_es_hz", "delay_s", "metric", "p_cpu_w", "p_tr_w",
    "p_es_w", "queue_t", "queue_u", "blocked",
];

/// Streams slot records to a CSV file, one row per device and slot.
pub struct CsvTrace {
    out: csv::Writer<AtomicFile>,
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.writer().write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.writer().flush()
    }
}

impl CsvTrace {
    pub fn create(dest: &Path) -> Result<Self> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(AtomicFile::create(dest)?);
        out.write_record(TRACE_HEADER).map_err(csv_err)?;
        Ok(Self { out })
    }

    pub fn finish(self) -> Result<()> {
        let file = self.out.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        file.commit()
    }
}

impl TraceSink for CsvTrace {
    fn record(&mut self, rec: &SlotRecord) -> Result<()> {
        for d in &rec.devices {
            let (setting, m_x) = match d.setting {
                Setting::Gib { beta, .. } => (fmt_f64(beta), String::new()),
                Setting::Sqgan { m_x, m_s } => (fmt_f64(m_s), fmt_f64(m_x)),
            };
            let f_es = match d.setting {
                Setting::Gib { .. } => fmt_f64(d.f_es),
                Setting::Sqgan { .. } => String::new(),
            };
            self.out
                .write_record([
                    rec.t.to_string(),
                    d.device.to_string(),
                    setting,
                    m_x,
                    fmt_f64(d.rate),
                    fmt_f64(d.freq),
                    f_es,
                    fmt_f64(d.delay),
                    fmt_f64(d.metric),
                    fmt_f64(d.p_cpu),
                    fmt_f64(d.p_tr),
                    fmt_f64(d.p_es),
                    fmt_f64(d.queue_t),
                    fmt_f64(d.queue_u),
                    u8::from(d.blocked).to_string(),
                ])
                .map_err(csv_err)?;
        }
        Ok(())
    }
}

/// Writes rows of already formatted fields as CSV.
pub fn write_csv(dest: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(AtomicFile::create(dest)?);
    out.write_record(header).map_err(csv_err)?;
    for r in rows {
        out.write_record(r).map_err(csv_err)?;
    }
    out.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?.commit()
}

/// Flat `key = value` lines.
pub fn summary_text(s: &RunSummary) -> String {
    let mut lines = vec![
        format!("verdict = {}", s.verdict),
        format!("feasible = {}", s.feasible),
        format!(
            "convergence_slot = {}",
            s.convergence_slot.map_or_else(|| "none".to_string(), |c| c.to_string())
        ),
        format!("slots_run = {}", s.slots_run),
        format!("window = {}", s.window),
        format!("p_total_w = {}", fmt_f64(s.p_total)),
        format!("p_ed_w = {}", fmt_f64(s.p_ed)),
        format!("p_es_w = {}", fmt_f64(s.p_es)),
        format!("blocked_slots = {}", s.blocked_slots),
        format!("overrun_slots = {}", s.overrun_slots),
    ];
    for (k, (d, g)) in s.d_avg.iter().zip(&s.g_avg).enumerate() {
        lines.push(format!("device.{k}.d_avg_s = {}", fmt_f64(*d)));
        lines.push(format!("device.{k}.g_avg = {}", fmt_f64(*g)));
    }
    lines.join("\n") + "\n"
}

pub fn summary_toml(s: &RunSummary) -> Result<String> {
    toml::to_string(s).map_err(|e| Error::Numerical(format!("cannot serialize summary: {e}")))
}

pub const SWEEP_HEADER: [&str; 17] = [
    "d_avg", "g_avg", "gamma", "v", "status", "verdict", "convergence_slot", "slots_run", "window", "p_total_w",
    "p_ed_w", "p_es_w", "delay_mean_s", "delay_max_s", "metric_mean", "metric_max", "message",
];

pub fn sweep_rows(rows: &[SweepRow]) -> Vec<Vec<String>> {
    let opt = |x: Option<f64>| x.map_or_else(String::new, fmt_f64);
    rows.iter()
        .map(|r| {
            let mut out = vec![opt(r.point.d_avg), opt(r.point.g_avg), opt(r.point.gamma), opt(r.point.v), r.status().to_string()];
            match &r.outcome {
                Ok(s) => {
                    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
                    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    out.extend([
                        s.verdict.to_string(),
                        s.convergence_slot.map_or_else(String::new, |c| c.to_string()),
                        s.slots_run.to_string(),
                        s.window.to_string(),
                        fmt_f64(s.p_total),
                        fmt_f64(s.p_ed),
                        fmt_f64(s.p_es),
                        fmt_f64(mean(&s.d_avg)),
                        fmt_f64(max(&s.d_avg)),
                        fmt_f64(mean(&s.g_avg)),
                        fmt_f64(max(&s.g_avg)),
                        String::new(),
                    ]);
                }
                Err(msg) => {
                    out.extend(std::iter::repeat(String::new()).take(11));
                    out.push(msg.clone());
                }
            }
            out
        })
        .collect()
}
