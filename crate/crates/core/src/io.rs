//! File formats: measurement records, estimated trajectories and sweep
//! tables (CSV), sweep provenance (JSON).
//!
//! Every CSV starts with `#`-prefixed metadata lines followed by a header
//! row. Sweep tables carry `# schema_version=<n>`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::SmootherOutput;
use crate::metrics::MetricsReport;
use crate::sweep::{OptimalPoint, Provenance, SweepResult, TrueSqueezeCell, SCHEMA_VERSION};
use crate::trajectory::MeasurementRecord;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `t,y_a,y_b` with `# dt=`, `# seed=`, `# burn_in=` metadata.
pub fn write_record<W: Write>(mut out: W, record: &MeasurementRecord) -> Result<()> {
    writeln!(out, "# dt={:e}", record.dt)?;
    if let Some(seed) = record.seed {
        writeln!(out, "# seed={seed}")?;
    }
    writeln!(out, "# burn_in={}", record.burn_in)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "y_a", "y_b"])?;
    for (k, (ya, yb)) in record.y_a.iter().zip(&record.y_b).enumerate() {
        w.write_record(&[
            format!("{:e}", k as f64 * record.dt),
            format!("{ya:e}"),
            format!("{yb:e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_record(path: impl AsRef<Path>, record: &MeasurementRecord) -> Result<()> {
    write_record(create(path.as_ref())?, record)
}

fn meta_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad value for `{key}`: `{value}`")))
}

/// Reads a record file. Without a `# dt=` line the step is taken from the
/// `t` column.
pub fn read_record<R: Read>(input: R) -> Result<MeasurementRecord> {
    let mut reader = BufReader::new(input);
    let mut dt = None;
    let mut seed = None;
    let mut burn_in = 0usize;
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        match line.trim().strip_prefix('#') {
            Some(meta) => {
                if let Some((key, value)) = meta.split_once('=') {
                    match key.trim() {
                        "dt" => dt = Some(meta_value::<f64>("dt", value)?),
                        "seed" => seed = Some(meta_value::<u64>("seed", value)?),
                        "burn_in" => burn_in = meta_value("burn_in", value)?,
                        _ => {}
                    }
                }
            }
            None => {
                body.push_str(&line);
                break;
            }
        }
    }
    reader.read_to_string(&mut body)?;

    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = csv.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    };
    let (it, ia, ib) = (col("t")?, col("y_a")?, col("y_b")?);
    let (mut t, mut y_a, mut y_b) = (Vec::new(), Vec::new(), Vec::new());
    for row in csv.records() {
        let row = row?;
        let get = |i: usize| -> Result<f64> {
            let field = row.get(i).unwrap_or("");
            field
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{field}`")))
        };
        t.push(get(it)?);
        y_a.push(get(ia)?);
        y_b.push(get(ib)?);
    }
    let dt = match dt {
        Some(dt) => dt,
        None if t.len() >= 2 => (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64,
        None => return Err(Error::Format("cannot infer dt: no `# dt=` line".into())),
    };
    let record = MeasurementRecord {
        dt,
        y_a,
        y_b,
        seed,
        burn_in,
    };
    record.validate()?;
    Ok(record)
}

pub fn load_record(path: impl AsRef<Path>) -> Result<MeasurementRecord> {
    read_record(File::open(path)?)
}

/// Writes `t,x_T,p_T,x_F,p_F,x_S,p_S,interior`; the true columns are empty
/// when no reference was reconstructed.
pub fn write_trajectories<W: Write>(out: W, est: &SmootherOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x_T", "p_T", "x_F", "p_F", "x_S", "p_S", "interior"])?;
    let f = &est.filtered;
    for k in 0..f.len() {
        let (xt, pt) = match &est.true_ref {
            Some(t) => (
                format!("{:e}", t.means[k][0]),
                format!("{:e}", t.means[k][1]),
            ),
            None => (String::new(), String::new()),
        };
        let s = est.smoothed.means[k];
        w.write_record(&[
            format!("{:e}", f.t0 + k as f64 * f.dt),
            xt,
            pt,
            format!("{:e}", f.means[k][0]),
            format!("{:e}", f.means[k][1]),
            format!("{:e}", s[0]),
            format!("{:e}", s[1]),
            u8::from(est.interior.contains(&k)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectories(path: impl AsRef<Path>, est: &SmootherOutput) -> Result<()> {
    write_trajectories(create(path.as_ref())?, est)
}

/// One sweep cell, flattened. Monte-Carlo columns are empty in theory mode;
/// all metric columns are empty for a failed cell.
#[derive(Debug, Default, Serialize)]
struct SweepRow {
    transmittance: f64,
    eta_a: f64,
    eta_b: f64,
    theta_a_deg: f64,
    theta_b_deg: f64,
    status: String,
    purity_t: Option<f64>,
    purity_f: Option<f64>,
    purity_s: Option<f64>,
    trsd_f: Option<f64>,
    trsd_s: Option<f64>,
    squeeze_t: Option<f64>,
    squeeze_f: Option<f64>,
    squeeze_s: Option<f64>,
    antisqueeze_t: Option<f64>,
    antisqueeze_f: Option<f64>,
    antisqueeze_s: Option<f64>,
    squeeze_t_db: Option<f64>,
    squeeze_f_db: Option<f64>,
    squeeze_s_db: Option<f64>,
    antisqueeze_t_db: Option<f64>,
    antisqueeze_f_db: Option<f64>,
    antisqueeze_s_db: Option<f64>,
    recovery_p: Option<f64>,
    recovery_d: Option<f64>,
    recovery_s: Option<f64>,
    recovery_a: Option<f64>,
    vt_xx: Option<f64>,
    vt_xp: Option<f64>,
    vt_pp: Option<f64>,
    vf_xx: Option<f64>,
    vf_xp: Option<f64>,
    vf_pp: Option<f64>,
    vs_xx: Option<f64>,
    vs_xp: Option<f64>,
    vs_pp: Option<f64>,
    vunc_xx: Option<f64>,
    vunc_xp: Option<f64>,
    vunc_pp: Option<f64>,
    mc_records: Option<usize>,
    mc_trsd_f: Option<f64>,
    mc_trsd_f_se: Option<f64>,
    mc_trsd_s: Option<f64>,
    mc_trsd_s_se: Option<f64>,
    mc_mse_f: Option<f64>,
    mc_mse_f_se: Option<f64>,
    mc_mse_s: Option<f64>,
    mc_mse_s_se: Option<f64>,
    mc_vf_xx: Option<f64>,
    mc_vf_xp: Option<f64>,
    mc_vf_pp: Option<f64>,
    mc_vs_xx: Option<f64>,
    mc_vs_xp: Option<f64>,
    mc_vs_pp: Option<f64>,
    mc_vt_xx: Option<f64>,
    mc_vt_xp: Option<f64>,
    mc_vt_pp: Option<f64>,
    mc_recovery_p: Option<f64>,
    mc_recovery_p_se: Option<f64>,
    mc_recovery_d: Option<f64>,
    mc_recovery_d_se: Option<f64>,
    mc_recovery_s: Option<f64>,
    mc_recovery_s_se: Option<f64>,
    mc_recovery_a: Option<f64>,
    mc_recovery_a_se: Option<f64>,
    error: String,
}

impl SweepRow {
    fn fill(&mut self, r: &MetricsReport) {
        let (t, f, s) = (&r.true_state, &r.filtered, &r.smoothed);
        self.purity_t = Some(t.purity);
        self.purity_f = Some(f.purity);
        self.purity_s = Some(s.purity);
        self.trsd_f = Some(r.trsd_f);
        self.trsd_s = Some(r.trsd_s);
        self.squeeze_t = Some(t.squeeze);
        self.squeeze_f = Some(f.squeeze);
        self.squeeze_s = Some(s.squeeze);
        self.antisqueeze_t = Some(t.antisqueeze);
        self.antisqueeze_f = Some(f.antisqueeze);
        self.antisqueeze_s = Some(s.antisqueeze);
        self.squeeze_t_db = Some(t.squeeze_db());
        self.squeeze_f_db = Some(f.squeeze_db());
        self.squeeze_s_db = Some(s.squeeze_db());
        self.antisqueeze_t_db = Some(t.antisqueeze_db());
        self.antisqueeze_f_db = Some(f.antisqueeze_db());
        self.antisqueeze_s_db = Some(s.antisqueeze_db());
        self.recovery_p = Some(r.recoveries.purity);
        self.recovery_d = Some(r.recoveries.trsd);
        self.recovery_s = Some(r.recoveries.squeeze);
        self.recovery_a = Some(r.recoveries.antisqueeze);
        let entries = |m: &crate::linalg::Mat2| (Some(m[(0, 0)]), Some(m[(0, 1)]), Some(m[(1, 1)]));
        (self.vt_xx, self.vt_xp, self.vt_pp) = entries(&r.v_true);
        (self.vf_xx, self.vf_xp, self.vf_pp) = entries(&r.v_filt);
        (self.vs_xx, self.vs_xp, self.vs_pp) = entries(&r.v_smooth);
        (self.vunc_xx, self.vunc_xp, self.vunc_pp) = entries(&r.v_unc);
        if let Some(e) = &r.empirical {
            self.mc_records = Some(e.records);
            self.mc_trsd_f = Some(e.trsd_f.value);
            self.mc_trsd_f_se = Some(e.trsd_f.stderr);
            self.mc_trsd_s = Some(e.trsd_s.value);
            self.mc_trsd_s_se = Some(e.trsd_s.stderr);
            self.mc_mse_f = Some(e.mse_f.value);
            self.mc_mse_f_se = Some(e.mse_f.stderr);
            self.mc_mse_s = Some(e.mse_s.value);
            self.mc_mse_s_se = Some(e.mse_s.stderr);
            (self.mc_vf_xx, self.mc_vf_xp, self.mc_vf_pp) = entries(&e.v_filt.value());
            (self.mc_vs_xx, self.mc_vs_xp, self.mc_vs_pp) = entries(&e.v_smooth.value());
            (self.mc_vt_xx, self.mc_vt_xp, self.mc_vt_pp) = entries(&e.v_true.value());
            let (rec, se) = (&e.recoveries, &e.recoveries_stderr);
            self.mc_recovery_p = Some(rec.purity);
            self.mc_recovery_p_se = Some(se.purity);
            self.mc_recovery_d = Some(rec.trsd);
            self.mc_recovery_d_se = Some(se.trsd);
            self.mc_recovery_s = Some(rec.squeeze);
            self.mc_recovery_s_se = Some(se.squeeze);
            self.mc_recovery_a = Some(rec.antisqueeze);
            self.mc_recovery_a_se = Some(se.antisqueeze);
        }
    }
}

fn schema_line<W: Write>(out: &mut W, kind: &str) -> Result<()> {
    writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(out, "# kind={kind}")?;
    Ok(())
}

/// One row per cell; see the README for the column list.
pub fn write_sweep_csv<W: Write>(mut out: W, result: &SweepResult) -> Result<()> {
    schema_line(&mut out, "sweep")?;
    let mut w = csv::Writer::from_writer(out);
    for c in &result.cells {
        let mut row = SweepRow {
            transmittance: c.cell.transmittance,
            eta_a: c.eta_a,
            eta_b: c.eta_b,
            theta_a_deg: c.cell.theta_a_deg,
            theta_b_deg: c.cell.theta_b_deg,
            ..Default::default()
        };
        match &c.outcome {
            Ok(r) => {
                row.status = "ok".into();
                row.fill(r);
            }
            Err(msg) => {
                row.status = "error".into();
                row.error = msg.clone();
            }
        }
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OptimalRow<'a> {
    transmittance: f64,
    metric: &'a str,
    theta_a_deg: f64,
    theta_b_opt_deg: f64,
    value: f64,
    tied: bool,
}

/// `θ_B*(θ_A)` per recovery metric.
pub fn write_optimal_csv<W: Write>(mut out: W, points: &[OptimalPoint]) -> Result<()> {
    schema_line(&mut out, "optimal")?;
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(OptimalRow {
            transmittance: p.transmittance,
            metric: p.metric.name(),
            theta_a_deg: p.theta_a_deg,
            theta_b_opt_deg: p.theta_b_deg,
            value: p.value,
            tied: p.tied,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrueSqueezeRow {
    transmittance: f64,
    eta_a: f64,
    eta_b: f64,
    theta_a_deg: f64,
    theta_b_deg: f64,
    status: &'static str,
    purity_t: Option<f64>,
    squeeze_t: Option<f64>,
    antisqueeze_t: Option<f64>,
    squeeze_t_db: Option<f64>,
    antisqueeze_t_db: Option<f64>,
    error: String,
}

pub fn write_true_squeeze_csv<W: Write>(mut out: W, cells: &[TrueSqueezeCell]) -> Result<()> {
    schema_line(&mut out, "true_squeeze")?;
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        let ok = c.outcome.as_ref().ok();
        w.serialize(TrueSqueezeRow {
            transmittance: c.cell.transmittance,
            eta_a: c.eta_a,
            eta_b: c.eta_b,
            theta_a_deg: c.cell.theta_a_deg,
            theta_b_deg: c.cell.theta_b_deg,
            status: if ok.is_some() { "ok" } else { "error" },
            purity_t: ok.map(|m| m.purity),
            squeeze_t: ok.map(|m| m.squeeze),
            antisqueeze_t: ok.map(|m| m.antisqueeze),
            squeeze_t_db: ok.map(|m| m.squeeze_db()),
            antisqueeze_t_db: ok.map(|m| m.antisqueeze_db()),
            error: c.outcome.as_ref().err().cloned().unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_provenance<W: Write>(out: W, provenance: &Provenance) -> Result<()> {
    serde_json::to_writer_pretty(out, provenance)?;
    Ok(())
}

/// Writes `<stem>.csv`, `<stem>_optimal.csv` (when the θ_B grid has more
/// than one value) and `<stem>.json` next to `csv_path`.
pub fn save_sweep(
    csv_path: impl AsRef<Path>,
    result: &SweepResult,
) -> Result<Vec<std::path::PathBuf>> {
    let csv_path = csv_path.as_ref();
    let mut written = vec![csv_path.to_path_buf()];
    write_sweep_csv(create(csv_path)?, result)?;
    if !result.optimal.is_empty() {
        let p = sibling(csv_path, "_optimal", "csv");
        write_optimal_csv(create(&p)?, &result.optimal)?;
        written.push(p);
    }
    let p = csv_path.with_extension("json");
    let mut out = create(&p)?;
    write_provenance(&mut out, &result.provenance)?;
    out.flush()?;
    written.push(p);
    Ok(written)
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}
