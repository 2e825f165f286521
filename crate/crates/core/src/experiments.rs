//! Parameter sweeps, scheme comparisons and CSV output.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::analytic::{ips_conventional, ips_vmimo};
use crate::engine::{estimate_ips, run_scenario, with_workers, Budget, Replication, SchemeKind};
use crate::error::{Error, Result};
use crate::model::ScenarioParams;
use crate::seed::derive_seed;

/// The parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    LambdaR,
    LambdaF,
    /// Total density, split evenly over the two lanes.
    LambdaTotalSymmetric,
    V,
    DetectRange,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LambdaR => "lambda_r",
            SweepParam::LambdaF => "lambda_f",
            SweepParam::LambdaTotalSymmetric => "lambda",
            SweepParam::V => "v",
            SweepParam::DetectRange => "R",
        }
    }

    /// `fixed` with this parameter set to `value`.
    pub fn apply(self, fixed: &ScenarioParams, value: f64) -> ScenarioParams {
        let mut p = *fixed;
        match self {
            SweepParam::LambdaR => p.lambda_r = value,
            SweepParam::LambdaF => p.lambda_f = value,
            SweepParam::LambdaTotalSymmetric => {
                p.lambda_r = value / 2.0;
                p.lambda_f = value / 2.0;
            }
            SweepParam::V => p.v = value,
            SweepParam::DetectRange => {
                p.detect_range = value;
                p.thresholds = None;
            }
        }
        p
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_r" => Ok(SweepParam::LambdaR),
            "lambda_f" => Ok(SweepParam::LambdaF),
            "lambda" | "lambda_total" => Ok(SweepParam::LambdaTotalSymmetric),
            "v" => Ok(SweepParam::V),
            "R" => Ok(SweepParam::DetectRange),
            other => Err(Error::invalid(format!(
                "unknown sweep parameter {other:?} (expected lambda_r, lambda_f, lambda, v or R)"
            ))),
        }
    }
}

/// `steps` values from `from` to `to` inclusive, linearly or geometrically
/// spaced.
pub fn grid(from: f64, to: f64, steps: usize, log: bool) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("requires steps >= 1"));
    }
    if !from.is_finite() || !to.is_finite() {
        return Err(Error::invalid("requires finite sweep bounds"));
    }
    if log && !(from > 0.0 && to > 0.0) {
        return Err(Error::invalid("requires positive bounds for a log sweep"));
    }
    if steps == 1 {
        return Ok(vec![from]);
    }
    let n = (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| {
            let t = k as f64 / n;
            if k == steps - 1 {
                to
            } else if log {
                (from.ln() + t * (to.ln() - from.ln())).exp()
            } else {
                from + t * (to - from)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub varying: SweepParam,
    pub values: Vec<f64>,
    pub fixed: ScenarioParams,
    pub schemes: Vec<SchemeKind>,
    pub replications: u32,
    pub budget: Budget,
    pub base_seed: u64,
}

impl SweepSpec {
    pub fn point(&self, index: usize) -> ScenarioParams {
        self.varying.apply(&self.fixed, self.values[index])
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("requires at least one sweep value"));
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("requires at least one scheme"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("requires replications >= 1"));
        }
        for scheme in &self.schemes {
            scheme.validate()?;
        }
        self.budget.validate()?;
        for k in 0..self.values.len() {
            self.point(k).validate()?;
        }
        Ok(())
    }

    /// Schemes in output order.
    fn ordered_schemes(&self) -> Vec<SchemeKind> {
        let mut s = self.schemes.clone();
        s.sort_by_key(|k| k.name());
        s.dedup();
        s
    }
}

/// Seed of one replication at one sweep point. The scheme is deliberately
/// not part of the path: every scheme at a point drives over the same
/// traffic, so per-point gains are matched comparisons.
pub fn point_seed(base_seed: u64, value_index: usize, replication: u32) -> u64 {
    derive_seed(base_seed, &[value_index as u64, replication as u64])
}

/// One output line of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: ScenarioParams,
    pub scheme: SchemeKind,
    pub ips_sim_mean: Option<f64>,
    pub ips_sim_ci95: Option<f64>,
    /// Closed form; absent for reverse_aided.
    pub ips_analytic: Option<f64>,
    pub gain_vs_flooding: Option<f64>,
    pub replications: u32,
    pub base_seed: u64,
    /// Set when the row could not be computed.
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn analytic_for(scheme: SchemeKind, params: &ScenarioParams) -> Option<Result<f64>> {
    match scheme {
        SchemeKind::Vmimo => Some(ips_vmimo(params)),
        SchemeKind::Flooding => Some(ips_conventional(params)),
        SchemeKind::ReverseAided { .. } => None,
    }
}

/// Runs every (value, scheme, replication) on `workers` threads (0 = all
/// cores). Rows come back in sweep order, schemes sorted by name within a
/// point. A failing row is reported, not fatal.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let schemes = spec.ordered_schemes();
    let jobs: Vec<(usize, SchemeKind, u32)> = (0..spec.values.len())
        .flat_map(|vi| {
            schemes
                .iter()
                .flat_map(move |&s| (0..spec.replications).map(move |rep| (vi, s, rep)))
        })
        .collect();
    let results: Vec<Result<Replication>> = with_workers(workers, || {
        jobs.par_iter()
            .map(|&(vi, scheme, rep)| {
                let seed = point_seed(spec.base_seed, vi, rep);
                run_scenario(&spec.point(vi), scheme, &spec.budget, seed).map(|(r, _)| r)
            })
            .collect()
    });

    let per_row = spec.replications as usize;
    let mut rows: Vec<SweepRow> = results
        .chunks(per_row)
        .zip(jobs.chunks(per_row))
        .map(|(reps, job)| {
            let (vi, scheme, _) = job[0];
            let params = spec.point(vi);
            let mut row = SweepRow {
                params,
                scheme,
                ips_sim_mean: None,
                ips_sim_ci95: None,
                ips_analytic: None,
                gain_vs_flooding: None,
                replications: spec.replications,
                base_seed: spec.base_seed,
                error: None,
            };
            match reps.iter().cloned().collect::<Result<Vec<_>>>() {
                Ok(ok) if ok.len() >= 2 => {
                    let est = estimate_ips(&ok).expect("at least two replications");
                    row.ips_sim_mean = Some(est.mean);
                    row.ips_sim_ci95 = Some(est.ci95_halfwidth);
                }
                Ok(ok) => row.ips_sim_mean = Some(ok[0].ips),
                Err(e) => row.error = Some(e.to_string()),
            }
            match analytic_for(scheme, &params) {
                Some(Ok(x)) => row.ips_analytic = Some(x),
                Some(Err(e)) => row.error = row.error.take().or(Some(e.to_string())),
                None => {}
            }
            row
        })
        .collect();

    for group in rows.chunks_mut(schemes.len()) {
        let base = group
            .iter()
            .find(|r| r.scheme == SchemeKind::Flooding)
            .and_then(|r| r.ips_sim_mean);
        for row in group.iter_mut() {
            row.gain_vs_flooding = match (row.ips_sim_mean, base) {
                (Some(m), Some(b)) if b > 0.0 => Some(m / b),
                _ => None,
            };
        }
    }
    Ok(rows)
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

pub const SWEEP_CSV_HEADER: &str =
    "lambda_r,lambda_f,v,r,R,tau,scheme,ips_sim_mean,ips_sim_ci95,ips_analytic,gain_vs_flooding,replications,base_seed";

fn params_fields(p: &ScenarioParams) -> String {
    [p.lambda_r, p.lambda_f, p.v, p.tx_range, p.detect_range, p.tau]
        .map(format_sig6)
        .join(",")
}

/// The sweep table as CSV text.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            params_fields(&row.params),
            row.scheme,
            opt(row.ips_sim_mean),
            opt(row.ips_sim_ci95),
            opt(row.ips_analytic),
            opt(row.gain_vs_flooding),
            row.replications,
            row.base_seed,
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_file(path, &sweep_csv(rows))
}

/// Companion metadata path: same basename, `.meta` extension.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

/// `key=value` description of a sweep and of any failed rows.
pub fn sweep_meta(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let f = &spec.fixed;
    let values: Vec<String> = spec.values.iter().map(|&x| format!("{x:?}")).collect();
    let schemes: Vec<&str> = spec.ordered_schemes().iter().map(|s| s.name()).collect();
    let handshake = spec.schemes.iter().find_map(|s| match s {
        SchemeKind::ReverseAided { handshake_slots } => Some(*handshake_slots),
        _ => None,
    });
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("artifact", env!("CARGO_PKG_NAME").into());
    kv("artifact_version", env!("CARGO_PKG_VERSION").into());
    kv("varying", spec.varying.name().into());
    kv("values", values.join(","));
    kv("lambda_r", format!("{:?}", f.lambda_r));
    kv("lambda_f", format!("{:?}", f.lambda_f));
    kv("v", format!("{:?}", f.v));
    kv("r", format!("{:?}", f.tx_range));
    kv("R", format!("{:?}", f.detect_range));
    kv("tau", format!("{:?}", f.tau));
    if let Some(t) = f.thresholds {
        kv("alpha_pt_over_n0", format!("{:?}", t.alpha_pt_over_n0));
        kv("gamma_dec", format!("{:?}", t.gamma_dec));
        kv("gamma_det", format!("{:?}", t.gamma_det));
    }
    kv("schemes", schemes.join(","));
    if let Some(h) = handshake {
        kv("handshake_slots", h.to_string());
    }
    kv("replications", spec.replications.to_string());
    kv("max_slots", spec.budget.max_slots.to_string());
    kv("min_cycles", spec.budget.min_cycles.to_string());
    kv("warmup_slots", spec.budget.warmup_slots.to_string());
    kv("warmup_cycles", spec.budget.warmup_cycles.to_string());
    kv("base_seed", spec.base_seed.to_string());
    let failed: Vec<&SweepRow> = rows.iter().filter(|r| r.failed()).collect();
    kv("failed_rows", failed.len().to_string());
    for (k, row) in failed.iter().enumerate() {
        kv(
            &format!("failed.{k}"),
            format!("{} {} {}", row.params, row.scheme, row.error.as_deref().unwrap_or("")),
        );
    }
    out
}

pub fn emit_meta(spec: &SweepSpec, rows: &[SweepRow], csv: &Path) -> Result<()> {
    write_file(&meta_path(csv), &sweep_meta(spec, rows))
}

/// One parameter point of the gain table.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub params: ScenarioParams,
    pub vmimo_mean: f64,
    pub flooding_mean: f64,
    pub gain_sim: Option<f64>,
    pub gain_analytic: Option<f64>,
    /// Dense-traffic gain `λrR/(λr² + R)`.
    pub gain_high_density_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
    /// Points that had only one of the two schemes, or failed.
    pub warnings: Vec<String>,
}

pub fn high_density_gain(params: &ScenarioParams) -> f64 {
    let (l, r, big_r) = (params.lambda(), params.tx_range, params.detect_range);
    l * r * big_r / (l * r * r + big_r)
}

/// Pairs the vmimo and flooding rows of each parameter point.
pub fn compare_schemes(rows: &[SweepRow]) -> GainTable {
    let mut table = GainTable::default();
    let mut points: Vec<ScenarioParams> = Vec::new();
    for row in rows {
        if !points.contains(&row.params) {
            points.push(row.params);
        }
    }
    for params in points {
        let find = |s: SchemeKind| rows.iter().find(|r| r.params == params && r.scheme == s);
        let (Some(vm), Some(fl)) = (find(SchemeKind::Vmimo), find(SchemeKind::Flooding)) else {
            table.warnings.push(format!("{params}: no matched vmimo/flooding pair, skipped"));
            continue;
        };
        let (Some(vm_mean), Some(fl_mean)) = (vm.ips_sim_mean, fl.ips_sim_mean) else {
            table.warnings.push(format!("{params}: simulation failed, skipped"));
            continue;
        };
        let gain_analytic = match (vm.ips_analytic, fl.ips_analytic) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        table.rows.push(GainRow {
            params,
            vmimo_mean: vm_mean,
            flooding_mean: fl_mean,
            gain_sim: (fl_mean > 0.0).then(|| vm_mean / fl_mean),
            gain_analytic,
            gain_high_density_ref: high_density_gain(&params),
        });
    }
    table
}

pub const GAIN_CSV_HEADER: &str =
    "lambda_r,lambda_f,v,r,R,tau,vmimo_mean,flooding_mean,gain_sim,gain_analytic,gain_high_density_ref";

pub fn gain_csv(table: &GainTable) -> String {
    let mut out = String::from(GAIN_CSV_HEADER);
    out.push('\n');
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            params_fields(&row.params),
            format_sig6(row.vmimo_mean),
            format_sig6(row.flooding_mean),
            opt(row.gain_sim),
            opt(row.gain_analytic),
            format_sig6(row.gain_high_density_ref),
        );
    }
    out
}

pub fn emit_gain_csv(table: &GainTable, path: &Path) -> Result<()> {
    write_file(path, &gain_csv(table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.005), "0.005");
        assert_eq!(format_sig6(1652.7173723306633), "1652.72");
        assert_eq!(format_sig6(20869.6), "20869.6");
        assert_eq!(format_sig6(547.76903161704235), "547.769");
        assert_eq!(format_sig6(3.0), "3");
        assert_eq!(format_sig6(0.025), "0.025");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(5e-5), "5e-05");
        assert_eq!(format_sig6(-0.5), "-0.5");
        assert_eq!(format_sig6(999999.5), "1e+06");
        assert_eq!(format_sig6(0.0001), "0.0001");
        assert_eq!(format_sig6(f64::NAN), "nan");
    }

    #[test]
    fn sig6_round_trips_to_six_digits() {
        for &x in &[1.0 / 3.0, 2.0f64.sqrt() * 1e7, 7.77e-9, 123.456789, 8000.0 - 1e-3] {
            let back: f64 = format_sig6(x).parse().unwrap();
            assert!(((back - x) / x).abs() <= 5e-6, "{x} -> {back}");
        }
    }

    #[test]
    fn grids() {
        assert_eq!(grid(0.0, 40.0, 5, false).unwrap(), vec![0.0, 10.0, 20.0, 30.0, 40.0]);
        let g = grid(1e-4, 1e-2, 3, true).unwrap();
        assert!((g[1] - 1e-3).abs() < 1e-15);
        assert_eq!(g[2], 1e-2);
        assert_eq!(grid(3.0, 9.0, 1, false).unwrap(), vec![3.0]);
        assert!(grid(0.0, 1.0, 3, true).is_err());
        assert!(grid(0.0, 1.0, 0, false).is_err());
    }

    #[test]
    fn sweep_params_apply() {
        let f = ScenarioParams::default();
        let p = SweepParam::LambdaTotalSymmetric.apply(&f, 0.02);
        assert_eq!((p.lambda_r, p.lambda_f), (0.01, 0.01));
        assert_eq!(SweepParam::V.apply(&f, 40.0).v, 40.0);
        assert_eq!(SweepParam::DetectRange.apply(&f, 800.0).detect_range, 800.0);
        for name in ["lambda_r", "lambda_f", "lambda", "v", "R"] {
            assert_eq!(name.parse::<SweepParam>().unwrap().name(), name);
        }
        assert!("rho".parse::<SweepParam>().is_err());
    }

    #[test]
    fn high_density_reference_tends_to_range_ratio() {
        let p = ScenarioParams::symmetric(10.0, 25.0);
        assert!((high_density_gain(&p) - 3.0).abs() < 1e-2);
        // 0.01 * 200 * 600 / (400 + 600)
        let mid = ScenarioParams::symmetric(0.005, 25.0);
        assert!((high_density_gain(&mid) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn meta_path_swaps_extension() {
        assert_eq!(meta_path(Path::new("out/sweep.csv")), PathBuf::from("out/sweep.meta"));
    }
}
