use std::fmt::Write as _;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::ExperimentConfig;
use super::corpus::{Corpus, Split};
use super::reconstruct::{load_models, persist, recon_seed, recon_touches, reconstruct_from_touches, Models};
use super::{check_manifest, write_manifest, Layout};
use crate::error::{Error, Result};
use crate::geometry::MeshIndex;
use crate::metrics::{write_report_csv, ReportRow, CSV_HEADER};

/// One parsed line of a report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportLine {
    pub shape_id: u64,
    pub touches: usize,
    pub seed: u64,
    pub cd: f64,
    pub emd: f64,
    pub surface_error_pct: f64,
    pub emd_exactness: String,
}

fn field<T: std::str::FromStr>(line: usize, name: &str, v: Option<&str>) -> Result<T> {
    v.and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
        line,
        message: format!("bad or missing {name}"),
    })
}

/// Parses the report table written by [`write_report_csv`].
pub fn read_report_csv(text: &str) -> Result<Vec<ReportLine>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing report header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let mut f = line.split(',');
        out.push(ReportLine {
            shape_id: field(n, "shape_id", f.next())?,
            touches: field(n, "touches", f.next())?,
            seed: field(n, "seed", f.next())?,
            cd: field(n, "cd", f.next())?,
            emd: field(n, "emd", f.next())?,
            surface_error_pct: field(n, "surface_error_pct", f.next())?,
            emd_exactness: field(n, "emd_exactness", f.next())?,
        });
        if f.next().is_some() {
            return Err(Error::Parse {
                line: n,
                message: "too many fields".into(),
            });
        }
    }
    Ok(out)
}

/// Statistics of one touch count over every (shape, seed).
#[derive(Clone, Debug, PartialEq)]
pub struct CountSummary {
    pub touches: usize,
    pub n: usize,
    pub mean_emd: f64,
    /// Sample standard deviation (0 for a single row).
    pub std_emd: f64,
    pub mean_cd: f64,
    pub std_cd: f64,
    pub mean_surface_error_pct: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-count summary, in the order of `counts`. Counts without rows are
/// skipped.
pub fn summarize(rows: &[ReportLine], counts: &[usize]) -> Vec<CountSummary> {
    counts
        .iter()
        .filter_map(|&k| {
            let sel: Vec<&ReportLine> = rows.iter().filter(|r| r.touches == k).collect();
            if sel.is_empty() {
                return None;
            }
            let emd: Vec<f64> = sel.iter().map(|r| r.emd).collect();
            let cd: Vec<f64> = sel.iter().map(|r| r.cd).collect();
            let se: Vec<f64> = sel.iter().map(|r| r.surface_error_pct).collect();
            let (mean_emd, std_emd) = mean_std(&emd);
            let (mean_cd, std_cd) = mean_std(&cd);
            Some(CountSummary {
                touches: k,
                n: sel.len(),
                mean_emd,
                std_emd,
                mean_cd,
                std_cd,
                mean_surface_error_pct: mean_std(&se).0,
            })
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "touches,n,mean_emd,std_emd,mean_cd,std_cd,mean_surface_error_pct";

pub fn write_summary_csv(summary: &[CountSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in summary {
        writeln!(
            s,
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.6}",
            c.touches, c.n, c.mean_emd, c.std_emd, c.mean_cd, c.std_cd, c.mean_surface_error_pct
        )
        .expect("writing to a string");
    }
    s
}

/// The touches-vs-quality property over a set of report lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendCheck {
    /// Mean EMD per touch count.
    pub mean_emd: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Shapes whose seed-averaged EMD at the largest count is below that at
    /// the smallest count.
    pub improved_shapes: usize,
    pub shapes: usize,
}

impl TrendCheck {
    pub fn improved_fraction(&self) -> f64 {
        self.improved_shapes as f64 / self.shapes.max(1) as f64
    }
}

pub fn trend_check(rows: &[ReportLine], counts: &[usize]) -> TrendCheck {
    let mean_emd: Vec<f64> = summarize(rows, counts).iter().map(|c| c.mean_emd).collect();
    let strictly_decreasing = mean_emd.len() == counts.len() && mean_emd.windows(2).all(|w| w[1] < w[0]);
    let mut shapes: Vec<u64> = rows.iter().map(|r| r.shape_id).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let (first, last) = (counts[0], counts[counts.len() - 1]);
    let shape_mean = |id: u64, k: usize| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.shape_id == id && r.touches == k)
            .map(|r| r.emd)
            .collect();
        mean_std(&v).0
    };
    let improved_shapes = shapes
        .iter()
        .filter(|&&id| shape_mean(id, last) < shape_mean(id, first))
        .count();
    TrendCheck {
        mean_emd,
        strictly_decreasing,
        improved_shapes,
        shapes: shapes.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendOutput {
    pub rows: Vec<ReportLine>,
    pub summary: Vec<CountSummary>,
}

/// All touch counts of reconstruction `seed` of one shape. The touch
/// sequence is drawn once and every count uses a prefix of it.
fn trend_job(
    cfg: &ExperimentConfig,
    layout: &Layout,
    models: &Models,
    corpus: &Corpus,
    shape_id: u64,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let gt = corpus.mesh(shape_id)?;
    let index = MeshIndex::new(&gt);
    let counts = &cfg.trend.touch_counts;
    let touches = recon_touches(cfg, &index, shape_id, *counts.last().expect("validated"), seed)?;
    let base = recon_seed(cfg.seed, shape_id, seed);
    let mut rows = Vec::with_capacity(counts.len());
    for &k in counts {
        let r = reconstruct_from_touches(cfg, models, &gt, &touches[..k], base)?;
        let row = ReportRow {
            shape_id,
            touches: k,
            seed,
            report: r.report,
        };
        persist(&layout.recon(shape_id, k, seed), &row, &r)?;
        log::info!("shape {shape_id} k={k} seed {seed}: emd {:.4e}", r.report.emd);
        rows.push(row);
    }
    Ok(rows)
}

/// Reconstructs every test shape for every touch count and seed, then
/// writes `trend/rows.csv` and `trend/summary.csv`. Jobs are (shape, seed)
/// pairs spread over `trend.jobs` threads; output order is fixed.
pub fn run_trend(cfg: &ExperimentConfig) -> Result<TrendOutput> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "gen-corpus", cfg)?;
    let models = load_models(cfg)?;
    let corpus = Corpus::open(layout.corpus())?;
    let ids = corpus.manifest.ids(Split::Test);
    if ids.is_empty() {
        return Err(Error::Config("the corpus has no test shapes".into()));
    }
    let jobs: Vec<(u64, u64)> = ids
        .iter()
        .flat_map(|&id| (0..cfg.trend.seeds).map(move |s| (id, s)))
        .collect();
    let threads = match cfg.trend.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<ReportRow>>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(id, seed)) = jobs.get(i) else { break };
                let r = trend_job(cfg, &layout, &models, &corpus, id, seed);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("no worker panicked") {
        rows.extend(r.expect("every job ran")?);
    }
    rows.sort_by_key(|r| (r.shape_id, r.touches, r.seed));

    let dir = layout.trend();
    fs::create_dir_all(&dir)?;
    let mut csv = Vec::new();
    write_report_csv(&rows, &mut csv)?;
    fs::write(dir.join("rows.csv"), &csv)?;
    // The summary is computed from the written table so it can be
    // recomputed from the file exactly.
    let lines = read_report_csv(std::str::from_utf8(&csv).expect("ASCII"))?;
    let summary = summarize(&lines, &cfg.trend.touch_counts);
    fs::write(dir.join("summary.csv"), write_summary_csv(&summary))?;
    write_manifest(&layout, "trend", cfg)?;
    Ok(TrendOutput { rows: lines, summary })
}

/// Reads `trend/rows.csv` after checking it was produced by this
/// configuration.
pub fn load_trend_rows(cfg: &ExperimentConfig) -> Result<Vec<ReportLine>> {
    let layout = Layout::new(&cfg.output_dir);
    check_manifest(&layout, "trend", cfg)?;
    read_report_csv(&fs::read_to_string(layout.trend().join("rows.csv"))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(shape_id: u64, touches: usize, seed: u64, emd: f64) -> ReportLine {
        ReportLine {
            shape_id,
            touches,
            seed,
            cd: emd * emd,
            emd,
            surface_error_pct: 10.0,
            emd_exactness: "exact".into(),
        }
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![line(0, 1, 0, 0.3), line(0, 1, 1, 0.5), line(1, 1, 0, 0.4), line(0, 10, 0, 0.2)];
        let s = summarize(&rows, &[1, 10, 20]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].n, 3);
        assert!((s[0].mean_emd - 0.4).abs() < 1e-15);
        assert!((s[0].std_emd - 0.1).abs() < 1e-15);
        assert_eq!(s[1].std_emd, 0.0);
    }

    #[test]
    fn report_table_parses_back() {
        use crate::metrics::{EmdExactness, ReconstructionReport};
        let rows: Vec<ReportRow> = (0..3)
            .map(|i| ReportRow {
                shape_id: i,
                touches: 10,
                seed: 2,
                report: ReconstructionReport {
                    cd: 1e-3 * i as f64,
                    emd: 0.05,
                    emd_exactness: EmdExactness::Approx,
                    surface_error_pct: 3.5,
                    n_points: 10,
                    seed: 0,
                },
            })
            .collect();
        let mut csv = Vec::new();
        write_report_csv(&rows, &mut csv).unwrap();
        let back = read_report_csv(std::str::from_utf8(&csv).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].cd, 2e-3);
        assert_eq!(back[1].emd_exactness, "approx");
        assert!(read_report_csv("a,b\n").is_err());
        assert!(read_report_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
    }

    #[test]
    fn trend_property() {
        let rows = vec![
            line(0, 1, 0, 0.3),
            line(0, 20, 0, 0.1),
            line(1, 1, 0, 0.2),
            line(1, 20, 0, 0.25),
            line(0, 10, 0, 0.2),
            line(1, 10, 0, 0.2),
        ];
        let c = trend_check(&rows, &[1, 10, 20]);
        assert_eq!(c.shapes, 2);
        assert_eq!(c.improved_shapes, 1);
        assert!(c.strictly_decreasing);
        assert_eq!(c.improved_fraction(), 0.5);
        let c = trend_check(&rows[..4], &[1, 10, 20]);
        assert!(!c.strictly_decreasing);
    }
}
