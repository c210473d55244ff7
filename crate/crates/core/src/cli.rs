//! Subcommands behind the `vslab` binary. Each writes its outputs plus a
//! JSON run manifest that is enough to replay it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::grid::{rasterize_points, sample_mask, split_mask, BBox, GridField, ObservationMask};
use crate::harness::{aggregate, results_csv, run_plan_with, table_csv, table_markdown};
use crate::io;
use crate::kriging::ok_predict_with;
use crate::metrics::{mae, mi_discrepancy, rmse};
use crate::model::{train_single_field, LossRecord};
use crate::rng::{derive_seed, tag};
use crate::svg::heatmap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Simulate a field under `[cov]` on the `[grid]` and sample a mask.
    Simulate {
        out: PathBuf,
        mask_out: Option<PathBuf>,
    },
    /// Ordinary kriging of a field from the cells marked in a mask.
    Krige {
        field: PathBuf,
        mask: PathBuf,
        out: PathBuf,
    },
    /// Train the `[model]` network on one field.
    Train {
        field: PathBuf,
        mask: PathBuf,
        out: PathBuf,
        report: Option<PathBuf>,
    },
    /// Score a prediction against a truth grid.
    Evaluate {
        pred: PathBuf,
        truth: PathBuf,
        /// Cells to score; all cells when neither mask is given.
        eval_mask: Option<PathBuf>,
        /// Cells that were observed; the rest are scored.
        observed_mask: Option<PathBuf>,
        out: PathBuf,
    },
    /// Run the `[plan]` experiment grid.
    Reproduce { out_dir: PathBuf },
    /// Rasterise a point file and split the occupied cells.
    Ingest { points: PathBuf, out_dir: PathBuf },
    /// SVG heatmap of a grid.
    Render {
        grid: PathBuf,
        mask: Option<PathBuf>,
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Krige { .. } => "krige",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Reproduce { .. } => "reproduce",
            Command::Ingest { .. } => "ingest",
            Command::Render { .. } => "render",
        }
    }

    /// Where the manifest goes.
    pub fn manifest_path(&self) -> PathBuf {
        let beside = |p: &Path| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        };
        match self {
            Command::Simulate { out, .. }
            | Command::Krige { out, .. }
            | Command::Train { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Render { out, .. } => beside(out),
            Command::Reproduce { out_dir } | Command::Ingest { out_dir, .. } => {
                out_dir.join("manifest.json")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: Command,
    pub config: Config,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub invocation: Invocation,
    pub version: String,
    /// Seeds derived from `--seed`, by purpose.
    pub seeds: BTreeMap<String, u64>,
    /// Largest diagonal jitter any factorisation needed.
    pub jitter: f64,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    /// Human-readable summary for stdout.
    pub summary: String,
}

#[derive(Default)]
struct Ctx {
    seeds: BTreeMap<String, u64>,
    jitter: f64,
    outputs: Vec<PathBuf>,
    summary: String,
}

impl Ctx {
    fn seed(&mut self, base: u64, purpose: &str) -> u64 {
        let s = derive_seed(base, &[tag(purpose)]);
        self.seeds.insert(purpose.to_string(), s);
        s
    }

    fn write(&mut self, path: &Path, text: &str) -> Result<()> {
        io::write_text(path, text)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }
}

fn load_pair(field: &Path, mask: &Path) -> Result<(GridField, ObservationMask)> {
    let f = io::read_grid(field)?;
    let m = io::read_mask(mask)?;
    if f.dims() != m.dims() {
        return Err(Error::Shape(format!(
            "{} is {}x{} but {} is {}x{}",
            field.display(),
            f.height(),
            f.width(),
            mask.display(),
            m.height(),
            m.width()
        )));
    }
    Ok((f, m))
}

fn check_dims(a: &GridField, pa: &Path, b: (usize, usize), pb: &Path) -> Result<()> {
    if a.dims() != b {
        return Err(Error::Shape(format!(
            "{} is {}x{} but {} is {}x{}",
            pa.display(),
            a.height(),
            a.width(),
            pb.display(),
            b.0,
            b.1
        )));
    }
    Ok(())
}

fn report_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("iteration,masked,l_g,l_l,omega,d_bar,total\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.iteration, r.masked, r.l_g, r.l_l, r.omega, r.d_bar, r.total
        );
    }
    s
}

/// Metric file written by `evaluate`.
pub fn metrics_csv(values: &[(&str, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in values {
        let _ = writeln!(s, "{k},{v:?}");
    }
    s
}

/// The configured family's own covariance, non-stationary included.
fn covariance(cfg: &Config, h: usize, w: usize) -> Result<CovarianceModel> {
    let (_, true_model) = cfg.cov.family_spec().models(cfg.cov.phi_fraction, h, w)?;
    Ok(true_model)
}

pub fn execute(inv: &Invocation) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = &inv.config;
    let mut ctx = Ctx::default();
    match &inv.command {
        Command::Simulate { out, mask_out } => {
            let (h, w) = (cfg.grid.h, cfg.grid.w);
            let field_seed = ctx.seed(inv.seed, "field");
            let sc = cfg
                .cov
                .family_spec()
                .simulate(cfg.cov.phi_fraction, h, w, field_seed)?;
            ctx.jitter = sc.jitter;
            ctx.write(out, &io::format_grid(&sc.truth))?;
            if let Some(mp) = mask_out {
                let mask_seed = ctx.seed(inv.seed, "mask");
                let m = sample_mask(h, w, cfg.sim.observed_fraction, mask_seed)?;
                ctx.write(mp, &io::format_mask(&m))?;
            }
            let _ = writeln!(
                ctx.summary,
                "simulated {h}x{w} {} field",
                cfg.cov.family.name()
            );
        }
        Command::Krige { field, mask, out } => {
            let (f, m) = load_pair(field, mask)?;
            let cov = covariance(cfg, f.height(), f.width())?;
            let p = ok_predict_with(&f, &m, &cov, &cfg.krige)?;
            ctx.jitter = p.jitter;
            ctx.write(out, &io::format_grid(&p.field))?;
            let _ = writeln!(
                ctx.summary,
                "kriged {} cells from {} observations",
                f.len(),
                m.count()
            );
            let _ = writeln!(
                ctx.summary,
                "max |sum of weights - 1| = {:e}",
                p.weights_sum_check
            );
        }
        Command::Train {
            field,
            mask,
            out,
            report,
        } => {
            let (f, m) = load_pair(field, mask)?;
            let kind = cfg.model.kind;
            let unet = cfg.model.unet(kind)?;
            let mut train = cfg.model.train(kind, &cfg.train);
            train.seed = ctx.seed(inv.seed, "train");
            let r = train_single_field(&f, &m, &unet, &train)?;
            ctx.write(out, &io::format_grid(&r.prediction))?;
            if let Some(rp) = report {
                ctx.write(rp, &report_csv(&r.records))?;
            }
            let last = r.records.last().expect("at least one iteration");
            let _ = writeln!(
                ctx.summary,
                "trained {} for {} iterations, final masked loss {:.6}",
                kind.name(),
                r.records.len(),
                last.masked
            );
        }
        Command::Evaluate {
            pred,
            truth,
            eval_mask,
            observed_mask,
            out,
        } => {
            let p = io::read_grid(pred)?;
            let t = io::read_grid(truth)?;
            check_dims(&p, pred, t.dims(), truth)?;
            let eval = match (eval_mask, observed_mask) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config(
                        "give at most one of --eval-mask and --observed-mask".into(),
                    ))
                }
                (Some(e), None) => io::read_mask(e)?,
                (None, Some(o)) => io::read_mask(o)?.complement(),
                (None, None) => ObservationMask::full(p.height(), p.width())?,
            };
            let mask_path = eval_mask
                .as_ref()
                .or(observed_mask.as_ref())
                .cloned()
                .unwrap_or_default();
            if eval.dims() != p.dims() {
                return Err(Error::Shape(format!(
                    "{} is {}x{} but {} is {}x{}",
                    pred.display(),
                    p.height(),
                    p.width(),
                    mask_path.display(),
                    eval.height(),
                    eval.width()
                )));
            }
            let weights = cfg.metrics.weights();
            let values = [
                ("rmse", rmse(&p, &t, &eval)?),
                ("mae", mae(&p, &t, &eval)?),
                ("mi_rmse", mi_discrepancy(&p, &t, &weights)?),
            ];
            let text = metrics_csv(&values);
            ctx.write(out, &text)?;
            ctx.summary.push_str(&text);
        }
        Command::Reproduce { out_dir } => {
            let plan = cfg.plan(inv.seed)?;
            ctx.seeds.insert("base".into(), inv.seed);
            let outcomes = run_plan_with(&plan, inv.jobs, &|o| {
                eprintln!(
                    "run {} (range {}, observed {}) done",
                    o.key.run, o.key.phi_fraction, o.key.observed_fraction
                )
            })?;
            ctx.jitter = outcomes.iter().map(|o| o.jitter).fold(0.0, f64::max);
            let rows: Vec<_> = outcomes.into_iter().flat_map(|o| o.rows).collect();
            let stats = aggregate(&rows);
            let title = format!(
                "{} covariance, {}x{} grid",
                cfg.cov.family.name(),
                cfg.grid.h,
                cfg.grid.w
            );
            ctx.write(&out_dir.join("results.csv"), &results_csv(&rows))?;
            ctx.write(&out_dir.join("table.csv"), &table_csv(&stats))?;
            let md = table_markdown(&stats, &title);
            ctx.write(&out_dir.join("table.md"), &md)?;
            let failed = rows.iter().filter(|r| r.value.is_none()).count();
            let _ = writeln!(ctx.summary, "{md}\n{} rows, {failed} failed", rows.len());
        }
        Command::Ingest { points, out_dir } => {
            let pts = io::read_points(points)?;
            let bbox = match cfg.ingest.bbox {
                Some([x0, y0, x1, y1]) => BBox::new(x0, y0, x1, y1)?,
                None => BBox::enclosing(&pts).ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "points in {} do not span a box; set [ingest] bbox",
                        points.display()
                    ))
                })?,
            };
            let raster = rasterize_points(&pts, cfg.grid.h, cfg.grid.w, bbox)?;
            let split_seed = ctx.seed(inv.seed, "split");
            let (train, test) = split_mask(&raster.mask, cfg.ingest.train_fraction, split_seed)?;
            let zero_outside = |m: &ObservationMask| -> Result<GridField> {
                let v = raster
                    .field
                    .values()
                    .iter()
                    .zip(m.bits())
                    .map(|(v, &b)| if b { *v } else { 0.0 })
                    .collect();
                GridField::new(cfg.grid.h, cfg.grid.w, v)
            };
            ctx.write(&out_dir.join("field.csv"), &io::format_grid(&raster.field))?;
            ctx.write(&out_dir.join("mask.csv"), &io::format_mask(&raster.mask))?;
            ctx.write(
                &out_dir.join("train_field.csv"),
                &io::format_grid(&zero_outside(&train)?),
            )?;
            ctx.write(&out_dir.join("train_mask.csv"), &io::format_mask(&train))?;
            ctx.write(
                &out_dir.join("test_field.csv"),
                &io::format_grid(&zero_outside(&test)?),
            )?;
            ctx.write(&out_dir.join("test_mask.csv"), &io::format_mask(&test))?;
            let _ = writeln!(
                ctx.summary,
                "{} points into {} occupied cells ({} train, {} test), {} outside the box",
                pts.len(),
                raster.mask.count(),
                train.count(),
                test.count(),
                raster.outside
            );
        }
        Command::Render { grid, mask, out } => {
            let f = io::read_grid(grid)?;
            let m = mask.as_deref().map(io::read_mask).transpose()?;
            if let Some(m) = &m {
                check_dims(&f, grid, m.dims(), mask.as_deref().expect("mask given"))?;
            }
            ctx.write(out, &heatmap(&f, m.as_ref(), 10))?;
        }
    }
    let manifest = RunManifest {
        invocation: inv.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: ctx.seeds,
        jitter: ctx.jitter,
        outputs: ctx.outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    io::write_text(&inv.command.manifest_path(), &(text + "\n"))?;
    Ok(Outcome {
        manifest,
        summary: ctx.summary,
    })
}

/// Re-runs the invocation recorded in a manifest.
pub fn replay(manifest: &Path) -> Result<Outcome> {
    execute(&RunManifest::load(manifest)?.invocation)
}
