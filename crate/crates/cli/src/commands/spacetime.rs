use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use seismostat::catalog::{write_csv, Catalog};
use seismostat::etas_st::{
    assign_cluster_shapes, background_weights, expected_background, fit_st_etas, iterate_background, BackgroundField,
    ClusterShape, ShapeWindow, StEtasParams,
};
use seismostat::FitResult;

use super::{completeness, CatalogArgs};
use crate::output::num;
use crate::settings::Settings;
use crate::{expect_len, parse_list, parse_pair, Ctx, NumList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeMode {
    Catalog,
    Forecast,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Window S,T in catalog days.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
    /// Background grid CSV (x, y, mu); uniform over the catalog extent when omitted.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Cell size in degrees of the default background grid.
    #[arg(long)]
    pub cell: Option<f64>,
    /// Reference magnitude; defaults to the completeness magnitude.
    #[arg(long)]
    pub mref: Option<f64>,
    /// Events at or above this magnitude get an anisotropic cluster shape.
    #[arg(long)]
    pub m_large: Option<f64>,
    /// Member window used for cluster shapes.
    #[arg(long, value_enum)]
    pub shape_window: Option<ShapeMode>,
    /// Initial nu,K,c,alpha,p,d,q.
    #[arg(long, value_parser = parse_list)]
    pub init: Option<NumList>,
}

#[derive(Args, Debug)]
pub struct FitStArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Alternate fits and background smoothing.
    #[arg(long)]
    pub iterate: bool,
    /// Kernel bandwidth (km) of the background update.
    #[arg(long)]
    pub bandwidth_km: Option<f64>,
    /// Stop when the largest relative background change is below this.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DeclusterArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Model parameters nu,K,c,alpha,p,d,q; fitted when omitted.
    #[arg(long, value_parser = parse_list)]
    pub params: Option<NumList>,
}

struct Prepared {
    catalog: Catalog,
    window: (f64, f64),
    bg: BackgroundField,
    shapes: Vec<ClusterShape>,
    mref: f64,
}

fn default_background(cat: &Catalog, cell: f64, window: (f64, f64)) -> Result<BackgroundField> {
    let (x0, x1, y0, y1) = match &cat.region {
        Some(r) => r.bounding_box(),
        None => cat.events.iter().fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |b, e| {
            (b.0.min(e.lon), b.1.max(e.lon), b.2.min(e.lat), b.3.max(e.lat))
        }),
    };
    if !(x1 >= x0 && y1 >= y0) {
        return Err(anyhow!("catalog has no events to place a background grid"));
    }
    let snap = |lo: f64, hi: f64| ((lo / cell).floor() * cell, ((hi / cell).floor() + 1.0) * cell);
    let (x0, x1) = snap(x0, x1);
    let (y0, y1) = snap(y0, y1);
    let area = (x1 - x0) * (y1 - y0);
    // Half of the events treated as background to start with.
    let rate = 0.5 * cat.len() as f64 / ((window.1 - window.0) * area);
    Ok(BackgroundField::uniform((x0, x1, y0, y1), (cell, cell), rate)?)
}

fn prepare(s: &mut Settings, a: &ModelArgs) -> Result<Prepared> {
    let cat = a.input.load(s)?;
    let window: (f64, f64) = s.req("window", a.window)?;
    let mref = completeness(&cat, s.opt("mref", a.mref)?);
    s.record("mref", &mref)?;
    let catalog = cat.with_completeness(mref);
    let bg = match &a.background {
        Some(p) => {
            s.record("background", p)?;
            let f = std::fs::File::open(p).with_context(|| format!("cannot open background grid {}", p.display()))?;
            BackgroundField::read_csv(f)?
        }
        None => {
            let cell: f64 = s.req("cell", a.cell)?;
            default_background(&catalog, cell, window)?
        }
    };
    let shapes = match s.opt("m_large", a.m_large)? {
        Some(m) => {
            let mode = match s.req("shape_window", a.shape_window)? {
                ShapeMode::Catalog => ShapeWindow::Catalog,
                ShapeMode::Forecast => ShapeWindow::Forecast,
            };
            assign_cluster_shapes(&catalog, m, mode)
        }
        None => Vec::new(),
    };
    Ok(Prepared { catalog, window, bg, shapes, mref })
}

fn params_from(v: &[f64], mref: f64, name: &str) -> Result<StEtasParams> {
    expect_len(name, v, 7)?;
    let p = StEtasParams {
        nu_scale: v[0],
        k_prod: v[1],
        c_off: v[2],
        alpha_m: v[3],
        p_exp: v[4],
        d_spread: v[5],
        q_exp: v[6],
        m_ref: mref,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Serialize)]
struct FitOut {
    fit: FitResult<StEtasParams>,
    background_changes: Vec<f64>,
    background_converged: Option<bool>,
    expected_background: f64,
}

pub fn fit(ctx: &Ctx, a: FitStArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("fit-st-etas")?;
    let p = prepare(&mut s, &a.model)?;
    let init_v: Vec<f64> = s.req("init", a.model.init.clone())?;
    let init = params_from(&init_v, p.mref, "init")?;
    s.record("iterate", &a.iterate)?;
    let (fit, field, changes, converged) = if a.iterate {
        let bw: f64 = s.req("bandwidth_km", a.bandwidth_km)?;
        let tol: f64 = s.req("tol", a.tol)?;
        let max_iter: usize = s.req("max_iter", a.max_iter)?;
        let it = iterate_background(&p.catalog, &p.shapes, &p.bg, p.window, &init, bw, tol, max_iter)?;
        (it.fit, it.field, it.changes, Some(it.converged))
    } else {
        (fit_st_etas(&p.catalog, &p.shapes, &p.bg, p.window, &init)?, p.bg.clone(), Vec::new(), None)
    };
    out.raw("background.csv", |f| Ok(field.write_csv(f)?))?;
    let expected = expected_background(&fit.params, &field, p.window);
    out.finish(seed, s.effective(), FitOut { fit, background_changes: changes, background_converged: converged, expected_background: expected })
}

#[derive(Serialize)]
struct DeclusterOut {
    params: StEtasParams,
    n_events: usize,
    sum_phi: f64,
    expected_background: f64,
    n_background_sampled: usize,
}

pub fn decluster(ctx: &Ctx, a: DeclusterArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("decluster")?;
    let p = prepare(&mut s, &a.model)?;
    let params = match a.params.clone() {
        Some(v) => {
            s.record("params", &v)?;
            params_from(&v, p.mref, "params")?
        }
        None => {
            let init_v: Vec<f64> = s.req("init", a.model.init.clone())?;
            fit_st_etas(&p.catalog, &p.shapes, &p.bg, p.window, &params_from(&init_v, p.mref, "init")?)?.params
        }
    };
    let dec = background_weights(&p.catalog, &p.shapes, &params, &p.bg, seed)?;
    let rows: Vec<Vec<String>> = p
        .catalog
        .events
        .iter()
        .zip(&dec.phi)
        .map(|(e, phi)| vec![num(e.t), num(e.lon), num(e.lat), num(e.mag), num(*phi)])
        .collect();
    out.csv("phi", &["time", "lon", "lat", "mag", "phi"], rows)?;
    out.raw("background_catalog.csv", |f| Ok(write_csv(&dec.background, f)?))?;
    let res = DeclusterOut {
        params,
        n_events: p.catalog.len(),
        sum_phi: dec.phi.iter().sum(),
        expected_background: expected_background(&params, &p.bg, p.window),
        n_background_sampled: dec.background.len(),
    };
    out.finish(seed, s.effective(), res)
}
