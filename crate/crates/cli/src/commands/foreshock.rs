use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::Serialize;
use seismostat::catalog::{classify_cluster, single_link_cluster, ClusterType};
use seismostat::foreshock::{probability_path, ForeshockModel, LocationPrior};

use super::CatalogArgs;
use crate::output::num;
use crate::{parse_list, read_catalog, Ctx, Format, NumList};

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Epicentral linking distance in km.
    #[arg(long)]
    pub link_km: Option<f64>,
    /// Linking time in days.
    #[arg(long)]
    pub link_days: Option<f64>,
    /// Magnitude gap that marks a foreshock-type cluster.
    #[arg(long)]
    pub gap: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ForeshockArgs {
    /// Cluster members so far, as a catalog CSV in time order.
    #[arg(long)]
    pub cluster_file: PathBuf,
    /// Location prior grid CSV with columns lon, lat, prob.
    #[arg(long, conflicts_with = "prior_value")]
    pub prior: Option<PathBuf>,
    /// Constant location prior probability.
    #[arg(long)]
    pub prior_value: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu0: Option<f64>,
    /// Coefficients of γ, γ², γ³.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub b_coef: Option<NumList>,
    /// Coefficients of ρ, ρ², ρ³.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub c_coef: Option<NumList>,
    /// Coefficients of τ, τ², τ³.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    pub d_coef: Option<NumList>,
}

#[derive(Serialize, Default)]
struct Counts {
    clusters: usize,
    foreshock_type: usize,
    swarm: usize,
    mainshock_aftershock: usize,
    isolated: usize,
}

pub fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("classify-clusters")?;
    let cat = a.input.load(&mut s)?;
    let link_km: f64 = s.req("link_km", a.link_km)?;
    let link_days: f64 = s.req("link_days", a.link_days)?;
    let gap: f64 = s.req("gap", a.gap)?;
    let clusters: Vec<_> =
        single_link_cluster(&cat, link_km, link_days)?.iter().map(|c| classify_cluster(c, gap)).collect();
    let mut counts = Counts { clusters: clusters.len(), ..Counts::default() };
    for c in &clusters {
        match c.cluster_type {
            ClusterType::ForeshockType => counts.foreshock_type += 1,
            ClusterType::Swarm => counts.swarm += 1,
            ClusterType::MainshockAftershock => counts.mainshock_aftershock += 1,
            ClusterType::Isolated => counts.isolated += 1,
        }
    }
    let label = |t: ClusterType| match t {
        ClusterType::ForeshockType => "foreshock_type",
        ClusterType::Swarm => "swarm",
        ClusterType::MainshockAftershock => "mainshock_aftershock",
        ClusterType::Isolated => "isolated",
    };
    let rows = clusters.iter().enumerate().map(|(k, c)| {
        let first = &cat.events[c.member_ids[0]];
        let main = &cat.events[c.mainshock_id];
        vec![
            k.to_string(),
            label(c.cluster_type).to_string(),
            c.len().to_string(),
            num(first.t),
            num(first.lon),
            num(first.lat),
            num(main.mag),
            c.mag_gap.map(num).unwrap_or_default(),
        ]
    });
    out.csv(
        "clusters",
        &["cluster", "type", "n_members", "first_t", "first_lon", "first_lat", "mainshock_mag", "mag_gap"],
        rows,
    )?;
    let members = clusters
        .iter()
        .enumerate()
        .flat_map(|(k, c)| c.member_ids.iter().map(move |&i| vec![k.to_string(), i.to_string()]));
    out.csv("members", &["cluster", "event_index"], members)?;
    out.finish(seed, s.effective(), counts)
}

#[derive(Serialize)]
struct ProbOut {
    n_members: usize,
    prior: f64,
    probability: f64,
    path: Vec<f64>,
}

fn coef(name: &str, v: Vec<f64>) -> Result<[f64; 3]> {
    v.try_into().map_err(|v: Vec<f64>| anyhow!("--{name} needs 3 values, got {}", v.len()))
}

pub fn probability(ctx: &Ctx, a: ForeshockArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("foreshock-prob")?;
    s.record("cluster_file", &a.cluster_file)?;
    let cat = read_catalog(&a.cluster_file, Format::Csv)?;
    if cat.is_empty() {
        return Err(anyhow!("cluster file {} has no events", a.cluster_file.display()));
    }
    let location_prior = match &a.prior {
        Some(p) => {
            s.record("prior", p)?;
            let f = std::fs::File::open(p).with_context(|| format!("cannot read location prior {}", p.display()))?;
            LocationPrior::read_csv(f)?
        }
        None => {
            let v: f64 = s.req("prior_value", a.prior_value)?;
            let (lo, la): (Vec<f64>, Vec<f64>) = cat.events.iter().map(|e| (e.lon, e.lat)).unzip();
            let min = |x: &[f64]| x.iter().copied().fold(f64::INFINITY, f64::min).floor() - 1.0;
            let max = |x: &[f64]| x.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
            LocationPrior::constant((min(&lo), max(&lo), min(&la), max(&la)), v)?
        }
    };
    let model = ForeshockModel {
        location_prior,
        mu0: s.req("mu0", a.mu0)?,
        b_coef: coef("b-coef", s.req("b_coef", a.b_coef)?)?,
        c_coef: coef("c-coef", s.req("c_coef", a.c_coef)?)?,
        d_coef: coef("d-coef", s.req("d_coef", a.d_coef)?)?,
    };
    let first = &cat.events[0];
    let prior = model.location_prior.prob_at(first.lon, first.lat)?;
    let path = probability_path(&cat.events, &model)?;
    for (k, p) in path.iter().enumerate() {
        eprintln!("member {} t={} p={p:.6}", k + 1, cat.events[k].t);
    }
    let rows = path.iter().zip(&cat.events).enumerate().map(|(k, (p, e))| {
        vec![(k + 1).to_string(), num(e.t), num(e.mag), num(*p)]
    });
    out.csv("path", &["n_members", "t", "mag", "probability"], rows)?;
    let res = ProbOut { n_members: path.len(), prior, probability: *path.last().expect("non-empty"), path };
    out.finish(seed, s.effective(), res)
}
