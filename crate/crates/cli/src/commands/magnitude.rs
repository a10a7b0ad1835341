use anyhow::Result;
use clap::Args;
use serde::Serialize;

use super::{completeness, CatalogArgs};
use crate::output::num;
use crate::Ctx;

#[derive(Args, Debug)]
pub struct FitGrArgs {
    #[command(flatten)]
    pub input: CatalogArgs,
    /// Completeness magnitude; defaults to the smallest magnitude.
    #[arg(long)]
    pub mc: Option<f64>,
    /// Magnitude bin width (0 for continuous magnitudes).
    #[arg(long)]
    pub bin: Option<f64>,
}

#[derive(Serialize)]
struct GrOut {
    b: f64,
    beta: f64,
    se_b: f64,
    n: usize,
    mc: f64,
    a: Option<f64>,
}

pub fn fit_gr(ctx: &Ctx, a: FitGrArgs) -> Result<()> {
    let (mut s, mut out, seed) = ctx.start("fit-gr")?;
    let cat = a.input.load(&mut s)?;
    let bin: f64 = s.req("bin", a.bin)?;
    let mc = completeness(&cat, s.opt("mc", a.mc)?);
    s.record("mc", &mc)?;
    let mags: Vec<f64> = cat.events.iter().map(|e| e.mag).filter(|&m| m >= mc - 1e-9).collect();
    let gr = seismostat::magnitude::fit_gr(&mags, mc, bin)?;
    let step = if bin > 0.0 { bin } else { 0.1 };
    let top = mags.iter().copied().fold(mc, f64::max);
    let n_bins = ((top - mc) / step).floor() as usize + 1;
    let rows: Vec<Vec<String>> = (0..n_bins)
        .map(|k| {
            let m = mc + k as f64 * step;
            let n = mags.iter().filter(|&&x| x >= m - 1e-9).count() as f64;
            let model = (mags.len() as f64) * 10f64.powf(-gr.b * (m - mc));
            vec![num(m), num(n), num(model)]
        })
        .collect();
    out.csv("frequency", &["mag", "count_ge", "model_count_ge"], rows)?;
    out.finish(seed, s.effective(), GrOut { b: gr.b, beta: gr.beta, se_b: gr.se_b, n: gr.n, mc, a: gr.a_rate })
}
