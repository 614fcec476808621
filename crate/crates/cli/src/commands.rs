//! The five subcommands. Each returns its in-memory result so callers
//! (tests, bindings) can inspect it without reparsing files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kinetic_mmm_core::dataset::{generate_synthetic, load_csv, scale_dataset, GroundTruth, TimeSeriesDataset};
use kinetic_mmm_core::funnel::{
    build_funnel_target, donor_receiver_report, estimate_n_particle, estimate_pairwise, Bounds, CollisionEstimate,
    DonorReceiverReport, FunnelError, Role,
};
use kinetic_mmm_core::inference::{
    build_model, contribution_percent, decompose, posterior_summary, predict, sample, ContributionShare, Decomposition,
    InferenceError, ParamSummary, PosteriorDraws, Prediction, Variant,
};
use kinetic_mmm_core::metrics::{channel_economics, fit_metrics, median, ChannelEconomics, FitMetrics};
use kinetic_mmm_core::transforms::{hill, michaelis_menten, HillParams, MMParams};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::fitfile::{FitFile, FORMAT};
use crate::output::Outputs;
use crate::plots::{Chart, Marker, Series, Style};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub quiet: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, quiet: bool) -> Self {
        Self { cfg, quiet }
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn fit_path(&self, fit: Option<&Path>) -> PathBuf {
        fit.map(Path::to_path_buf).unwrap_or_else(|| self.out("fit.json"))
    }
}

fn inference_err(e: InferenceError) -> CliError {
    match e {
        InferenceError::ChannelMismatch(_) => CliError::Mismatch(e.to_string()),
        InferenceError::SpecMismatch(_) | InferenceError::InvalidConfig(_) => CliError::Config(e.to_string()),
        _ => CliError::Failed(e.to_string()),
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub dataset: TimeSeriesDataset,
    pub truth: GroundTruth,
    pub csv_path: PathBuf,
    pub truth_path: PathBuf,
}

pub fn cmd_generate(ctx: &Context) -> Result<GenerateOutcome, CliError> {
    let spec = ctx.cfg.generator.to_spec(None);
    spec.validate().map_err(|e| CliError::Config(format!("generator: {e}")))?;
    let (dataset, truth) = generate_synthetic(&spec).map_err(failed)?;
    let csv_path = ctx.out("synthetic.csv");
    let truth_path = ctx.out("ground_truth.json");
    let mut o = Outputs::new();
    o.add(&csv_path, dataset.to_csv_bytes());
    o.add_json(&truth_path, &truth)?;
    o.commit()?;
    ctx.progress(format!(
        "wrote {} ({} weeks, {} channels, {} controls) and {}",
        csv_path.display(),
        dataset.n_weeks(),
        dataset.n_channels(),
        dataset.n_controls(),
        truth_path.display()
    ));
    println!("fingerprint {}", truth.fingerprint);
    Ok(GenerateOutcome {
        dataset,
        truth,
        csv_path,
        truth_path,
    })
}

// --------------------------------------------------------------------- fit

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub fit: FitFile,
    pub fit_path: PathBuf,
    pub prediction: Prediction,
}

pub fn format_metrics(m: &FitMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>10}", "metric", "value");
    let _ = writeln!(s, "{:<20} {:>10.4}", "r2", m.r2);
    let _ = writeln!(s, "{:<20} {:>10.4}", "explained_variance", m.explained_variance);
    let _ = writeln!(s, "{:<20} {:>10.4}", "mape", m.mape);
    let _ = writeln!(s, "{:<20} {:>10.2}", "accuracy_pct", m.accuracy_pct);
    if m.zero_weeks_excluded > 0 {
        let _ = writeln!(s, "{:<20} {:>10}", "zero_weeks_excluded", m.zero_weeks_excluded);
    }
    s
}

fn summary_csv(rows: &[ParamSummary]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "mean", "sd", "q05", "q50", "q95", "rhat", "ess"]).map_err(failed)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.q05.to_string(),
            r.q50.to_string(),
            r.q95.to_string(),
            r.rhat.to_string(),
            r.ess.to_string(),
        ])
        .map_err(failed)?;
    }
    w.into_inner().map_err(failed)
}

/// Loads the configured dataset, samples, and writes `fit.json`,
/// `fit_metrics.{json,txt}` and `posterior_summary.csv`. The fit is written
/// even when it fails the convergence check.
pub fn cmd_fit(ctx: &Context, allow_nonconverged: bool) -> Result<FitOutcome, CliError> {
    let cfg = &ctx.cfg;
    cfg.validate()?;
    let data = cfg.data.as_ref().ok_or_else(|| {
        CliError::Config("fit needs a [data] section (path, media_columns, response_column)".into())
    })?;
    if !data.path.exists() {
        return Err(CliError::Config(format!("data.path {} does not exist", data.path.display())));
    }
    let mapping = data.mapping();
    let ds = load_csv(&data.path, &mapping).map_err(|e| CliError::Config(format!("{}: {e}", data.path.display())))?;
    let (scaled, scale) = scale_dataset(&ds).map_err(|e| CliError::Config(e.to_string()))?;
    let spec = cfg.model_spec();
    let model = build_model(&scaled, &scale, &spec).map_err(inference_err)?;
    let sc = cfg.sampler_config();
    ctx.progress(format!(
        "fitting {} ({} parameters): {} chains x ({} warmup + {} draws), seed {}",
        spec.variant,
        model.n_params(),
        sc.chains,
        sc.warmup,
        sc.draws,
        sc.seed
    ));
    let posterior = sample(&model, &sc).map_err(inference_err)?;
    let prediction = predict(&posterior, &ds).map_err(inference_err)?;
    let metrics = fit_metrics(ds.response(), &prediction.mean).map_err(failed)?;
    let unconverged = posterior.unconverged_params();
    let fit = FitFile {
        format: FORMAT.into(),
        dataset_path: data.path.clone(),
        dataset_fingerprint: ds.fingerprint(),
        mapping,
        metrics,
        converged: unconverged.is_empty(),
        unconverged: unconverged.clone(),
        posterior,
    };
    let table = format_metrics(&metrics);
    let fit_path = ctx.out("fit.json");
    let mut o = Outputs::new();
    o.add_json(&fit_path, &fit)?;
    o.add_json(ctx.out("fit_metrics.json"), &metrics)?;
    o.add(ctx.out("fit_metrics.txt"), table.clone());
    o.add(ctx.out("posterior_summary.csv"), summary_csv(&posterior_summary(&fit.posterior))?);
    o.commit()?;
    let divergences: usize = fit.posterior.stats.iter().map(|s| s.divergences).sum();
    if divergences > 0 {
        ctx.progress(format!("warning: {divergences} divergent transitions"));
    }
    print!("{table}");
    if !fit.converged && !allow_nonconverged {
        return Err(CliError::NotConverged { params: unconverged });
    }
    Ok(FitOutcome {
        fit,
        fit_path,
        prediction,
    })
}

// --------------------------------------------------------------- decompose

#[derive(Debug, Clone)]
pub struct DecomposeOutcome {
    pub decomposition: Decomposition,
    pub share: ContributionShare,
}

fn load_fit_and_data(ctx: &Context, fit: Option<&Path>, data: Option<&Path>) -> Result<(FitFile, TimeSeriesDataset), CliError> {
    let fit_path = ctx.fit_path(fit);
    if !fit_path.exists() {
        return Err(CliError::Config(format!("fit file {} does not exist", fit_path.display())));
    }
    let f = FitFile::load(&fit_path)?;
    let ds = f.dataset(data)?;
    Ok((f, ds))
}

fn contributions_csv(ds: &TimeSeriesDataset, d: &Decomposition) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![ds.column_mapping().time_column];
    header.extend(d.contributions.channel_names.iter().cloned());
    w.write_record(&header).map_err(failed)?;
    for t in 0..d.n_weeks() {
        let mut row = vec![ds.time()[t].to_string()];
        row.extend(d.contributions.values.iter().map(|c| c[t].to_string()));
        w.write_record(&row).map_err(failed)?;
    }
    w.into_inner().map_err(failed)
}

fn decomposition_csv(ds: &TimeSeriesDataset, d: &Decomposition) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec![ds.column_mapping().time_column, "baseline".into(), "trend".into(), "seasonality".into()];
    header.extend(d.control_names.iter().cloned());
    header.extend(d.contributions.channel_names.iter().cloned());
    header.push("prediction".into());
    header.push("observed".into());
    w.write_record(&header).map_err(failed)?;
    for t in 0..d.n_weeks() {
        let mut row = vec![
            ds.time()[t].to_string(),
            d.baseline[t].to_string(),
            d.trend[t].to_string(),
            d.seasonality[t].to_string(),
        ];
        row.extend(d.controls.iter().map(|c| c[t].to_string()));
        row.extend(d.contributions.values.iter().map(|c| c[t].to_string()));
        row.push(d.prediction[t].to_string());
        row.push(ds.response()[t].to_string());
        w.write_record(&row).map_err(failed)?;
    }
    w.into_inner().map_err(failed)
}

pub fn format_share(share: &ContributionShare) -> String {
    let width = share.channels.iter().map(|(n, _)| n.len()).max().unwrap_or(7).max(7);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$} {:>10}", "channel", "contrib_%");
    for (name, pct) in &share.channels {
        let _ = writeln!(s, "{name:<width$} {pct:>10.2}");
    }
    let _ = writeln!(s, "{:<width$} {:>10.2}", "total", share.total);
    s
}

pub fn cmd_decompose(ctx: &Context, fit: Option<&Path>, data: Option<&Path>) -> Result<DecomposeOutcome, CliError> {
    let (f, ds) = load_fit_and_data(ctx, fit, data)?;
    let decomposition = decompose(&f.posterior, &ds).map_err(inference_err)?;
    let share = contribution_percent(&decomposition.contributions, ds.response()).map_err(inference_err)?;
    let table = format_share(&share);
    let mut o = Outputs::new();
    o.add(ctx.out("contributions.csv"), contributions_csv(&ds, &decomposition)?);
    o.add(ctx.out("decomposition.csv"), decomposition_csv(&ds, &decomposition)?);
    o.add_json(ctx.out("contribution_share.json"), &share)?;
    o.add(ctx.out("contribution_share.txt"), table.clone());
    o.commit()?;
    print!("{table}");
    Ok(DecomposeOutcome { decomposition, share })
}

// ------------------------------------------------------------------ funnel

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunnelMode {
    Pairwise,
    NParticle,
}

impl FunnelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FunnelMode::Pairwise => "pairwise",
            FunnelMode::NParticle => "n-particle",
        }
    }
}

/// A collision estimate with channel names instead of indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub target: String,
    pub donors: Vec<String>,
    pub a: f64,
    pub b: f64,
    pub sse: f64,
    pub delta_influence: f64,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelFailure {
    pub target: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelOutput {
    pub mode: FunnelMode,
    pub bounds: Bounds,
    pub estimates: Vec<NamedEstimate>,
    pub failures: Vec<FunnelFailure>,
    pub report: DonorReceiverReport,
}

fn format_funnel(out: &FunnelOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<24} {:>9} {:>9} {:>14}", "target <- donors", "a", "b", "delta");
    for e in &out.estimates {
        let label = if e.donors.len() == 1 {
            format!("{} <- {}", e.target, e.donors[0])
        } else {
            format!("{} <- others", e.target)
        };
        let _ = writeln!(s, "{label:<24} {:>9.4} {:>9.4} {:>14.4}", e.a, e.b, e.delta_influence);
    }
    for f in &out.failures {
        let _ = writeln!(s, "{:<24} failed: {}", f.target, f.error);
    }
    let _ = writeln!(s, "\n{:<16} {:>14} {:>9}", "channel", "delta", "role");
    for c in &out.report.ranking {
        let role = match c.role {
            Role::Donor => "donor",
            Role::Receiver => "receiver",
            Role::Neutral => "-",
        };
        let _ = writeln!(s, "{:<16} {:>14.4} {:>9}", c.channel, c.delta_influence, role);
    }
    s
}

fn delta_matrix_csv(names: &[String], m: &[Vec<f64>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["channel".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(failed)?;
    for (name, row) in names.iter().zip(m) {
        let mut r = vec![name.clone()];
        r.extend(row.iter().map(f64::to_string));
        w.write_record(&r).map_err(failed)?;
    }
    w.into_inner().map_err(failed)
}

pub fn cmd_funnel(ctx: &Context, fit: Option<&Path>, data: Option<&Path>, mode: FunnelMode) -> Result<FunnelOutput, CliError> {
    let (f, ds) = load_fit_and_data(ctx, fit, data)?;
    let m = ds.n_channels();
    if m < 2 {
        return Err(CliError::Config(format!("funnel analysis needs at least 2 channels, dataset has {m}")));
    }
    let bounds = ctx.cfg.funnel.bounds();
    let d = decompose(&f.posterior, &ds).map_err(inference_err)?;
    let targets = (0..m)
        .map(|i| build_funnel_target(&d, ds.response(), &[i]))
        .collect::<Result<Vec<_>, _>>()
        .map_err(failed)?;
    let funnel_err = |e: FunnelError| match e {
        FunnelError::InvalidBounds { .. } | FunnelError::TooFewChannels(_) => CliError::Config(e.to_string()),
        _ => failed(e),
    };
    let cm = &d.contributions;
    let results = match mode {
        FunnelMode::Pairwise => estimate_pairwise(cm, &targets, &bounds),
        FunnelMode::NParticle => estimate_n_particle(cm, &targets, &bounds),
    }
    .map_err(funnel_err)?;
    let names = &cm.channel_names;
    let mut ok: Vec<CollisionEstimate> = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(e) => ok.push(e),
            Err(e) => {
                // results come in target-major order
                let target = match mode {
                    FunnelMode::NParticle => names[k].clone(),
                    FunnelMode::Pairwise => {
                        let (i, j) = (k / (m - 1), k % (m - 1));
                        let j = if j >= i { j + 1 } else { j };
                        format!("{} <- {}", names[i], names[j])
                    }
                };
                failures.push(FunnelFailure { target, error: e.to_string() });
            }
        }
    }
    let report = donor_receiver_report(&ok, cm);
    let estimates = ok
        .iter()
        .map(|e| NamedEstimate {
            target: names[e.target].clone(),
            donors: e.donors.iter().map(|&j| names[j].clone()).collect(),
            a: e.a,
            b: e.b,
            sse: e.sse,
            delta_influence: e.delta_influence,
            condition_number: e.condition_number,
        })
        .collect();
    let out = FunnelOutput {
        mode,
        bounds,
        estimates,
        failures,
        report,
    };
    let table = format_funnel(&out);
    let stem = format!("funnel_{}", mode.as_str().replace('-', "_"));
    let mut o = Outputs::new();
    o.add_json(ctx.out(&format!("{stem}.json")), &out)?;
    o.add(ctx.out(&format!("{stem}.txt")), table.clone());
    if let Some(dm) = &out.report.delta_matrix {
        o.add(ctx.out("delta_matrix.csv"), delta_matrix_csv(names, dm)?);
    }
    o.commit()?;
    print!("{table}");
    Ok(out)
}

// ------------------------------------------------------------------ report

/// Saturation curve parameters (posterior medians, original units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Saturation {
    MichaelisMenten { vmax: f64, km: f64 },
    Hill { half_sat: f64, exponent: f64, scale: f64 },
}

impl Saturation {
    pub fn k(&self) -> f64 {
        match *self {
            Saturation::MichaelisMenten { km, .. } => km,
            Saturation::Hill { half_sat, .. } => half_sat,
        }
    }

    pub fn ceiling(&self) -> f64 {
        match *self {
            Saturation::MichaelisMenten { vmax, .. } => vmax,
            Saturation::Hill { scale, .. } => scale,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Saturation::MichaelisMenten { vmax, km } => michaelis_menten(x, &MMParams { vmax, km }),
            Saturation::Hill {
                half_sat,
                exponent,
                scale,
            } => hill(
                x,
                &HillParams {
                    half_sat,
                    exponent,
                    scale,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicsRow {
    pub channel: String,
    pub saturation: Option<Saturation>,
    /// Absent when the channel has no spend.
    pub economics: Option<ChannelEconomics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub variant: Variant,
    pub dataset_fingerprint: String,
    pub converged: bool,
    pub metrics: FitMetrics,
    pub economics: Vec<EconomicsRow>,
    pub params: Vec<ParamSummary>,
}

fn posterior_median(p: &PosteriorDraws, name: &str) -> Option<f64> {
    p.param_index(name).map(|i| median(&p.values(i)))
}

/// Posterior-median saturation curve for channel `ch`, if the variant has one.
pub fn saturation_for(p: &PosteriorDraws, ch: &str) -> Option<Saturation> {
    if p.spec.variant.is_michaelis_menten() {
        Some(Saturation::MichaelisMenten {
            vmax: posterior_median(p, &format!("vmax[{ch}]"))?,
            km: posterior_median(p, &format!("km[{ch}]"))?,
        })
    } else if p.spec.variant == Variant::HillAdstock {
        Some(Saturation::Hill {
            half_sat: posterior_median(p, &format!("half_sat[{ch}]"))?,
            exponent: posterior_median(p, &format!("hill_n[{ch}]"))?,
            scale: posterior_median(p, &format!("hill_scale[{ch}]"))?,
        })
    } else {
        None
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.prec$}"))
}

fn format_report(r: &Report) -> String {
    let mut s = format!("variant {}  converged {}\n\n", r.variant, r.converged);
    s.push_str(&format_metrics(&r.metrics));
    let _ = writeln!(
        s,
        "\n{:<12} {:>12} {:>9} {:>12} {:>8} {:>8} {:>10} {:>10} {:>10} {:>6}",
        "channel", "spend", "contrib_%", "outcome", "roas", "cpa", "K", "K_norm", "med_spend", "region"
    );
    for row in &r.economics {
        match &row.economics {
            Some(e) => {
                let _ = writeln!(
                    s,
                    "{:<12} {:>12.0} {:>9} {:>12.1} {:>8.3} {:>8} {:>10} {:>10} {:>10.0} {:>6}",
                    row.channel,
                    e.total_spend,
                    opt(e.contribution_pct, 2),
                    e.media_outcome,
                    e.roas,
                    opt(e.cpa, 2),
                    opt(e.k, 1),
                    opt(e.k_normalized, 6),
                    e.median_spend,
                    e.region.map_or_else(|| "-".into(), |r| r.to_string())
                );
            }
            None => {
                let _ = writeln!(s, "{:<12} {:>12}", row.channel, "no spend");
            }
        }
    }
    s
}

fn response_plot(ds: &TimeSeriesDataset, pred: &Prediction) -> Chart {
    let x: Vec<f64> = (0..ds.n_weeks()).map(|t| t as f64).collect();
    Chart {
        title: "Observed and predicted response".into(),
        x_label: "week".into(),
        y_label: ds.response_name().into(),
        series: vec![
            Series {
                name: "observed".into(),
                x: x.clone(),
                y: ds.response().to_vec(),
                style: Style::Line,
            },
            Series {
                name: "posterior mean (90% band)".into(),
                x: x.clone(),
                y: pred.mean.clone(),
                style: Style::Dashed,
            },
        ],
        markers: Vec::new(),
        band: Some((x, pred.lower.clone(), pred.upper.clone())),
    }
}

/// Curve from 0 to the larger of 3K and the channel's peak spend, with the
/// half-saturation point `(K, ceiling/2)` marked.
pub fn saturation_plot(channel: &str, sat: &Saturation, max_spend: f64) -> Chart {
    let top = (3.0 * sat.k()).max(max_spend);
    let x: Vec<f64> = (0..=200).map(|i| top * i as f64 / 200.0).collect();
    let y = x.iter().map(|&v| sat.eval(v)).collect();
    Chart {
        title: format!("Saturation curve: {channel}"),
        x_label: "adstocked spend".into(),
        y_label: "contribution".into(),
        series: vec![Series {
            name: channel.into(),
            x,
            y,
            style: Style::Line,
        }],
        markers: vec![Marker {
            x: sat.k(),
            y: sat.ceiling() / 2.0,
            label: format!("K = {:.1}", sat.k()),
        }],
        band: None,
    }
}

fn k_share_plot(rows: &[EconomicsRow]) -> Option<Chart> {
    let markers: Vec<Marker> = rows
        .iter()
        .filter_map(|r| {
            let e = r.economics.as_ref()?;
            Some(Marker {
                x: e.k_normalized?,
                y: e.contribution_pct?,
                label: r.channel.clone(),
            })
        })
        .collect();
    if markers.is_empty() {
        return None;
    }
    Some(Chart {
        title: "Normalized K vs contribution".into(),
        x_label: "K / total spend".into(),
        y_label: "contribution (%)".into(),
        series: Vec::new(),
        markers,
        band: None,
    })
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn cmd_report(ctx: &Context, fit: Option<&Path>, data: Option<&Path>) -> Result<Report, CliError> {
    let (f, ds) = load_fit_and_data(ctx, fit, data)?;
    let p = &f.posterior;
    let pred = predict(p, &ds).map_err(inference_err)?;
    let metrics = fit_metrics(ds.response(), &pred.mean).map_err(failed)?;
    let d = decompose(p, &ds).map_err(inference_err)?;
    let total_y: f64 = ds.response().iter().sum();
    let th = ctx.cfg.report.thresholds();
    let mut economics = Vec::with_capacity(ds.n_channels());
    for (m, ch) in ds.channel_names().iter().enumerate() {
        let spend = ds.media_column(m);
        let saturation = saturation_for(p, ch);
        let e = if spend.iter().sum::<f64>() > 0.0 {
            Some(
                channel_economics(
                    spend,
                    &d.contributions.values[m],
                    None,
                    saturation.map(|s| s.k()),
                    (total_y != 0.0).then_some(total_y),
                    &th,
                )
                .map_err(failed)?,
            )
        } else {
            None
        };
        economics.push(EconomicsRow {
            channel: ch.clone(),
            saturation,
            economics: e,
        });
    }
    let report = Report {
        variant: p.spec.variant,
        dataset_fingerprint: f.dataset_fingerprint.clone(),
        converged: f.converged,
        metrics,
        economics,
        params: posterior_summary(p),
    };
    let text = format_report(&report);
    let mut o = Outputs::new();
    o.add_json(ctx.out("report.json"), &report)?;
    o.add(ctx.out("report.txt"), text.clone());
    if ctx.cfg.plots {
        let dir = ctx.out("plots");
        o.add(dir.join("response_fit.svg"), response_plot(&ds, &pred).to_svg());
        for (m, row) in report.economics.iter().enumerate() {
            if let Some(sat) = &row.saturation {
                let peak = ds.media_column(m).iter().copied().fold(0.0, f64::max);
                let chart = saturation_plot(&row.channel, sat, peak);
                o.add(dir.join(format!("saturation_{}.svg", file_safe(&row.channel))), chart.to_svg());
            }
        }
        if let Some(c) = k_share_plot(&report.economics) {
            o.add(dir.join("k_normalized_vs_contribution.svg"), c.to_svg());
        }
    }
    let written = o.commit()?;
    print!("{text}");
    ctx.progress(format!("wrote {} files to {}", written.len(), ctx.out_dir().display()));
    Ok(report)
}
