//! CSV persistence and SVG bar charts.
//!
//! Floats are written with Rust's shortest round-trip formatting, which is
//! locale independent. Infinite values use the literal tokens `Inf` and
//! `-Inf`; absent values are empty fields.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::activation::ActivationKind;
use crate::contamination::ContaminationKind;
use crate::datagen::Structure;
use crate::error::{Error, Result};
use crate::experiment::{run_sweep, summarize, CellSummary, Depth, ExperimentConfig, RunRecord};
use crate::losses::LossSpec;

pub const RESULTS_HEADER: [&str; 20] = [
    "config_id",
    "structure",
    "n",
    "p",
    "activation",
    "depth",
    "standardized",
    "cont_kind",
    "r",
    "mu_out",
    "loss",
    "rep",
    "seed",
    "converged",
    "status",
    "epochs",
    "test_loss",
    "test_loss_finite",
    "sup_weight_norm",
    "breakdown",
];

pub const SUMMARY_HEADER: [&str; 18] = [
    "config_id",
    "structure",
    "n",
    "p",
    "activation",
    "depth",
    "standardized",
    "cont_kind",
    "r",
    "mu_out",
    "loss",
    "replications",
    "n_converged",
    "n_inf_losses",
    "mean_finite_test_loss",
    "median_finite_test_loss",
    "mean_epochs_converged",
    "breakdown_rate_surrogate",
];

/// Lower clamp for bar heights on the log axis.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn format_float(x: f64) -> String {
    if x == f64::INFINITY {
        "Inf".into()
    } else if x == f64::NEG_INFINITY {
        "-Inf".into()
    } else if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:?}")
    }
}

pub fn parse_float(s: &str) -> std::result::Result<f64, String> {
    match s {
        "Inf" => Ok(f64::INFINITY),
        "-Inf" => Ok(f64::NEG_INFINITY),
        "NaN" => Ok(f64::NAN),
        _ => s.parse().map_err(|_| format!("not a number: '{s}'")),
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Everything that identifies a configuration apart from its loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub structure: Structure,
    pub n: usize,
    pub p: usize,
    pub activation: ActivationKind,
    pub depth: Depth,
    pub standardized: bool,
    pub cont_kind: ContaminationKind,
    pub r: f64,
    pub mu_out: f64,
}

impl Scenario {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Scenario {
            structure: cfg.data.structure,
            n: cfg.data.n_train,
            p: cfg.data.p,
            activation: cfg.activation,
            depth: cfg.depth,
            standardized: cfg.standardize,
            cont_kind: cfg.contamination.kind,
            r: cfg.contamination.r,
            mu_out: cfg.contamination.mu_out,
        }
    }

    fn fields(&self) -> [String; 9] {
        [
            self.structure.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            self.activation.to_string(),
            self.depth.to_string(),
            self.standardized.to_string(),
            self.cont_kind.as_str().to_string(),
            format_float(self.r),
            format_float(self.mu_out),
        ]
    }

    fn parse(fields: &[&str]) -> std::result::Result<Self, String> {
        let int = |s: &str| s.parse::<usize>().map_err(|_| format!("not an integer: '{s}'"));
        let boolean = |s: &str| s.parse::<bool>().map_err(|_| format!("not a boolean: '{s}'"));
        Ok(Scenario {
            structure: fields[0].parse()?,
            n: int(fields[1])?,
            p: int(fields[2])?,
            activation: fields[3].parse()?,
            depth: fields[4].parse()?,
            standardized: boolean(fields[5])?,
            cont_kind: fields[6].parse()?,
            r: parse_float(fields[7])?,
            mu_out: parse_float(fields[8])?,
        })
    }

    pub fn title(&self) -> String {
        format!(
            "{} n={} p={} {} {} {} {} r={} mu_out={}",
            self.structure,
            self.n,
            self.p,
            self.activation,
            self.depth,
            if self.standardized { "standardized" } else { "raw" },
            self.cont_kind.as_str(),
            self.r,
            self.mu_out
        )
    }

    fn slug(&self) -> String {
        format!(
            "{}_n{}_p{}_{}_{}_{}_{}_r{}_mu{}",
            self.structure,
            self.n,
            self.p,
            self.activation,
            self.depth,
            if self.standardized { "std" } else { "raw" },
            self.cont_kind.as_str(),
            self.r,
            self.mu_out
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub loss: LossSpec,
    pub summary: CellSummary,
}

fn lookup(cfgs: &[ExperimentConfig], id: usize) -> Result<&ExperimentConfig> {
    cfgs.iter().find(|c| c.config_id == id).ok_or_else(|| Error::Summary(format!("no configuration with id {id}")))
}

pub fn summary_rows(cfgs: &[ExperimentConfig], cells: &[CellSummary]) -> Result<Vec<SummaryRow>> {
    cells
        .iter()
        .map(|c| {
            let cfg = lookup(cfgs, c.config_id)?;
            Ok(SummaryRow { scenario: Scenario::of(cfg), loss: cfg.loss, summary: c.clone() })
        })
        .collect()
}

pub fn write_results<W: Write>(cfgs: &[ExperimentConfig], records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for rec in records {
        let cfg = lookup(cfgs, rec.config_id)?;
        let mut row: Vec<String> = vec![rec.config_id.to_string()];
        row.extend(Scenario::of(cfg).fields());
        row.extend([
            cfg.loss.key(),
            rec.rep.to_string(),
            rec.seed.to_string(),
            rec.converged.to_string(),
            rec.status_label().to_string(),
            rec.epochs.to_string(),
            format_opt(rec.test_loss),
            rec.test_loss_finite().to_string(),
            format_float(rec.sup_weight_norm),
            rec.breakdown.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        let s = &row.summary;
        let mut fields: Vec<String> = vec![s.config_id.to_string()];
        fields.extend(row.scenario.fields());
        fields.extend([
            row.loss.key(),
            s.replications.to_string(),
            s.n_converged.to_string(),
            s.n_inf_losses.to_string(),
            format_opt(s.mean_finite_test_loss),
            format_opt(s.median_finite_test_loss),
            format_opt(s.mean_epochs_converged),
            format_float(s.breakdown_rate_surrogate),
        ]);
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(Error::Summary(format!("unexpected header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        let row = parse_summary_fields(&f).map_err(|m| Error::Summary(format!("row {}: {m}", line + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_summary_fields(f: &[&str]) -> std::result::Result<SummaryRow, String> {
    let int = |s: &str| s.parse::<usize>().map_err(|_| format!("not an integer: '{s}'"));
    let opt = |s: &str| if s.is_empty() { Ok(None) } else { parse_float(s).map(Some) };
    Ok(SummaryRow {
        scenario: Scenario::parse(&f[1..10])?,
        loss: f[10].parse()?,
        summary: CellSummary {
            config_id: int(f[0])?,
            replications: int(f[11])?,
            n_converged: int(f[12])?,
            n_inf_losses: int(f[13])?,
            mean_finite_test_loss: opt(f[14])?,
            median_finite_test_loss: opt(f[15])?,
            mean_epochs_converged: opt(f[16])?,
            breakdown_rate_surrogate: parse_float(f[17])?,
        },
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs the sweep and writes `results.csv` and `summary.csv` into `out_dir`.
pub fn run_to_dir(cfgs: &[ExperimentConfig], out_dir: &Path, parallelism: usize) -> Result<Vec<RunRecord>> {
    fs::create_dir_all(out_dir)?;
    // Fail on an unwritable directory before spending time on training.
    let results_path = out_dir.join("results.csv");
    let results = create(&results_path)?;
    let records = run_sweep(cfgs, parallelism);
    write_results(cfgs, &records, results)?;
    let rows = summary_rows(cfgs, &summarize(&records))?;
    write_summary(&rows, create(&out_dir.join("summary.csv"))?)?;
    Ok(records)
}

/// Rows grouped by scenario in order of first appearance, each group sorted
/// into the reporting order of the losses.
pub fn group_cells(rows: &[SummaryRow]) -> Vec<(Scenario, Vec<SummaryRow>)> {
    let mut cells: Vec<(Scenario, Vec<SummaryRow>)> = Vec::new();
    for row in rows {
        match cells.iter_mut().find(|(s, _)| *s == row.scenario) {
            Some((_, members)) => members.push(row.clone()),
            None => cells.push((row.scenario, vec![row.clone()])),
        }
    }
    for (_, members) in &mut cells {
        members.sort_by_key(|r| (r.loss.report_rank(), r.summary.config_id));
    }
    cells
}

/// Writes one SVG per scenario cell plus `report.csv`. Returns the SVG paths.
pub fn report_to_dir(rows: &[SummaryRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let cells = group_cells(rows);
    let mut table = csv::Writer::from_writer(create(&out_dir.join("report.csv"))?);
    table.write_record([
        "cell",
        "file",
        "structure",
        "n",
        "p",
        "activation",
        "depth",
        "standardized",
        "cont_kind",
        "r",
        "mu_out",
        "loss",
        "n_converged",
        "n_inf_losses",
        "mean_finite_test_loss",
        "bar_value",
    ])?;
    let mut paths = Vec::with_capacity(cells.len());
    for (idx, (scenario, members)) in cells.iter().enumerate() {
        let name = format!("cell_{idx:03}_{}.svg", scenario.slug());
        let path = out_dir.join(&name);
        let mut f = create(&path)?;
        f.write_all(render_svg(scenario, members).as_bytes())?;
        f.flush()?;
        for m in members {
            let mut rec = vec![idx.to_string(), name.clone()];
            rec.extend(scenario.fields());
            rec.extend([
                m.loss.label(),
                m.summary.n_converged.to_string(),
                m.summary.n_inf_losses.to_string(),
                format_opt(m.summary.mean_finite_test_loss),
                format_opt(bar_value(&m.summary)),
            ]);
            table.write_record(&rec)?;
        }
        paths.push(path);
    }
    table.flush()?;
    Ok(paths)
}

/// Height value of a bar, or `None` when the bar is not drawn.
pub fn bar_value(s: &CellSummary) -> Option<f64> {
    if s.n_converged == 0 {
        return None;
    }
    s.mean_finite_test_loss.map(|m| m.max(LOG_FLOOR))
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 60.0;
const BOTTOM: f64 = 60.0;

pub fn render_svg(scenario: &Scenario, members: &[SummaryRow]) -> String {
    let values: Vec<f64> = members.iter().filter_map(|m| bar_value(&m.summary)).collect();
    let (lo, hi) = if values.is_empty() {
        (-2, 0)
    } else {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = min.log10().floor() as i32;
        let hi = (max.log10().ceil() as i32).max(lo + 1);
        (lo, hi)
    };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let base = TOP + plot_h;
    let y_of = |v: f64| base - (v.log10() - lo as f64) / (hi - lo) as f64 * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="24" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(&scenario.title())
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">mean test loss (log scale)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for k in lo..=hi {
        let y = y_of(10f64.powi(k));
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, WIDTH - RIGHT);
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{}" y="{:.2}" font-size="11" text-anchor="end">1e{k}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, WIDTH - RIGHT);

    let slot = plot_w / members.len().max(1) as f64;
    let bar_w = slot * 0.6;
    for (i, m) in members.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let label_y = match bar_value(&m.summary) {
            Some(v) => {
                let y = y_of(v);
                let _ = writeln!(
                    s,
                    r##"<rect class="bar" x="{:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="#4878a8"><title>{}</title></rect>"##,
                    cx - bar_w / 2.0,
                    base - y,
                    xml_escape(&format!("{}: {}", m.loss.label(), format_float(v)))
                );
                y
            }
            None => base,
        };
        let _ = writeln!(
            s,
            r#"<text class="count" x="{cx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            label_y - 6.0,
            m.summary.n_converged
        );
        if m.summary.n_inf_losses > 0 {
            let _ = writeln!(
                s,
                r##"<text class="inf" x="{cx:.2}" y="{:.2}" font-size="11" text-anchor="middle" fill="#b00000">Inf</text>"##,
                label_y - 20.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text class="label" x="{cx:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            base + 20.0,
            xml_escape(&m.loss.label())
        );
    }
    s.push_str("</svg>\n");
    s
}
