//! Deterministic SVG renderings of CSMF estimates, with a companion CSV
//! carrying exactly the plotted numbers.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Result, VaError};
use crate::model::{CSMFEstimate, CsmfGroup};

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 230.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 44.0;
const PLOT_W: f64 = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
const PLOT_H: f64 = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

const PALETTE: [&str; 10] = [
    "#4c78a8", "#f58518", "#e45756", "#72b7b2", "#54a24b", "#eeca3b", "#b279a2", "#ff9da6",
    "#9d755d", "#bab0ac",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Top-K horizontal bars of a single series.
    Bar,
    /// One stacked horizontal bar per series; segments sum to 1.
    Stacked,
    /// Side-by-side bars per cause across all series.
    Dodge,
    /// Dodge restricted to the union of each series' top-K causes.
    Compare,
    /// Bar of one sub-population, or dodge of all of them.
    Subpop,
}

impl FromStr for PlotKind {
    type Err = VaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bar" => Ok(PlotKind::Bar),
            "stacked" => Ok(PlotKind::Stacked),
            "dodge" => Ok(PlotKind::Dodge),
            "compare" => Ok(PlotKind::Compare),
            "subpop" => Ok(PlotKind::Subpop),
            other => Err(VaError::Config(format!(
                "unknown plot kind {:?}; expected bar, stacked, dodge, compare, or subpop",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    /// How many causes a bar keeps, and each compare series contributes.
    pub top: usize,
    /// Restrict to these causes before anything else.
    pub causelist: Option<Vec<String>>,
    /// Plot this sub-population only.
    pub which: Option<String>,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            top: 10,
            causelist: None,
            which: None,
            title: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotArtifact {
    pub svg: String,
    /// `series,cause_or_group,value[,lower,upper]` rows in plot order.
    pub data_csv: String,
}

/// One plotted sub-population, already restricted to the plotted causes.
struct Series<'a> {
    label: &'a str,
    values: Vec<f64>,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

fn select_bounds(group: &CsmfGroup, cause_idx: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
    group.summary.as_ref().map(|s| {
        (
            cause_idx.iter().map(|&k| s.lower[k]).collect(),
            cause_idx.iter().map(|&k| s.upper[k]).collect(),
        )
    })
}

fn series_from<'a>(group: &'a CsmfGroup, cause_idx: &[usize]) -> Series<'a> {
    Series {
        label: &group.label,
        values: cause_idx.iter().map(|&k| group.point[k]).collect(),
        bounds: select_bounds(group, cause_idx),
    }
}

/// Indices of the K largest values, descending; ties keep input order.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    idx.truncate(k);
    idx
}

/// Renders one estimate. The SVG is byte-identical for identical inputs
/// and options; the CSV holds exactly the plotted numbers.
pub fn emit_plot(est: &CSMFEstimate, kind: PlotKind, opts: &PlotOptions) -> Result<PlotArtifact> {
    if opts.top == 0 {
        return Err(VaError::Config("top must be at least 1".into()));
    }
    // Cause restriction, in estimate order.
    let cause_idx: Vec<usize> = match &opts.causelist {
        None => (0..est.causes().len()).collect(),
        Some(list) => {
            for c in list {
                if !est.causes().contains(c) {
                    return Err(VaError::Config(format!(
                        "cause {:?} is not in the estimate",
                        c
                    )));
                }
            }
            (0..est.causes().len())
                .filter(|&k| list.contains(&est.causes()[k]))
                .collect()
        }
    };
    if cause_idx.is_empty() {
        return Err(VaError::Config("no causes left to plot".into()));
    }
    let groups: Vec<&CsmfGroup> = match &opts.which {
        Some(label) => {
            let g = est.group(label).ok_or_else(|| {
                VaError::Config(format!(
                    "no sub-population {:?}; valid labels: {}",
                    label,
                    est.groups()
                        .iter()
                        .map(|g| g.label.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?;
            vec![g]
        }
        None => est.groups().iter().collect(),
    };

    let causes: Vec<&str> = cause_idx.iter().map(|&k| est.causes()[k].as_str()).collect();
    match kind {
        PlotKind::Bar => {
            if groups.len() != 1 {
                return Err(VaError::Config(format!(
                    "bar plots one sub-population; pick one of: {}",
                    groups
                        .iter()
                        .map(|g| g.label.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            let series = series_from(groups[0], &cause_idx);
            let order = top_k_indices(&series.values, opts.top);
            let causes: Vec<&str> = order.iter().map(|&i| causes[i]).collect();
            let series = Series {
                label: series.label,
                values: order.iter().map(|&i| series.values[i]).collect(),
                bounds: series.bounds.map(|(lo, hi)| {
                    (
                        order.iter().map(|&i| lo[i]).collect(),
                        order.iter().map(|&i| hi[i]).collect(),
                    )
                }),
            };
            Ok(render(&causes, &[series], Layout::Bars, opts))
        }
        PlotKind::Subpop => {
            let series: Vec<Series> = groups.iter().map(|g| series_from(g, &cause_idx)).collect();
            if series.len() == 1 {
                let one = &series[0];
                let order = top_k_indices(&one.values, opts.top);
                let causes: Vec<&str> = order.iter().map(|&i| causes[i]).collect();
                let picked = Series {
                    label: one.label,
                    values: order.iter().map(|&i| one.values[i]).collect(),
                    bounds: one.bounds.as_ref().map(|(lo, hi)| {
                        (
                            order.iter().map(|&i| lo[i]).collect(),
                            order.iter().map(|&i| hi[i]).collect(),
                        )
                    }),
                };
                return Ok(render(&causes, &[picked], Layout::Bars, opts));
            }
            Ok(render(&causes, &series, Layout::Bars, opts))
        }
        PlotKind::Dodge => {
            let series: Vec<Series> = groups.iter().map(|g| series_from(g, &cause_idx)).collect();
            Ok(render(&causes, &series, Layout::Bars, opts))
        }
        PlotKind::Compare => {
            if groups.len() < 2 {
                return Err(VaError::Config(
                    "compare needs at least two sub-populations".into(),
                ));
            }
            let series: Vec<Series> = groups.iter().map(|g| series_from(g, &cause_idx)).collect();
            // Union of each series' top-K causes, ordered by the maximum
            // fraction any series assigns, descending.
            let mut keep = vec![false; causes.len()];
            for s in &series {
                for i in top_k_indices(&s.values, opts.top) {
                    keep[i] = true;
                }
            }
            let max_of = |i: usize| {
                series
                    .iter()
                    .map(|s| s.values[i])
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let mut union: Vec<usize> = (0..causes.len()).filter(|&i| keep[i]).collect();
            union.sort_by(|&a, &b| max_of(b).partial_cmp(&max_of(a)).unwrap());
            let causes: Vec<&str> = union.iter().map(|&i| causes[i]).collect();
            let series: Vec<Series> = series
                .iter()
                .map(|s| Series {
                    label: s.label,
                    values: union.iter().map(|&i| s.values[i]).collect(),
                    bounds: s.bounds.as_ref().map(|(lo, hi)| {
                        (
                            union.iter().map(|&i| lo[i]).collect(),
                            union.iter().map(|&i| hi[i]).collect(),
                        )
                    }),
                })
                .collect();
            Ok(render(&causes, &series, Layout::Bars, opts))
        }
        PlotKind::Stacked => {
            let series: Vec<Series> = groups.iter().map(|g| series_from(g, &cause_idx)).collect();
            Ok(render(&causes, &series, Layout::Stacked, opts))
        }
    }
}

enum Layout {
    /// One row per cause; series dodge within the row.
    Bars,
    /// One row per series; causes stack along the row.
    Stacked,
}

fn render(causes: &[&str], series: &[Series], layout: Layout, opts: &PlotOptions) -> PlotArtifact {
    PlotArtifact {
        svg: render_svg(causes, series, &layout, opts),
        data_csv: render_csv(causes, series),
    }
}

fn render_csv(causes: &[&str], series: &[Series]) -> String {
    let with_bounds = series.iter().all(|s| s.bounds.is_some());
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let header: &[&str] = if with_bounds {
        &["series", "cause_or_group", "value", "lower", "upper"]
    } else {
        &["series", "cause_or_group", "value"]
    };
    wtr.write_record(header).expect("csv write to memory");
    for s in series {
        for (i, cause) in causes.iter().enumerate() {
            let mut row = vec![s.label.to_string(), cause.to_string(), s.values[i].to_string()];
            if with_bounds {
                let (lo, hi) = s.bounds.as_ref().unwrap();
                row.push(lo[i].to_string());
                row.push(hi[i].to_string());
            }
            wtr.write_record(&row).expect("csv write to memory");
        }
    }
    String::from_utf8(wtr.into_inner().expect("csv flush to memory")).expect("csv is utf-8")
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

fn px(x: f64) -> String {
    format!("{:.2}", x)
}

fn render_svg(causes: &[&str], series: &[Series], layout: &Layout, opts: &PlotOptions) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\">\n",
        w = WIDTH as u32,
        h = HEIGHT as u32
    );
    let _ = write!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        WIDTH as u32, HEIGHT as u32
    );
    if let Some(title) = &opts.title {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            px(WIDTH / 2.0),
            esc(title)
        );
    }

    // Value axis: stacked bars always span [0,1], dodged bars span the
    // largest plotted value (or upper bound).
    let scale_max = match layout {
        Layout::Stacked => 1.0,
        Layout::Bars => {
            let mut m = 0.0f64;
            for s in series {
                for &v in &s.values {
                    m = m.max(v);
                }
                if let Some((_, hi)) = &s.bounds {
                    for &v in hi {
                        m = m.max(v);
                    }
                }
            }
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let x_of = |v: f64| MARGIN_LEFT + PLOT_W * (v / scale_max);

    for t in 0..=4 {
        let v = scale_max * t as f64 / 4.0;
        let x = x_of(v);
        let _ = write!(
            svg,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            px(MARGIN_TOP),
            px(MARGIN_TOP + PLOT_H),
            x = px(x)
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#333333\">{:.3}</text>\n",
            px(x),
            px(MARGIN_TOP + PLOT_H + 16.0),
            v
        );
    }

    // Legend names what varies within a row: series when dodging,
    // causes when stacking.
    let legend: Vec<&str> = match layout {
        Layout::Bars if series.len() > 1 => series.iter().map(|s| s.label).collect(),
        Layout::Stacked => causes.to_vec(),
        _ => Vec::new(),
    };
    let mut lx = MARGIN_LEFT;
    for (i, label) in legend.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"30\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            px(lx),
            color
        );
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"39\" fill=\"#333333\">{}</text>\n",
            px(lx + 14.0),
            esc(label)
        );
        lx += 14.0 + 7.2 * label.chars().count() as f64 + 14.0;
    }

    match layout {
        Layout::Bars => {
            let nrows = causes.len();
            let row_h = PLOT_H / nrows as f64;
            let pad = row_h * 0.15;
            let sub_h = (row_h - 2.0 * pad) / series.len() as f64;
            for (r, cause) in causes.iter().enumerate() {
                let row_top = MARGIN_TOP + row_h * r as f64;
                let _ = write!(
                    svg,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#333333\">{}</text>\n",
                    px(MARGIN_LEFT - 8.0),
                    px(row_top + row_h / 2.0 + 4.0),
                    esc(cause)
                );
                for (g, s) in series.iter().enumerate() {
                    let v = s.values[r];
                    let y = row_top + pad + sub_h * g as f64;
                    let color = if series.len() > 1 {
                        PALETTE[g % PALETTE.len()]
                    } else {
                        PALETTE[0]
                    };
                    let _ = write!(
                        svg,
                        "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                        px(MARGIN_LEFT),
                        px(y),
                        px(x_of(v) - MARGIN_LEFT),
                        px(sub_h),
                        color
                    );
                    if let Some((lo, hi)) = &s.bounds {
                        let yc = y + sub_h / 2.0;
                        let _ = write!(
                            svg,
                            "<line class=\"ci\" x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#333333\"/>\n",
                            px(x_of(lo[r])),
                            px(x_of(hi[r])),
                            y = px(yc)
                        );
                        for &b in &[lo[r], hi[r]] {
                            let _ = write!(
                                svg,
                                "<line class=\"ci\" x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#333333\"/>\n",
                                px(yc - 3.0),
                                px(yc + 3.0),
                                x = px(x_of(b))
                            );
                        }
                    }
                }
            }
        }
        Layout::Stacked => {
            let nrows = series.len();
            let row_h = PLOT_H / nrows as f64;
            let pad = row_h * 0.2;
            for (r, s) in series.iter().enumerate() {
                let row_top = MARGIN_TOP + row_h * r as f64;
                let _ = write!(
                    svg,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#333333\">{}</text>\n",
                    px(MARGIN_LEFT - 8.0),
                    px(row_top + row_h / 2.0 + 4.0),
                    esc(s.label)
                );
                let mut acc = 0.0;
                for (i, &v) in s.values.iter().enumerate() {
                    let x = x_of(acc);
                    acc += v;
                    let _ = write!(
                        svg,
                        "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                        px(x),
                        px(row_top + pad),
                        px(x_of(acc) - x),
                        px(row_h - 2.0 * pad),
                        PALETTE[i % PALETTE.len()]
                    );
                }
            }
        }
    }

    let _ = write!(
        svg,
        "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#333333\"/>\n",
        px(MARGIN_LEFT),
        px(MARGIN_LEFT + PLOT_W),
        y = px(MARGIN_TOP + PLOT_H)
    );
    svg.push_str("</svg>\n");
    svg
}
