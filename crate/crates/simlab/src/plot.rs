//! Gnuplot scripts for CSVs written by the experiments. Nothing is plotted
//! here; the scripts are meant to be run by the user.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::config::header_toml;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Per-trial peak correlation of a pipeline run, clean against attacked,
    /// with the decision threshold.
    Fig4,
    /// Empirical projection tails against the exponential bounds.
    Tail,
}

impl FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "fig4" => Ok(Self::Fig4),
            "tail" => Ok(Self::Tail),
            other => Err(CliError::InvalidParams(format!("unknown plot kind '{other}' (expected fig4 or tail)"))),
        }
    }
}

impl PlotKind {
    fn name(self) -> &'static str {
        match self {
            Self::Fig4 => "fig4",
            Self::Tail => "tail",
        }
    }

    fn required_columns(self) -> &'static [&'static str] {
        match self {
            Self::Fig4 => &["sentence_id", "attacked", "rho_max"],
            Self::Tail => &["epsilon", "empirical_lower", "empirical_upper"],
        }
    }
}

fn column_index(columns: &[&str], name: &str) -> usize {
    // gnuplot columns are 1-based.
    columns.iter().position(|c| *c == name).expect("checked against the schema") + 1
}

fn gp_quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', "''"))
}

pub fn emit_plot_script(csv_path: &Path, kind: PlotKind) -> Result<String, CliError> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", csv_path.display())))?;
    let header: toml::Table = toml::from_str(&header_toml(&text))
        .map_err(|e| CliError::Schema(format!("{}: malformed header: {}", csv_path.display(), e.message())))?;
    let column_line = text
        .lines()
        .find(|l| !l.starts_with('#'))
        .ok_or_else(|| CliError::Schema(format!("{}: no column line", csv_path.display())))?;
    let columns: Vec<&str> = column_line.split(',').collect();
    let missing: Vec<&str> = kind.required_columns().iter().copied().filter(|c| !columns.contains(c)).collect();
    if !missing.is_empty() {
        return Err(CliError::Schema(format!(
            "{} lacks column(s) {} needed for a {} plot",
            csv_path.display(),
            missing.join(", "),
            kind.name()
        )));
    }
    let data = gp_quote(csv_path);
    let image = gp_quote(&csv_path.with_extension("png"));
    let mut s = String::new();
    writeln!(s, "# gnuplot script for {}", csv_path.display()).unwrap();
    writeln!(s, "set terminal pngcairo size 800,500").unwrap();
    writeln!(s, "set output {image}").unwrap();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set datafile commentschars '#'").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    match kind {
        PlotKind::Fig4 => {
            let threshold = header
                .get("pipeline")
                .and_then(|p| p.get("correlation_threshold"))
                .and_then(toml::Value::as_float)
                .unwrap_or(0.4);
            let (id, attacked, rho) = (
                column_index(&columns, "sentence_id"),
                column_index(&columns, "attacked"),
                column_index(&columns, "rho_max"),
            );
            writeln!(s, "threshold = {threshold:?}").unwrap();
            writeln!(s, "set xlabel 'sentence'").unwrap();
            writeln!(s, "set ylabel 'peak correlation'").unwrap();
            writeln!(s, "set yrange [0:1.05]").unwrap();
            writeln!(s, "plot {data} using {id}:(strcol({attacked}) eq 'false' ? ${rho} : 1/0) with points pt 7 title 'clean', \\").unwrap();
            writeln!(s, "     {data} using {id}:(strcol({attacked}) eq 'true' ? ${rho} : 1/0) with points pt 5 title 'attacked', \\").unwrap();
            writeln!(s, "     threshold with lines dt 2 title 'threshold'").unwrap();
        }
        PlotKind::Tail => {
            let m = header
                .get("concentration")
                .and_then(|c| c.get("m"))
                .and_then(toml::Value::as_integer)
                .ok_or_else(|| CliError::Schema(format!("{}: header has no concentration.m", csv_path.display())))?;
            let (eps, lower, upper) = (
                column_index(&columns, "epsilon"),
                column_index(&columns, "empirical_lower"),
                column_index(&columns, "empirical_upper"),
            );
            writeln!(s, "M = {m}").unwrap();
            writeln!(s, "set logscale y").unwrap();
            writeln!(s, "set xlabel 'epsilon'").unwrap();
            writeln!(s, "set ylabel 'tail probability'").unwrap();
            writeln!(s, "plot {data} using {eps}:{lower} with linespoints title 'empirical lower tail', \\").unwrap();
            writeln!(s, "     exp(-M*x**2/4) with lines title 'exp(-M eps^2/4)', \\").unwrap();
            writeln!(s, "     {data} using {eps}:{upper} with linespoints title 'empirical upper tail', \\").unwrap();
            writeln!(s, "     exp(-M*x**2/12) with lines title 'exp(-M eps^2/12)'").unwrap();
        }
    }
    Ok(s)
}
