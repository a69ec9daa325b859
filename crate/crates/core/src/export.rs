//! Result artifacts: value CSVs, grayscale heatmaps, SVG policy maps,
//! trajectories and training logs. Every writer is deterministic.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mdp::{GridWorld, Move};
use crate::tables::QTable;
use crate::training::LogRow;

/// 17 significant digits in scientific notation; parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

const MOVE_NAMES: [&str; 4] = ["up", "down", "left", "right"];

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Parse(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

/// One row per state: `state,x,y,terminal,v,q_up,q_down,q_left,q_right`,
/// followed by `eta_up,..,eta_right` when `radii` (state-major, action-minor)
/// is given.
pub fn values_csv(world: &GridWorld, q: &QTable, radii: Option<&[f64]>) -> Result<String> {
    let mdp = world.mdp();
    if q.n_states() != mdp.n_states() || q.n_actions() != Move::ALL.len() {
        return Err(Error::Shape("value table does not match the world".into()));
    }
    if radii.is_some_and(|r| r.len() != q.as_slice().len()) {
        return Err(Error::Shape("radius field does not match the world".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "state".to_string(),
        "x".into(),
        "y".into(),
        "terminal".into(),
        "v".into(),
    ];
    header.extend(MOVE_NAMES.iter().map(|m| format!("q_{m}")));
    if radii.is_some() {
        header.extend(MOVE_NAMES.iter().map(|m| format!("eta_{m}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for s in 0..mdp.n_states() {
        let (x, y) = world.cell(s);
        let mut row = vec![
            s.to_string(),
            x.to_string(),
            y.to_string(),
            u8::from(mdp.is_terminal(s)).to_string(),
        ];
        row.push(format_float(q.max_value(s)));
        row.extend(q.row(s).iter().map(|&v| format_float(v)));
        if let Some(r) = radii {
            let n_a = q.n_actions();
            row.extend(r[s * n_a..(s + 1) * n_a].iter().map(|&v| format_float(v)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Contents of a values CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuesFile {
    pub cells: Vec<(i32, i32)>,
    pub q: QTable,
    pub radii: Option<Vec<f64>>,
}

/// Parses the output of [`values_csv`].
pub fn parse_values_csv(text: &str) -> Result<ValuesFile> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    let with_radii = match header.len() {
        9 => false,
        13 => true,
        n => {
            return Err(Error::Parse(format!(
                "values csv: expected 9 or 13 columns, got {n}"
            )))
        }
    };
    let num = |field: &str, line: u64| -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("values csv line {line}: {field:?}: {e}")))
    };
    let mut cells = Vec::new();
    let mut q = Vec::new();
    let mut radii = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i as u64 + 2;
        let int = |k: usize| -> Result<i64> {
            rec[k]
                .parse::<i64>()
                .map_err(|e| Error::Parse(format!("values csv line {line}: {:?}: {e}", &rec[k])))
        };
        if int(0)? != i as i64 {
            return Err(Error::Parse(format!(
                "values csv line {line}: states must be listed in order"
            )));
        }
        cells.push((int(1)? as i32, int(2)? as i32));
        for k in 5..9 {
            q.push(num(&rec[k], line)?);
        }
        if with_radii {
            for k in 9..13 {
                radii.push(num(&rec[k], line)?);
            }
        }
    }
    let n = cells.len();
    Ok(ValuesFile {
        cells,
        q: QTable::from_vec(n, 4, q)?,
        radii: with_radii.then_some(radii),
    })
}

/// Greedy state values mapped linearly to `0..=255` over non-wall cells;
/// walls are `0`. A flat value function maps to `255`. Plain PGM (`P2`), top
/// row first.
pub fn heatmap_pgm(world: &GridWorld, v: &[f64]) -> String {
    let spec = world.spec();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mut out = format!("P2\n{} {}\n255\n", spec.width, spec.height);
    for y in (0..spec.height).rev() {
        let row: Vec<String> = (0..spec.width)
            .map(|x| match world.state((x, y)) {
                Some(s) => gray(v[s], lo, hi).to_string(),
                None => "0".into(),
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn gray(v: f64, lo: f64, hi: f64) -> u8 {
    if hi > lo {
        ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
    } else {
        255
    }
}

const CELL_PX: i32 = 40;

/// One grid panel: gray cells, black walls, colored goal and trap borders,
/// arrows for the greedy action of every non-terminal state, and the
/// trajectory as a polyline.
fn svg_panel(
    out: &mut String,
    world: &GridWorld,
    q: &QTable,
    path: &[usize],
    dx: i32,
    title: &str,
) {
    let spec = world.spec();
    let mdp = world.mdp();
    let v = q.state_values().values;
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let top = |y: i32| (spec.height - 1 - y) * CELL_PX + 20;
    let _ = writeln!(
        out,
        r#"<text x="{}" y="14" font-family="monospace" font-size="12">{title}</text>"#,
        dx
    );
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (px, py) = (dx + x * CELL_PX, top(y));
            let Some(s) = world.state((x, y)) else {
                let _ = writeln!(
                    out,
                    r#"<rect x="{px}" y="{py}" width="{CELL_PX}" height="{CELL_PX}" fill="black"/>"#
                );
                continue;
            };
            let g = gray(v[s], lo, hi);
            let stroke = if spec.goals.iter().any(|c| c.cell == (x, y)) {
                "green"
            } else if spec.traps.contains(&(x, y)) {
                "red"
            } else {
                "#888"
            };
            let _ = writeln!(
                out,
                r#"<rect x="{px}" y="{py}" width="{CELL_PX}" height="{CELL_PX}" fill="rgb({g},{g},{g})" stroke="{stroke}"/>"#
            );
            if !mdp.is_terminal(s) {
                let (mx, my) = Move::from_index(q.greedy_action(s)).delta();
                let (cx, cy) = (px + CELL_PX / 2, py + CELL_PX / 2);
                let (ex, ey) = (cx + mx * CELL_PX / 3, cy - my * CELL_PX / 3);
                let _ = writeln!(
                    out,
                    r#"<line x1="{cx}" y1="{cy}" x2="{ex}" y2="{ey}" stroke="blue" stroke-width="2" marker-end="url(#arrow)"/>"#
                );
            }
        }
    }
    if path.len() > 1 {
        let pts: Vec<String> = path
            .iter()
            .map(|&s| {
                let (x, y) = world.cell(s);
                format!(
                    "{},{}",
                    dx + x * CELL_PX + CELL_PX / 2,
                    top(y) + CELL_PX / 2
                )
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="orange" stroke-width="3" stroke-opacity="0.8"/>"#,
            pts.join(" ")
        );
    }
}

fn svg_document(width: i32, height: i32, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n\
         <defs><marker id=\"arrow\" markerWidth=\"6\" markerHeight=\"6\" refX=\"3\" refY=\"3\" orient=\"auto\">\
         <path d=\"M0,0 L6,3 L0,6 z\" fill=\"blue\"/></marker></defs>\n{body}</svg>\n"
    )
}

/// Heatmap with greedy arrows and the greedy trajectory.
pub fn policy_svg(world: &GridWorld, q: &QTable, path: &[usize], title: &str) -> String {
    let spec = world.spec();
    let mut body = String::new();
    svg_panel(&mut body, world, q, path, 0, title);
    svg_document(spec.width * CELL_PX, spec.height * CELL_PX + 20, &body)
}

/// Several panels side by side, each `(title, q, path)`.
pub fn comparison_svg(world: &GridWorld, panels: &[(&str, &QTable, &[usize])]) -> String {
    let spec = world.spec();
    let gap = CELL_PX / 2;
    let stride = spec.width * CELL_PX + gap;
    let mut body = String::new();
    for (i, (title, q, path)) in panels.iter().enumerate() {
        svg_panel(&mut body, world, q, path, i as i32 * stride, title);
    }
    let width = (panels.len() as i32 * stride - gap).max(0);
    svg_document(width, spec.height * CELL_PX + 20, &body)
}

/// `step,state,x,y`, one row per visited state.
pub fn trajectory_csv(world: &GridWorld, path: &[usize]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "state", "x", "y"])
        .map_err(csv_err)?;
    for (k, &s) in path.iter().enumerate() {
        let (x, y) = world.cell(s);
        w.write_record([k.to_string(), s.to_string(), x.to_string(), y.to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

/// `cycle,eval_eta,mean_return,mean_sampled_eta`.
pub fn training_log_csv(rows: &[LogRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cycle", "eval_eta", "mean_return", "mean_sampled_eta"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            format_float(r.eval_eta),
            format_float(r.mean_return),
            format_float(r.mean_sampled_eta),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Structured-text dump of a serializable report.
pub fn report_toml<T: serde::Serialize>(report: &T) -> Result<String> {
    toml::to_string(report).map_err(|e| Error::Parse(format!("report serialization: {e}")))
}
