//! PNG rendering of density snapshots: plain heatmaps, heatmaps with
//! momentum arrows, and heatmaps with agent and tumour circles.

use std::path::{Path, PathBuf};

use cellflow::io::{read_snapshot, read_trajectories, read_tumors};
use cellflow::ScalarField;
use image::{Rgb, RgbImage};

use crate::cli::{PlotArgs, PlotStyle};
use crate::error::CliError;

/// Viridis sampled at five points.
const STOPS: [[f64; 3]; 5] =
    [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];

fn colour(v: f64) -> Rgb<u8> {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let s = v * (STOPS.len() - 1) as f64;
    let k = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - k as f64;
    let c = |i: usize| (STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Maps physical coordinates to pixels, `y` pointing up.
struct Canvas {
    img: RgbImage,
    scale: u32,
    dx: f64,
    dy: f64,
}

impl Canvas {
    fn heatmap(field: &ScalarField) -> Self {
        let g = *field.grid();
        let scale = (512 / g.nx.max(g.ny) as u32).max(1);
        let (lo, hi) = (field.min(), field.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (w, h) = (g.nx as u32 * scale, g.ny as u32 * scale);
        let img = RgbImage::from_fn(w, h, |px, py| {
            let i = (px / scale) as usize;
            let j = g.ny - 1 - (py / scale) as usize;
            colour((field.at(i, j) - lo) / span)
        });
        Self { img, scale, dx: g.dx, dy: g.dy }
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale as f64;
        let px = (x / self.dx + 0.5) * s;
        let py = self.img.height() as f64 - (y / self.dy + 0.5) * s;
        (px, py)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    /// Line between pixel positions.
    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let n = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            self.put((a.0 + t * (b.0 - a.0)).round() as i64, (a.1 + t * (b.1 - a.1)).round() as i64, c);
        }
    }

    fn arrow(&mut self, from: (f64, f64), to: (f64, f64), c: Rgb<u8>) {
        self.line(from, to, c);
        let (vx, vy) = (to.0 - from.0, to.1 - from.1);
        let len = vx.hypot(vy);
        if len < 2.0 {
            return;
        }
        let head = (0.3 * len).min(6.0);
        let (ux, uy) = (vx / len, vy / len);
        for side in [-1.0, 1.0] {
            let hx = to.0 - head * (ux * 0.866 - side * uy * 0.5);
            let hy = to.1 - head * (uy * 0.866 + side * ux * 0.5);
            self.line(to, (hx, hy), c);
        }
    }

    /// Circle outline of physical radius `r` at physical centre `(x, y)`.
    fn circle(&mut self, x: f64, y: f64, r: f64, c: Rgb<u8>) {
        let (cx, cy) = self.to_px(x, y);
        let rp = (r / self.dx * self.scale as f64).max(1.5);
        let n = (2.0 * std::f64::consts::PI * rp).ceil().max(8.0) as usize;
        for k in 0..n {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            self.put((cx + rp * a.cos()).round() as i64, (cy + rp * a.sin()).round() as i64, c);
        }
    }
}

/// `rho_0003.csv` → `mx_0003.csv` in the same directory.
fn sibling(path: &Path, field: &str) -> Result<PathBuf, CliError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let suffix = name
        .split_once('_')
        .map(|(_, s)| s)
        .ok_or_else(|| CliError::Data(format!("{}: expected a name like rho_0000.csv", path.display())))?;
    Ok(path.with_file_name(format!("{field}_{suffix}")))
}

fn same_grid(a: &ScalarField, b: &ScalarField, what: &Path) -> Result<(), CliError> {
    let (ga, gb) = (a.grid(), b.grid());
    if ga.nx != gb.nx || ga.ny != gb.ny || (ga.dx - gb.dx).abs() > 1e-12 * ga.dx {
        return Err(CliError::Data(format!(
            "{}: grid {}x{} does not match the snapshot grid {}x{}",
            what.display(),
            gb.nx,
            gb.ny,
            ga.nx,
            ga.ny
        )));
    }
    Ok(())
}

/// Renders every snapshot and returns the image paths. Inputs are all read
/// before anything is written.
pub fn plot(args: &PlotArgs) -> Result<Vec<PathBuf>, CliError> {
    let traj = match (&args.style, &args.trajectories) {
        (PlotStyle::AgentsOverlay, Some(p)) => Some(read_trajectories(p)?),
        (PlotStyle::AgentsOverlay, None) => return Err(CliError::Config("agents-overlay needs --trajectories".into())),
        _ => None,
    };
    let tumors = match (&args.style, &args.tumors) {
        (PlotStyle::AgentsOverlay, Some(p)) => Some(read_tumors(p)?),
        _ => None,
    };
    if args.stride == 0 {
        return Err(CliError::Config("--stride >= 1".into()));
    }
    let mut images = Vec::new();
    for path in &args.snapshots {
        let (t, rho) = read_snapshot(path)?;
        let mut canvas = Canvas::heatmap(&rho);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot").to_string();
        let name = match args.style {
            PlotStyle::Heatmap => format!("{stem}.png"),
            PlotStyle::QuiverOverlay => {
                let mx_path = sibling(path, "mx")?;
                let my_path = sibling(path, "my")?;
                let (_, mx) = read_snapshot(&mx_path)?;
                let (_, my) = read_snapshot(&my_path)?;
                same_grid(&rho, &mx, &mx_path)?;
                same_grid(&rho, &my, &my_path)?;
                let g = *rho.grid();
                let peak = mx.values().iter().zip(my.values()).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
                let reach = 0.9 * (args.stride as u32 * canvas.scale) as f64;
                if peak > 0.0 {
                    for j in (0..g.ny).step_by(args.stride) {
                        for i in (0..g.nx).step_by(args.stride) {
                            let from = canvas.to_px(g.x(i), g.y(j));
                            let (vx, vy) = (mx.at(i, j) / peak * reach, my.at(i, j) / peak * reach);
                            canvas.arrow(from, (from.0 + vx, from.1 - vy), Rgb([255, 255, 255]));
                        }
                    }
                }
                format!("{stem}_quiver.png")
            }
            PlotStyle::AgentsOverlay => {
                let traj = traj.as_ref().expect("read above");
                let agents = traj.at_time(t).ok_or_else(|| {
                    CliError::Data(format!("no agent positions at t = {t} (snapshot {})", path.display()))
                })?;
                if let Some((centres, radii)) = &tumors {
                    for (c, r) in centres.iter().zip(radii) {
                        canvas.circle(c[0], c[1], *r, Rgb([230, 40, 40]));
                    }
                }
                for p in agents {
                    canvas.circle(p[0], p[1], args.r_imm, Rgb([255, 255, 255]));
                }
                format!("{stem}_agents.png")
            }
        };
        images.push((args.out.join(name), canvas.img));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut written = Vec::new();
    for (path, img) in images {
        img.save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
