//! Runs one pipeline stage of a [`Scenario`] and writes its artifacts plus a
//! `manifest.json` with a SHA-256 digest per file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colmap::{planted_misalignment, register, MisalignmentSpec};
use crate::fieldgen::{generate, render_grid_with, sample_cloud, write_geojson, write_grid, Band, FieldSpec, RenderParams};
use crate::io::{read_layer, read_to_string, write_atomic, write_layer};
use crate::ipp::{run_mission, TruthMap};
use crate::mission::coordinated_mission;
use crate::posegraph::{error_csv, run_sliding, simulate_drive, write_g2o, DriveSpec, PoseGraph};
use crate::rownav::{component_centroids, detect_rows, line_angle_error, FeatureGrid, Pattern};
use crate::scenario::Scenario;
use crate::spectral::{parse_ply, ply_string, vegetation_mask, GridMap2D};
use crate::weedops::{metrics_csv, treatment_sweep};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Gen,
    Rows,
    Localize,
    Register,
    Plan,
    Mission,
    Treat,
    Report,
}

impl Subcommand {
    pub const ALL: [Subcommand; 8] = [
        Subcommand::Gen,
        Subcommand::Rows,
        Subcommand::Localize,
        Subcommand::Register,
        Subcommand::Plan,
        Subcommand::Mission,
        Subcommand::Treat,
        Subcommand::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Gen => "gen",
            Subcommand::Rows => "rows",
            Subcommand::Localize => "localize",
            Subcommand::Register => "register",
            Subcommand::Plan => "plan",
            Subcommand::Mission => "mission",
            Subcommand::Treat => "treat",
            Subcommand::Report => "report",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Subcommand::ALL.iter().map(|c| c.as_str()).collect();
            Error::Config(format!("unknown subcommand `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `Scenario::trials`.
    pub trials: Option<usize>,
    /// `rows`: read the RGB layers from this directory instead of rendering.
    pub grid: Option<PathBuf>,
    /// `register`: aerial and ground PLY clouds instead of the planted case.
    pub clouds: Option<(PathBuf, PathBuf)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the stage directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: Subcommand,
    pub scenario: String,
    pub scenario_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub trials: usize,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Gates that the stage computed but did not meet.
    pub failures: Vec<String>,
}

/// 0 on success, 1 on a domain error or missed gate, 2 on a configuration error.
pub fn exit_code(result: &Result<RunOutcome>) -> i32 {
    match result {
        Ok(o) if o.failures.is_empty() => 0,
        Ok(_) => 1,
        Err(e) if e.is_config() => 2,
        Err(_) => 1,
    }
}

/// `--out`, then `AGRISIM_OUT`, then the scenario's `output`, then `agrisim-out`.
pub fn resolve_out(flag: Option<&Path>, env: Option<&str>, scenario: &Scenario) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    PathBuf::from(scenario.output.as_deref().unwrap_or("agrisim-out"))
}

struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, PathBuf>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Self {
        Artifacts { dir, files: BTreeMap::new() }
    }

    fn record(&mut self, path: PathBuf) {
        let rel = path.strip_prefix(&self.dir).expect("artifact inside the stage directory");
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.files.insert(key, path);
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        write_atomic(&path, bytes)?;
        self.record(path.clone());
        Ok(path)
    }

    fn finish(self, cmd: Subcommand, sc: &Scenario, trials: usize, failures: Vec<String>) -> Result<RunOutcome> {
        let mut files = Vec::new();
        for (rel, path) in &self.files {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            files.push(ManifestEntry { path: rel.clone(), bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) });
        }
        let seeds = crate::scenario::Seeds::NAMES
            .iter()
            .map(|n| (n.to_string(), sc.seeds.get(n).expect("known seed")))
            .collect();
        let manifest = Manifest {
            subcommand: cmd,
            scenario: sc.name.clone(),
            scenario_sha256: sc.digest(),
            seeds,
            trials,
            files,
        };
        write_atomic(&self.dir.join("manifest.json"), manifest.to_json().as_bytes())?;
        Ok(RunOutcome { dir: self.dir, manifest, failures })
    }
}

fn trial_dir(trials: usize, k: usize) -> String {
    if trials == 1 {
        String::new()
    } else {
        format!("trial_{k:03}/")
    }
}

/// Runs `cmd` and writes its artifacts under `<out_root>/<cmd>/`.
pub fn run(cmd: Subcommand, sc: &Scenario, out_root: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    sc.validate()?;
    let trials = opts.trials.unwrap_or(sc.trials);
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut art = Artifacts::new(out_root.join(cmd.as_str()));
    let failures = match cmd {
        Subcommand::Gen => gen(sc, &mut art)?,
        Subcommand::Rows => rows(sc, opts, &mut art)?,
        Subcommand::Localize => localize(sc, trials, &mut art)?,
        Subcommand::Register => register_stage(sc, trials, opts, &mut art)?,
        Subcommand::Plan => plan(sc, trials, &mut art)?,
        Subcommand::Mission => mission(sc, &mut art)?,
        Subcommand::Treat => treat(sc, &mut art)?,
        Subcommand::Report => report(out_root, &mut art)?,
    };
    art.finish(cmd, sc, trials, failures)
}

fn field_spec(sc: &Scenario) -> FieldSpec {
    FieldSpec { seed: sc.seeds.field, ..sc.field.clone() }
}

fn gen(sc: &Scenario, art: &mut Artifacts) -> Result<Vec<String>> {
    let truth = generate(&field_spec(sc))?;
    let path = art.dir.join("field.geojson");
    write_geojson(&path, &truth)?;
    art.record(path);
    let bands = [Band::Rgb, Band::Height, Band::Nir, Band::RedEdge];
    let grid = render_grid_with(&truth, sc.gen.cell_size, &bands, &RenderParams { seed: sc.seeds.field, ..Default::default() })?;
    for p in write_grid(&art.dir.join("grid"), &grid)? {
        art.record(p);
    }
    if sc.gen.cloud_spacing > 0.0 {
        let [w, h] = truth.spec.extent;
        let cloud = sample_cloud(&truth, [0.0, 0.0, w, h], sc.gen.cloud_spacing, 0.05, sc.seeds.field)?;
        art.write("cloud.ply", ply_string(&cloud).as_bytes())?;
    }
    let summary = format!(
        "crops,weeds,rows,extent_x_m,extent_y_m\n{},{},{},{},{}\n",
        truth.crops().count(),
        truth.weeds().count(),
        truth.rows.len(),
        truth.spec.extent[0],
        truth.spec.extent[1]
    );
    art.write("summary.csv", summary.as_bytes())?;
    Ok(Vec::new())
}

fn load_rgb(dir: &Path) -> Result<GridMap2D> {
    let mut grid: Option<GridMap2D> = None;
    for band in ["r", "g", "b"] {
        let (h, values) = read_layer(dir, band)?;
        let g = match grid.take() {
            None => GridMap2D::new(h.origin, h.cell_size, h.width, h.height)?,
            Some(g) if g.width() == h.width && g.height() == h.height => g,
            Some(_) => return Err(Error::parse(dir.display().to_string(), "RGB layers differ in size")),
        };
        grid = Some(g.with_layer(band, values)?);
    }
    Ok(grid.expect("three bands read"))
}

pub const PATTERN_COLUMNS: [&str; 4] = ["theta_rad", "spacing_m", "offset_m", "score"];

fn rows(sc: &Scenario, opts: &RunOptions, art: &mut Artifacts) -> Result<Vec<String>> {
    let r = &sc.rows;
    let truth = generate(&field_spec(sc))?;
    let grid_dir = match &opts.grid {
        Some(d) => d.clone(),
        None => {
            let grid = render_grid_with(&truth, r.cell_size, &[Band::Rgb], &RenderParams { seed: sc.seeds.rows, ..Default::default() })?;
            let dir = art.dir.join("grid");
            for p in write_grid(&dir, &grid)? {
                art.record(p);
            }
            dir
        }
    };
    let grid = load_rgb(&grid_dir)?;
    let mask = vegetation_mask(&grid, r.exg_threshold)?;
    let centroids = component_centroids(&grid, &mask);
    let extent = [grid.width() as f64 * grid.cell_size(), grid.height() as f64 * grid.cell_size()];
    let size = [(extent[0] / r.feature_cell).ceil() as usize, (extent[1] / r.feature_cell).ceil() as usize];
    let features = FeatureGrid::from_points(&centroids, r.feature_cell, grid.origin(), size);
    let p = detect_rows(&features, &r.search, r.tolerance)?;
    art.write("pattern.csv", format!("{:.9},{:.9},{:.9},{}\n", p.theta, p.spacing, p.offset, p.score).as_bytes())?;

    let exg = grid.exg().expect("RGB layers present").to_vec();
    let peak = exg.iter().cloned().fold(1.0, f64::max);
    let half = 0.5 * grid.cell_size();
    let overlay: Vec<f64> = (0..grid.len())
        .map(|k| {
            let c = grid.cell_center(k % grid.width(), k / grid.width());
            if p.distance(c) <= half {
                peak
            } else {
                exg[k].max(0.0) * 0.5
            }
        })
        .collect();
    for path in write_layer(&art.dir, "overlay", grid.origin(), grid.cell_size(), grid.width(), grid.height(), &overlay)? {
        art.record(path);
    }

    let mut failures = Vec::new();
    if opts.grid.is_none() {
        let f = &truth.spec;
        let t = Pattern::canonical(f.row_orientation, f.row_spacing, f.row_offset, 0.0);
        let (dt, ds, dof) = (line_angle_error(p.theta, t.theta), p.spacing - t.spacing, p.offset_error(&t));
        art.write("errors.csv", format!("theta_err_rad,spacing_err_m,offset_err_m,features\n{dt:.9},{ds:.9},{dof:.9},{}\n", centroids.len()).as_bytes())?;
        let s = &r.search;
        if dt.abs() > s.theta_step + 1e-12 || ds.abs() > s.spacing_step + 1e-12 || dof.abs() > s.offset_step + 1e-12 {
            failures.push(format!("rows: pattern off by ({dt:.4} rad, {ds:.4} m, {dof:.4} m)"));
        }
    }
    Ok(failures)
}

fn localize(sc: &Scenario, trials: usize, art: &mut Artifacts) -> Result<Vec<String>> {
    let mut summary = String::from("trial,seed,gps_rmse_m,optimized_rmse_m,gps_altitude_rmse_m,optimized_altitude_rmse_m\n");
    for k in 0..trials {
        let seed = Scenario::trial_seed(sc.seeds.localize, k);
        let run = simulate_drive(&DriveSpec { seed, ..sc.localize.drive.clone() });
        let (traj, _) = run_sliding(&run, &sc.localize.window)?;
        let dir = trial_dir(trials, k);
        art.write(&format!("{dir}errors.csv"), error_csv(&run.errors(&traj)).as_bytes())?;
        let mut graph = PoseGraph::with_dem(run.dem.clone());
        for n in &traj {
            graph.add_node(n.clone());
        }
        for cs in &run.constraints {
            for c in cs {
                graph.add(c.clone());
            }
        }
        art.write(&format!("{dir}trajectory.g2o"), write_g2o(&graph).as_bytes())?;
        let _ = writeln!(
            summary,
            "{k},{seed},{:.6},{:.6},{:.6},{:.6}",
            run.gps_rmse(),
            run.rmse(&traj),
            run.gps_altitude_rmse(),
            run.altitude_rmse(&traj)
        );
    }
    art.write("summary.csv", summary.as_bytes())?;
    Ok(Vec::new())
}

fn register_stage(sc: &Scenario, trials: usize, opts: &RunOptions, art: &mut Artifacts) -> Result<Vec<String>> {
    let st = &sc.register;
    let gate = st.gate();
    let mut failures = Vec::new();
    let mut report = String::from("trial,seed,vegetation_rmse_m,alignment_rmse_m,coarse_rmse_m,matches,gate_m,passed\n");
    let trials = if opts.clouds.is_some() { 1 } else { trials };
    for k in 0..trials {
        let seed = Scenario::trial_seed(sc.seeds.register, k);
        let dir = trial_dir(trials, k);
        let (uav_text, ugv_text, case) = match &opts.clouds {
            Some((a, g)) => (read_to_string(a)?, read_to_string(g)?, None),
            None => {
                let case = planted_misalignment(&MisalignmentSpec { seed, ..st.case.clone() })?;
                let (a, g) = (ply_string(&case.uav), ply_string(&case.ugv));
                art.write(&format!("{dir}uav.ply"), a.as_bytes())?;
                art.write(&format!("{dir}ugv.ply"), g.as_bytes())?;
                (a, g, Some(case))
            }
        };
        let (uav, ugv) = (parse_ply(&uav_text)?, parse_ply(&ugv_text)?);
        let r = register(&uav, &ugv, &st.config)?;
        art.write(&format!("{dir}transform.txt"), r.transform.to_text().as_bytes())?;
        let veg = case.as_ref().map(|c| c.vegetation_rmse(&r.transform));
        let metric = veg.unwrap_or(r.alignment_rmse);
        let passed = metric < gate;
        if !passed {
            failures.push(format!("register trial {k}: rmse {metric:.4} m is not below the {gate} m gate"));
        }
        let _ = writeln!(
            report,
            "{k},{seed},{},{:.6},{:.6},{},{gate},{passed}",
            veg.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.alignment_rmse,
            r.coarse_rmse,
            r.matches
        );
    }
    art.write("report.csv", report.as_bytes())?;
    Ok(failures)
}

fn plan(sc: &Scenario, trials: usize, art: &mut Artifacts) -> Result<Vec<String>> {
    let st = &sc.plan;
    let prior = st.mission.prior()?;
    let mut finals: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for k in 0..trials {
        let seed = Scenario::trial_seed(sc.seeds.plan, k);
        let truth = TruthMap::hotspots(&prior, st.mission.hotspots, seed);
        let dir = trial_dir(trials, k);
        for &p in &st.planners {
            let r = run_mission(&truth, &st.mission, p, st.budget, seed)?;
            art.write(&format!("{dir}{}.csv", p.as_str()), r.csv().as_bytes())?;
            finals.entry(p.as_str()).or_default().push(r.final_trace());
        }
    }
    let mut summary = String::from("planner,budget_s,trials,final_trace_mean,final_trace_std\n");
    for p in &st.planners {
        let v = &finals[p.as_str()];
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let _ = writeln!(summary, "{},{},{},{mean:.6},{:.6}", p.as_str(), st.budget, v.len(), var.sqrt());
    }
    art.write("summary.csv", summary.as_bytes())?;
    Ok(Vec::new())
}

fn mission(sc: &Scenario, art: &mut Artifacts) -> Result<Vec<String>> {
    art.write("mission_script.json", sc.mission.to_json().as_bytes())?;
    let log = coordinated_mission(&sc.mission, sc.seeds.mission)?;
    art.write("events.csv", log.csv().as_bytes())?;
    let mut tr = String::from("time,task,from,to,priority\n");
    for t in &log.transitions {
        let _ = writeln!(tr, "{:.3},{},{},{},{}", t.time, t.task, t.from.as_str(), t.to.as_str(), t.priority);
    }
    art.write("transitions.csv", tr.as_bytes())?;
    let mut areas = String::from("area,cells,pressure,center_x,center_y,attempted,treated,crop_casualties,passes\n");
    for a in &log.areas {
        let c = a.cells.iter().fold([0.0, 0.0], |s, &cell| {
            let p = a.cell_center(cell);
            [s[0] + p[0], s[1] + p[1]]
        });
        let n = a.cells.len().max(1) as f64;
        let t = log.treatments.iter().find(|t| t.area == a.id);
        let _ = writeln!(
            areas,
            "{},{},{:.6},{:.3},{:.3},{},{},{},{}",
            a.id,
            a.cells.len(),
            a.pressure,
            c[0] / n,
            c[1] / n,
            t.map_or(0, |t| t.attempted),
            t.map_or(0, |t| t.treated),
            t.map_or(0, |t| t.crop_casualties),
            t.map_or(0, |t| t.passes)
        );
    }
    art.write("areas.csv", areas.as_bytes())?;
    let summary = format!(
        "state,end_time_s,areas,treated,max_localization_error_m,survey_trace\n{},{:.3},{},{},{:.6},{}\n",
        log.state.as_str(),
        log.end_time,
        log.areas.len(),
        log.treated.len(),
        log.max_localization_error,
        log.survey_trace.map(|t| format!("{t:.6}")).unwrap_or_default()
    );
    art.write("summary.csv", summary.as_bytes())?;
    let mut failures = Vec::new();
    if !log.succeeded() {
        failures.push(format!("mission ended {}", log.state.as_str()));
    } else if !log.all_treated() {
        failures.push("mission succeeded with untreated areas".into());
    }
    Ok(failures)
}

fn treat(sc: &Scenario, art: &mut Artifacts) -> Result<Vec<String>> {
    let mut t = sc.treat.clone();
    t.field.seed = sc.seeds.treat;
    t.detector.seed = sc.seeds.treat;
    t.treatment.seed = sc.seeds.treat;
    art.write("metrics.csv", metrics_csv(&treatment_sweep(&t)?).as_bytes())?;
    Ok(Vec::new())
}

struct ColumnStats {
    count: usize,
    sum: f64,
    min: f64,
    max: f64,
}

/// Aggregates every CSV listed in the other stages' manifests into
/// `summary.csv`: one row per numeric column.
fn report(out_root: &Path, art: &mut Artifacts) -> Result<Vec<String>> {
    let mut table = String::from("stage,file,column,count,mean,min,max\n");
    let mut stages = 0;
    for cmd in Subcommand::ALL.into_iter().filter(|&c| c != Subcommand::Report) {
        let dir = out_root.join(cmd.as_str());
        let path = dir.join("manifest.json");
        if !path.exists() {
            continue;
        }
        stages += 1;
        let manifest: Manifest = serde_json::from_str(&read_to_string(&path)?)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        for entry in manifest.files.iter().filter(|f| f.path.ends_with(".csv")) {
            let file = dir.join(&entry.path);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
                return Err(Error::Config(format!("{} does not match its manifest digest", file.display())));
            }
            let text = String::from_utf8_lossy(&bytes);
            let mut lines = text.lines();
            let header: Vec<String> = if entry.path.ends_with("pattern.csv") {
                PATTERN_COLUMNS.iter().map(|s| s.to_string()).collect()
            } else {
                lines.next().unwrap_or_default().split(',').map(str::to_string).collect()
            };
            let mut stats: Vec<Option<ColumnStats>> = header.iter().map(|_| None).collect();
            let mut numeric = vec![true; header.len()];
            for line in lines {
                for (i, field) in line.split(',').enumerate().take(header.len()) {
                    if field.is_empty() {
                        continue;
                    }
                    match field.parse::<f64>() {
                        Ok(v) if v.is_finite() => {
                            let s = stats[i].get_or_insert(ColumnStats { count: 0, sum: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY });
                            s.count += 1;
                            s.sum += v;
                            s.min = s.min.min(v);
                            s.max = s.max.max(v);
                        }
                        _ => numeric[i] = false,
                    }
                }
            }
            for ((name, s), ok) in header.iter().zip(&stats).zip(&numeric) {
                if let (Some(s), true) = (s, ok) {
                    let _ = writeln!(
                        table,
                        "{},{},{name},{},{:.6},{:.6},{:.6}",
                        cmd.as_str(),
                        entry.path,
                        s.count,
                        s.sum / s.count as f64,
                        s.min,
                        s.max
                    );
                }
            }
        }
    }
    if stages == 0 {
        return Err(Error::Config(format!("no stage manifests under {}", out_root.display())));
    }
    art.write("summary.csv", table.as_bytes())?;
    Ok(Vec::new())
}
