//! End-to-end runs: invariance check, highways, weights, simulation,
//! audits and emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{ExperimentConfig, WeightModel};
use crate::engine::{abelian_infimum, derive_seeds, for_each_seed, InfimumEstimate, SeedSample, Targets, WeightSource};
use crate::error::{NilError, Result};
use crate::group::{GroupModel, IVec, ModelKind};
use crate::highway::{Construction, Mode};
use crate::manifest::{sha256_hex, RunManifest};
use crate::norm::{check_conjugation_invariance, Invariance, Norm};
use crate::region::BallRegion;
use crate::shape::{
    abelian_field, ball_cloud, center_growth_census, competition_census, directional_profiles,
    fast_split_checks, lattice_directions, membership_audit, profile_targets, representative_vertices,
    symmetry_points, symmetry_report, AuditReport, DirectionalProfile, ShapeCloud,
};
use crate::stats;

/// Which stages a command runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plan {
    pub paths: bool,
    pub simulate: bool,
    pub profiles: bool,
    pub audits: bool,
    pub clouds: bool,
    pub weights: bool,
}

impl Plan {
    pub fn full() -> Self {
        Plan {
            paths: true,
            simulate: true,
            profiles: true,
            audits: true,
            clouds: true,
            weights: false,
        }
    }

    fn none() -> Self {
        Plan {
            paths: false,
            simulate: false,
            profiles: false,
            audits: false,
            clouds: false,
            weights: false,
        }
    }

    pub fn for_command(cmd: &str) -> Result<Self> {
        let mut p = Plan::none();
        match cmd {
            "run" => return Ok(Plan::full()),
            "paths" | "check" => p.paths = true,
            "weights" => p.weights = true,
            "simulate" => p.simulate = true,
            "profile" => {
                p.simulate = true;
                p.profiles = true;
            }
            "shape" => p.clouds = true,
            "audit" => p.audits = true,
            other => return Err(NilError::Config(format!("unknown command {other}"))),
        }
        Ok(p)
    }

    fn needs_region(&self) -> bool {
        self.simulate || self.profiles || self.audits || self.clouds || self.weights
    }
}

/// Summary of one emitted ball cloud.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CloudSummary {
    pub t: u32,
    pub cells: usize,
    pub hausdorff: Option<f64>,
    pub certified: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub construction: Construction,
    pub estimates: Vec<InfimumEstimate>,
    pub profiles: Vec<DirectionalProfile>,
    pub clouds: Vec<(CloudSummary, ShapeCloud)>,
    pub files: Vec<PathBuf>,
}

/// Builds the model and norm and refuses norms that are not invariant
/// under the finite quotient.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(GroupModel, Norm)> {
    cfg.validate()?;
    let model = GroupModel::from_name(&cfg.group)?;
    let norm = Norm::new(cfg.norm.clone(), model.dim())?;
    if let Invariance::Reject { q, v, phi_v, phi_qv } = check_conjugation_invariance(&norm, model.quotient())? {
        return Err(NilError::Refusal(format!(
            "Phi(v) = {phi_v} but Phi(v^phi(q)) = {phi_qv} for q = {q}, v = {v:?}"
        )));
    }
    Ok((model, norm))
}

pub fn construct(cfg: &ExperimentConfig, model: &GroupModel, norm: &Norm) -> Result<Construction> {
    let mode = cfg.mode.unwrap_or_else(|| Mode::default_for(model));
    Construction::build(model, norm, mode, cfg.n_max, cfg.direction_seed())
}

fn vec_field(z: &IVec, dim: usize) -> String {
    z[..dim].iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

fn real_field(v: &[f64]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

struct Emitter {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| NilError::io(dir, e))?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| NilError::io(&path, e))?;
        self.artifacts.insert(name.into(), sha256_hex(content.as_bytes()));
        self.files.push(path);
        Ok(())
    }
}

pub const PATHS_HEADER: &str =
    "level,direction,target,length,staircase_deviation,shell_size,chords,m_prime,cap,c0_prime";
pub const ESTIMATES_HEADER: &str = "target_z,lift,t_mean,t_se,seeds,boundary_fraction,stale";
pub const PROFILES_HEADER: &str = "direction,t,target,ratio,se,median_ratio,stale,boundary_fraction";
pub const WEIGHTS_HEADER: &str = "from,to,label,weight,winner_level";

fn paths_csv(cons: &Construction) -> String {
    let d = cons.model.dim();
    let mut s = format!("{PATHS_HEADER}\n");
    for r in &cons.reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.level,
            real_field(&r.direction),
            vec_field(&r.target, d),
            r.length,
            r.staircase_deviation,
            r.shell_size,
            r.chords,
            r.scan.as_ref().map_or(String::new(), |x| x.m_prime.to_string()),
            r.cap.map_or(String::new(), |c| c.to_string()),
            r.certificate.as_ref().map_or(String::new(), |c| c.c0_prime.to_string()),
        );
    }
    s
}

fn estimates_csv(model: &GroupModel, est: &[InfimumEstimate]) -> String {
    let mut s = format!("{ESTIMATES_HEADER}\n");
    for e in est {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            vec_field(&e.target, model.dim()),
            vec_field(e.lift.coords(), model.kind().coord_len()),
            e.mean,
            e.se,
            e.seeds,
            e.boundary_fraction,
            e.stale
        );
    }
    s
}

fn profiles_csv(dim: usize, profiles: &[DirectionalProfile]) -> String {
    let mut s = format!("{PROFILES_HEADER}\n");
    for p in profiles {
        for pt in &p.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                vec_field(&p.direction, dim),
                pt.t,
                vec_field(&pt.target, dim),
                pt.ratio,
                pt.se,
                pt.median_ratio,
                pt.stale,
                pt.boundary_fraction
            );
        }
    }
    s
}

struct SeedRow {
    sample: SeedSample,
    reps: Vec<f64>,
    membership: Option<AuditReport>,
    times: Option<Vec<f64>>,
    weights_csv: Option<String>,
}

/// Runs the stages of `plan` and writes the artifacts into `out`.
pub fn execute(cfg: &ExperimentConfig, plan: Plan, command: &str, out: &Path) -> Result<RunOutput> {
    let clock = Instant::now();
    let plan = Plan {
        weights: plan.weights || cfg.audits.emit_weights,
        ..plan
    };
    let (model, norm) = prepare(cfg)?;
    let cons = construct(cfg, &model, &norm)?;
    let dim = model.dim();
    let mut em = Emitter::new(out)?;
    let mut audits = Vec::new();
    if plan.paths {
        em.write("paths.csv", &paths_csv(&cons))?;
        let dump = serde_json::json!({ "constants": &cons.constants, "levels": &cons.reports });
        em.write("paths.json", &serde_json::to_string_pretty(&dump)?)?;
    }
    let mut estimates = Vec::new();
    let mut profiles = Vec::new();
    let mut clouds = Vec::new();

    if plan.needs_region() && cfg.search_radius > 0 {
        let region = BallRegion::grow(&model, cfg.search_radius, cfg.vertex_budget)?;
        let source = match cfg.weights {
            WeightModel::Field => WeightSource::Field {
                cons: &cons,
                n_max: cfg.n_max,
                marks: cfg.marks,
            },
            WeightModel::Uniform { value } => WeightSource::Uniform(value),
        };
        let seeds = derive_seeds(cfg.seed, cfg.seeds);
        let directions = cfg.directions.clone().unwrap_or_else(|| lattice_directions(dim));
        let mut points = Vec::new();
        if plan.simulate || plan.profiles {
            points = profile_targets(&directions, &cfg.schedule, cfg.scaling);
        }
        let symmetric = plan.audits && !model.quotient().is_trivial() && !cfg.audits.symmetry_targets.is_empty();
        if symmetric {
            for z in symmetry_points(&model, &cfg.audits.symmetry_targets) {
                if !points.contains(&z) {
                    points.push(z);
                }
            }
        }
        let targets = Targets::new(&model, &region, &points)?;
        let reps = if symmetric {
            representative_vertices(&model, &region)?
        } else {
            Vec::new()
        };
        let first = seeds[0];
        let tol = cfg.tolerances.membership;
        let rows: Vec<SeedRow> = for_each_seed(&region, &source, &seeds, |seed, rw, pt| {
            let membership = if plan.audits && seed == first {
                let mut rep = AuditReport::new("membership");
                membership_audit(
                    &model,
                    &norm,
                    cons.constants.slack,
                    &region,
                    rw,
                    pt,
                    cfg.audits.walks,
                    cfg.audits.max_walk,
                    seed,
                    tol,
                    &mut rep,
                )?;
                fast_split_checks(&cons, tol, &mut rep)?;
                Some(rep)
            } else {
                None
            };
            let weights_csv = (plan.weights && seed == first).then(|| {
                let mut s = format!("{WEIGHTS_HEADER}\n");
                let width = model.kind().coord_len();
                for (e, v, w, g) in region.edges() {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        vec_field(region.vertex(v).coords(), width),
                        vec_field(region.vertex(w).coords(), width),
                        model.generators()[g].label,
                        rw.weights[e],
                        rw.levels[e]
                    );
                }
                s
            });
            Ok(SeedRow {
                sample: SeedSample::collect(seed, &targets, pt),
                reps: reps.iter().map(|&v| pt.time(v)).collect(),
                membership,
                times: plan.clouds.then(|| pt.times.clone()),
                weights_csv,
            })
        })?;
        if let Some(s) = rows[0].weights_csv.as_ref() {
            em.write("weights.csv", s)?;
        }
        if let Some(rep) = rows[0].membership.clone() {
            audits.push(rep);
        }
        let samples: Vec<SeedSample> = rows.iter().map(|r| r.sample.clone()).collect();
        if !targets.is_empty() {
            estimates = (0..targets.len())
                .map(|i| abelian_infimum(&region, &targets, &samples, i))
                .collect::<Result<_>>()?;
        }
        if plan.simulate {
            em.write("estimates.csv", &estimates_csv(&model, &estimates))?;
        }
        if plan.profiles {
            profiles = directional_profiles(&norm, &directions, &cfg.schedule, cfg.scaling, &estimates)?;
            em.write("profiles.csv", &profiles_csv(dim, &profiles))?;
            if let Some(&t_max) = cfg.schedule.iter().max() {
                let [lo, hi] = cfg.tolerances.ratio_band;
                let mut rep = AuditReport::new("profile");
                for p in &profiles {
                    let r = p.at(t_max).expect("scheduled scale").median_ratio;
                    rep.push(
                        format!("median r_{t_max} along {:?}", &p.direction[..dim]),
                        r >= lo && r <= hi,
                        r,
                        hi,
                        None,
                    );
                }
                let monotone = profiles.iter().filter(|p| p.non_increasing).count();
                rep.push("directions with non-increasing |r_t - 1|", true, monotone as f64, profiles.len() as f64, None);
                audits.push(rep);
            }
        }
        if symmetric {
            let c_hat = (0..reps.len())
                .map(|j| stats::mean(&rows.iter().map(|r| r.reps[j]).collect::<Vec<_>>()))
                .fold(0.0, f64::max);
            audits.push(symmetry_report(&model, &cfg.audits.symmetry_targets, &estimates, c_hat)?);
        }
        if plan.audits && cfg.audits.competition_edges > 0 && matches!(source, WeightSource::Field { .. }) {
            let (census, rep) = competition_census(&cons, &region, &source, &seeds, cfg.audits.competition_edges)?;
            em.write("competition.json", &serde_json::to_string_pretty(&census)?)?;
            audits.push(rep);
        }
        if plan.clouds && !cfg.audits.cloud_scales.is_empty() {
            let mut mean = vec![0.0; region.len()];
            for r in &rows {
                for (m, x) in mean.iter_mut().zip(r.times.as_ref().expect("times kept")) {
                    *m += x;
                }
            }
            let n = rows.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            let bmin = stats::mean(&samples.iter().map(|s| s.boundary_min).collect::<Vec<_>>());
            let field = abelian_field(&model, &region, &mean);
            let mut rep = AuditReport::new("shape");
            for &t in &cfg.audits.cloud_scales {
                let cloud = ball_cloud(&field, dim, t as f64, bmin);
                let hausdorff = cloud.hausdorff_to_sphere(&norm, 1.0);
                if let Some(svg) = cloud.svg(&norm) {
                    em.write(&format!("shape_t{t}.svg"), &svg)?;
                }
                if let Some(h) = hausdorff {
                    rep.push(
                        format!("Hausdorff distance at t = {t}"),
                        h <= cfg.tolerances.hausdorff,
                        h,
                        cfg.tolerances.hausdorff,
                        None,
                    );
                }
                clouds.push((
                    CloudSummary {
                        t,
                        cells: cloud.cells.len(),
                        hausdorff,
                        certified: cloud.certified,
                    },
                    cloud,
                ));
            }
            let summaries: Vec<&CloudSummary> = clouds.iter().map(|c| &c.0).collect();
            em.write("clouds.json", &serde_json::to_string_pretty(&summaries)?)?;
            audits.push(rep);
        }
    }
    if plan.audits && model.kind() == ModelKind::Heisenberg && !cfg.audits.center_radii.is_empty() {
        let [lo, hi] = cfg.tolerances.center_slope;
        let (census, rep) = center_growth_census(&model, &cfg.audits.center_radii, cfg.vertex_budget, (lo, hi))?;
        em.write("center_census.json", &serde_json::to_string_pretty(&census)?)?;
        audits.push(rep);
    }
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: sha256_hex(cfg.canonical_json()?.as_bytes()),
        group: model.name().into(),
        mode: cons.constants.mode,
        constants: cons.constants.clone(),
        truncation_bound: cons.truncation_bound(),
        audits,
        artifacts: em.artifacts.clone(),
        content_hash: String::new(),
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    };
    manifest.seal()?;
    em.write("manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutput {
        manifest,
        construction: cons,
        estimates,
        profiles,
        clouds,
        files: em.files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AuditConfig, Tolerances, SCHEMA_VERSION};
    use crate::engine::MarkKind;
    use crate::norm::NormSpec;

    fn cfg(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            version: SCHEMA_VERSION,
            group: "zd:2".into(),
            norm: NormSpec::Lp { p: 1.0 },
            mode: None,
            weights: WeightModel::Uniform { value: 1.0 },
            marks: MarkKind::Block,
            seed: 3,
            direction_seed: None,
            n_max: 10,
            target_radius: 16,
            search_radius: 40,
            directions: None,
            scaling: Default::default(),
            schedule: vec![4, 8, 16],
            seeds: 2,
            vertex_budget: 1_000_000,
            output_dir: dir.to_path_buf(),
            tolerances: Tolerances::default(),
            audits: AuditConfig {
                walks: 100,
                max_walk: 30,
                cloud_scales: vec![16],
                ..AuditConfig::default()
            },
        }
    }

    #[test]
    fn oracle_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path());
        let out = execute(&c, Plan::full(), "run", dir.path()).unwrap();
        for p in &out.profiles {
            for pt in &p.points {
                assert_eq!(pt.ratio, 1.0);
            }
        }
        assert!(out.manifest.passed(), "{:?}", out.manifest.audits);
        let text = std::fs::read_to_string(dir.path().join("profiles.csv")).unwrap();
        let cols = PROFILES_HEADER.split(',').count();
        assert!(text.lines().all(|l| l.split(',').count() == cols));
        assert!(dir.path().join("shape_t16.svg").exists());
        RunManifest::load(&dir.path().join("manifest.json")).unwrap();
    }

    #[test]
    fn empty_run_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path());
        c.search_radius = 0;
        c.target_radius = 1;
        c.schedule = vec![1];
        let plan = Plan {
            paths: false,
            ..Plan::full()
        };
        let out = execute(&c, plan, "run", dir.path()).unwrap();
        assert_eq!(out.files.len(), 1);
        assert!(out.files[0].ends_with("manifest.json"));
    }

    #[test]
    fn refusal_for_non_invariant_norm() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path());
        c.group = "semidirect-zi".into();
        c.norm = NormSpec::Polytope {
            normals: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
        };
        let err = execute(&c, Plan::full(), "run", dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("q = "));
    }

    #[test]
    fn identical_runs_hash_identically() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let mut c = cfg(d1.path());
        c.weights = WeightModel::Field;
        c.seeds = 3;
        let a = execute(&c, Plan::full(), "run", d1.path()).unwrap();
        let b = execute(&c, Plan::full(), "run", d2.path()).unwrap();
        assert_eq!(a.manifest.content_hash, b.manifest.content_hash);
        assert_eq!(a.manifest.artifacts, b.manifest.artifacts);
    }
}
