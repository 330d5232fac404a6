//! Per-kind parameter schemas and row producers.

use std::ops::Range;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::params::{opt, p, ParamDef, ParamType::*, Params};
use super::ExperimentKind;
use crate::broadcast::{run_broadcast, torus_sample};
use crate::config::{DeterministicPath, DomainSpec, SimConfig, Trajectory};
use crate::coverage::{build_target, CoverProblem, TargetKind, TargetSet};
use crate::detection::{check_detection_inputs, detection_trial};
use crate::error::{invalid, Result};
use crate::percolation::{
    calibration_ceiling, crossing_threshold, dense_reference, density_fraction, lambda_c_from_thresholds,
    perc_trial, require_supercritical, run_coupling, CouplingSpec, Tessellation,
};
use crate::rng::{tag, TrialKey};
use crate::sausage::{per_path_volumes, SausageOptions, SausageSpec, VolumeMethod};
use crate::stats::MeanVar;

pub fn schema(kind: ExperimentKind) -> &'static [ParamDef] {
    use ExperimentKind::*;
    match kind {
        Detect => const {
            &[
                p("d", Int, "2"),
                p("lambda", Float, "1"),
                p("r", Float, "1"),
                p("dt", Float, "0.01"),
                p("horizon", Float, "1"),
                p("side", Float, "1"),
                opt("buffer", Float),
                p("target", Text, "stationary"),
                opt("velocity", FloatList),
                p("trials", Int, "1000"),
            ]
        },
        Cover => const {
            &[
                p("d", Int, "2"),
                p("lambda", Float, "1"),
                p("r", Float, "1"),
                p("dt", Float, "0.05"),
                p("horizon", Float, "5"),
                p("set", Text, "point"),
                p("scale", Float, "1"),
                p("epsilon", Float, "0.1"),
                p("level", Int, "3"),
                p("trials", Int, "100"),
            ]
        },
        Perc => const {
            &[
                p("d", Int, "2"),
                p("lambda", Float, "3"),
                p("r", Float, "1"),
                p("side", Float, "30"),
                p("horizon", Int, "50"),
                p("target", Text, "stationary"),
                opt("lambda_c", Float),
                p("trials", Int, "100"),
            ]
        },
        Broadcast => const {
            &[
                p("d", Int, "2"),
                p("n", Float, "500"),
                p("lambda", Float, "3"),
                p("r", Float, "1"),
                p("max_steps", Int, "10000"),
                opt("lambda_c", Float),
                p("trials", Int, "100"),
            ]
        },
        Sausage => const {
            &[
                p("d", Int, "1"),
                p("r", Float, "0.5"),
                p("t", Float, "1"),
                p("dt", Float, "0.001"),
                p("drift", Text, "stationary"),
                opt("velocity", FloatList),
                p("method", Text, "auto"),
                p("samples", Int, "256"),
                opt("resolution", Float),
                p("paths", Int, "1000"),
            ]
        },
        Couple => const {
            &[
                p("d", Int, "2"),
                p("beta", Float, "2"),
                p("ell", Float, "4"),
                p("eps", Float, "0.5"),
                p("k_prime", Float, "40"),
                p("phi_lambda", Float, "5"),
                p("runs", Int, "200"),
            ]
        },
        Density => const {
            &[
                p("d", Int, "2"),
                p("lambda", Float, "4"),
                p("r", Float, "1"),
                p("cube_side", Float, "50"),
                p("ell", Float, "5"),
                p("xi", Float, "0.5"),
                p("t", Int, "100"),
                p("runs", Int, "100"),
            ]
        },
        Calibrate => const {
            &[
                p("d", Int, "2"),
                p("r", Float, "1"),
                p("side", Float, "30"),
                p("trials", Int, "200"),
            ]
        },
    }
}

fn trajectory(name: &str, velocity: Option<Vec<f64>>, d: usize) -> Result<Trajectory> {
    match name {
        "stationary" => Ok(Trajectory::Stationary),
        "brownian" => Ok(Trajectory::Brownian),
        "linear" => {
            let v = velocity.ok_or_else(|| invalid("linear motion needs 'velocity'"))?;
            if v.len() != d {
                return Err(invalid(format!("velocity must have {d} components")));
            }
            Ok(Trajectory::Deterministic(DeterministicPath::linear(v)))
        }
        other => Err(invalid(format!(
            "unknown motion '{other}' (expected stationary, brownian or linear)"
        ))),
    }
}

fn target_kind(name: &str, level: usize) -> Result<TargetKind> {
    Ok(match name {
        "point" => TargetKind::Point,
        "segment" => TargetKind::Segment,
        "cube" => TargetKind::Cube,
        "ball" => TargetKind::Ball,
        "cantor" => TargetKind::CantorIterate(level as u32),
        other => Err(invalid(format!(
            "unknown set '{other}' (expected point, segment, cube, ball or cantor)"
        )))?,
    })
}

fn positive_count(params: &Params, key: &str) -> Result<usize> {
    let n = params.usize(key);
    if n == 0 {
        return Err(invalid(format!("'{key}' must be at least 1")));
    }
    Ok(n)
}

/// A validated experiment, ready to produce rows.
pub enum Plan {
    Detect {
        config: SimConfig,
        target: Trajectory,
        trials: usize,
    },
    Cover {
        config: SimConfig,
        set: TargetSet,
        trials: usize,
    },
    Perc {
        config: SimConfig,
        side: f64,
        horizon: usize,
        target: Trajectory,
        trials: usize,
    },
    Broadcast {
        d: usize,
        n: f64,
        lambda: f64,
        r: f64,
        max_steps: usize,
        seed: u64,
        trials: usize,
    },
    Sausage {
        spec: SausageSpec,
        opts: SausageOptions,
        dt: f64,
        paths: usize,
    },
    Couple {
        spec: CouplingSpec,
        phi_lambda: f64,
        seed: u64,
        runs: usize,
    },
    Density {
        config: SimConfig,
        tess: Tessellation,
        t: usize,
        runs: usize,
    },
    Calibrate {
        d: usize,
        r: f64,
        side: f64,
        seed: u64,
        trials: usize,
    },
}

impl Plan {
    /// Checks every precondition without simulating.
    pub fn build(kind: ExperimentKind, params: &Params, seed: u64) -> Result<Plan> {
        use ExperimentKind as K;
        let d = params.usize("d");
        if !(1..=crate::config::MAX_DIM).contains(&d) {
            return Err(invalid(format!("d must be in 1..={}", crate::config::MAX_DIM)));
        }
        let plan = match kind {
            K::Detect => {
                let mut config = SimConfig::boxed(
                    d,
                    params.f64("lambda"),
                    params.f64("r"),
                    params.f64("dt"),
                    params.f64("horizon"),
                    params.f64("side"),
                    seed,
                );
                if let Some(b) = params.opt_f64("buffer") {
                    config.domain = DomainSpec::boxed(params.f64("side"), b);
                }
                let trials = positive_count(params, "trials")?;
                check_detection_inputs(&config, trials)?;
                let target = trajectory(params.text("target"), params.list("velocity"), d)?;
                target.grid_path(d, config.dt, config.steps(), &TrialKey::new(seed, 0))?;
                Plan::Detect { config, target, trials }
            }
            K::Cover => {
                let config = SimConfig::boxed(
                    d,
                    params.f64("lambda"),
                    params.f64("r"),
                    params.f64("dt"),
                    params.f64("horizon"),
                    1.0,
                    seed,
                );
                let kind = target_kind(params.text("set"), params.usize("level"))?;
                let eps = params.f64("epsilon");
                if !(eps > 0.0 && eps < config.r) {
                    return Err(invalid("epsilon must lie in (0, r)"));
                }
                let set = build_target(kind, d, params.f64("scale"), eps)?;
                CoverProblem::new(&set, &config)?;
                Plan::Cover {
                    config,
                    set,
                    trials: positive_count(params, "trials")?,
                }
            }
            K::Perc => {
                let horizon = params.usize("horizon");
                let config = SimConfig::boxed(
                    d,
                    params.f64("lambda"),
                    params.f64("r"),
                    1.0,
                    horizon as f64,
                    params.f64("side"),
                    seed,
                );
                config.validate()?;
                if let Some(lc) = params.opt_f64("lambda_c") {
                    require_supercritical(config.lambda, lc)?;
                }
                let target = trajectory(params.text("target"), None, d)?;
                Plan::Perc {
                    side: params.f64("side"),
                    horizon,
                    target,
                    trials: positive_count(params, "trials")?,
                    config,
                }
            }
            K::Broadcast => {
                let (n, lambda, r) = (params.f64("n"), params.f64("lambda"), params.f64("r"));
                if !(n > 0.0 && lambda > 0.0 && r > 0.0) {
                    return Err(invalid("n, lambda and r must be positive"));
                }
                if let Some(lc) = params.opt_f64("lambda_c") {
                    require_supercritical(lambda, lc)?;
                }
                Plan::Broadcast {
                    d,
                    n,
                    lambda,
                    r,
                    max_steps: params.usize("max_steps"),
                    seed,
                    trials: positive_count(params, "trials")?,
                }
            }
            K::Sausage => {
                let drift = trajectory(params.text("drift"), params.list("velocity"), d)?;
                let spec = SausageSpec::new(d, params.f64("r"), params.f64("t"), seed).with_drift(drift);
                let method = match params.text("method") {
                    "auto" => None,
                    "exact" => Some(VolumeMethod::ExactMinMax1D),
                    "hitormiss" => Some(VolumeMethod::HitOrMiss),
                    "voxel" => Some(VolumeMethod::Voxel),
                    other => return Err(invalid(format!("unknown method '{other}'"))),
                };
                let opts = SausageOptions {
                    method,
                    samples_per_path: params.usize("samples"),
                    voxel_resolution: params.opt_f64("resolution"),
                    ..SausageOptions::default()
                };
                let dt = params.f64("dt");
                if !(dt > 0.0) {
                    return Err(invalid("dt must be positive"));
                }
                // one path validates the spec, method and caps
                per_path_volumes(&spec, 1, dt, &opts)?;
                Plan::Sausage {
                    spec,
                    opts,
                    dt,
                    paths: positive_count(params, "paths")?,
                }
            }
            K::Couple => {
                let spec = CouplingSpec::standard(
                    d,
                    params.f64("beta"),
                    params.f64("ell"),
                    params.f64("eps"),
                    params.f64("k_prime"),
                );
                spec.validate()?;
                let phi_lambda = params.f64("phi_lambda");
                if !(phi_lambda > 0.0) {
                    return Err(invalid("phi_lambda must be positive"));
                }
                Plan::Couple {
                    spec,
                    phi_lambda,
                    seed,
                    runs: positive_count(params, "runs")?,
                }
            }
            K::Density => {
                let t = params.usize("t");
                let config = SimConfig::boxed(
                    d,
                    params.f64("lambda"),
                    params.f64("r"),
                    1.0,
                    t as f64,
                    params.f64("cube_side"),
                    seed,
                );
                config.validate()?;
                if t == 0 {
                    return Err(invalid("t must be at least 1"));
                }
                let tess = Tessellation::new(
                    d,
                    params.f64("cube_side"),
                    params.f64("ell"),
                    config.lambda,
                    params.f64("xi"),
                )?;
                Plan::Density {
                    config,
                    tess,
                    t,
                    runs: positive_count(params, "runs")?,
                }
            }
            K::Calibrate => {
                let (r, side) = (params.f64("r"), params.f64("side"));
                if !(2..=3).contains(&d) || !(r > 0.0 && side > 2.0 * r) {
                    return Err(invalid("calibration needs d in {2, 3}, r > 0 and side > 2r"));
                }
                let trials = params.usize("trials");
                if trials < 2 {
                    return Err(invalid("calibration needs at least two trials"));
                }
                Plan::Calibrate {
                    d,
                    r,
                    side,
                    seed,
                    trials,
                }
            }
        };
        Ok(plan)
    }

    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            Plan::Detect { .. } => &["trial", "detected", "detected_at", "nodes", "left_window"],
            Plan::Cover { .. } => &["trial", "covered", "cover_time", "net_points"],
            Plan::Perc { .. } => &["trial", "percolated", "perc_at", "crossing_count"],
            Plan::Broadcast { .. } => &[
                "trial",
                "nodes",
                "finished",
                "t_broad",
                "resamples",
                "giant_pairs",
                "giant_overlaps",
            ],
            Plan::Sausage { .. } => &["d", "r", "t", "dt", "method", "paths", "volume_mean", "volume_se"],
            Plan::Couple { .. } => &[
                "run",
                "success",
                "subset_exact",
                "xi_count",
                "xi0_count",
                "phi0_count",
                "paired",
                "rejected",
                "overfull_cells",
            ],
            Plan::Density { .. } => &["run", "fraction", "dense_steps", "steps", "min_occupancy"],
            Plan::Calibrate { .. } => &["trial", "threshold"],
        }
    }

    /// Independent work units (trials, runs or paths batches).
    pub fn units(&self) -> usize {
        match self {
            Plan::Detect { trials, .. }
            | Plan::Cover { trials, .. }
            | Plan::Perc { trials, .. }
            | Plan::Broadcast { trials, .. }
            | Plan::Calibrate { trials, .. } => *trials,
            Plan::Couple { runs, .. } | Plan::Density { runs, .. } => *runs,
            Plan::Sausage { .. } => 1,
        }
    }

    /// Rows for units `range`, in unit order.
    pub fn rows(&self, range: Range<u64>) -> Result<Vec<Vec<String>>> {
        range.into_par_iter().map(|i| self.row(i)).collect()
    }

    fn row(&self, i: u64) -> Result<Vec<String>> {
        Ok(match self {
            Plan::Detect { config, target, .. } => {
                let t = detection_trial(config, target, i)?;
                vec![
                    cell(i),
                    cell(!t.censored),
                    opt_cell(t.detected_at),
                    cell(t.nodes),
                    cell(t.left_window),
                ]
            }
            Plan::Cover { config, set, .. } => {
                let step = CoverProblem::new(set, config)?.trial(i, 1.0)?;
                vec![
                    cell(i),
                    cell(step.is_some()),
                    opt_cell(step.map(|k| k as f64 * config.dt)),
                    cell(set.len()),
                ]
            }
            Plan::Perc {
                config,
                side,
                horizon,
                target,
                ..
            } => {
                let t = perc_trial(config, *side, *horizon, target, TrialKey::new(config.seed, i), 1.0)?;
                vec![cell(i), cell(!t.censored), opt_cell(t.perc_at), cell(t.crossing_count)]
            }
            Plan::Broadcast {
                d,
                n,
                lambda,
                r,
                max_steps,
                seed,
                ..
            } => {
                let (ens, resamples) = torus_sample(*n, *lambda, *d, &TrialKey::new(*seed, i))?;
                let (t, _) = run_broadcast(ens, *r, *max_steps)?;
                vec![
                    cell(i),
                    cell(t.nodes),
                    cell(t.t_broad.is_some()),
                    opt_cell(t.t_broad),
                    cell(resamples),
                    cell(t.giant_pairs),
                    cell(t.giant_overlaps),
                ]
            }
            Plan::Sausage { spec, opts, dt, paths } => {
                let vols = per_path_volumes(spec, *paths, *dt, opts)?;
                let mv: MeanVar = vols.into_iter().collect();
                let method = opts.method.unwrap_or_else(|| spec.default_method());
                vec![
                    cell(spec.d),
                    cell(spec.r),
                    cell(spec.t),
                    cell(*dt),
                    format!("{method:?}"),
                    cell(*paths),
                    cell(mv.mean),
                    cell(mv.std_error()),
                ]
            }
            Plan::Couple {
                spec, phi_lambda, seed, ..
            } => {
                let key = TrialKey::new(*seed, i);
                let phi = dense_reference(spec, *phi_lambda, &key.child(tag::POINTS, 0))?;
                let out = run_coupling(spec, &phi, &key)?;
                let g = &out.diagnostics;
                vec![
                    cell(i),
                    cell(out.success),
                    cell(g.subset_exact),
                    cell(out.xi.len()),
                    cell(g.xi0_count),
                    cell(g.phi0_count),
                    cell(g.paired),
                    cell(g.rejected),
                    cell(g.overfull_cells),
                ]
            }
            Plan::Density { config, tess, t, .. } => {
                let rep = density_fraction(config, tess, *t, &TrialKey::new(config.seed, i))?;
                vec![
                    cell(i),
                    cell(rep.fraction),
                    cell(rep.dense_steps),
                    cell(rep.steps),
                    cell(rep.min_occupancy.iter().copied().min().unwrap_or(0)),
                ]
            }
            Plan::Calibrate { d, r, side, seed, .. } => {
                let top = calibration_ceiling(*d, *r);
                vec![cell(i), cell(crossing_threshold(*d, *r, *side, top, &TrialKey::new(*seed, i))?)]
            }
        })
    }

    /// Kind-specific summary for the metadata file.
    pub fn summary(&self, rows: &[Vec<String>]) -> Value {
        match self {
            Plan::Calibrate { d, r, side, seed, .. } => {
                let th: Vec<f64> = rows.iter().filter_map(|row| row[1].parse().ok()).collect();
                if th.is_empty() {
                    return Value::Null;
                }
                let est = lambda_c_from_thresholds(*d, *r, *side, th, *seed);
                json!({
                    "lambda_c": est.estimate,
                    "ci_low": est.ci_low,
                    "ci_high": est.ci_high,
                    "std_error": est.std_error,
                })
            }
            Plan::Couple { spec, .. } => json!({
                "K": spec.k,
                "K_prime": spec.k_prime,
                "Delta": spec.delta,
                "rho": spec.rho,
                "psi": 1.0 - spec.pair_mass(),
            }),
            _ => Value::Null,
        }
    }
}

pub(crate) fn cell<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

pub(crate) fn opt_cell<T: std::fmt::Display>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
