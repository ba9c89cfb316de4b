//! The pipeline phases, each runnable on its own from earlier artifacts.

use std::io::Write as _;
use std::path::PathBuf;

use log::info;
use mpf_core::autodiff::ParamBundle;
use mpf_core::envs::{rollout, write_trace_csv, ContextVector, Environment};
use mpf_core::io::fmt_float;
use mpf_core::networks::AgentParams;
use mpf_core::sac::{train_foundation, TrainOutcome};
use mpf_core::selection::{
    select_policy, selection_index, top_one_regret, write_regret_csv, write_selection_csv, CandidatePolicy,
};
use mpf_core::tpe::{deterministic_return, evaluate_latent, skill_generate, write_history_csv, GenerationConfig};
use rayon::prelude::*;

use crate::config::{derive_seed, Experiment, STREAM_GENERATE, STREAM_INDEX, STREAM_REGRET};
use crate::error::{CliError, IoContext};
use crate::manifest::{Manifest, PhaseFailure};
use crate::plot::{box_plot, line_plot, plot_csv, Series};
use crate::table::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Acquire,
    Select,
    Generate,
    Regret,
    Plot,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Acquire,
        Phase::Select,
        Phase::Generate,
        Phase::Regret,
        Phase::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Acquire => "acquire",
            Phase::Select => "select",
            Phase::Generate => "generate",
            Phase::Regret => "regret",
            Phase::Plot => "plot",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::UnknownPhase(s.to_string()))
    }

    fn prerequisite(self) -> Option<Phase> {
        match self {
            Phase::Acquire => None,
            Phase::Select => Some(Phase::Acquire),
            Phase::Generate | Phase::Regret => Some(Phase::Select),
            Phase::Plot => Some(Phase::Acquire),
        }
    }
}

pub const CURVES: &str = "curves.csv";
pub const SELECTION: &str = "selection.csv";
pub const REGRET: &str = "regret.csv";
pub const REGRET_RETURNS: &str = "regret_returns.csv";
pub const GENERATION_SUMMARY: &str = "generation/summary.csv";

pub fn candidate_file(k: usize) -> String {
    format!("candidates/candidate_{k:03}.bin")
}

/// Runs one phase and records its outputs in the manifest. On failure the
/// manifest names the phase and the error.
pub fn run_phase(exp: &Experiment, phase: Phase, jobs: usize, extra_csv: &[PathBuf]) -> Result<(), CliError> {
    std::fs::create_dir_all(&exp.out).at(&exp.out)?;
    let previous = Manifest::load(&exp.out)?.filter(|m| m.config_sha256 == exp.config_hash);
    let mut manifest = previous.clone().unwrap_or_else(|| Manifest {
        config_sha256: exp.config_hash.clone(),
        seed: exp.cfg.seed,
        candidate_seeds: exp.candidate_seeds(),
        ..Manifest::default()
    });
    info!("phase {} -> {}", phase.name(), exp.out.display());
    let outcome = check_prerequisite(exp, &manifest, phase)
        .and_then(|()| match phase {
            Phase::Acquire => acquire(exp, jobs),
            Phase::Select => select(exp),
            Phase::Generate => generate(exp),
            Phase::Regret => regret(exp),
            Phase::Plot => plot(exp, extra_csv),
        })
        .and_then(|files| manifest.record(&exp.out, phase.name(), &files, previous.as_ref()));
    match outcome {
        Ok(()) => {
            if manifest.error.as_ref().is_some_and(|e| e.phase == phase.name()) {
                manifest.error = None;
            }
            manifest.save(&exp.out)
        }
        Err(e) => {
            manifest.phases.remove(phase.name());
            manifest.error = Some(PhaseFailure {
                phase: phase.name().to_string(),
                message: e.to_string(),
            });
            manifest.save(&exp.out)?;
            Err(e)
        }
    }
}

/// Runs `from` and every later phase.
pub fn run_pipeline(exp: &Experiment, from: Phase, jobs: usize) -> Result<(), CliError> {
    for phase in Phase::ALL.into_iter().filter(|&p| p >= from) {
        run_phase(exp, phase, jobs, &[])?;
    }
    Ok(())
}

/// The earlier phase must be recorded in a manifest for the same config;
/// the error names that phase's key artifact.
fn check_prerequisite(exp: &Experiment, manifest: &Manifest, phase: Phase) -> Result<(), CliError> {
    let key = match phase.prerequisite() {
        Some(p) if !manifest.phases.contains_key(p.name()) => match p {
            Phase::Acquire => candidate_file(0),
            _ => SELECTION.to_string(),
        },
        _ => return Ok(()),
    };
    Err(CliError::Missing(exp.out.join(key)))
}

fn create_file(exp: &Experiment, rel: &str) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    let p = exp.out.join(rel);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(&p).at(&p)?))
}

fn fresh_dir(exp: &Experiment, rel: &str) -> Result<(), CliError> {
    let p = exp.out.join(rel);
    if p.exists() {
        std::fs::remove_dir_all(&p).at(&p)?;
    }
    std::fs::create_dir_all(&p).at(p)
}

fn require(exp: &Experiment, rel: &str) -> Result<PathBuf, CliError> {
    let p = exp.out.join(rel);
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Missing(p))
    }
}

fn acquire(exp: &Experiment, jobs: usize) -> Result<Vec<String>, CliError> {
    fresh_dir(exp, "candidates")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<TrainOutcome, CliError>> = pool.install(|| {
        (0..exp.cfg.candidates)
            .into_par_iter()
            .map(|k| {
                let mut tc = exp.cfg.train.clone();
                tc.seed = exp.candidate_seed(k);
                info!("training candidate {k} (seed {})", tc.seed);
                let out = train_foundation(exp.env(), &exp.spec, &tc)?;
                if let Some(last) = out.log.last() {
                    info!(
                        "candidate {k} done: return {:.3}, alpha {:.4}",
                        last.mean_return, last.alpha
                    );
                }
                Ok(out)
            })
            .collect()
    });

    let mut files = Vec::new();
    let mut curves = create_file(exp, CURVES)?;
    writeln!(
        curves,
        "candidate,epoch,env_steps,q_loss,pi_loss,alpha,mean_return,mean_entropy"
    )
    .at(exp.out.join(CURVES))?;
    let mut first_err = None;
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let o = match outcome {
            Ok(o) => o,
            Err(e) => {
                first_err.get_or_insert(e);
                continue;
            }
        };
        let name = candidate_file(k);
        o.params.to_bundle().save(exp.out.join(&name))?;
        files.push(name);
        for e in &o.log {
            writeln!(
                curves,
                "{k},{},{},{},{},{},{},{}",
                e.epoch,
                e.env_steps,
                fmt_float(e.q_loss),
                fmt_float(e.pi_loss),
                fmt_float(e.alpha),
                fmt_float(e.mean_return),
                fmt_float(e.mean_entropy)
            )
            .at(exp.out.join(CURVES))?;
        }
    }
    curves.flush().at(exp.out.join(CURVES))?;
    if let Some(e) = first_err {
        return Err(e);
    }
    files.push(CURVES.into());
    Ok(files)
}

fn load_candidate(exp: &Experiment, k: usize) -> Result<AgentParams, CliError> {
    let p = require(exp, &candidate_file(k))?;
    Ok(AgentParams::from_bundle(&ParamBundle::load(p)?)?)
}

/// Loads exactly K candidate files.
fn load_candidates(exp: &Experiment) -> Result<Vec<AgentParams>, CliError> {
    let dir = exp.out.join("candidates");
    if !dir.exists() {
        return Err(CliError::Missing(exp.out.join(candidate_file(0))));
    }
    let found = std::fs::read_dir(&dir)
        .at(&dir)?
        .filter_map(Result::ok)
        .filter(|e| {
            let n = e.file_name();
            let n = n.to_string_lossy();
            n.starts_with("candidate_") && n.ends_with(".bin")
        })
        .count();
    if found != exp.cfg.candidates {
        return Err(CliError::CandidateCount {
            dir,
            expected: exp.cfg.candidates,
            found,
        });
    }
    (0..exp.cfg.candidates).map(|k| load_candidate(exp, k)).collect()
}

fn select(exp: &Experiment) -> Result<Vec<String>, CliError> {
    let params = load_candidates(exp)?;
    let contexts = exp.context_set();
    // Common random numbers: every candidate sees the same rollout seeds.
    let seed = derive_seed(exp.cfg.seed, STREAM_INDEX, 0);
    let mut env = exp.env();
    let mut candidates = Vec::with_capacity(params.len());
    for (k, p) in params.into_iter().enumerate() {
        let (index, scores) = selection_index(&p, &mut env, &contexts, &exp.cfg.index, seed)?;
        info!("candidate {k}: l_k = {index:.4}");
        candidates.push(CandidatePolicy {
            seed: exp.candidate_seed(k),
            params: p,
            scores,
            index,
            curve: Vec::new(),
        });
    }
    let selected = select_policy(&candidates)?;
    info!("selected candidate {selected}");
    let mut w = create_file(exp, SELECTION)?;
    write_selection_csv(&mut w, &candidates, selected).at(exp.out.join(SELECTION))?;
    w.flush().at(exp.out.join(SELECTION))?;
    Ok(vec![SELECTION.into()])
}

/// Index of the row flagged `selected` in `selection.csv`.
pub fn selected_candidate(exp: &Experiment) -> Result<usize, CliError> {
    let t = Table::read(&exp.out.join(SELECTION))?;
    let flags = t.column_u64("selected")?;
    let ks = t.column_u64("candidate")?;
    let rows: Vec<usize> = (0..flags.len()).filter(|&i| flags[i] == 1).collect();
    match rows.as_slice() {
        [i] => Ok(ks[*i] as usize),
        _ => Err(CliError::Parse {
            path: t.path.clone(),
            line: 1,
            msg: format!("expected exactly one selected row, found {}", rows.len()),
        }),
    }
}

fn context_header(n: usize) -> String {
    (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>().join(",")
}

fn context_fields(c: &ContextVector) -> String {
    c.0.iter().map(|&v| fmt_float(v)).collect::<Vec<_>>().join(",")
}

fn generate(exp: &Experiment) -> Result<Vec<String>, CliError> {
    let k = selected_candidate(exp)?;
    let params = load_candidate(exp, k)?;
    fresh_dir(exp, "generation")?;
    let mut env = exp.env();
    let cfg = &exp.cfg.generation;
    let heldout = exp.heldout();
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for (i, c) in heldout.iter().enumerate() {
        let g = skill_generate(
            &params.policy,
            &mut env,
            c,
            cfg,
            derive_seed(exp.cfg.seed, STREAM_GENERATE, i as u64),
        )?;
        let hist = format!("generation/context_{i:03}.csv");
        let mut w = create_file(exp, &hist)?;
        write_history_csv(&mut w, &g).at(exp.out.join(&hist))?;
        w.flush().at(exp.out.join(&hist))?;
        files.push(hist);

        let z_star = [g.best.z];
        let j_z0 = evaluate_latent(&params.policy, &mut env, c, &[0.0], cfg, g.env_seed)?.j;
        let r_star = deterministic_return(&params.policy, &mut env, c, &z_star, g.env_seed)?;
        let r_z0 = deterministic_return(&params.policy, &mut env, c, &[0.0], g.env_seed)?;
        let z_enc = params.encoder.eval_mean(&c.0);
        let r_enc = deterministic_return(&params.policy, &mut env, c, &z_enc, g.env_seed)?;
        info!("context {i}: z* = {:.3}, return {r_star:.3} (z=0: {r_z0:.3})", g.best.z);

        let trace = rollout(&mut env, c, g.env_seed, |s| params.policy.mean_action(s, &z_star))?;
        let tname = format!("generation/trace_{i:03}.csv");
        let mut w = create_file(exp, &tname)?;
        write_trace_csv(&mut w, &trace).at(exp.out.join(&tname))?;
        w.flush().at(exp.out.join(&tname))?;
        files.push(tname);

        summary.push(format!(
            "{i},{},{},{},{},{},{},{}",
            context_fields(c),
            fmt_float(g.best.z),
            fmt_float(g.best.j),
            fmt_float(j_z0),
            fmt_float(r_star),
            fmt_float(r_z0),
            fmt_float(r_enc)
        ));
    }
    let mut w = create_file(exp, GENERATION_SUMMARY)?;
    let path = exp.out.join(GENERATION_SUMMARY);
    writeln!(
        w,
        "context,{},z_star,J_star,J_z0,return_star,return_z0,return_encoder",
        context_header(exp.spec.len())
    )
    .at(&path)?;
    for row in summary {
        writeln!(w, "{row}").at(&path)?;
    }
    w.flush().at(&path)?;
    files.push(GENERATION_SUMMARY.into());
    Ok(files)
}

/// Mean post-generation return over `contexts`; context `i` always uses the
/// same generation seed, whichever candidate is evaluated.
pub fn heldout_return<E: Environment + ?Sized>(
    params: &AgentParams,
    env: &mut E,
    contexts: &[ContextVector],
    cfg: &GenerationConfig,
    seed: u64,
) -> Result<f64, CliError> {
    let mut total = 0.0;
    for (i, c) in contexts.iter().enumerate() {
        let g = skill_generate(&params.policy, env, c, cfg, derive_seed(seed, STREAM_REGRET, i as u64))?;
        total += deterministic_return(&params.policy, env, c, &[g.best.z], g.env_seed)?;
    }
    Ok(total / contexts.len().max(1) as f64)
}

fn regret(exp: &Experiment) -> Result<Vec<String>, CliError> {
    let t = Table::read(&exp.out.join(SELECTION))?;
    let indices = t.column_f64("l_k")?;
    let seeds = t.column_u64("seed")?;
    let params = load_candidates(exp)?;
    if indices.len() != params.len() {
        return Err(CliError::Parse {
            path: t.path.clone(),
            line: 1,
            msg: format!("{} rows for {} candidates", indices.len(), params.len()),
        });
    }
    let mut contexts = exp.heldout();
    contexts.truncate(exp.cfg.regret.heldout_contexts.unwrap_or(contexts.len()).max(1));
    let gen = GenerationConfig {
        k_max: exp.cfg.regret.k_max.unwrap_or(exp.cfg.generation.k_max),
        ..exp.cfg.generation.clone()
    };
    let mut env = exp.env();
    let mut returns = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        let r = heldout_return(p, &mut env, &contexts, &gen, exp.cfg.seed)?;
        info!("candidate {k}: held-out return {r:.3}");
        returns.push(r);
    }
    let report = top_one_regret(
        &indices,
        &seeds,
        &returns,
        exp.cfg.regret.pools,
        exp.cfg.regret.pool_size,
        derive_seed(exp.cfg.seed, STREAM_REGRET, u64::MAX),
    )?;
    info!(
        "top-one regret: index {:.4}, random {:.4}",
        report.index_regret, report.random_regret
    );
    let mut w = create_file(exp, REGRET)?;
    write_regret_csv(&mut w, &report).at(exp.out.join(REGRET))?;
    w.flush().at(exp.out.join(REGRET))?;

    let path = exp.out.join(REGRET_RETURNS);
    let mut w = create_file(exp, REGRET_RETURNS)?;
    writeln!(w, "candidate,seed,l_k,heldout_return").at(&path)?;
    for k in 0..returns.len() {
        writeln!(
            w,
            "{k},{},{},{}",
            seeds[k],
            fmt_float(indices[k]),
            fmt_float(returns[k])
        )
        .at(&path)?;
    }
    w.flush().at(&path)?;
    Ok(vec![REGRET.into(), REGRET_RETURNS.into()])
}

fn write_svg(exp: &Experiment, rel: &str, svg: &str) -> Result<String, CliError> {
    let mut w = create_file(exp, rel)?;
    w.write_all(svg.as_bytes()).at(exp.out.join(rel))?;
    w.flush().at(exp.out.join(rel))?;
    Ok(rel.to_string())
}

fn curve_series(t: &Table, column: &str) -> Result<Vec<Series>, CliError> {
    let cand = t.column_u64("candidate")?;
    let epoch = t.column_f64("epoch")?;
    let ys = t.column_f64(column)?;
    let mut series: Vec<Series> = Vec::new();
    for i in 0..cand.len() {
        let name = format!("candidate {}", cand[i]);
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((epoch[i], ys[i])),
            None => series.push(Series {
                name,
                points: vec![(epoch[i], ys[i])],
            }),
        }
    }
    Ok(series)
}

fn plot(exp: &Experiment, extra_csv: &[PathBuf]) -> Result<Vec<String>, CliError> {
    let curves = Table::read(&require(exp, CURVES)?)?;
    fresh_dir(exp, "plots")?;
    let mut files = Vec::new();
    for (file, column, title) in [
        ("plots/returns.svg", "mean_return", "Training return"),
        ("plots/entropy.svg", "mean_entropy", "Policy entropy"),
        ("plots/alpha.svg", "alpha", "Temperature"),
    ] {
        let svg = line_plot(title, "epoch", column, &curve_series(&curves, column)?);
        files.push(write_svg(exp, file, &svg)?);
    }
    let summary = exp.out.join(GENERATION_SUMMARY);
    if summary.exists() {
        let t = Table::read(&summary)?;
        let groups = vec![
            ("z = 0".to_string(), t.column_f64("return_z0")?),
            ("z = g(c)".to_string(), t.column_f64("return_encoder")?),
            ("z = z*".to_string(), t.column_f64("return_star")?),
        ];
        let svg = box_plot("Held-out return", "return", &groups);
        files.push(write_svg(exp, "plots/generation.svg", &svg)?);
    }
    for csv in extra_csv {
        let svg = plot_csv(csv)?;
        let stem = csv
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "plot".into());
        files.push(write_svg(exp, &format!("plots/{stem}.svg"), &svg)?);
    }
    Ok(files)
}
