//! Subcommands of the `aim` binary.
//!
//! Each `run_*` function takes fully parsed arguments, writes its files and
//! returns whatever should go to stdout. The argument structs serialize to
//! the `config` field of the run manifest, which is how `aim rerun` replays
//! a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aim_core::{
    hv_gain, profile_activations, profile_sensitivity, relax_activation, relax_activation_by_name, relax_sensitivity,
    run_merge, Checkpoint, Error as CoreError, HvReport, MergeConfig, MergeDelta, MergeMethod, ScoreTable, Variant,
    DEFAULT_OMEGA,
};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use crate::manifest::{manifest_path, FileDigest, RunManifest, TOOL_VERSION};
use crate::profile_io::Profile;
use crate::{calib, profile_io, scores, spec_io, tmap, CliError, FormatError};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile a base model on a calibration set.
    Profile(ProfileArgs),
    /// Merge expert checkpoints into a delta and a merged model.
    Merge(MergeArgs),
    /// Relax a merged delta toward the base using a profile.
    Relax(RelaxArgs),
    /// Hypervolume gain of a merged model over a population of score rows.
    Eval(EvalArgs),
    /// Sweep omega or calibration size and emit a CSV table.
    Ablate(AblateArgs),
    /// Replay a run from its manifest.
    Rerun(RerunArgs),
}

pub fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::Profile(a) => run_profile(&a),
        Command::Merge(a) => run_merge_cmd(&a),
        Command::Relax(a) => run_relax(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Ablate(a) => run_ablate(&a),
        Command::Rerun(a) => run_rerun(&a),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long, default_value = "activation")]
    pub variant: Variant,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_profile(a: &ProfileArgs) -> Result<String, CliError> {
    let spec = spec_io::load(&a.spec)?;
    let base = tmap::load(&a.base)?;
    let calib = calib::load(&a.calib)?;
    let profile = match a.variant {
        Variant::Activation => Profile::Activation(profile_activations(&spec, &base, &calib)?),
        Variant::Sensitivity => Profile::Sensitivity(profile_sensitivity(&spec, &base, &calib)?),
    };
    profile_io::save(&profile, &a.out)?;
    write_manifest(
        "profile",
        a,
        None,
        &[("spec", &a.spec), ("base", &a.base), ("calib", &a.calib)],
        &[("profile", &a.out)],
    )?;
    Ok(String::new())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeArgs {
    #[arg(long)]
    pub method: Option<MergeMethod>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long = "expert", required = true, num_args = 1..)]
    pub experts: Vec<PathBuf>,
    /// One weight per expert; defaults to 1.0 each.
    #[arg(long = "lambda", num_args = 1.., allow_negative_numbers = true)]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub drop_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON merge config; explicit flags take precedence over its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_delta: PathBuf,
    #[arg(long)]
    pub out_model: Option<PathBuf>,
}

impl MergeArgs {
    pub fn resolve(&self) -> Result<MergeConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let bytes = crate::read_bytes(path)?;
                serde_json::from_slice::<MergeConfig>(&bytes).map_err(FormatError::from)?
            }
            None => MergeConfig::new(
                self.method
                    .ok_or_else(|| CliError::Usage("--method is required without --config".into()))?,
            ),
        };
        if let Some(m) = self.method {
            config.method = m;
        }
        if !self.lambdas.is_empty() {
            config.lambdas = self.lambdas.clone();
        }
        if let Some(d) = self.density {
            config.density = d;
        }
        if let Some(p) = self.drop_rate {
            config.drop_rate = p;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        config.lambdas = config.resolved_lambdas(self.experts.len())?;
        config.validate(self.experts.len())?;
        Ok(config)
    }
}

pub fn run_merge_cmd(a: &MergeArgs) -> Result<String, CliError> {
    let config = a.resolve()?;
    let base = tmap::load(&a.base)?;
    let experts = a.experts.iter().map(|p| tmap::load(p)).collect::<Result<Vec<_>, _>>()?;
    let (delta, model) = run_merge(&base, &experts, &config)?;
    tmap::save(&delta.into_checkpoint(), &a.out_delta)?;
    if let Some(out) = &a.out_model {
        tmap::save(&model, out)?;
    }

    let resolved = MergeArgs {
        method: Some(config.method),
        lambdas: config.lambdas.clone(),
        density: Some(config.density),
        drop_rate: Some(config.drop_rate),
        seed: Some(config.seed),
        config: None,
        ..a.clone()
    };
    let mut inputs = vec![("base", a.base.as_path())];
    inputs.extend(a.experts.iter().map(|p| ("expert", p.as_path())));
    let mut outputs = vec![("delta", a.out_delta.as_path())];
    outputs.extend(a.out_model.iter().map(|p| ("model", p.as_path())));
    write_manifest("merge", &resolved, Some(config.seed), &inputs, &outputs)?;
    Ok(String::new())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub delta: PathBuf,
    /// Activation or sensitivity profile; its kind selects the variant.
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = DEFAULT_OMEGA)]
    pub omega: f64,
    /// Model spec. Without it, profile layer `L` is matched to `L.weight`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_relax(a: &RelaxArgs) -> Result<String, CliError> {
    aim_core::aim::check_omega(a.omega)?;
    let base = tmap::load(&a.base)?;
    let delta = MergeDelta::from_checkpoint(tmap::load(&a.delta)?);
    let profile = profile_io::load(&a.profile)?;
    let spec = a.spec.as_deref().map(spec_io::load).transpose()?;
    let relaxed = relax(&base, &delta, &profile, spec.as_ref(), a.omega)?;
    tmap::save(&relaxed, &a.out)?;

    let mut inputs = vec![
        ("base", a.base.as_path()),
        ("delta", a.delta.as_path()),
        ("profile", a.profile.as_path()),
    ];
    inputs.extend(a.spec.iter().map(|p| ("spec", p.as_path())));
    write_manifest("relax", a, None, &inputs, &[("model", &a.out)])?;
    Ok(String::new())
}

fn relax(
    base: &Checkpoint,
    delta: &MergeDelta,
    profile: &Profile,
    spec: Option<&aim_core::ModelSpec>,
    omega: f64,
) -> Result<Checkpoint, CoreError> {
    if let Some(spec) = spec {
        let id = profile.model_spec_id();
        if !id.is_empty() && id != spec.fingerprint() {
            return Err(CoreError::ProfileMismatch(format!(
                "{} profile was built for spec {id}, not {}",
                profile.kind(),
                spec.fingerprint()
            )));
        }
    }
    match (profile, spec) {
        (Profile::Activation(p), Some(spec)) => relax_activation(base, delta, p, spec, omega),
        (Profile::Activation(p), None) => relax_activation_by_name(base, delta, p, omega),
        (Profile::Sensitivity(p), _) => {
            let unmatched = aim_core::aim::unmatched_profile_tensors(delta, p);
            if !unmatched.is_empty() {
                return Err(CoreError::ProfileMismatch(format!(
                    "profile tensors not in the delta: {}",
                    unmatched.join(", ")
                )));
            }
            relax_sensitivity(base, delta, p, omega)
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub population: Vec<String>,
    #[arg(long)]
    pub merged: String,
    /// Add the base model row to the population.
    #[arg(long)]
    pub include_base: bool,
    #[arg(long, default_value = "Base")]
    pub base_name: String,
    /// Also write the JSON result here, with a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub hv_base: f64,
    pub hv_with_merged: f64,
    pub hv_gain: f64,
}

impl From<HvReport> for EvalResult {
    fn from(r: HvReport) -> Self {
        Self {
            hv_base: r.hv_base,
            hv_with_merged: r.hv_with_merged,
            hv_gain: r.hv_gain,
        }
    }
}

/// Score rows of the population, optionally extended by the base row.
fn population_rows(
    table: &ScoreTable,
    names: &[String],
    include_base: bool,
    base_name: &str,
) -> Result<Vec<Vec<f64>>, CliError> {
    let mut resolved: Vec<&str> = Vec::new();
    let wanted = names
        .iter()
        .map(String::as_str)
        .chain(include_base.then_some(base_name));
    for name in wanted {
        let found = lookup(table, name)?;
        if !resolved.contains(&found) {
            resolved.push(found);
        }
    }
    Ok(resolved.iter().map(|n| table.get(n).unwrap().to_vec()).collect())
}

fn lookup<'a>(table: &'a ScoreTable, name: &str) -> Result<&'a str, CliError> {
    scores::resolve_name(table, name)
        .ok_or_else(|| CliError::Usage(format!("no model named `{name}` in the score table")))
}

pub fn evaluate(table: &ScoreTable, a: &EvalArgs) -> Result<EvalResult, CliError> {
    let population = population_rows(table, &a.population, a.include_base, &a.base_name)?;
    let merged = table.get(lookup(table, &a.merged)?).unwrap();
    Ok(hv_gain(&population, merged)?.into())
}

pub fn run_eval(a: &EvalArgs) -> Result<String, CliError> {
    let table = scores::load(&a.scores)?;
    let result = evaluate(&table, a)?;
    let mut text = serde_json::to_string_pretty(&result).expect("result serialization cannot fail");
    text.push('\n');
    if let Some(out) = &a.out {
        crate::write_bytes(out, text.as_bytes())?;
        write_manifest("eval", a, None, &[("scores", &a.scores)], &[("result", out)])?;
    }
    Ok(text)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[command(group(clap::ArgGroup::new("sweep").required(true).args(["omegas", "calib_sizes"])))]
pub struct AblateArgs {
    /// Omega values. Each token is substituted verbatim into `--merged-pattern`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub omegas: Vec<String>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub calib_sizes: Vec<usize>,

    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub delta: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Calibration set: mean entropy inputs for omega sweeps, the sample pool
    /// for calibration-size sweeps.
    #[arg(long)]
    pub calib: Option<PathBuf>,

    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub population: Vec<String>,
    /// Score-table row name per omega, with `{omega}` as the placeholder.
    #[arg(long)]
    pub merged_pattern: Option<String>,
    /// Score-table row of the unrelaxed merge.
    #[arg(long)]
    pub no_aim_name: Option<String>,
    #[arg(long)]
    pub include_base: bool,
    #[arg(long, default_value = "Base")]
    pub base_name: String,

    /// Write the CSV here, with a manifest, instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_ablate(a: &AblateArgs) -> Result<String, CliError> {
    let csv = match (a.omegas.is_empty(), a.calib_sizes.is_empty()) {
        (false, true) => ablate_omegas(a)?,
        (true, false) => ablate_calib_sizes(a)?,
        _ => return Err(CliError::Usage("pass exactly one of --omegas and --calib-sizes".into())),
    };
    match &a.out {
        None => Ok(csv),
        Some(out) => {
            crate::write_bytes(out, csv.as_bytes())?;
            let inputs: Vec<(&str, &Path)> = [
                ("base", &a.base),
                ("delta", &a.delta),
                ("profile", &a.profile),
                ("spec", &a.spec),
                ("calib", &a.calib),
                ("scores", &a.scores),
            ]
            .into_iter()
            .filter_map(|(role, p)| p.as_deref().map(|p| (role, p)))
            .collect();
            write_manifest("ablate", a, None, &inputs, &[("table", out)])?;
            Ok(String::new())
        }
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{mode} needs {flag}")))
}

fn ablate_omegas(a: &AblateArgs) -> Result<String, CliError> {
    let omegas = a
        .omegas
        .iter()
        .map(|t| {
            let w: f64 = t
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("omega `{t}` is not a number")))?;
            aim_core::aim::check_omega(w)?;
            Ok((t.trim(), w))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    struct ModelSide {
        base: Checkpoint,
        delta: MergeDelta,
        profile: Profile,
        spec: Option<aim_core::ModelSpec>,
        calib: Option<aim_core::CalibrationSet>,
    }
    let model = match (&a.base, &a.delta, &a.profile) {
        (None, None, None) => None,
        _ => {
            let mode = "an omega sweep over checkpoints";
            Some(ModelSide {
                base: tmap::load(require(&a.base, "--base", mode)?)?,
                delta: MergeDelta::from_checkpoint(tmap::load(require(&a.delta, "--delta", mode)?)?),
                profile: profile_io::load(require(&a.profile, "--profile", mode)?)?,
                spec: a.spec.as_deref().map(spec_io::load).transpose()?,
                calib: a.calib.as_deref().map(calib::load).transpose()?,
            })
        }
    };
    let table = a.scores.as_deref().map(scores::load).transpose()?;
    if model.is_none() && table.is_none() {
        return Err(CliError::Usage(
            "an omega sweep needs --base/--delta/--profile, --scores, or both".into(),
        ));
    }
    if let Some(m) = &model {
        if m.calib.is_some() && m.spec.is_none() {
            return Err(CliError::Usage("mean entropy needs --spec alongside --calib".into()));
        }
    }
    let population = match &table {
        Some(t) => {
            if a.merged_pattern.is_none() {
                return Err(CliError::Usage("--scores needs --merged-pattern".into()));
            }
            Some(population_rows(t, &a.population, a.include_base, &a.base_name)?)
        }
        None => None,
    };
    let gain_for = |name: &str| -> Result<f64, CliError> {
        let (t, pop) = (table.as_ref().unwrap(), population.as_ref().unwrap());
        Ok(hv_gain(pop, t.get(lookup(t, name)?).unwrap())?.hv_gain)
    };
    let model_metrics = |params: &Checkpoint, m: &ModelSide| -> Result<(String, String), CliError> {
        let l2 = delta_l2(params, &m.base)?;
        let entropy = match (&m.spec, &m.calib) {
            (Some(spec), Some(calib)) => fmt(model_entropy(spec, params, calib)?),
            _ => String::new(),
        };
        Ok((fmt(l2), entropy))
    };

    let variant = model.as_ref().map_or("", |m| m.profile.kind());
    let mut out = String::from("variant,omega,delta_l2,mean_entropy,hv_gain\n");

    let (l2, entropy) = match &model {
        Some(m) => model_metrics(&m.delta.apply_to(&m.base)?, m)?,
        None => (String::new(), String::new()),
    };
    let gain = match (&table, &a.no_aim_name) {
        (Some(_), Some(name)) => fmt(gain_for(name)?),
        _ => String::new(),
    };
    writeln!(out, "none,,{l2},{entropy},{gain}").unwrap();

    for (token, omega) in omegas {
        let (l2, entropy) = match &model {
            Some(m) => model_metrics(&relax(&m.base, &m.delta, &m.profile, m.spec.as_ref(), omega)?, m)?,
            None => (String::new(), String::new()),
        };
        let gain = match (&table, &a.merged_pattern) {
            (Some(_), Some(pattern)) => fmt(gain_for(&pattern.replace("{omega}", token))?),
            _ => String::new(),
        };
        writeln!(out, "{variant},{token},{l2},{entropy},{gain}").unwrap();
    }
    Ok(out)
}

/// L2 norm of `params - base` over all tensors.
fn delta_l2(params: &Checkpoint, base: &Checkpoint) -> Result<f64, CoreError> {
    let mut sum = 0.0;
    for (name, b) in &base.tensors {
        let d = params.require(name)?.sub(b)?;
        sum += d.data().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(sum.sqrt())
}

fn model_entropy(
    spec: &aim_core::ModelSpec,
    params: &Checkpoint,
    calib: &aim_core::CalibrationSet,
) -> Result<f64, CoreError> {
    aim_core::model::mean_entropy(spec, params, calib.samples())
}

fn ablate_calib_sizes(a: &AblateArgs) -> Result<String, CliError> {
    let mode = "a calibration-size sweep";
    let spec = spec_io::load(require(&a.spec, "--spec", mode)?)?;
    let base = tmap::load(require(&a.base, "--base", mode)?)?;
    let pool = calib::load(require(&a.calib, "--calib", mode)?)?;
    if let Some(&n) = a.calib_sizes.iter().find(|&&n| n == 0 || n > pool.len()) {
        return Err(CliError::Usage(format!(
            "calibration size {n} outside 1..={}",
            pool.len()
        )));
    }
    let reference = profile_activations(&spec, &base, &pool)?;
    let mut out = String::from("calib_size,min_cosine,mean_cosine\n");
    for &n in &a.calib_sizes {
        let profile = profile_activations(&spec, &base, &pool.truncated(n)?)?;
        let sims = profile.cosine_similarity(&reference)?;
        let min = sims.values().copied().fold(f64::INFINITY, f64::min);
        let mean = sims.values().sum::<f64>() / sims.len() as f64;
        writeln!(out, "{n},{},{}", fmt(min), fmt(mean)).unwrap();
    }
    Ok(out)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

pub fn run_rerun(a: &RerunArgs) -> Result<String, CliError> {
    let manifest = RunManifest::load(&a.manifest)?;
    let changed = manifest.changed_inputs()?;
    if !changed.is_empty() {
        return Err(CliError::Validation(format!(
            "inputs changed since the manifest was written: {}",
            changed.join(", ")
        )));
    }
    let config = manifest.config.clone();
    let parse = |e: serde_json::Error| CliError::Format(FormatError::Json(e));
    let command = match manifest.command.as_str() {
        "profile" => Command::Profile(serde_json::from_value(config).map_err(parse)?),
        "merge" => Command::Merge(serde_json::from_value(config).map_err(parse)?),
        "relax" => Command::Relax(serde_json::from_value(config).map_err(parse)?),
        "eval" => Command::Eval(serde_json::from_value(config).map_err(parse)?),
        "ablate" => Command::Ablate(serde_json::from_value(config).map_err(parse)?),
        other => return Err(CliError::Usage(format!("manifest names unknown command `{other}`"))),
    };
    run(command)
}

fn write_manifest<T: Serialize>(
    command: &str,
    args: &T,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
    outputs: &[(&str, &Path)],
) -> Result<(), CliError> {
    let digests = |files: &[(&str, &Path)]| -> Result<Vec<FileDigest>, FormatError> {
        files.iter().map(|(role, p)| FileDigest::of(role, p)).collect()
    };
    let manifest = RunManifest {
        command: command.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed,
        config: serde_json::to_value(args).expect("arguments serialize"),
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
    };
    crate::write_bytes(&manifest_path(outputs[0].1), manifest.to_json().as_bytes())?;
    Ok(())
}
