use std::path::Path;

use clap::ValueEnum;
use serde::{de::DeserializeOwned, Serialize};
use serde_json::{Map, Value};

use sepp_core::studies::{
    run_bias_study, run_boundary_study, run_coverage_study, run_false_positive_study, run_misspecification_study,
    run_omitted_covariate_study, run_residual_calibration, BiasStudyConfig, BoundaryStudyConfig, CoverageStudyConfig,
    FalsePositiveStudyConfig, MisspecificationStudyConfig, OmittedCovariateStudyConfig, ResidualCalibrationConfig,
};

use crate::error::{CliError, Result};
use crate::formats::{display, read_json, write_bytes, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyName {
    /// GLM coefficient bias as self-excitation grows.
    Bias,
    /// Ring-covariate false positive and its removal by the joint fit.
    FalsePositive,
    /// Edge-effect bias with and without the interior correction.
    Boundary,
    /// Confidence-interval coverage of both covariance estimators.
    Coverage,
    /// Offspring-kernel misspecification.
    Misspecification,
    /// Omitted spatial covariate.
    OmittedCovariate,
    /// Voronoi residual reference distribution.
    ResidualCalibration,
}

impl StudyName {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyName::Bias => "bias",
            StudyName::FalsePositive => "false-positive",
            StudyName::Boundary => "boundary",
            StudyName::Coverage => "coverage",
            StudyName::Misspecification => "misspecification",
            StudyName::OmittedCovariate => "omitted-covariate",
            StudyName::ResidualCalibration => "residual-calibration",
        }
    }

    /// Field of the result holding the per-replicate rows.
    fn rows_key(self) -> &'static str {
        match self {
            StudyName::FalsePositive => "glm_rows",
            StudyName::ResidualCalibration => "windows",
            _ => "rows",
        }
    }
}

pub struct StudyArgs<'a> {
    pub name: StudyName,
    pub config: Option<&'a Path>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Default config overlaid with the user's JSON and the command-line overrides.
fn resolve<C: Default + Serialize + DeserializeOwned>(args: &StudyArgs<'_>) -> Result<C> {
    let mut v = serde_json::to_value(C::default()).expect("serializable config");
    if let Some(p) = args.config {
        let user: Value = read_json(p)?;
        if !user.is_object() {
            return Err(CliError::input(display(p), "study config must be a JSON object"));
        }
        merge(&mut v, user);
    }
    if let Some(r) = args.reps {
        v["reps"] = r.into();
        if args.name == StudyName::FalsePositive {
            v["joint_reps"] = r.into();
        }
    }
    if let Some(s) = args.seed {
        v["seed"] = s.into();
    }
    let name = args.config.map_or_else(|| "defaults".to_string(), display);
    serde_json::from_value(v).map_err(|e| CliError::input(name, e.to_string()))
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// CSV of row objects (nested fields joined with `.`), headed by a comment line.
pub fn rows_csv(header_comment: &str, rows: &[Value]) -> Result<Vec<u8>> {
    let flat: Vec<Vec<(String, String)>> = rows
        .iter()
        .map(|r| {
            let mut out = Vec::new();
            flatten("", r, &mut out);
            out
        })
        .collect();
    let mut columns: Vec<String> = Vec::new();
    for row in &flat {
        for (k, _) in row {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let mut buf = format!("# {header_comment}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| CliError::Usage(format!("CSV output: {e}"));
        w.write_record(&columns).map_err(io)?;
        for row in &flat {
            let lookup: Map<String, Value> = row.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
            w.write_record(columns.iter().map(|c| lookup.get(c).and_then(Value::as_str).unwrap_or("")))
                .map_err(io)?;
        }
        w.flush().map_err(|e| CliError::io("CSV output", e))?;
    }
    Ok(buf)
}

/// Runs the study and writes `<name>.json` and `<name>.csv` into `out`. Returns the
/// full result as JSON.
pub fn run(args: StudyArgs<'_>) -> Result<Value> {
    let result = match args.name {
        StudyName::Bias => to_value(run_bias_study(&resolve::<BiasStudyConfig>(&args)?)?),
        StudyName::FalsePositive => to_value(run_false_positive_study(&resolve::<FalsePositiveStudyConfig>(&args)?)?),
        StudyName::Boundary => to_value(run_boundary_study(&resolve::<BoundaryStudyConfig>(&args)?)?),
        StudyName::Coverage => to_value(run_coverage_study(&resolve::<CoverageStudyConfig>(&args)?)?),
        StudyName::Misspecification => {
            to_value(run_misspecification_study(&resolve::<MisspecificationStudyConfig>(&args)?)?)
        }
        StudyName::OmittedCovariate => {
            to_value(run_omitted_covariate_study(&resolve::<OmittedCovariateStudyConfig>(&args)?)?)
        }
        StudyName::ResidualCalibration => {
            to_value(run_residual_calibration(&resolve::<ResidualCalibrationConfig>(&args)?)?)
        }
    };
    let name = args.name.as_str();
    let seed = result["config"]["seed"].clone();
    let mut doc = Map::new();
    doc.insert("command".into(), "study".into());
    doc.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    doc.insert("study".into(), name.into());
    doc.insert("seed".into(), seed.clone());
    doc.insert("result".into(), result.clone());
    let doc = Value::Object(doc);
    write_json(&args.out.join(format!("{name}.json")), &doc)?;
    let rows = result[args.name.rows_key()].as_array().cloned().unwrap_or_default();
    let csv = rows_csv(&format!("sepp study {name} seed={seed}"), &rows)?;
    write_bytes(&args.out.join(format!("{name}.csv")), &csv)?;
    Ok(doc)
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("serializable study result")
}
