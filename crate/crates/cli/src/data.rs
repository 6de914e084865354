//! CSV input and output in the joint potential-outcome and IV layouts.
//!
//! Joint potential outcomes: `x_*`, `d`, `y`, and optionally `m_{d}_{level}`
//! (`P(Y = level | D = d, X)`) with `e_{d}` (`P(D = d | X)`).
//!
//! Instrumental variables: `x_*`, `z`, `d`, `y`, and optionally
//! `m_{z}_{d}_{level}`, `e_{z}` (`P(Z = z | X)`) and `pzd_{z}_{d}`
//! (`P(D = d | Z = z, X)`).

use std::collections::BTreeSet;
use std::path::Path;

use clp_bounds::problems::{NuisanceValues, Observation, Setting, CLIP_FLOOR};

use crate::error::CliError;

/// Tolerance on the row sums of probability columns.
pub const PROBABILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    JointPo { arms: usize },
    Iv,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub setting: Setting,
    pub covariates: Vec<String>,
    pub observations: Vec<Observation>,
    /// Plug-in nuisances, validated and clipped, when the file carries them.
    pub nuisances: Option<Vec<NuisanceValues>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.observations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Column {
    Covariate,
    D,
    Y,
    Z,
    /// Outcome-model column `(arm, level)`; for IV the arm is `2 z + d`.
    Outcome(usize, usize),
    Propensity(usize),
    TreatmentGivenInstrument(usize, usize),
}

fn parse_indices(rest: &str) -> Option<Vec<usize>> {
    rest.split('_').map(|s| s.parse().ok()).collect()
}

fn classify(name: &str, layout: Layout) -> Result<Column, CliError> {
    let unknown = || CliError::Validation(format!("unknown column `{name}`"));
    if name.starts_with("x_") && name.len() > 2 {
        return Ok(Column::Covariate);
    }
    match (name, layout) {
        ("d", _) => return Ok(Column::D),
        ("y", _) => return Ok(Column::Y),
        ("z", Layout::Iv) => return Ok(Column::Z),
        _ => {}
    }
    let (prefix, rest) = name.split_once('_').ok_or_else(unknown)?;
    let idx = parse_indices(rest).ok_or_else(unknown)?;
    match (prefix, layout, idx.as_slice()) {
        ("m", Layout::JointPo { .. }, &[d, level]) => Ok(Column::Outcome(d, level)),
        ("m", Layout::Iv, &[z, d, level]) if z < 2 && d < 2 => Ok(Column::Outcome(2 * z + d, level)),
        ("e", _, &[k]) => Ok(Column::Propensity(k)),
        ("pzd", Layout::Iv, &[z, d]) => Ok(Column::TreatmentGivenInstrument(z, d)),
        _ => Err(unknown()),
    }
}

fn expected_nuisance_columns(layout: Layout, levels: usize) -> BTreeSet<Column> {
    let mut out = BTreeSet::new();
    let (arms, props) = match layout {
        Layout::JointPo { arms } => (arms, arms),
        Layout::Iv => (4, 2),
    };
    for arm in 0..arms {
        for level in 0..levels {
            out.insert(Column::Outcome(arm, level));
        }
    }
    for k in 0..props {
        out.insert(Column::Propensity(k));
    }
    if layout == Layout::Iv {
        for z in 0..2 {
            for d in 0..2 {
                out.insert(Column::TreatmentGivenInstrument(z, d));
            }
        }
    }
    out
}

fn column_name(col: &Column) -> String {
    match *col {
        Column::Outcome(arm, level) => format!("m_{arm}_{level}"),
        Column::Propensity(k) => format!("e_{k}"),
        Column::TreatmentGivenInstrument(z, d) => format!("pzd_{z}_{d}"),
        _ => String::new(),
    }
}

/// Reads and validates a dataset. `levels` overrides the number of outcome levels
/// otherwise taken from the nuisance columns or the largest observed `y`.
pub fn read_dataset(path: &Path, layout: Layout, levels: Option<usize>) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = reader.headers().map_err(|e| CliError::io(path, e))?.clone();

    let mut columns = Vec::with_capacity(headers.len());
    let mut seen = BTreeSet::new();
    for name in headers.iter() {
        if !seen.insert(name.to_string()) {
            return Err(CliError::Validation(format!("duplicate column `{name}`")));
        }
        columns.push(classify(name, layout)?);
    }
    let covariates: Vec<String> = headers
        .iter()
        .zip(&columns)
        .filter(|(_, c)| **c == Column::Covariate)
        .map(|(h, _)| h.to_string())
        .collect();
    for required in [Column::D, Column::Y] {
        if !columns.contains(&required) {
            return Err(CliError::Validation(format!("missing column `{}`", if required == Column::D { "d" } else { "y" })));
        }
    }
    if layout == Layout::Iv && !columns.contains(&Column::Z) {
        return Err(CliError::Validation("the iv setting requires a `z` column".into()));
    }
    if covariates.is_empty() {
        return Err(CliError::Validation("no covariate columns (`x_*`)".into()));
    }

    let present: BTreeSet<Column> = columns
        .iter()
        .filter(|c| matches!(c, Column::Outcome(..) | Column::Propensity(_) | Column::TreatmentGivenInstrument(..)))
        .cloned()
        .collect();
    let levels_from_columns = present
        .iter()
        .filter_map(|c| match c {
            Column::Outcome(_, level) => Some(level + 1),
            _ => None,
        })
        .max();
    if let (Some(a), Some(b)) = (levels, levels_from_columns) {
        if a != b {
            return Err(CliError::Validation(format!(
                "--levels {a} disagrees with the {b} levels of the outcome-model columns"
            )));
        }
    }

    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CliError::io(path, &e),
            _ => CliError::Validation(format!("row {row}: {e}")),
        })?;
        let mut values = Vec::with_capacity(record.len());
        for (field, name) in record.iter().zip(headers.iter()) {
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Validation(format!("row {row}: column `{name}`: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(CliError::Validation(format!("row {row}: column `{name}` is not finite")));
            }
            values.push(v);
        }
        raw.push(values);
    }
    if raw.is_empty() {
        return Err(CliError::Validation("the input has no data rows".into()));
    }

    let index = |row: usize, v: f64, name: &str| -> Result<usize, CliError> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CliError::Validation(format!(
                "row {row}: column `{name}` must be a non-negative integer (got {v})"
            )))
        }
    };
    let mut observations = Vec::with_capacity(raw.len());
    for (i, values) in raw.iter().enumerate() {
        let row = i + 1;
        let mut obs = Observation {
            x: Vec::with_capacity(covariates.len()),
            d: 0,
            y: 0,
            z: None,
        };
        for ((col, &v), name) in columns.iter().zip(values).zip(headers.iter()) {
            match col {
                Column::Covariate => obs.x.push(v),
                Column::D => obs.d = index(row, v, name)?,
                Column::Y => obs.y = index(row, v, name)?,
                Column::Z => obs.z = Some(index(row, v, name)?),
                _ => {}
            }
        }
        observations.push(obs);
    }

    let max_y = observations.iter().map(|o| o.y).max().unwrap_or(0);
    let levels = levels.or(levels_from_columns).unwrap_or((max_y + 1).max(2));
    if levels < 2 {
        return Err(CliError::Validation(format!("need at least two outcome levels (got {levels})")));
    }
    let setting = match layout {
        Layout::JointPo { arms } => {
            if arms < 2 {
                return Err(CliError::Validation(format!("need at least two arms (got {arms})")));
            }
            Setting::JointPo { m: arms, l: levels }
        }
        Layout::Iv => Setting::Iv { l: levels },
    };
    let arms = match layout {
        Layout::JointPo { arms } => arms,
        Layout::Iv => 2,
    };
    for (i, obs) in observations.iter().enumerate() {
        let row = i + 1;
        if obs.y >= levels {
            return Err(CliError::Validation(format!("row {row}: y = {} outside 0..{levels}", obs.y)));
        }
        if obs.d >= arms {
            return Err(CliError::Validation(format!("row {row}: d = {} outside 0..{arms}", obs.d)));
        }
        if let Some(z) = obs.z {
            if z > 1 {
                return Err(CliError::Validation(format!("row {row}: z = {z} is not binary")));
            }
        }
    }

    let nuisances = if present.is_empty() {
        None
    } else {
        let expected = expected_nuisance_columns(layout, levels);
        if let Some(missing) = expected.difference(&present).next() {
            return Err(CliError::Validation(format!(
                "nuisance column `{}` is missing",
                column_name(missing)
            )));
        }
        if let Some(extra) = present.difference(&expected).next() {
            return Err(CliError::Validation(format!(
                "nuisance column `{}` does not fit the setting",
                column_name(extra)
            )));
        }
        Some(
            raw.iter()
                .enumerate()
                .map(|(i, values)| row_nuisances(i + 1, &columns, values, layout, levels))
                .collect::<Result<Vec<_>, _>>()?,
        )
    };

    Ok(Dataset {
        setting,
        covariates,
        observations,
        nuisances,
    })
}

fn row_nuisances(
    row: usize,
    columns: &[Column],
    values: &[f64],
    layout: Layout,
    levels: usize,
) -> Result<NuisanceValues, CliError> {
    let (arms, props) = match layout {
        Layout::JointPo { arms } => (arms, arms),
        Layout::Iv => (4, 2),
    };
    let mut outcome = vec![vec![0.0; levels]; arms];
    let mut propensity = vec![0.0; props];
    let mut tgi = vec![vec![0.0; 2]; 2];
    for (col, &v) in columns.iter().zip(values) {
        match *col {
            Column::Outcome(arm, level) => outcome[arm][level] = v,
            Column::Propensity(k) => propensity[k] = v,
            Column::TreatmentGivenInstrument(z, d) => tgi[z][d] = v,
            _ => {}
        }
    }
    let check = |v: &[f64], what: String| -> Result<(), CliError> {
        if let Some(bad) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CliError::Validation(format!("row {row}: {what} has entry {bad} outside [0, 1]")));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > PROBABILITY_TOL {
            return Err(CliError::Validation(format!("row {row}: {what} sums to {s}, not 1")));
        }
        Ok(())
    };
    for (arm, v) in outcome.iter().enumerate() {
        let what = match layout {
            Layout::JointPo { .. } => format!("outcome model m_{arm}_*"),
            Layout::Iv => format!("outcome model m_{}_{}_*", arm / 2, arm % 2),
        };
        check(v, what)?;
    }
    check(&propensity, "propensity e_*".into())?;
    let treatment_given_instrument = match layout {
        Layout::Iv => {
            for (z, v) in tgi.iter().enumerate() {
                check(v, format!("treatment model pzd_{z}_*"))?;
            }
            Some(tgi)
        }
        Layout::JointPo { .. } => None,
    };
    Ok(NuisanceValues {
        outcome,
        propensity,
        treatment_given_instrument,
    }
    .clipped(CLIP_FLOOR))
}

/// Writes observations, and nuisances when given, in the layout of `setting`.
pub fn write_dataset(
    path: &Path,
    setting: Setting,
    observations: &[Observation],
    nuisances: Option<&[NuisanceValues]>,
) -> Result<(), CliError> {
    let p = observations.first().map_or(0, |o| o.x.len());
    let l = setting.levels();
    let mut header: Vec<String> = (1..=p).map(|k| format!("x_{k}")).collect();
    let iv = matches!(setting, Setting::Iv { .. });
    if iv {
        header.push("z".into());
    }
    header.push("d".into());
    header.push("y".into());
    if nuisances.is_some() {
        match setting {
            Setting::JointPo { m, .. } => {
                for d in 0..m {
                    header.extend((0..l).map(|y| format!("m_{d}_{y}")));
                }
                header.extend((0..m).map(|d| format!("e_{d}")));
            }
            Setting::Iv { .. } => {
                for arm in 0..4 {
                    header.extend((0..l).map(|y| format!("m_{}_{}_{y}", arm / 2, arm % 2)));
                }
                header.extend((0..2).map(|z| format!("e_{z}")));
                for z in 0..2 {
                    header.extend((0..2).map(|d| format!("pzd_{z}_{d}")));
                }
            }
        }
    }

    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    writer.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for (i, obs) in observations.iter().enumerate() {
        let mut record: Vec<String> = obs.x.iter().map(|v| v.to_string()).collect();
        if iv {
            record.push(obs.z.unwrap_or(0).to_string());
        }
        record.push(obs.d.to_string());
        record.push(obs.y.to_string());
        if let Some(nus) = nuisances {
            let nu = &nus[i];
            record.extend(nu.outcome.iter().flatten().map(|v| v.to_string()));
            record.extend(nu.propensity.iter().map(|v| v.to_string()));
            if let Some(t) = &nu.treatment_given_instrument {
                record.extend(t.iter().flatten().map(|v| v.to_string()));
            }
        }
        writer.write_record(&record).map_err(|e| CliError::io(path, e))?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_are_classified_by_layout() {
        let jp = Layout::JointPo { arms: 2 };
        assert_eq!(classify("x_age", jp).unwrap(), Column::Covariate);
        assert_eq!(classify("m_1_2", jp).unwrap(), Column::Outcome(1, 2));
        assert_eq!(classify("m_1_0_2", Layout::Iv).unwrap(), Column::Outcome(2, 2));
        assert_eq!(classify("pzd_1_0", Layout::Iv).unwrap(), Column::TreatmentGivenInstrument(1, 0));
        assert!(classify("z", jp).is_err());
        assert!(classify("pzd_1_0", jp).is_err());
        assert!(classify("weight", jp).is_err());
        assert!(classify("x_", jp).is_err());
    }
}
