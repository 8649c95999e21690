use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use triplet_gcn::schema::{count_patients, parse_labels, parse_schema, parse_triplets};
use triplet_gcn::{Cohort, FeatureSchema};

use crate::error::{CliError, CliResult};

pub const SCHEMA_FILE: &str = "schema.json";
pub const TRIPLETS_FILE: &str = "triplets.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";

/// Where a cohort lives: a directory with the standard file names, or
/// individual files (which take precedence).
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding schema.json, triplets.csv and (optionally) labels.csv
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| self.data.as_ref().map(|d| d.join(name)))
    }

    fn required(&self, explicit: &Option<PathBuf>, name: &str, flag: &str) -> CliResult<PathBuf> {
        self.resolve(explicit, name)
            .ok_or_else(|| CliError::Usage(format!("pass --data or --{flag}")))
    }

    /// Label file, if one was named or exists in the data directory.
    fn labels_path(&self) -> Option<PathBuf> {
        match (&self.labels, &self.data) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(dir)) => Some(dir.join(LABELS_FILE)).filter(|p| p.exists()),
            (None, None) => None,
        }
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(CliError::file(path))
}

pub struct LoadedCohort {
    pub schema: FeatureSchema,
    /// `None` for a cohort without any patients.
    pub cohort: Option<Cohort>,
}

pub fn load(args: &DataArgs, need_labels: bool) -> CliResult<LoadedCohort> {
    let schema = parse_schema(&read(&args.required(&args.schema, SCHEMA_FILE, "schema")?)?)?;
    let triplets = read(&args.required(&args.triplets, TRIPLETS_FILE, "triplets")?)?;
    let labels = match args.labels_path() {
        Some(path) => Some(read(&path)?),
        None if need_labels => return Err(CliError::Usage("this command needs labels (--labels)".into())),
        None => None,
    };

    let from_triplets = count_patients(triplets.as_bytes())?;
    let n = match &labels {
        Some(text) => {
            let n = count_patients(text.as_bytes())?;
            if from_triplets > n {
                return Err(triplet_gcn::Error::Data(format!(
                    "triplets reference patient {} but labels cover {n} patients",
                    from_triplets - 1
                ))
                .into());
            }
            n
        }
        None => from_triplets,
    };
    if n == 0 {
        if need_labels {
            return Err(triplet_gcn::Error::Data("cohort has no patients".into()).into());
        }
        return Ok(LoadedCohort { schema, cohort: None });
    }
    let cohort = parse_triplets(triplets.as_bytes(), &schema, n)?;
    let cohort = match labels {
        Some(text) => cohort.with_labels(Some(parse_labels(text.as_bytes(), n)?))?,
        None => cohort,
    };
    Ok(LoadedCohort { schema, cohort: Some(cohort) })
}
