use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::header::parse_header;
use super::labels::{derive_labels, parse_scp_codes, Labeling, StatementDictionary};
use super::record::{load_record, EcgRecord, Sex};
use super::IngestError;

pub const METADATA_FILE: &str = "ptbxl_database.csv";
pub const STATEMENTS_FILE: &str = "scp_statements.csv";

/// One row of `ptbxl_database.csv`, restricted to the columns the pipeline uses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetadataRow {
    pub ecg_id: u32,
    pub age: Option<f64>,
    pub sex: Sex,
    pub scp_codes: Vec<(String, f64)>,
    pub strat_fold: u8,
    pub filename_lr: String,
    pub filename_hr: String,
}

/// Which signal file a record was decoded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSource {
    pub path: PathBuf,
    pub sampling_rate_hz: u32,
}

/// Read-only handle over a PTB-XL directory. Shareable across threads.
#[derive(Debug, Clone)]
pub struct PtbXl {
    root: PathBuf,
    rows: BTreeMap<u32, MetadataRow>,
    dictionary: StatementDictionary,
}

impl PtbXl {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, IngestError> {
        let root = root.as_ref().to_path_buf();
        let statements = root.join(STATEMENTS_FILE);
        let dictionary = StatementDictionary::from_csv(
            File::open(&statements).map_err(|e| IngestError::io(&statements, e))?,
        )?;
        let meta_path = root.join(METADATA_FILE);
        let rows = read_metadata(File::open(&meta_path).map_err(|e| IngestError::io(&meta_path, e))?)?;
        Ok(Self {
            root,
            rows,
            dictionary,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dictionary(&self) -> &StatementDictionary {
        &self.dictionary
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// All record ids, ascending.
    pub fn ids(&self) -> Vec<u32> {
        self.rows.keys().copied().collect()
    }

    pub fn row(&self, ecg_id: u32) -> Result<&MetadataRow, IngestError> {
        self.rows.get(&ecg_id).ok_or(IngestError::UnknownRecord(ecg_id))
    }

    /// Ids whose stratification fold equals `fold`, ascending by id.
    pub fn select_fold(&self, fold: i64) -> Result<Vec<u32>, IngestError> {
        if !(1..=10).contains(&fold) {
            return Err(IngestError::FoldOutOfRange(fold));
        }
        Ok(self
            .rows
            .values()
            .filter(|r| i64::from(r.strat_fold) == fold)
            .map(|r| r.ecg_id)
            .collect())
    }

    pub fn labeling(&self, ecg_id: u32) -> Result<Labeling, IngestError> {
        Ok(derive_labels(&self.row(ecg_id)?.scp_codes, &self.dictionary))
    }

    /// Loads a record, preferring the 500 Hz file and falling back to 100 Hz.
    pub fn load(&self, ecg_id: u32) -> Result<(EcgRecord, RecordSource), IngestError> {
        let row = self.row(ecg_id)?;
        let candidates = [&row.filename_hr, &row.filename_lr];
        let stem = candidates
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| self.root.join(s))
            .find(|p| p.with_extension("hea").is_file())
            .ok_or_else(|| {
                IngestError::InvalidRecord(format!("no signal files found for record {ecg_id}"))
            })?;
        let hea = stem.with_extension("hea");
        let text = std::fs::read_to_string(&hea).map_err(|e| IngestError::io(&hea, e))?;
        let header = parse_header(&text)?;
        let dat = hea.with_file_name(&header.leads[0].file_name);
        let bytes = std::fs::read(&dat).map_err(|e| IngestError::io(&dat, e))?;
        let record = load_record(&bytes, &header, row)?;
        let source = RecordSource {
            path: dat,
            sampling_rate_hz: record.sampling_rate_hz(),
        };
        Ok((record, source))
    }
}

fn read_metadata(reader: impl std::io::Read) -> Result<BTreeMap<u32, MetadataRow>, IngestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::Metadata(format!("metadata has no {name} column")))
    };
    let id_col = col("ecg_id")?;
    let scp_col = col("scp_codes")?;
    let fold_col = col("strat_fold")?;
    let age_col = col("age").ok();
    let sex_col = col("sex").ok();
    let lr_col = col("filename_lr").ok();
    let hr_col = col("filename_hr").ok();

    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or_default().trim();
        let ecg_id = get(id_col)
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= 0.0)
            .ok_or_else(|| IngestError::Metadata(format!("bad ecg_id {:?}", get(id_col))))?
            as u32;
        let strat_fold = get(fold_col)
            .parse::<f64>()
            .map_err(|_| IngestError::Metadata(format!("record {ecg_id}: bad strat_fold")))?
            as u8;
        let row = MetadataRow {
            ecg_id,
            age: age_col.and_then(|i| get(i).parse::<f64>().ok()),
            sex: sex_col.map_or(Sex::Unknown, |i| Sex::parse_lenient(get(i))),
            scp_codes: parse_scp_codes(get(scp_col))?,
            strat_fold,
            filename_lr: lr_col.map(|i| get(i).to_string()).unwrap_or_default(),
            filename_hr: hr_col.map(|i| get(i).to_string()).unwrap_or_default(),
        };
        if rows.insert(ecg_id, row).is_some() {
            return Err(IngestError::Metadata(format!("duplicate ecg_id {ecg_id}")));
        }
    }
    Ok(rows)
}
