//! Deterministic 20-record dataset in the PTB-XL directory layout, built from
//! the synthetic generator. Used when the real dataset is not available.

use std::fs;
use std::io;
use std::path::Path;

use crate::ptbxl::{encode_signal, render_header, EcgRecord, LeadSpec, SignalHeader, Sex, StorageFormat, LEAD_NAMES};
use crate::synth::{self, Morphology};

/// One generated record and the annotations written for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiniRecord {
    pub ecg_id: u32,
    pub morphology: Morphology,
    pub heart_rate_bpm: f64,
    pub strat_fold: u8,
    pub age: Option<f64>,
    pub sex: Sex,
    pub scp_codes: &'static [(&'static str, f64)],
}

const fn rec(
    ecg_id: u32,
    morphology: Morphology,
    heart_rate_bpm: f64,
    strat_fold: u8,
    age: Option<f64>,
    sex: Sex,
    scp_codes: &'static [(&'static str, f64)],
) -> MiniRecord {
    MiniRecord {
        ecg_id,
        morphology,
        heart_rate_bpm,
        strat_fold,
        age,
        sex,
        scp_codes,
    }
}

use Morphology::*;

pub const MINI_RECORDS: [MiniRecord; 20] = [
    rec(1, Normal, 72.0, 10, Some(45.0), Sex::Male, &[("NORM", 100.0), ("SR", 0.0)]),
    rec(2, Rbbb, 68.0, 10, Some(71.0), Sex::Male, &[("CRBBB", 100.0), ("SR", 0.0)]),
    rec(3, Ivcd113, 75.0, 10, Some(66.0), Sex::Female, &[("IVCD", 100.0), ("SR", 0.0)]),
    rec(4, Lvh, 64.0, 10, Some(58.0), Sex::Male, &[("LVH", 100.0), ("SR", 0.0)]),
    rec(5, InferiorMi, 80.0, 10, Some(63.0), Sex::Male, &[("IMI", 100.0), ("SR", 0.0)]),
    rec(6, StDepression, 88.0, 10, Some(77.0), Sex::Female, &[("NDT", 100.0), ("SR", 0.0)]),
    rec(7, AtrialFibrillation, 96.0, 10, Some(82.0), Sex::Female, &[("AFIB", 0.0)]),
    rec(8, Normal, 55.0, 10, Some(24.0), Sex::Male, &[("NORM", 100.0), ("SBRAD", 0.0)]),
    rec(9, Normal, 110.0, 10, None, Sex::Female, &[("NORM", 80.0), ("STACH", 0.0)]),
    rec(10, InferiorMi, 70.0, 10, Some(69.0), Sex::Male, &[("IMI", 50.0), ("NORM", 0.0)]),
    rec(11, Lvh, 76.0, 10, Some(52.0), Sex::Male, &[("LVH", 49.0), ("LVOLT", 100.0)]),
    rec(12, Rbbb, 90.0, 10, Some(74.0), Sex::Female, &[("CRBBB", 100.0), ("ISC_", 50.0)]),
    rec(13, StDepression, 65.0, 10, Some(61.0), Sex::Male, &[("NST_", 100.0), ("LVH", 35.0)]),
    rec(14, Normal, 62.0, 10, Some(33.0), Sex::Female, &[("NORM", 100.0), ("ABQRS", 0.0)]),
    rec(15, Normal, 70.0, 1, Some(40.0), Sex::Female, &[("NORM", 100.0), ("SR", 0.0)]),
    rec(16, Rbbb, 72.0, 2, Some(68.0), Sex::Male, &[("CRBBB", 100.0)]),
    rec(17, Lvh, 80.0, 3, Some(59.0), Sex::Male, &[("LVH", 100.0)]),
    rec(18, InferiorMi, 66.0, 5, Some(72.0), Sex::Female, &[("IMI", 100.0)]),
    rec(19, StDepression, 84.0, 8, Some(80.0), Sex::Male, &[("NDT", 100.0)]),
    rec(20, Ivcd113, 78.0, 9, Some(55.0), Sex::Female, &[("IVCD", 100.0)]),
];

/// Statement table rows: code, description, kind (diagnostic/form/rhythm), class.
const STATEMENTS: [(&str, &str, &str, &str); 20] = [
    ("NORM", "normal ECG", "diagnostic", "NORM"),
    ("CRBBB", "complete right bundle branch block", "diagnostic", "CD"),
    ("CLBBB", "complete left bundle branch block", "diagnostic", "CD"),
    ("IVCD", "non-specific intraventricular conduction disturbance", "diagnostic", "CD"),
    ("1AVB", "first degree AV block", "diagnostic", "CD"),
    ("LAFB", "left anterior fascicular block", "diagnostic", "CD"),
    ("LVH", "left ventricular hypertrophy", "diagnostic", "HYP"),
    ("RVH", "right ventricular hypertrophy", "diagnostic", "HYP"),
    ("LAO/LAE", "left atrial overload/enlargement", "diagnostic", "HYP"),
    ("IMI", "inferior myocardial infarction", "diagnostic", "MI"),
    ("ASMI", "anteroseptal myocardial infarction", "diagnostic", "MI"),
    ("NDT", "non-diagnostic T abnormalities", "diagnostic", "STTC"),
    ("NST_", "non-specific ST changes", "diagnostic", "STTC"),
    ("ISC_", "non-specific ischemic", "diagnostic", "STTC"),
    ("LVOLT", "low QRS voltages in the frontal and horizontal leads", "form", ""),
    ("ABQRS", "abnormal QRS", "form", ""),
    ("SR", "sinus rhythm", "rhythm", ""),
    ("AFIB", "atrial fibrillation", "rhythm", ""),
    ("SBRAD", "sinus bradycardia", "rhythm", ""),
    ("STACH", "sinus tachycardia", "rhythm", ""),
];

const LR_HZ: u32 = 100;
const HR_HZ: u32 = 500;

fn record_signal(r: &MiniRecord, fs: u32) -> EcgRecord {
    let mut spec = synth::scenario(r.morphology, r.heart_rate_bpm, fs, 1000 + u64::from(r.ecg_id));
    spec.snr_db = Some(30.0);
    spec.baseline_drift_mv = 0.03;
    synth::generate_record(r.ecg_id, &spec, r.age, r.sex).0
}

fn header_for(name: &str, record: &EcgRecord) -> SignalHeader {
    let gain = 1000.0;
    let file_name = format!("{name}.dat");
    let leads = record
        .signal()
        .iter()
        .zip(LEAD_NAMES)
        .map(|(lead, desc)| {
            let raw: Vec<i16> = lead.iter().map(|v| (v * gain).round() as i16).collect();
            let checksum = raw.iter().fold(0i16, |acc, v| acc.wrapping_add(*v));
            LeadSpec {
                file_name: file_name.clone(),
                gain,
                baseline: 0,
                units: "mV".into(),
                adc_resolution: 16,
                adc_zero: 0,
                initial_value: raw.first().copied().map_or(0, i32::from),
                checksum: i32::from(checksum),
                description: desc.to_uppercase(),
            }
        })
        .collect();
    SignalHeader {
        record_name: name.to_string(),
        n_leads: 12,
        n_samples: record.n_samples(),
        fs: f64::from(record.sampling_rate_hz()),
        leads,
        storage_format: StorageFormat::Int16Le,
    }
}

fn write_pair(root: &Path, rel_stem: &str, record: &EcgRecord) -> io::Result<()> {
    let stem = root.join(rel_stem);
    fs::create_dir_all(stem.parent().expect("stem has a directory"))?;
    let name = stem.file_name().and_then(|s| s.to_str()).expect("utf-8 stem");
    let header = header_for(name, record);
    fs::write(stem.with_extension("hea"), render_header(&header))?;
    fs::write(stem.with_extension("dat"), encode_signal(record.signal(), &header))
}

fn relative_stems(ecg_id: u32) -> (String, String) {
    let dir = ecg_id / 1000 * 1000;
    (
        format!("records100/{dir:05}/{ecg_id:05}_lr"),
        format!("records500/{dir:05}/{ecg_id:05}_hr"),
    )
}

fn scp_literal(codes: &[(&str, f64)]) -> String {
    let items: Vec<String> = codes.iter().map(|(c, l)| format!("'{c}': {l:.1}")).collect();
    format!("{{{}}}", items.join(", "))
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes metadata, statement table and both sampling rates under `root`.
pub fn write_mini_corpus(root: &Path) -> io::Result<()> {
    fs::create_dir_all(root)?;
    let mut meta = csv::Writer::from_path(root.join("ptbxl_database.csv")).map_err(csv_err)?;
    meta.write_record([
        "ecg_id",
        "patient_id",
        "age",
        "sex",
        "recording_date",
        "report",
        "scp_codes",
        "strat_fold",
        "filename_lr",
        "filename_hr",
    ])
    .map_err(csv_err)?;
    for r in &MINI_RECORDS {
        let (lr, hr) = relative_stems(r.ecg_id);
        write_pair(root, &lr, &record_signal(r, LR_HZ))?;
        write_pair(root, &hr, &record_signal(r, HR_HZ))?;
        let sex = match r.sex {
            Sex::Male => "0",
            Sex::Female => "1",
            Sex::Unknown => "",
        };
        meta.write_record([
            format!("{}", r.ecg_id),
            format!("{:.1}", 9000.0 + f64::from(r.ecg_id)),
            r.age.map_or_else(String::new, |a| format!("{a:.1}")),
            sex.to_string(),
            format!("1990-01-{:02} 09:00:00", r.ecg_id),
            format!("synthetic {:?} at {} bpm", r.morphology, r.heart_rate_bpm),
            scp_literal(r.scp_codes),
            r.strat_fold.to_string(),
            lr,
            hr,
        ])
        .map_err(csv_err)?;
    }
    meta.flush()?;

    let mut st = csv::Writer::from_path(root.join("scp_statements.csv")).map_err(csv_err)?;
    st.write_record(["", "description", "diagnostic", "form", "rhythm", "diagnostic_class"]).map_err(csv_err)?;
    for (code, desc, kind, class) in STATEMENTS {
        let flag = |k: &str| if kind == k { "1.0" } else { "" };
        st.write_record([code, desc, flag("diagnostic"), flag("form"), flag("rhythm"), class]).map_err(csv_err)?;
    }
    st.flush()
}
