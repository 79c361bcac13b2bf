use serde::{Deserialize, Serialize};

use super::header::SignalHeader;
use super::{IngestError, MetadataRow};
use crate::superclass::SuperclassFlags;

/// Standard 12-lead order used throughout the pipeline.
pub const LEAD_NAMES: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    #[default]
    Unknown,
}

impl Sex {
    /// PTB-XL encodes sex as 0 (male) / 1 (female); free-text spellings are also accepted.
    pub fn parse_lenient(s: &str) -> Sex {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "0.0" | "m" | "male" => Sex::Male,
            "1" | "1.0" | "f" | "female" => Sex::Female,
            _ => Sex::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        }
    }
}

/// A 12-lead recording in millivolts, leads in [`LEAD_NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub ecg_id: u32,
    signal: Vec<Vec<f64>>,
    sampling_rate_hz: u32,
    pub age: Option<f64>,
    pub sex: Sex,
}

impl EcgRecord {
    pub fn new(
        ecg_id: u32,
        signal: Vec<Vec<f64>>,
        sampling_rate_hz: u32,
        age: Option<f64>,
        sex: Sex,
    ) -> Result<Self, IngestError> {
        if sampling_rate_hz != 100 && sampling_rate_hz != 500 {
            return Err(IngestError::InvalidRecord(format!(
                "sampling rate {sampling_rate_hz} Hz is not 100 or 500"
            )));
        }
        if signal.len() != 12 {
            return Err(IngestError::InvalidRecord(format!(
                "expected 12 leads, got {}",
                signal.len()
            )));
        }
        let n = signal[0].len();
        if signal.iter().any(|l| l.len() != n) {
            return Err(IngestError::InvalidRecord("leads differ in length".into()));
        }
        if n < sampling_rate_hz as usize {
            return Err(IngestError::InvalidRecord(format!(
                "{n} samples is shorter than one second"
            )));
        }
        for (lead, name) in signal.iter().zip(LEAD_NAMES) {
            if lead.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::NonFiniteSample {
                    lead: name.to_string(),
                });
            }
        }
        Ok(Self {
            ecg_id,
            signal,
            sampling_rate_hz,
            age,
            sex,
        })
    }

    pub fn signal(&self) -> &[Vec<f64>] {
        &self.signal
    }

    pub fn lead(&self, index: usize) -> &[f64] {
        &self.signal[index]
    }

    pub fn lead_by_name(&self, name: &str) -> Option<&[f64]> {
        LEAD_NAMES
            .iter()
            .position(|l| *l == name)
            .map(|i| self.signal[i].as_slice())
    }

    pub fn lead_names(&self) -> &'static [&'static str; 12] {
        &LEAD_NAMES
    }

    pub fn sampling_rate_hz(&self) -> u32 {
        self.sampling_rate_hz
    }

    pub fn fs(&self) -> f64 {
        f64::from(self.sampling_rate_hz)
    }

    pub fn n_samples(&self) -> usize {
        self.signal[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs()
    }
}

fn standard_lead_index(description: &str) -> Option<usize> {
    LEAD_NAMES
        .iter()
        .position(|l| l.eq_ignore_ascii_case(description.trim()))
}

/// Decodes an interleaved format-16 signal file into a record.
pub fn load_record(
    signal_bytes: &[u8],
    header: &SignalHeader,
    meta: &MetadataRow,
) -> Result<EcgRecord, IngestError> {
    let n_leads = header.n_leads;
    let expected = n_leads * header.n_samples * 2;
    if signal_bytes.len() != expected {
        return Err(IngestError::LengthMismatch {
            expected,
            actual: signal_bytes.len(),
        });
    }
    if n_leads != 12 {
        return Err(IngestError::InvalidRecord(format!(
            "expected 12 leads, header declares {n_leads}"
        )));
    }

    let mut order = [usize::MAX; 12];
    for (i, spec) in header.leads.iter().enumerate() {
        let slot = standard_lead_index(&spec.description).ok_or_else(|| {
            IngestError::InvalidRecord(format!("unrecognised lead {:?}", spec.description))
        })?;
        if order[slot] != usize::MAX {
            return Err(IngestError::InvalidRecord(format!(
                "lead {} appears twice",
                LEAD_NAMES[slot]
            )));
        }
        order[slot] = i;
    }

    let mut signal = vec![Vec::with_capacity(header.n_samples); 12];
    for (slot, &col) in order.iter().enumerate() {
        let spec = &header.leads[col];
        let gain = spec.gain;
        let baseline = f64::from(spec.baseline);
        let out = &mut signal[slot];
        for frame in signal_bytes.chunks_exact(2 * n_leads) {
            let raw = i16::from_le_bytes([frame[2 * col], frame[2 * col + 1]]);
            let mv = (f64::from(raw) - baseline) / gain;
            if !mv.is_finite() {
                return Err(IngestError::NonFiniteSample {
                    lead: LEAD_NAMES[slot].to_string(),
                });
            }
            out.push(mv);
        }
    }

    let fs = header.fs.round();
    if (fs - header.fs).abs() > 1e-9 {
        return Err(IngestError::InvalidRecord(format!(
            "non-integer sampling rate {}",
            header.fs
        )));
    }
    EcgRecord::new(meta.ecg_id, signal, fs as u32, meta.age, meta.sex)
}

/// Quantises a millivolt matrix into interleaved format-16 bytes using each lead's gain/baseline.
pub fn encode_signal(signal: &[Vec<f64>], header: &SignalHeader) -> Vec<u8> {
    let n = signal.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(n * signal.len() * 2);
    for t in 0..n {
        for (lead, spec) in signal.iter().zip(&header.leads) {
            let raw = (lead[t] * spec.gain + f64::from(spec.baseline)).round();
            let raw = raw.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16;
            out.extend_from_slice(&raw.to_le_bytes());
        }
    }
    out
}

/// Record summary exchanged with downstream consumers. `signal` is optional so the
/// same shape serves both as a listing entry and as an upload body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    #[serde(default)]
    pub ecg_id: u32,
    pub sampling_rate_hz: u32,
    #[serde(default)]
    pub duration_s: f64,
    #[serde(default)]
    pub age: Option<f64>,
    #[serde(default)]
    pub sex: Sex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<SuperclassFlags>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_file: Option<String>,
    #[serde(default = "default_leads")]
    pub lead_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<Vec<Vec<f64>>>,
}

fn default_leads() -> Vec<String> {
    LEAD_NAMES.iter().map(|s| s.to_string()).collect()
}

impl CanonicalRecord {
    pub fn describe(record: &EcgRecord, labels: Option<SuperclassFlags>) -> Self {
        Self {
            ecg_id: record.ecg_id,
            sampling_rate_hz: record.sampling_rate_hz(),
            duration_s: record.duration_s(),
            age: record.age,
            sex: record.sex,
            labels,
            source_file: None,
            lead_names: default_leads(),
            signal: None,
        }
    }

    pub fn with_signal(mut self, record: &EcgRecord) -> Self {
        self.signal = Some(record.signal().to_vec());
        self
    }

    /// Rebuilds a record from an upload body; leads may be listed in any order.
    pub fn into_record(self) -> Result<EcgRecord, IngestError> {
        let signal = self
            .signal
            .ok_or_else(|| IngestError::InvalidRecord("canonical record has no signal".into()))?;
        if signal.len() != self.lead_names.len() {
            return Err(IngestError::InvalidRecord(
                "lead_names and signal rows differ in count".into(),
            ));
        }
        let mut ordered: Vec<Option<Vec<f64>>> = vec![None; 12];
        for (name, row) in self.lead_names.iter().zip(signal) {
            let slot = standard_lead_index(name)
                .ok_or_else(|| IngestError::InvalidRecord(format!("unrecognised lead {name:?}")))?;
            ordered[slot] = Some(row);
        }
        let signal = ordered
            .into_iter()
            .zip(LEAD_NAMES)
            .map(|(row, name)| {
                row.ok_or_else(|| IngestError::InvalidRecord(format!("missing lead {name}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        EcgRecord::new(self.ecg_id, signal, self.sampling_rate_hz, self.age, self.sex)
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_header;
    use super::*;

    fn header(n_samples: usize, fs: u32, gain: f64) -> SignalHeader {
        let mut text = format!("rec 12 {fs} {n_samples}\n");
        for name in LEAD_NAMES {
            text.push_str(&format!("rec.dat 16 {gain}(0)/mV 16 0 0 0 0 {}\n", name.to_uppercase()));
        }
        parse_header(&text).unwrap()
    }

    fn meta() -> MetadataRow {
        MetadataRow {
            ecg_id: 7,
            ..MetadataRow::default()
        }
    }

    // Independent little encoder: raw = round(mv * gain), interleaved LE i16.
    fn oracle_encode(signal: &[Vec<f64>], gain: f64) -> Vec<u8> {
        let mut out = Vec::new();
        for t in 0..signal[0].len() {
            for lead in signal {
                out.extend_from_slice(&((lead[t] * gain).round() as i16).to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn raw_sample_is_scaled_by_gain() {
        let h = header(500, 500, 1000.0);
        let mut sig = vec![vec![0.0; 500]; 12];
        sig[0][0] = 1.0;
        let rec = load_record(&oracle_encode(&sig, 1000.0), &h, &meta()).unwrap();
        assert_eq!(rec.lead(0)[0], 1.0);
    }

    #[test]
    fn ten_second_record_at_500hz() {
        let h = header(5000, 500, 1000.0);
        let bytes = vec![0u8; 12 * 5000 * 2];
        let rec = load_record(&bytes, &h, &meta()).unwrap();
        assert_eq!(rec.duration_s(), 10.0);
        assert_eq!(rec.ecg_id, 7);
    }

    #[test]
    fn truncated_stream_is_length_mismatch() {
        let h = header(5000, 500, 1000.0);
        let bytes = vec![0u8; 12 * 5000 * 2 - 2];
        assert!(matches!(
            load_record(&bytes, &h, &meta()),
            Err(IngestError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_gain_is_non_finite() {
        let h = header(500, 500, 0.0);
        let bytes = vec![0u8; 12 * 500 * 2];
        assert!(matches!(
            load_record(&bytes, &h, &meta()),
            Err(IngestError::NonFiniteSample { .. })
        ));
    }

    #[test]
    fn round_trip_within_one_quantisation_step() {
        let gain = 1000.0;
        let sig: Vec<Vec<f64>> = (0..12)
            .map(|l| {
                (0..1000)
                    .map(|t| ((t as f64) * 0.013 * (l + 1) as f64).sin() * 2.5)
                    .collect()
            })
            .collect();
        let h = header(1000, 500, gain);
        let rec = load_record(&oracle_encode(&sig, gain), &h, &meta()).unwrap();
        for (a, b) in rec.signal().iter().zip(&sig) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1.0 / gain);
            }
        }
        // The library encoder agrees with the oracle byte for byte.
        assert_eq!(encode_signal(&sig, &h), oracle_encode(&sig, gain));
    }

    #[test]
    fn leads_are_reordered_to_standard_order() {
        let mut text = "rec 12 500 500\n".to_string();
        for name in LEAD_NAMES.iter().rev() {
            text.push_str(&format!("rec.dat 16 1000(0)/mV 16 0 0 0 0 {name}\n"));
        }
        let h = parse_header(&text).unwrap();
        let mut frames = Vec::new();
        for _ in 0..500 {
            for col in 0..12i16 {
                frames.extend_from_slice(&(col * 100).to_le_bytes());
            }
        }
        let rec = load_record(&frames, &h, &meta()).unwrap();
        // V6 was stored in column 0, lead I in column 11.
        assert_eq!(rec.lead(0)[0], 1.1);
        assert_eq!(rec.lead(11)[0], 0.0);
    }

    #[test]
    fn record_invariants() {
        assert!(EcgRecord::new(1, vec![vec![0.0; 500]; 11], 500, None, Sex::Unknown).is_err());
        assert!(EcgRecord::new(1, vec![vec![0.0; 250]; 12], 250, None, Sex::Unknown).is_err());
        assert!(EcgRecord::new(1, vec![vec![0.0; 499]; 12], 500, None, Sex::Unknown).is_err());
        let mut sig = vec![vec![0.0; 100]; 12];
        sig[3][5] = f64::NAN;
        assert!(matches!(
            EcgRecord::new(1, sig, 100, None, Sex::Unknown),
            Err(IngestError::NonFiniteSample { .. })
        ));
    }

    #[test]
    fn canonical_round_trip() {
        let rec = EcgRecord::new(3, vec![vec![0.25; 100]; 12], 100, Some(61.0), Sex::Female).unwrap();
        let canon = CanonicalRecord::describe(&rec, None).with_signal(&rec);
        let json = serde_json::to_string(&canon).unwrap();
        let back: CanonicalRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_record().unwrap(), rec);
    }
}
