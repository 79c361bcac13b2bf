use serde::{Deserialize, Serialize};

use super::IngestError;

/// On-disk sample encoding. PTB-XL only uses WFDB format 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StorageFormat {
    /// 16-bit little-endian two's complement, samples interleaved across leads.
    Int16Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadSpec {
    pub file_name: String,
    /// ADC units per physical unit (mV).
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    pub checksum: i32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalHeader {
    pub record_name: String,
    pub n_leads: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub leads: Vec<LeadSpec>,
    pub storage_format: StorageFormat,
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedHeader {
        line,
        reason: reason.into(),
    }
}

/// Parses a WFDB header (`.hea`): one record line followed by one line per signal.
pub fn parse_header(text: &str) -> Result<SignalHeader, IngestError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (rec_no, record_line) = lines.next().ok_or_else(|| malformed(0, "empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(malformed(
            rec_no,
            "record line needs name, signal count, frequency and sample count",
        ));
    }
    let record_name = fields[0].to_string();
    if record_name.contains('/') {
        return Err(IngestError::UnsupportedFormat("multi-segment record".into()));
    }
    let n_leads: usize = fields[1]
        .parse()
        .map_err(|_| malformed(rec_no, format!("bad signal count {:?}", fields[1])))?;
    // Frequency may carry a counter frequency and base counter: "500/1000(0)".
    let fs_text = fields[2].split(['/', '(']).next().unwrap_or_default();
    let fs: f64 = fs_text
        .parse()
        .map_err(|_| malformed(rec_no, format!("bad sampling frequency {:?}", fields[2])))?;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(malformed(rec_no, "sampling frequency must be positive"));
    }
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| malformed(rec_no, format!("bad sample count {:?}", fields[3])))?;

    let mut leads = Vec::with_capacity(n_leads);
    for (no, line) in lines {
        leads.push(parse_signal_line(no, line)?);
    }
    if leads.len() != n_leads {
        return Err(malformed(
            rec_no,
            format!("record declares {n_leads} signals but {} signal lines follow", leads.len()),
        ));
    }

    Ok(SignalHeader {
        record_name,
        n_leads,
        n_samples,
        fs,
        leads,
        storage_format: StorageFormat::Int16Le,
    })
}

fn parse_signal_line(no: usize, line: &str) -> Result<LeadSpec, IngestError> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 3 {
        return Err(malformed(no, "signal line needs file name, format and gain"));
    }
    // Format field: "16", optionally with samples-per-frame, skew or byte offset suffixes.
    let format = f[1];
    let code = format.split(['x', ':', '+']).next().unwrap_or_default();
    if code != "16" || format.contains(['x', ':', '+']) {
        return Err(IngestError::UnsupportedFormat(format.to_string()));
    }

    let adc_zero: i32 = parse_opt(f.get(4), 0, no, "ADC zero")?;
    let (gain, baseline, units) = parse_gain(f[2], adc_zero, no)?;
    Ok(LeadSpec {
        file_name: f[0].to_string(),
        gain,
        baseline,
        units,
        adc_resolution: parse_opt(f.get(3), 16, no, "ADC resolution")?,
        adc_zero,
        initial_value: parse_opt(f.get(5), 0, no, "initial value")?,
        checksum: parse_opt(f.get(6), 0, no, "checksum")?,
        description: f.get(8..).map(|d| d.join(" ")).unwrap_or_default(),
    })
}

fn parse_opt<T: std::str::FromStr>(
    field: Option<&&str>,
    default: T,
    no: usize,
    what: &str,
) -> Result<T, IngestError> {
    match field {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| malformed(no, format!("bad {what} {s:?}"))),
    }
}

/// `1000.0(0)/mV` -> (gain, baseline, units). Baseline defaults to the ADC zero.
fn parse_gain(field: &str, adc_zero: i32, no: usize) -> Result<(f64, i32, String), IngestError> {
    let (body, units) = match field.split_once('/') {
        Some((b, u)) => (b, u.to_string()),
        None => (field, "mV".to_string()),
    };
    let (gain_text, baseline) = match body.split_once('(') {
        Some((g, rest)) => {
            let b = rest
                .strip_suffix(')')
                .ok_or_else(|| malformed(no, format!("unterminated baseline in {field:?}")))?;
            let b: i32 = b
                .parse()
                .map_err(|_| malformed(no, format!("bad baseline in {field:?}")))?;
            (g, b)
        }
        None => (body, adc_zero),
    };
    let gain: f64 = gain_text
        .parse()
        .map_err(|_| malformed(no, format!("bad gain {field:?}")))?;
    Ok((gain, baseline, units))
}

/// Renders a header in the layout PTB-XL uses, suitable for [`parse_header`].
pub fn render_header(h: &SignalHeader) -> String {
    let mut out = format!("{} {} {} {}\n", h.record_name, h.n_leads, h.fs, h.n_samples);
    for l in &h.leads {
        out.push_str(&format!(
            "{} 16 {:.1}({})/{} {} {} {} {} 0 {}\n",
            l.file_name, l.gain, l.baseline, l.units, l.adc_resolution, l.adc_zero, l.initial_value,
            l.checksum, l.description
        ));
    }
    out
}
