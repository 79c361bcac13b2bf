use ecgrag_core::delineation::{Beat, ClassicDelineator, Delineator, DelineatorConfig, FiducialSet, RecordFiducials};
use ecgrag_core::features::{
    extract_features, extract_global_features, extract_lead_features, feature_registry, lookup, qtc_bazett, FeatureError,
    FeatureScope, FeatureSet, LeadFeatures, Unit, LEAD_FEATURES,
};
use ecgrag_core::ptbxl::LEAD_NAMES;
use ecgrag_core::synth::{self, Morphology};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fid(lead: &str, beats: Vec<Beat>) -> FiducialSet {
    FiducialSet {
        lead: lead.to_string(),
        beats,
        quality: 1.0,
    }
}

fn qrs_beat(onset: usize, offset: usize) -> Beat {
    Beat {
        qrs_onset: Some(onset),
        qrs_offset: Some(offset),
        ..Beat::anchored((onset + offset) / 2)
    }
}

fn record_fiducials(fs: u32, n: usize, leads: Vec<FiducialSet>) -> RecordFiducials {
    RecordFiducials {
        ecg_id: 1,
        sampling_rate_hz: fs,
        n_samples: n,
        profile: "test".into(),
        leads,
    }
}

fn lead_with(key: &str, v: f64) -> LeadFeatures {
    let mut f = LeadFeatures::absent();
    f.set(key, Some(v));
    f
}

#[test]
fn qrs_duration_from_onset_and_offset() {
    let x = vec![0.0; 3000];
    let f = extract_lead_features(&fid("II", vec![qrs_beat(1000, 1056)]), &x, 500.0);
    assert_eq!(f.get("qrs_duration"), Some(112.0));
}

#[test]
fn pr_interval_from_p_onset() {
    let x = vec![0.0; 3000];
    let beat = Beat {
        p_onset: Some(900),
        ..qrs_beat(1000, 1050)
    };
    let f = extract_lead_features(&fid("II", vec![beat]), &x, 500.0);
    assert_eq!(f.get("pr_interval"), Some(200.0));
}

#[test]
fn lead_value_is_the_median_over_beats() {
    let x = vec![0.0; 5000];
    let beats = vec![qrs_beat(1000, 1110), qrs_beat(2000, 2113), qrs_beat(3000, 3140)];
    let f = extract_lead_features(&fid("II", beats), &x, 1000.0);
    assert_eq!(f.get("qrs_duration"), Some(113.0));
}

#[test]
fn absent_fiducials_give_absent_features() {
    let x = vec![0.0; 3000];
    let f = extract_lead_features(&fid("II", vec![Beat::anchored(1000)]), &x, 500.0);
    for (d, v) in f.iter() {
        if d.key == "signal_quality" {
            assert_eq!(v, Some(1.0));
        } else {
            assert_eq!(v, None, "{} should be absent", d.key);
        }
    }
    let f = extract_lead_features(&fid("II", vec![qrs_beat(1000, 1050)]), &x, 500.0);
    assert_eq!(f.get("pr_interval"), None);
    assert_eq!(f.get("p_amplitude"), None);
    assert_eq!(f.get("qt_interval"), None);
}

fn rr_fiducials(fs: u32, rr_samples: usize, beats: usize) -> RecordFiducials {
    let peaks: Vec<Beat> = (0..beats).map(|k| Beat::anchored(200 + k * rr_samples)).collect();
    record_fiducials(fs, 200 + beats * rr_samples, vec![fid("II", peaks)])
}

#[test]
fn qtc_at_one_second_rr_equals_qt() {
    let fids = rr_fiducials(500, 500, 10);
    let leads = vec![("II".to_string(), lead_with("qt_interval", 400.0))];
    let g = extract_global_features(&fids, &leads);
    assert_eq!(g.get("rr_interval"), Some(1000.0));
    assert_eq!(g.get("heart_rate"), Some(60.0));
    assert!((g.get("qtc_bazett").unwrap() - 400.0).abs() < 0.1);
    assert!((g.get("qtc_fridericia").unwrap() - 400.0).abs() < 0.1);
}

#[test]
fn qtc_bazett_at_640_ms() {
    let fids = rr_fiducials(500, 320, 12);
    let leads = vec![("II".to_string(), lead_with("qt_interval", 400.0))];
    let g = extract_global_features(&fids, &leads);
    assert_eq!(g.get("rr_interval"), Some(640.0));
    assert!((g.get("qtc_bazett").unwrap() - 500.0).abs() < 0.1);
}

#[test]
fn qrs_axis_from_leads_i_and_avf() {
    let fids = rr_fiducials(500, 500, 4);
    let leads = vec![
        ("I".to_string(), lead_with("qrs_net_area", 1.0)),
        ("aVF".to_string(), lead_with("qrs_net_area", 1.0)),
    ];
    let g = extract_global_features(&fids, &leads);
    assert!((g.get("qrs_axis").unwrap() - 45.0).abs() < 1e-9);
    assert_eq!(g.get("p_axis"), None);
}

#[test]
fn single_beat_leaves_rate_features_absent() {
    let fids = rr_fiducials(500, 500, 1);
    let leads = vec![("II".to_string(), lead_with("qt_interval", 400.0))];
    let g = extract_global_features(&fids, &leads);
    for key in ["heart_rate", "rr_interval", "sdnn", "rr_irregularity", "qtc_bazett", "qtc_fridericia"] {
        assert_eq!(g.get(key), None, "{key}");
    }
    assert_eq!(g.get("global_qt_interval"), Some(400.0));
}

#[test]
fn rhythm_falls_back_to_best_quality_lead() {
    let mut noisy = fid("V1", (0..5).map(|k| Beat::anchored(100 + k * 400)).collect());
    noisy.quality = 0.3;
    let clean = fid("V2", (0..5).map(|k| Beat::anchored(100 + k * 500)).collect());
    let fids = record_fiducials(500, 3000, vec![fid("II", vec![Beat::anchored(100)]), noisy, clean]);
    let g = extract_global_features(&fids, &[]);
    assert_eq!(g.get("rr_interval"), Some(1000.0));
}

#[test]
fn registry_has_thirty_lead_and_twelve_global_features() {
    let reg = feature_registry();
    assert_eq!(reg.len(), 42);
    assert_eq!(reg.iter().filter(|d| d.scope == FeatureScope::Lead).count(), 30);
    assert_eq!(reg.iter().filter(|d| d.scope == FeatureScope::Global).count(), 12);
    assert_eq!(lookup("PR interval").map(|d| d.scope), Some(FeatureScope::Lead));
    assert_eq!(lookup("heart rate").map(|d| d.scope), Some(FeatureScope::Global));
    assert_eq!(lookup("heart rate").map(|d| d.unit), Some(Unit::Bpm));
    let mut names: Vec<_> = reg.iter().map(|d| d.name).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 42);
    for d in reg {
        assert!(!d.definition.is_empty());
        if d.name.contains("duration") || d.name.contains("interval") {
            assert_eq!(d.unit, Unit::Millisecond, "{}", d.name);
        }
        if d.name.contains("amplitude") {
            assert_eq!(d.unit, Unit::Microvolt, "{}", d.name);
        }
    }
}

fn delineated(morphology: Morphology, hr: f64, seed: u64) -> (ecgrag_core::ptbxl::EcgRecord, RecordFiducials) {
    let spec = synth::scenario(morphology, hr, 500, seed);
    let (record, _) = synth::generate_record(seed as u32, &spec, Some(61.0), ecgrag_core::ptbxl::Sex::Female);
    let fids = ClassicDelineator::new(DelineatorConfig::default()).delineate(&record).unwrap();
    (record, fids)
}

#[test]
fn beat_order_never_changes_features() {
    let (record, fids) = delineated(Morphology::Normal, 110.0, 3);
    let lead = fids.lead("V5").unwrap().clone();
    let x = record.lead_by_name("V5").unwrap();
    let reference = extract_lead_features(&lead, x, 500.0);
    assert!(reference.present_count() > 20);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut shuffled = lead.clone();
    for _ in 0..1000 {
        shuffled.beats.shuffle(&mut rng);
        assert_eq!(extract_lead_features(&shuffled, x, 500.0), reference);
    }
}

#[test]
fn normal_record_matches_generator() {
    let (record, fids) = delineated(Morphology::Normal, 75.0, 11);
    let fs = extract_features(&record, &fids);
    let g = &fs.global;
    assert!((g.get("heart_rate").unwrap() - 75.0).abs() <= 2.0);
    assert!((g.get("global_qrs_duration").unwrap() - 90.0).abs() <= 10.0);
    assert!((g.get("global_pr_interval").unwrap() - 160.0).abs() <= 20.0);
    assert!((g.get("qtc_bazett").unwrap() - 400.0).abs() <= 30.0);
    assert!((g.get("qrs_axis").unwrap() - 60.0).abs() <= 20.0, "axis {:?}", g.get("qrs_axis"));
    assert!(g.get("rr_irregularity").unwrap() < 0.1);
    assert_eq!(fs.lead("II").unwrap().get("pathological_q"), Some(0.0));
    assert_eq!(fs.age, Some(61.0));
}

#[test]
fn rbbb_has_wide_qrs_and_r_prime_in_v1() {
    let (record, fids) = delineated(Morphology::Rbbb, 70.0, 5);
    let fs = extract_features(&record, &fids);
    assert!(fs.global.get("global_qrs_duration").unwrap() >= 120.0);
    let v1 = fs.lead("V1").unwrap();
    assert!(v1.get("r_prime_amplitude").unwrap() > 500.0, "{:?}", v1.get("r_prime_amplitude"));
}

#[test]
fn af_is_irregular_without_p_waves() {
    let (record, fids) = delineated(Morphology::AtrialFibrillation, 90.0, 8);
    let fs = extract_features(&record, &fids);
    assert!(fs.global.get("rr_irregularity").unwrap() > 0.2);
    for lead in ["I", "II", "III", "aVR", "aVL", "aVF"] {
        assert_eq!(fs.lead(lead).unwrap().get("p_amplitude"), None, "{lead}");
    }
}

#[test]
fn morphology_specific_features() {
    let (record, fids) = delineated(Morphology::Lvh, 70.0, 2);
    let fs = extract_features(&record, &fids);
    let sokolow = fs.lead("V1").unwrap().get("s_amplitude").unwrap() + fs.lead("V5").unwrap().get("r_amplitude").unwrap();
    assert!(sokolow >= 3500.0, "{sokolow}");

    let (record, fids) = delineated(Morphology::InferiorMi, 70.0, 2);
    let fs = extract_features(&record, &fids);
    for lead in ["II", "III", "aVF"] {
        assert_eq!(fs.lead(lead).unwrap().get("pathological_q"), Some(1.0), "{lead}");
    }

    let (record, fids) = delineated(Morphology::StDepression, 70.0, 2);
    let fs = extract_features(&record, &fids);
    assert!(fs.lead("V5").unwrap().get("st_level_j60").unwrap() < -50.0);
    assert!(fs.lead("V5").unwrap().get("t_amplitude").unwrap() < 0.0);
}

#[test]
fn json_round_trip_keeps_registry_names() {
    let (record, fids) = delineated(Morphology::Normal, 75.0, 4);
    let fs = extract_features(&record, &fids);
    let text = serde_json::to_string(&fs).unwrap();
    let back: FeatureSet = serde_json::from_str(&text).unwrap();
    assert_eq!(back, fs);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["global"]["heart rate"]["unit"], "bpm");
    assert_eq!(v["leads"].as_object().unwrap().len(), 12);
    assert_eq!(v["leads"]["V1"].as_object().unwrap().len(), 30);
    assert_eq!(v["demographics"]["sex"], "female");
    // Registry order is preserved in the output text.
    let pos = |s: &str| text.find(s).unwrap();
    assert!(pos("\"heart rate\"") < pos("\"RR interval\""));
}

#[test]
fn json_rejects_wrong_units_and_missing_leads() {
    let fs = FeatureSet::absent(9);
    let mut v = serde_json::to_value(&fs).unwrap();
    v["global"]["heart rate"]["unit"] = "Hz".into();
    let err = serde_json::from_value::<FeatureSet>(v).unwrap_err().to_string();
    assert!(err.contains("Hz"), "{err}");

    let mut v = serde_json::to_value(&fs).unwrap();
    v["leads"].as_object_mut().unwrap().remove("V6");
    assert!(serde_json::from_value::<FeatureSet>(v).is_err());

    let mut v = serde_json::to_value(&fs).unwrap();
    v["global"]["QRSS duration"] = serde_json::json!({"value": 1.0, "unit": "ms"});
    let err = serde_json::from_value::<FeatureSet>(v).unwrap_err().to_string();
    assert!(err.contains(&FeatureError::UnknownFeature("QRSS duration".into()).to_string()));
}

#[test]
fn absent_feature_set_has_twelve_empty_leads() {
    let fs = FeatureSet::absent(1);
    assert_eq!(fs.leads().len(), 12);
    for ((name, f), expected) in fs.leads().iter().zip(LEAD_NAMES) {
        assert_eq!(name, expected);
        assert_eq!(f.present_count(), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn amplitude_features_scale_with_signal(c in 0.01f64..100.0, hr in 45.0f64..140.0, seed in 0u64..1000) {
        let spec = synth::single_lead(hr, 500, seed % 2 == 0, seed);
        let lead = synth::generate(&spec).remove(0);
        let cfg = DelineatorConfig::default();
        let fset = ClassicDelineator::new(cfg).delineate_lead("II", &lead.samples, 500.0).unwrap();
        let scaled: Vec<f64> = lead.samples.iter().map(|v| v * c).collect();
        let a = extract_lead_features(&fset, &lead.samples, 500.0);
        let b = extract_lead_features(&fset, &scaled, 500.0);
        for (i, d) in LEAD_FEATURES.iter().enumerate() {
            let (va, vb) = (a.iter().nth(i).unwrap().1, b.iter().nth(i).unwrap().1);
            prop_assert_eq!(va.is_some(), vb.is_some(), "{} presence", d.key);
            if let (Some(va), Some(vb)) = (va, vb) {
                let expected = if d.unit.scales_with_amplitude() { va * c } else { va };
                let tol = 1e-9 * expected.abs().max(1.0);
                prop_assert!((vb - expected).abs() <= tol, "{}: {} vs {}", d.key, vb, expected);
            }
        }
    }

    #[test]
    fn qtc_bazett_decreases_with_rr(qt in 200.0f64..600.0, rr in 300.0f64..2000.0, step in 1.0f64..500.0) {
        prop_assert!(qtc_bazett(qt, rr + step) < qtc_bazett(qt, rr));
    }
}

#[test]
fn outlying_qrs_boundaries_follow_other_leads() {
    let beat = |on: usize, off: usize| Beat {
        qrs_onset: Some(on),
        qrs_offset: Some(off),
        ..Beat::anchored(1030)
    };
    let mut leads: Vec<FiducialSet> = ["I", "II", "III", "V1"].iter().map(|n| fid(n, vec![beat(1000, 1045)])).collect();
    leads[3].beats[0] = beat(1020, 1045);
    let out = ecgrag_core::delineation::reconcile_qrs(&record_fiducials(500, 3000, leads));
    assert_eq!(out.leads[3].beats[0].qrs_onset, Some(1000));
    assert_eq!(out.leads[0].beats[0].qrs_onset, Some(1000));
    assert_eq!(out.leads[3].beats[0].qrs_offset, Some(1045));
}
