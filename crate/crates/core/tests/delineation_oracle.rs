use ecgrag_core::delineation::{
    delineate_waves, detect_qrs, preprocess, ClassicDelineator, Delineator, DelineatorConfig,
};
use ecgrag_core::ptbxl::Sex;
use ecgrag_core::synth::{self, Morphology, SynthSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] }
}

fn random_spec(seed: u64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hr = rng.random_range(40.0..=150.0);
    let axis = rng.random_range(-30.0..90.0);
    let mut leads = synth::twelve_lead_templates(Morphology::Normal, axis);
    if seed % 2 == 1 {
        leads.iter_mut().for_each(|l| l.p = None);
    }
    SynthSpec {
        fs: 500,
        duration_s: 10.0,
        rhythm: synth::Rhythm {
            heart_rate_bpm: hr,
            irregularity: 0.0,
            pr_interval_ms: 160.0,
        },
        leads,
        snr_db: if (seed / 2) % 2 == 1 { Some(10.0) } else { None },
        baseline_drift_mv: 0.0,
        seed,
    }
}

#[test]
fn twelve_lead_oracle_records() {
    let delineator = ClassicDelineator::default();
    for seed in 0..50u64 {
        let spec = random_spec(seed);
        let (record, truth) = synth::generate_record(seed as u32, &spec, None, Sex::Unknown);
        let fid = delineator.delineate(&record).unwrap();
        let mut measured = Vec::new();
        let mut expected = Vec::new();
        for (set, t) in fid.leads.iter().zip(&truth) {
            set.check_invariants(record.n_samples(), 500.0).unwrap();
            assert!(
                set.beats.len().abs_diff(t.beats.len()) <= 1,
                "seed {seed} lead {}: {} vs {}",
                set.lead,
                set.beats.len(),
                t.beats.len()
            );
            let d: Vec<f64> = set
                .beats
                .iter()
                .filter_map(|b| Some((b.qrs_offset? - b.qrs_onset?) as f64 * 2.0))
                .collect();
            measured.push(median(d));
            expected.push(median(t.beats.iter().map(|b| (b.qrs_offset - b.qrs_onset) as f64 * 2.0).collect()));
        }
        let (m, e) = (median(measured), median(expected));
        assert!((m - e).abs() <= 10.0, "seed {seed}: QRS {m} vs {e}");
    }
}

#[test]
fn atrial_fibrillation_leads_have_no_p() {
    let spec = synth::scenario(Morphology::AtrialFibrillation, 95.0, 500, 5);
    let (record, _) = synth::generate_record(1, &spec, None, Sex::Unknown);
    let fid = ClassicDelineator::default().delineate(&record).unwrap();
    for set in &fid.leads {
        assert!(set.beats.iter().all(|b| b.p_peak.is_none()), "{}", set.lead);
    }
}

#[test]
fn hundred_hz_records_delineate() {
    let spec = synth::scenario(Morphology::Normal, 70.0, 100, 6);
    let (record, truth) = synth::generate_record(2, &spec, None, Sex::Unknown);
    let fid = ClassicDelineator::default().delineate(&record).unwrap();
    let ii = fid.lead("II").unwrap();
    ii.check_invariants(record.n_samples(), 100.0).unwrap();
    assert!(ii.beats.len().abs_diff(truth[1].beats.len()) <= 1);
}

fn delineate_one(x: &[f64]) -> Vec<ecgrag_core::delineation::Beat> {
    let cfg = DelineatorConfig::default();
    let y = preprocess(x, 500.0, &cfg).unwrap();
    let r = detect_qrs(&y, 500.0, &cfg);
    delineate_waves(&y, 500.0, &r, &cfg).beats
}

fn arb_lead() -> impl Strategy<Value = SynthSpec> {
    (40.0f64..150.0, any::<bool>(), 0.08f64..0.3, 0.15f64..0.6, 1.0f64..2.0, any::<u64>(), prop::option::of(10.0f64..30.0))
        .prop_map(|(hr, p, pa, ta, ra, seed, snr)| {
            let mut spec = synth::single_lead(hr, 500, p, seed);
            let t = &mut spec.leads[0];
            if let Some(b) = t.p.as_mut() {
                b.amplitude_mv = pa;
            }
            t.t.as_mut().unwrap().amplitude_mv = ta;
            t.qrs[1].amplitude_mv = ra;
            spec.snr_db = snr;
            spec
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ordering_invariants_hold(spec in arb_lead()) {
        let lead = &synth::generate(&spec)[0];
        let cfg = DelineatorConfig::default();
        let y = preprocess(&lead.samples, 500.0, &cfg).unwrap();
        let r = detect_qrs(&y, 500.0, &cfg);
        let set = delineate_waves(&y, 500.0, &r, &cfg);
        prop_assert!(set.check_invariants(lead.samples.len(), 500.0).is_ok());
    }

    #[test]
    fn deterministic(spec in arb_lead()) {
        let lead = &synth::generate(&spec)[0];
        prop_assert_eq!(delineate_one(&lead.samples), delineate_one(&lead.samples));
    }

    #[test]
    fn amplitude_scale_leaves_indices(spec in arb_lead(), c in 1.0f64..4.0) {
        let mut spec = spec;
        spec.snr_db = None;
        let lead = &synth::generate(&spec)[0];
        let scaled: Vec<f64> = lead.samples.iter().map(|v| v * c).collect();
        prop_assert_eq!(delineate_one(&lead.samples), delineate_one(&scaled));
    }

    #[test]
    fn time_shift_moves_indices(spec in arb_lead(), k in 1usize..200) {
        let mut spec = spec;
        spec.snr_db = None;
        let lead = &synth::generate(&spec)[0];
        let n = lead.samples.len();
        let last_end = lead.beats.last().and_then(|b| b.t_offset).unwrap_or(0);
        prop_assume!(last_end + k + 1 < n);
        let cfg = DelineatorConfig::default();
        let y = preprocess(&lead.samples, 500.0, &cfg).unwrap();
        let mut shifted = vec![y[0]; k];
        shifted.extend_from_slice(&y[..n - k]);
        let stages = |v: &[f64]| {
            let r = detect_qrs(v, 500.0, &cfg);
            delineate_waves(v, 500.0, &r, &cfg).beats
        };
        let base = stages(&y);
        prop_assume!(base.last().is_some_and(|b| b.max_index() + k < n));
        let moved = stages(&shifted);
        let expected: Vec<_> = base.iter().map(|b| b.shifted(k as isize)).collect();
        prop_assert_eq!(expected, moved);
    }

    #[test]
    fn band_pass_is_shift_equivariant_away_from_edges(spec in arb_lead(), k in 1usize..200) {
        let lead = &synth::generate(&spec)[0];
        let n = lead.samples.len();
        let cfg = DelineatorConfig::default();
        let y = preprocess(&lead.samples, 500.0, &cfg).unwrap();
        let mut x = vec![lead.samples[0]; k];
        x.extend_from_slice(&lead.samples[..n - k]);
        let ys = preprocess(&x, 500.0, &cfg).unwrap();
        for i in 1500..n - 1500 {
            prop_assert!((ys[i + k] - y[i]).abs() < 5e-3, "sample {}: {} vs {}", i, ys[i + k], y[i]);
        }
    }
}

#[test]
fn thousand_random_beats_stay_ordered() {
    let mut beats = 0;
    let mut seed = 1000;
    while beats < 1000 {
        let spec = random_spec(seed);
        let leads = synth::generate(&spec);
        for lead in leads.iter().take(3) {
            for b in delineate_one(&lead.samples) {
                assert!(b.is_ordered(), "seed {seed}: {b:?}");
                beats += 1;
            }
        }
        seed += 1;
    }
}
