use proptest::prelude::*;

use zsaudio::dsp::{compute_logmel, MelConfig, Waveform};
use zsaudio::protocol::{balance_folds, TagCount, TagCountTable};
use zsaudio::ClassId;

fn table(counts: &[u64]) -> TagCountTable {
    TagCountTable::new(
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| TagCount {
                class_id: ClassId(format!("k{i:03}")),
                label: format!("class {i}"),
                count: c,
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fold_totals_stay_within_the_largest_count(
        counts in prop::collection::vec(0u64..500, 2..40),
        k in 2usize..8,
    ) {
        prop_assume!(k <= counts.len());
        let s = balance_folds(&table(&counts), k, &[]).unwrap();
        let totals: Vec<u64> = s.folds.iter().map(|f| f.total).collect();
        let spread = totals.iter().max().unwrap() - totals.iter().min().unwrap();
        prop_assert!(spread <= *counts.iter().max().unwrap());
        prop_assert_eq!(totals.iter().sum::<u64>(), counts.iter().sum::<u64>());
        let assigned: usize = s.folds.iter().map(|f| f.classes.len()).sum();
        prop_assert_eq!(assigned, counts.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extractor_frames_match_the_window_walk(window in 64usize..1024, hop_frac in 0.05f64..1.0, extra in 0usize..4000) {
        let hop = ((window as f64 * hop_frac) as usize).max(1);
        let cfg = MelConfig {
            window_len: window,
            hop_len: hop,
            ..MelConfig::toy()
        };
        let n = window + extra;
        let m = compute_logmel(&Waveform::new(vec![0.1; n], cfg.sample_rate).unwrap(), &cfg).unwrap();
        let walked = (0..).map(|i| i * hop).take_while(|s| s + window <= n).count();
        prop_assert_eq!(m.n_frames(), walked);
    }
}

#[test]
fn hand_derived_two_fold_totals() {
    let s = balance_folds(&table(&[10, 8, 6, 4, 2]), 2, &[]).unwrap();
    let totals: Vec<u64> = s.folds.iter().map(|f| f.total).collect();
    assert_eq!(totals, vec![16, 14]);
}
