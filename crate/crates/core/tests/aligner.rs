mod common;

use common::pairs::*;
use phylogrid_core::aligner::*;
use phylogrid_core::seqio::Alignment;
use proptest::prelude::*;

fn unaligned_set() -> impl Strategy<Value = Alignment> {
    (2usize..=6).prop_flat_map(|n| {
        prop::collection::vec(
            prop::collection::vec(prop::sample::select(b"ACGTN".to_vec()), 1..25),
            n,
        )
        .prop_map(|rows| {
            Alignment::from_pairs(
                rows.into_iter()
                    .enumerate()
                    .map(|(i, r)| (format!("s{i}"), String::from_utf8(r).unwrap())),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn pairwise_matches_exhaustive_enumeration(a in short_seq(), b in short_seq(), s in scoring()) {
        check_pair(&a, &b, &s)?;
    }

    #[test]
    fn progressive_output_degaps_to_inputs(data in unaligned_set(), s in scoring()) {
        let out = realign(&data, &s).unwrap();
        prop_assert!(out.is_aligned());
        prop_assert_eq!(out.taxa(), data.taxa());
        for (o, i) in out.records().iter().zip(data.records()) {
            prop_assert_eq!(o.ungapped(), i.ungapped());
        }
        prop_assert!(out.records().iter().all(|r| r.residues.len() >= i_max(&data)));
    }

    #[test]
    fn realign_is_idempotent(data in unaligned_set()) {
        let s = ScoringParams::default();
        let once = realign(&data, &s).unwrap();
        prop_assert_eq!(realign(&once, &s).unwrap(), once);
    }

    #[test]
    fn worker_count_does_not_change_the_result(data in unaligned_set()) {
        let s = ScoringParams::default();
        let one = realign_with_workers(&data, &s, 1).unwrap();
        for w in [2, 3, 8] {
            prop_assert_eq!(&realign_with_workers(&data, &s, w).unwrap(), &one);
        }
    }
}

fn i_max(a: &Alignment) -> usize {
    a.records().iter().map(|r| r.ungapped().len()).max().unwrap()
}
