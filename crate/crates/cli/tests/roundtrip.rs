use proptest::prelude::*;

use portfolio_vcg::PaymentBasis;
use portfolio_vcg_cli::format::{MarketFile, OfferRecord};

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn offer() -> impl Strategy<Value = OfferRecord> {
    (
        "[a-z0-9-]{1,12}",
        finite(),
        prop::bool::ANY,
        prop::option::of(finite()),
        prop::option::of(finite()),
    )
        .prop_map(|(id, bid, per_response, response_rate, cap)| OfferRecord {
            id,
            bid,
            basis: if per_response { PaymentBasis::PerResponse } else { PaymentBasis::PerAdCall },
            response_rate,
            cap,
        })
}

fn market_file() -> impl Strategy<Value = MarketFile> {
    (1usize..5).prop_flat_map(|n| {
        (
            prop::collection::vec(offer(), n),
            prop::collection::vec(prop::collection::vec(finite(), n), n),
            finite(),
            any::<u64>(),
        )
            .prop_map(|(offers, covariance, q, pool_size)| MarketFile { offers, covariance, q, pool_size })
    })
}

proptest! {
    #[test]
    fn market_files_round_trip_exactly(file in market_file()) {
        let back = MarketFile::parse(&file.emit()).unwrap();
        prop_assert_eq!(back.offers.len(), file.offers.len());
        for (a, b) in back.offers.iter().zip(&file.offers) {
            prop_assert_eq!(a.bid.to_bits(), b.bid.to_bits());
            prop_assert_eq!(a.response_rate.map(f64::to_bits), b.response_rate.map(f64::to_bits));
            prop_assert_eq!(a.cap.map(f64::to_bits), b.cap.map(f64::to_bits));
        }
        let bits = |m: &MarketFile| m.covariance.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&file));
        prop_assert_eq!(back.q.to_bits(), file.q.to_bits());
        prop_assert_eq!(back, file);
    }
}
