//! Randomised invariants of the trading simulation.

use chrono::{Days, NaiveDate};
use hybridcast::backtest::{
    buy_and_hold, ir, ir_star, mae, max_drawdown, positions, rmse, run_strategy, signals,
    StrategyConfig, StrategyMode,
};
use proptest::prelude::*;

fn dates(n: usize) -> (NaiveDate, Vec<NaiveDate>) {
    let anchor = NaiveDate::from_ymd_opt(2015, 1, 2).unwrap();
    (
        anchor,
        (1..=n as u64).map(|i| anchor + Days::new(i)).collect(),
    )
}

fn returns(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.2f64..0.2, n)
}

fn signal_vec(len: usize) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(prop_oneof![Just(-1i8), Just(0i8), Just(1i8)], len)
}

fn returns_and_signals() -> impl Strategy<Value = (Vec<f64>, Vec<i8>)> {
    returns(1..250).prop_flat_map(|r| {
        let n = r.len();
        (Just(r), signal_vec(n))
    })
}

fn mode() -> impl Strategy<Value = StrategyMode> {
    prop_oneof![Just(StrategyMode::LongShort), Just(StrategyMode::LongOnly)]
}

fn cfg(mode: StrategyMode, tc: f64) -> StrategyConfig {
    StrategyConfig {
        mode,
        tc,
        trading_days: 252.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn higher_costs_never_raise_final_equity(
        (r, sig) in returns_and_signals(),
        mode in mode(),
        tc_lo in 0.0f64..0.01,
        extra in 0.0f64..0.01,
    ) {
        let (anchor, d) = dates(r.len());
        let lo = run_strategy(anchor, &d, &r, &sig, &cfg(mode, tc_lo)).unwrap();
        let hi = run_strategy(anchor, &d, &r, &sig, &cfg(mode, tc_lo + extra)).unwrap();
        prop_assert!(hi.equity.last().unwrap() <= lo.equity.last().unwrap());
    }

    #[test]
    fn costless_always_long_is_buy_and_hold(r in returns(1..400)) {
        let (anchor, d) = dates(r.len());
        let bh = buy_and_hold(anchor, &d, &r, 252.0).unwrap();
        let long = run_strategy(anchor, &d, &r, &vec![1; r.len()], &cfg(StrategyMode::LongShort, 0.0)).unwrap();
        let mut compounded = 1.0;
        for (i, x) in r.iter().enumerate() {
            compounded *= 1.0 + x;
            prop_assert!((long.equity[i + 1] - bh.equity[i + 1]).abs() <= 1e-12);
            prop_assert!((bh.equity[i + 1] - compounded).abs() <= 1e-12 * compounded.max(1.0));
        }
    }

    #[test]
    fn drawdown_is_bounded_and_grows_with_the_prefix(
        (r, sig) in returns_and_signals(),
        mode in mode(),
        tc in 0.0f64..0.01,
    ) {
        let (anchor, d) = dates(r.len());
        let res = run_strategy(anchor, &d, &r, &sig, &cfg(mode, tc)).unwrap();
        let mut prev = 0.0;
        for k in 1..=res.equity.len() {
            let md = max_drawdown(&res.equity[..k]);
            prop_assert!((0.0..=1.0).contains(&md));
            prop_assert!(md >= prev);
            prev = md;
        }
        prop_assert_eq!(prev, res.metrics.md);
    }

    #[test]
    fn positions_stay_in_their_mode_range(sig in signal_vec(300), mode in mode()) {
        let pos = positions(&sig, mode);
        let allowed: &[i8] = match mode {
            StrategyMode::LongOnly => &[0, 1],
            StrategyMode::LongShort => &[-1, 0, 1],
        };
        prop_assert!(pos.iter().all(|p| allowed.contains(p)));
        let mut held = 0;
        for (s, p) in sig.iter().zip(&pos) {
            if *p != held {
                prop_assert!(*s != 0 && *s != held);
            }
            held = *p;
        }
    }

    #[test]
    fn rmse_dominates_mae(
        pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..200)
    ) {
        let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&p, &a).unwrap();
        let m = mae(&p, &a).unwrap();
        prop_assert!(r >= m * (1.0 - 1e-15));
        let bias = p.iter().zip(&a).map(|(x, y)| x - y).sum::<f64>() / p.len() as f64;
        prop_assert!(r >= bias.abs() * (1.0 - 1e-15));
    }

    #[test]
    fn ratios_reconstruct_their_inputs(
        (r, sig) in returns_and_signals(),
        mode in mode(),
        tc in 0.0f64..0.001,
    ) {
        let (anchor, d) = dates(r.len());
        let m = run_strategy(anchor, &d, &r, &sig, &cfg(mode, tc)).unwrap().metrics;
        // a quotient times its divisor recovers the dividend up to rounding
        // of the two floating-point operations
        let ulps = 4.0 * f64::EPSILON * m.arc.abs();
        if m.asd > 0.0 {
            prop_assert!((ir(m.arc, m.asd) * m.asd - m.arc).abs() <= ulps);
        }
        let (irs, degenerate) = ir_star(m.arc, m.asd, m.md);
        if !degenerate {
            let back = irs * m.asd * m.md;
            prop_assert!((back - m.arc * m.arc * m.arc.signum()).abs() <= 8.0 * f64::EPSILON * m.arc * m.arc);
        }
    }

    #[test]
    fn signal_band_is_closed_at_the_threshold(
        f in prop::collection::vec(-0.01f64..0.01, 1..100),
        c in 0.0f64..0.005,
    ) {
        for (x, s) in f.iter().zip(signals(&f, c)) {
            let expected = if *x > c { 1 } else if *x < -c { -1 } else { 0 };
            prop_assert_eq!(s, expected);
        }
        prop_assert_eq!(signals(&[c, -c], c), vec![0, 0]);
    }
}
