use quantspoof::quantizer::*;
use proptest::prelude::*;

fn drfm() -> Quantizer {
    Quantizer::uniform(-5.0, 1.0, 15).unwrap()
}

#[test]
fn examples() {
    let q = drfm();
    assert_eq!(q.levels(), 16);
    assert_eq!(q.quantize(0.3).unwrap(), 7);
    assert_eq!(q.quantize(-5.0).unwrap(), 1);
    assert_eq!(q.quantize(10.0).unwrap(), 16);
    assert_eq!(q.quantize(-6.0).unwrap(), 1);
    assert_eq!(q.quantize(f64::INFINITY).unwrap(), 16);
    assert!(q.quantize(f64::NAN).is_err());
}

#[test]
fn rejects_bad_thresholds() {
    assert!(Quantizer::new(vec![]).is_err());
    assert!(Quantizer::new(vec![1.0, 1.0]).is_err());
    assert!(Quantizer::new(vec![2.0, 1.0]).is_err());
    assert!(Quantizer::new(vec![0.0, f64::NAN]).is_err());
}

proptest! {
    #[test]
    fn level_region_contains_value(x in -20.0f64..20.0) {
        let q = drfm();
        let r = q.quantize(x).unwrap();
        prop_assert!((1..=q.levels()).contains(&r));
        let (lo, hi) = q.region(r);
        prop_assert!(lo < x && x <= hi);
    }

    #[test]
    fn monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let q = drfm();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(q.quantize(lo).unwrap() <= q.quantize(hi).unwrap());
    }
}
