use quantspoof::family::{AttackForm, ObservationFamily};
use quantspoof::model::*;
use quantspoof::quantizer::Quantizer;

fn sensor(observations: usize) -> Sensor {
    Sensor {
        quantizer: Quantizer::new(vec![0.0]).unwrap(),
        family: ObservationFamily::GaussianMean { variance: 1.0 },
        attack: AttackForm::AdditiveMeanOffset,
        observations,
    }
}

#[test]
fn partition_and_dims() {
    let m = NetworkModel::new(vec![sensor(5), sensor(5), sensor(5)], vec![vec![1], vec![2]]).unwrap();
    assert_eq!(m.group(0), vec![0]);
    assert_eq!(m.group(2), vec![2]);
    assert_eq!(m.joint_dim(), 3);
    assert!(NetworkModel::new(vec![sensor(5), sensor(5)], vec![vec![0], vec![0]]).is_err());
    assert!(NetworkModel::new(vec![sensor(5)], vec![vec![]]).is_err());
    assert!(NetworkModel::new(vec![sensor(0)], vec![]).is_err());
}

#[test]
fn pattern_counts_cover_all_observations() {
    let mut s = sensor(7);
    s.attack = AttackForm::OverParameterizedAdditive { basis: vec![vec![1.0, 2.0, 3.0]] };
    assert_eq!(s.period(), 3);
    let counts: Vec<usize> = (0..3).map(|m| s.pattern_count(m)).collect();
    assert_eq!(counts, vec![3, 2, 2]);
}
