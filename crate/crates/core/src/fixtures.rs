//! The three canonical instances shipped with the crate.
//!
//! * `pair4`: two 2-point components, source and target one point each.
//! * `six`: teacher wrong on one of three source points of component 1.
//! * `chain`: two 5-point chains linked only through the cover U.
//!
//! The JSON copies under `fixtures/` are parsed in tests and must agree with
//! the constructors here.

use crate::instance::{Classifier, Component, Measure, NeighborhoodRelation, Point, ShiftInstance};
use crate::margins::FeedforwardNet;

const PAIR4_JSON: &str = include_str!("../fixtures/pair4.json");
const SIX_JSON: &str = include_str!("../fixtures/six.json");
const CHAIN_JSON: &str = include_str!("../fixtures/chain.json");

fn bare_points(n: usize) -> Vec<Point> {
    (0..n).map(|id| Point { id, features: None }).collect()
}

/// Points a1, a2, b1, b2 = 0, 1, 2, 3.
pub fn pair4() -> ShiftInstance {
    let features = [[-1.0, 0.0], [-1.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    let points = features.iter().enumerate().map(|(id, f)| Point { id, features: Some(f.to_vec()) }).collect();
    let components = vec![Component::new(1, vec![0], vec![1], None), Component::new(2, vec![2], vec![3], None)];
    ShiftInstance::new(
        2,
        points,
        components,
        Measure::uniform(4, &[0, 2]).unwrap(),
        Measure::uniform(4, &[1, 3]).unwrap(),
        None,
        NeighborhoodRelation::new(vec![vec![0, 1], vec![0, 1], vec![2, 3], vec![2, 3]]).unwrap(),
        Classifier::new(vec![1, 1, 2, 2], 2).unwrap(),
        None,
    )
    .unwrap()
}

/// Points s1, s2, s3, t1, u1, v1 = 0..6.
pub fn six() -> ShiftInstance {
    let components = vec![Component::new(1, vec![0, 1, 2], vec![3], None), Component::new(2, vec![4], vec![5], None)];
    let comp1 = vec![0, 1, 2, 3];
    let comp2 = vec![4, 5];
    ShiftInstance::new(
        2,
        bare_points(6),
        components,
        Measure::uniform(6, &[0, 1, 2, 4]).unwrap(),
        Measure::uniform(6, &[3, 5]).unwrap(),
        None,
        NeighborhoodRelation::new(vec![comp1.clone(), comp1.clone(), comp1.clone(), comp1, comp2.clone(), comp2]).unwrap(),
        // wrong on s3; off-source labels are arbitrary and chosen wrong here
        Classifier::new(vec![1, 1, 2, 2, 2, 1], 2).unwrap(),
        Some(Classifier::new(vec![1, 1, 1, 1, 2, 2], 2).unwrap()),
    )
    .unwrap()
}

/// Forward balls `B(p_j) = {p_j, p_{j+1}}` along a chain of consecutive ids.
pub(crate) fn forward_chain_balls(balls: &mut [Vec<usize>], chain: &[usize]) {
    for (j, &x) in chain.iter().enumerate() {
        let mut ball = vec![x];
        if let Some(&next) = chain.get(j + 1) {
            ball.push(next);
        }
        balls[x] = ball;
    }
}

/// Chains p0..p4 = 0..5 (label 1) and q0..q4 = 5..10 (label 2).
pub fn chain() -> ShiftInstance {
    let p: Vec<usize> = (0..5).collect();
    let q: Vec<usize> = (5..10).collect();
    let components = vec![
        Component::new(1, vec![0], vec![4], Some(p.clone())),
        Component::new(2, vec![5], vec![9], Some(q.clone())),
    ];
    let mut balls = vec![Vec::new(); 10];
    forward_chain_balls(&mut balls, &p);
    forward_chain_balls(&mut balls, &q);
    let truth = Classifier::new(vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2], 2).unwrap();
    ShiftInstance::new(
        2,
        bare_points(10),
        components,
        Measure::uniform(10, &[0, 5]).unwrap(),
        Measure::uniform(10, &[4, 9]).unwrap(),
        Some(Measure::uniform(10, &(0..10).collect::<Vec<_>>()).unwrap()),
        NeighborhoodRelation::new(balls).unwrap(),
        truth.clone(),
        Some(truth),
    )
    .unwrap()
}

pub fn all() -> Vec<(&'static str, ShiftInstance)> {
    vec![("pair4", pair4()), ("six", six()), ("chain", chain())]
}

pub fn by_name(name: &str) -> Option<ShiftInstance> {
    match name {
        "pair4" => Some(pair4()),
        "six" => Some(six()),
        "chain" => Some(chain()),
        _ => None,
    }
}

pub fn json(name: &str) -> Option<&'static str> {
    match name {
        "pair4" => Some(PAIR4_JSON),
        "six" => Some(SIX_JSON),
        "chain" => Some(CHAIN_JSON),
        _ => None,
    }
}

const TOY_NETS: [(&str, &str); 10] = [
    ("net01", include_str!("../fixtures/nets/net01.json")),
    ("net02", include_str!("../fixtures/nets/net02.json")),
    ("net03", include_str!("../fixtures/nets/net03.json")),
    ("net04", include_str!("../fixtures/nets/net04.json")),
    ("net05", include_str!("../fixtures/nets/net05.json")),
    ("net06", include_str!("../fixtures/nets/net06.json")),
    ("net07", include_str!("../fixtures/nets/net07.json")),
    ("net08", include_str!("../fixtures/nets/net08.json")),
    ("net09", include_str!("../fixtures/nets/net09.json")),
    ("net10", include_str!("../fixtures/nets/net10.json")),
];

/// Ten small 2-D networks: six single-layer 2×2 maps and four `[2, 1, 2]` ReLU nets.
pub fn toy_nets() -> Vec<(&'static str, FeedforwardNet)> {
    TOY_NETS
        .iter()
        .map(|(name, text)| (*name, FeedforwardNet::from_json(text).expect("shipped net parses")))
        .collect()
}
