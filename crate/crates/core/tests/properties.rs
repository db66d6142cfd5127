mod common;

use common::props::*;

#[test]
fn soft_threshold() {
    soft_threshold_is_even_and_bounded(1000).unwrap();
}

#[test]
fn dynamics_derivatives() {
    dynamics_derivatives_match_finite_differences(1000).unwrap();
}

#[test]
fn position_independence() {
    velocity_derivatives_ignore_position(256).unwrap();
}

#[test]
fn throttle_scaling() {
    throttle_gain_trades_against_throttle(256).unwrap();
}

#[test]
fn markov_rollout() {
    rollout_is_markovian(64).unwrap();
}

#[test]
fn finite_rollouts() {
    rollout_stays_finite(128).unwrap();
}

#[test]
fn rollout_sensitivities() {
    sensitivities_match_finite_differences(24).unwrap();
}

#[test]
fn planar_projection() {
    planar_projection_round_trips(256).unwrap();
}

#[test]
fn stage1_monotone_cost() {
    stage1_cost_never_increases(4).unwrap();
}
