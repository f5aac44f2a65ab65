//! Property tests over the pure functions: reward gating, angle wrapping,
//! replay ring semantics and greedy-action invariance.

use proptest::prelude::*;
use riskshape::agents::{bin_control, ReplayBuffer};
use riskshape::env::{discrete_to_control, Action, ContinuousControl, StepEvents};
use riskshape::nn::argmax;
use riskshape::reward::{compute_reward, Preset};
use riskshape::world::wrap_angle;

fn events(new_tile: bool, collided: bool, off_track: bool) -> StepEvents {
    StepEvents {
        new_tile,
        collided,
        off_track,
        step_index: 1,
        consecutive_off_track_steps: usize::from(off_track),
    }
}

proptest! {
    #[test]
    fn wrap_angle_is_idempotent_and_in_range(a in -1e4f64..1e4) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI - 1e-12);
        prop_assert!(w <= std::f64::consts::PI + 1e-12);
        prop_assert!((wrap_angle(w) - w).abs() < 1e-12);
        prop_assert!((w.sin() - a.sin()).abs() < 1e-6);
    }

    #[test]
    fn off_track_never_pays(new_tile: bool, collided: bool) {
        for preset in Preset::ALL {
            let cfg = preset.config();
            let on = compute_reward(&events(new_tile, collided, false), &cfg);
            let off = compute_reward(&events(new_tile, collided, true), &cfg);
            prop_assert!(off < on);
        }
    }

    #[test]
    fn reward_is_additive_in_its_gates(new_tile: bool, collided: bool, off_track: bool) {
        for preset in Preset::ALL {
            let cfg = preset.config();
            let full = compute_reward(&events(new_tile, collided, off_track), &cfg);
            let parts = compute_reward(&events(new_tile, false, false), &cfg)
                + compute_reward(&events(false, collided, false), &cfg)
                + compute_reward(&events(false, false, off_track), &cfg)
                - 2.0 * cfg.r_alive;
            prop_assert!((full - parts).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_buffer_keeps_exactly_the_tail(capacity in 1usize..64, n in 0usize..256) {
        let mut buf = ReplayBuffer::new(capacity);
        for i in 0..n {
            buf.push(i);
        }
        prop_assert_eq!(buf.len(), n.min(capacity));
        let mut held: Vec<usize> = buf.iter().copied().collect();
        held.sort_unstable();
        let expect: Vec<usize> = (n.saturating_sub(capacity)..n).collect();
        prop_assert_eq!(held, expect);
    }

    #[test]
    fn greedy_choice_ignores_constant_shifts(
        q in prop::array::uniform5(-100.0f64..100.0),
        shift in -1e6f64..1e6,
    ) {
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        prop_assert_eq!(argmax(&q), argmax(&shifted));
    }

    #[test]
    fn binned_action_is_nearest_canonical(
        steer in -1.0f64..1.0,
        accel in 0.0f64..1.0,
        brake in 0.0f64..1.0,
    ) {
        let control = ContinuousControl::new(steer, accel, brake);
        let chosen = bin_control(&control);
        let dist = |a: Action| {
            let c = discrete_to_control(a);
            (control.steer - c.steer).powi(2)
                + (control.accel - c.accel).powi(2)
                + (control.brake - c.brake).powi(2)
        };
        for other in Action::ALL {
            prop_assert!(dist(chosen) <= dist(other));
        }
    }
}
