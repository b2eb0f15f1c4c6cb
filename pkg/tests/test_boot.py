"""Boot strategies: mains debounce, drain detector, peer scanning."""

import itertools

import pytest

from lifeline.boot import (
    BootAction,
    BootController,
    BootDecision,
    PeerObservation,
    PowerEvent,
    Signature,
    scan_and_decide,
)
from lifeline.messages import InvariantViolation

MIN = 60_000


def obs(signature, ssid="peer", strength=-40.0):
    return PeerObservation(ssid=ssid, signal_strength=strength, signature=signature)


# --- strategy 1: mains debounce ------------------------------------------------

def test_outage_past_debounce_enters_emergency():
    ctl = BootController()
    assert ctl.on_power_event(PowerEvent.MAINS_LOST, 0) is BootAction.NO_ACTION
    assert ctl.poll_mains(29_999) is BootAction.NO_ACTION
    assert ctl.poll_mains(30_000) is BootAction.ENTER_EMERGENCY
    assert ctl.in_emergency
    assert ctl.own_signature is Signature.EMERGENCY_NODE


def test_restore_within_debounce_cancels():
    ctl = BootController()
    ctl.on_power_event(PowerEvent.MAINS_LOST, 0)
    ctl.on_power_event(PowerEvent.MAINS_RESTORED, 10_000)
    assert ctl.poll_mains(60_000) is BootAction.NO_ACTION
    assert not ctl.in_emergency


def test_one_emergency_per_outage():
    ctl = BootController()
    ctl.on_power_event(PowerEvent.MAINS_LOST, 0)
    assert ctl.poll_mains(30_000) is BootAction.ENTER_EMERGENCY
    assert ctl.poll_mains(31_000) is BootAction.NO_ACTION
    assert ctl.poll_mains(500_000) is BootAction.NO_ACTION
    # A fresh outage may fire again.
    ctl.on_power_event(PowerEvent.MAINS_RESTORED, 600_000)
    ctl.on_power_event(PowerEvent.MAINS_LOST, 700_000)
    assert ctl.poll_mains(730_000) is BootAction.ENTER_EMERGENCY


def test_repeated_loss_events_keep_first_timestamp():
    ctl = BootController()
    ctl.on_power_event(PowerEvent.MAINS_LOST, 0)
    ctl.on_power_event(PowerEvent.MAINS_LOST, 25_000)
    assert ctl.poll_mains(30_000) is BootAction.ENTER_EMERGENCY


def test_flapping_mains_never_fires():
    ctl = BootController()
    fired = 0
    for t in range(0, 5 * MIN, 10_000):
        ctl.on_power_event(PowerEvent.MAINS_LOST, t)
        fired += ctl.poll_mains(t + 5_000) is BootAction.ENTER_EMERGENCY
        ctl.on_power_event(PowerEvent.MAINS_RESTORED, t + 5_000)
        fired += ctl.poll_mains(t + 9_999) is BootAction.ENTER_EMERGENCY
    assert fired == 0
    assert not ctl.in_emergency


# --- strategy 2: drain detector -------------------------------------------------

def feed_linear(ctl, start_ms, end_ms, start_pct, rate_pct_per_min, step_ms=10_000):
    """Feed a linear drain segment; returns the actions and final percent."""
    actions = []
    pct = start_pct
    for t in range(start_ms, end_ms, step_ms):
        pct = start_pct - rate_pct_per_min * (t - start_ms) / MIN
        actions.append(ctl.detect_battery_drop(t, pct))
    return actions, pct


def test_flat_curve_never_alarms():
    ctl = BootController()
    actions = [ctl.detect_battery_drop(t, 100.0) for t in range(0, 20 * MIN, 10_000)]
    assert set(actions) == {BootAction.NO_ACTION}


def test_rate_jump_alarms():
    ctl = BootController()
    actions, pct = feed_linear(ctl, 0, 12 * MIN, 100.0, 0.01)
    assert set(actions) == {BootAction.NO_ACTION}
    actions, _ = feed_linear(ctl, 12 * MIN, 15 * MIN, pct, 0.2)
    assert BootAction.ENTER_EMERGENCY in actions
    assert ctl.in_emergency


def test_noisy_trace_within_theta_stays_quiet():
    # Pair rates alternate 0.05 and 0.15 %/min (median 0.1); the window
    # rate never exceeds theta times that.
    ctl = BootController()
    pct = 100.0
    t = 0
    actions = []
    for i in range(120):
        rate = 0.05 if i % 2 == 0 else 0.15
        pct -= rate * (10_000 / MIN)
        t += 10_000
        actions.append(ctl.detect_battery_drop(t, pct))
    assert set(actions) == {BootAction.NO_ACTION}


def test_insufficient_history_is_no_action():
    ctl = BootController()
    assert ctl.detect_battery_drop(0, 90.0) is BootAction.NO_ACTION
    # Two samples make a window rate but still no baseline before it.
    assert ctl.detect_battery_drop(10_000, 80.0) is BootAction.NO_ACTION


def test_alarm_rate_limited_to_one_per_hour():
    ctl = BootController()
    _, pct = feed_linear(ctl, 0, 11 * MIN, 100.0, 0.01)
    actions, pct = feed_linear(ctl, 11 * MIN, 13 * MIN, pct, 0.5)
    assert actions.count(BootAction.ENTER_EMERGENCY) == 1
    # Calm down, then spike again within the hour: suppressed.
    actions, pct = feed_linear(ctl, 13 * MIN, 24 * MIN, pct, 0.01)
    assert BootAction.ENTER_EMERGENCY not in actions
    actions, pct = feed_linear(ctl, 24 * MIN, 26 * MIN, pct, 0.5)
    assert BootAction.ENTER_EMERGENCY not in actions
    # Past the cooldown the detector may fire anew.
    actions, pct = feed_linear(ctl, 26 * MIN, 73 * MIN, max(pct, 60.0), 0.01)
    actions, _ = feed_linear(ctl, 73 * MIN, 75 * MIN, pct, 0.5)
    assert BootAction.ENTER_EMERGENCY in actions


def test_samples_must_move_forward():
    ctl = BootController()
    ctl.detect_battery_drop(1_000, 90.0)
    with pytest.raises(InvariantViolation):
        ctl.detect_battery_drop(1_000, 89.0)


def test_battery_percent_bounds_checked():
    ctl = BootController()
    with pytest.raises(InvariantViolation):
        ctl.detect_battery_drop(0, 101.0)


# --- strategy 3: scanning -------------------------------------------------------

def test_station_in_range_switches():
    decision = scan_and_decide([obs(Signature.NONE), obs(Signature.TEMPORARY_STATION)])
    assert decision is BootDecision.SWITCH


def test_emergency_peer_joins():
    decision = scan_and_decide([obs(Signature.EMERGENCY_NODE), obs(Signature.NONE)])
    assert decision is BootDecision.JOIN


def test_nothing_seen_waits():
    assert scan_and_decide([obs(Signature.NONE)]) is BootDecision.WAIT
    assert scan_and_decide([]) is BootDecision.WAIT


def test_precedence_exhaustive_over_signature_combos():
    sigs = [Signature.NONE, Signature.EMERGENCY_NODE, Signature.TEMPORARY_STATION]
    for size in range(0, 4):
        for combo in itertools.product(sigs, repeat=size):
            decision = scan_and_decide([obs(s) for s in combo])
            if Signature.TEMPORARY_STATION in combo:
                assert decision is BootDecision.SWITCH
            elif Signature.EMERGENCY_NODE in combo:
                assert decision is BootDecision.JOIN
            else:
                assert decision is BootDecision.WAIT


def test_switch_and_join_stamp_own_signature():
    for trigger in (Signature.TEMPORARY_STATION, Signature.EMERGENCY_NODE):
        ctl = BootController()
        ctl.scan([obs(trigger)], now=0)
        assert ctl.own_signature is Signature.EMERGENCY_NODE
        assert ctl.in_emergency


def test_wait_schedules_rescan():
    ctl = BootController()
    assert ctl.scan([], now=5_000) is BootDecision.WAIT
    assert ctl.next_rescan_at == 65_000
    assert ctl.own_signature is Signature.NONE


def test_emergency_spreads_within_diameter_rounds():
    # Line: station - r1 - r2 - r3 - r4 - r5; simultaneous scan rounds.
    controllers = [BootController() for _ in range(5)]
    def visible(i):
        out = []
        if i == 0:
            out.append(obs(Signature.TEMPORARY_STATION, ssid="station"))
        else:
            out.append(obs(controllers[i - 1].own_signature, ssid=f"r{i}"))
        if i + 1 < len(controllers):
            out.append(obs(controllers[i + 1].own_signature, ssid=f"r{i+2}"))
        return out

    for round_no in range(len(controllers)):
        scans = [visible(i) for i in range(len(controllers))]
        for ctl, seen in zip(controllers, scans):
            if not ctl.in_emergency:
                ctl.scan(seen, now=round_no * MIN)
    assert all(ctl.in_emergency for ctl in controllers)
    assert controllers[0].history[0][1] == "switch"
    assert all(ctl.history[0][1] == "join" for ctl in controllers[1:])
