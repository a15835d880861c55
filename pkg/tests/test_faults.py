import numpy as np
import pytest

from dmrsafety.config import builtin_path, load_fault_plan, load_node_config, load_rules, load_scenario
from dmrsafety.distributions import ConfigError
from dmrsafety.engine import ms
from dmrsafety.faults import (
    CoverageReport,
    FaultInjection,
    FaultPlanError,
    FaultRecord,
    detection_window,
    diagnostic_coverage,
    first_less_conservative,
    inject_all,
    load_plan,
    measure,
    fault_table_csv,
    unsafe_instants,
    validate_plan,
)
from dmrsafety.node import SafetyCommand
from dmrsafety.perception import demand_instants
from dmrsafety.redundancy import DEFAULT_RECOVERY, FaultKind, MergedOutput, RedundancyConfig, command_at
from dmrsafety.system import build_pair

K = FaultKind


@pytest.fixture(scope="module")
def predicate():
    return load_rules(builtin_path("cobot.rules"))


@pytest.fixture(scope="module")
def scenario():
    return load_scenario(builtin_path("scenario1.yaml"))


@pytest.fixture(scope="module")
def node_cfg():
    return load_node_config(builtin_path("node_s1.yaml"))


def single(predicate, scenario, node_cfg, fault, end_ms, red=None, seed=11, node_ids=("A", "B")):
    system = build_pair(predicate, scenario, node_cfg, red, seed, node_ids)
    if fault is not None:
        inject_all(system, [fault])
    return system.run(ms(end_ms))


def test_plan_loading():
    plan = load_fault_plan(builtin_path("fault_campaign.yaml"))
    assert [f.kind for f in plan] == [K.HEARTBEAT_LOSS, K.NPU_HANG, K.POWER_BROWNOUT, K.SENSOR_FAULT]
    assert plan[2].params["depth"] == 0.2
    assert load_plan([f.to_dict() for f in plan]) == plan
    with pytest.raises(ConfigError):
        load_plan([{"target": "A", "kind": "Gremlin", "inject_at_ms": 1}])
    with pytest.raises(ConfigError):
        load_plan([{"target": "A", "kind": "NpuHang"}])


def test_single_fault_mode_rejects_overlap():
    a = FaultInjection("A", K.NPU_HANG, ms(1000))
    b = FaultInjection("B", K.SENSOR_FAULT, ms(1200))
    with pytest.raises(FaultPlanError):
        validate_plan([a, b], ["A", "B"])
    validate_plan([a, b], ["A", "B"], single_fault=False)
    late = FaultInjection("B", K.SENSOR_FAULT, ms(1000) + ms(4) + ms(313.61) + 1)
    validate_plan([a, late], ["A", "B"])
    with pytest.raises(FaultPlanError):
        validate_plan([FaultInjection("C", K.NPU_HANG, 0)], ["A", "B"])
    with pytest.raises(FaultPlanError):
        validate_plan([FaultInjection("A", K.POWER_BROWNOUT, 0, {"depth": 1.5})], ["A", "B"])


def test_windows():
    assert detection_window(K.HEARTBEAT_LOSS) == (ms(50), ms(60))
    assert detection_window(K.SENSOR_FAULT) == (ms(2000), ms(2015))
    assert detection_window(K.NPU_HANG) == (ms(2), ms(4))
    assert detection_window(K.POWER_BROWNOUT) == (ms(36), ms(48))


def test_record_invariants():
    f = FaultInjection("A", K.NPU_HANG, 100)
    rec = FaultRecord(f, 2140, "SW-Logic", 315_750)
    assert rec.t_det == 2040 and rec.t_rec == 313_610
    with pytest.raises(ValueError):
        FaultRecord(f, 50)
    with pytest.raises(ValueError):
        FaultRecord(f, 200, "SW-Logic", 150)
    assert FaultRecord(f).t_det is None and FaultRecord(f).t_rec is None


def test_sensor_fault_and_npu_hang_measured(predicate, scenario, node_cfg):
    for fault, window in (
        (FaultInjection("A", K.SENSOR_FAULT, ms(1000.45)), (ms(2000), ms(2015))),
        (FaultInjection("A", K.NPU_HANG, ms(1001.96)), (ms(2), ms(4))),
    ):
        result = single(predicate, scenario, node_cfg, fault, 5000)
        rec = measure(result.trace, fault)
        assert rec.detected_by == "SW-Logic"
        assert window[0] < rec.t_det <= window[1]
        assert rec.t_rec == DEFAULT_RECOVERY[fault.kind]


def test_heartbeat_silence_at_five_seconds(predicate, scenario, node_cfg):
    fault = FaultInjection("A", K.HEARTBEAT_LOSS, ms(5000))
    rec = measure(single(predicate, scenario, node_cfg, fault, 5200).trace, fault)
    assert ms(50) < rec.t_det <= ms(60)
    assert rec.recovered_at is None


def test_brownout_recovery_duration(predicate, scenario, node_cfg):
    fault = FaultInjection("A", K.POWER_BROWNOUT, ms(1997.55), {"depth": 0.2})
    rec = measure(single(predicate, scenario, node_cfg, fault, 42_000).trace, fault)
    assert rec.detected_by == "ADC-Probing"
    assert rec.t_rec == ms(39_546.52)


def test_zero_depth_brownout_never_detected(predicate, scenario, node_cfg):
    fault = FaultInjection("A", K.POWER_BROWNOUT, ms(500), {"depth": 0.0})
    rec = measure(single(predicate, scenario, node_cfg, fault, 3000).trace, fault)
    assert not rec.detected and rec.t_det is None


def test_zero_recovery_override(predicate, scenario, node_cfg):
    red = RedundancyConfig(recovery={**DEFAULT_RECOVERY, K.HEARTBEAT_LOSS: 0})
    fault = FaultInjection("A", K.HEARTBEAT_LOSS, ms(700))
    rec = measure(single(predicate, scenario, node_cfg, fault, 1000, red).trace, fault)
    assert rec.t_rec == 0


@pytest.mark.parametrize("fault", [
    FaultInjection("A", K.HEARTBEAT_LOSS, ms(700.3), {"duration_ms": 40}),
    FaultInjection("A", K.HEARTBEAT_LOSS, ms(709.9), {"duration_ms": 40}),
    FaultInjection("A", K.SENSOR_FAULT, ms(700.3), {"duration_ms": 1990}),
])
def test_transients_are_filtered(predicate, scenario, node_cfg, fault):
    result = single(predicate, scenario, node_cfg, fault, 4000)
    assert not measure(result.trace, fault).detected
    assert result.trace.select(prefix="DETECT") == []


def test_coverage_ratio():
    fs = [FaultInjection("A", K.NPU_HANG, t) for t in (0, 100, 200, 300)]
    recs = [FaultRecord(fs[0], 10), FaultRecord(fs[1], 110), FaultRecord(fs[2], 260), FaultRecord(fs[3], 301)]
    cov = diagnostic_coverage(recs, [50, 150, 250, 350])
    assert cov.injected == 4 and cov.detected_before_demand == 3 and cov.dc == 0.75
    assert diagnostic_coverage(recs[:2], [5000]).dc == 1.0
    # detection exactly at the demand instant still counts
    assert diagnostic_coverage([FaultRecord(fs[0], 50)], [50]).dc == 1.0
    assert diagnostic_coverage([FaultRecord(fs[0])], [50]).dc == 0.0
    assert CoverageReport(0, 0, ()).dc == 1.0
    with pytest.raises(ValueError):
        diagnostic_coverage(recs, [5, 1])


def test_default_campaign_coverage_matches_demand_grid(predicate, scenario, node_cfg):
    plan = load_fault_plan(builtin_path("fault_campaign.yaml"))
    system = build_pair(predicate, scenario, node_cfg, seed=7)
    inject_all(system, plan)
    end = ms(110_000)
    result = system.run(end)
    records = [measure(result.trace, f) for f in plan]
    demands = demand_instants(scenario, predicate.d_min, end)
    gaps = np.diff(demands)
    assert set(gaps.tolist()) == {ms(5000)}
    # oracle: compare each T_det against the next demand on the grid
    for rec in records:
        nxt = min(d for d in demands if d > rec.injection.inject_at)
        assert rec.detected_at <= nxt
    assert diagnostic_coverage(records, demands).dc == 1.0
    assert unsafe_instants(result.timeline, scenario, predicate.d_min, 0, end) == []


def test_fault_table_csv_shape():
    f = FaultInjection("A", K.NPU_HANG, 0)
    text = fault_table_csv([FaultRecord(f, 2040, "SW-Logic", 315_650), FaultRecord(FaultInjection("A", K.SENSOR_FAULT, 0))])
    assert text == "fault,mechanism,t_det_ms,t_rec_ms\nNpuHang,SW-Logic,2.040,313.610\nSensorFault,SW-Logic,,\n"


def test_unsafe_detector_flags_full_speed_in_stop_zone(scenario, predicate):
    bad = [MergedOutput(SafetyCommand.FULL_SPEED, frozenset({"A"}), 0)]
    hits = unsafe_instants(bad, scenario, predicate.d_min, 0, ms(6000))
    # reported at the first microsecond inside the Stop Zone, not the stretch start
    assert hits == demand_instants(scenario, predicate.d_min, ms(6000))[:1]
    stopping = bad + [MergedOutput(SafetyCommand.CATEGORY1_STOP, frozenset({"A"}), ms(2800))]
    assert unsafe_instants(stopping, scenario, predicate.d_min, 0, ms(4000)) == []


def brute_force_unsafe(timeline, script, d_min, end, step=1000):
    return [
        t for t in range(0, end, step)
        if command_at(timeline, t) is SafetyCommand.FULL_SPEED and script.true_distance(t) < float(d_min)
    ]


def brute_force_less_conservative(timeline, reference, end, step=500):
    return [t for t in range(0, end, step) if command_at(timeline, t) < command_at(reference, t)]


CASES = [
    FaultInjection("A", K.HEARTBEAT_LOSS, ms(5008.13)),
    FaultInjection("A", K.NPU_HANG, ms(52_700.0)),
    FaultInjection("A", K.POWER_BROWNOUT, ms(6997.55), {"depth": 0.2}),
    FaultInjection("A", K.SENSOR_FAULT, ms(50_700.45)),
]


@pytest.mark.parametrize("fault", CASES, ids=lambda f: f.kind.value)
def test_category3_continuity(predicate, scenario, node_cfg, fault):
    end_ms = fault.inject_at / 1000 + 2_100 + DEFAULT_RECOVERY[fault.kind] / 1000
    dual = single(predicate, scenario, node_cfg, fault, end_ms)
    ref = single(predicate, scenario, node_cfg, None, end_ms, node_ids=("B",))
    rec = measure(dual.trace, fault)
    assert rec.detected and rec.recovered_at is not None
    entries = [d for d in demand_instants(scenario, predicate.d_min, ms(end_ms)) if rec.detected_at < d < rec.recovered_at]
    assert entries, "scenario must drive a Stop-Zone entry through the recovery window"
    end = ms(end_ms)
    assert unsafe_instants(dual.timeline, scenario, predicate.d_min, 0, end) == []
    assert first_less_conservative(dual.timeline, ref.timeline, 0, end) is None
    # independent sampled checks of both properties
    assert brute_force_unsafe(dual.timeline, scenario, predicate.d_min, end) == []
    window = range(max(0, rec.detected_at - ms(3000)), min(end, rec.recovered_at + ms(3000)), 250)
    assert all(command_at(dual.timeline, t) >= command_at(ref.timeline, t) for t in window)
    # during the peer's recovery the output is carried by B alone
    for t in entries:
        assert command_at(dual.timeline, t + ms(100)) >= SafetyCommand.CATEGORY1_STOP


def test_less_conservative_detector_matches_sampling():
    a = [MergedOutput(SafetyCommand.EMERGENCY_STOP, frozenset(), 0),
         MergedOutput(SafetyCommand.FULL_SPEED, frozenset({"A"}), 1000),
         MergedOutput(SafetyCommand.CATEGORY1_STOP, frozenset({"A"}), 3000)]
    b = [MergedOutput(SafetyCommand.EMERGENCY_STOP, frozenset(), 0),
         MergedOutput(SafetyCommand.REDUCED_SPEED, frozenset({"B"}), 1500),
         MergedOutput(SafetyCommand.FULL_SPEED, frozenset({"B"}), 2000)]
    got = first_less_conservative(a, b, 0, 5000)
    assert got == 1000 == brute_force_less_conservative(a, b, 5000)[0]
    assert first_less_conservative(b, b, 0, 5000) is None
