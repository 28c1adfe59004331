import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamdetect.errors import DataError
from jamdetect.simulator import (
    CCH_LATENT_SHIFT,
    JAM_CATALOGUE,
    OVERLAP_SCALE,
    BaselineModel,
    CampaignConfig,
    ScenarioSpec,
    catalogue_specs,
    default_channel,
    generate_campaign,
    generate_scenario,
    inaccurate_cqi_marker,
    inject_poison,
    jam_label,
    mcs_variance_marker,
    poison_span,
    power_to_severity,
    sub_seed,
)
from jamdetect.telemetry import CLEAN, FEATURE_INDEX, SAMPLE_PERIOD_MS, Label, serialize_dataset


def test_clean_596():
    data = generate_scenario(ScenarioSpec.clean(1), n=596)
    assert len(data) == 596
    assert all(lab == CLEAN for lab in data.labels)


def test_severity_zero_jam_rejected():
    with pytest.raises(DataError):
        ScenarioSpec(jam_label(1950, 0), 0.0)
    with pytest.raises(DataError):
        ScenarioSpec(CLEAN, 0.5)


def test_n_must_be_positive():
    with pytest.raises(DataError):
        generate_scenario(ScenarioSpec.clean(), n=0)


def test_cell_alternation_and_clock():
    data = generate_scenario(ScenarioSpec.clean(2), n=6, start_ms=1000)
    assert [r.cell for r in data.records] == ["LTE", "NR"] * 3
    assert [r.timestamp_ms for r in data.records] == [1000, 1000, 1180, 1180, 1360, 1360]
    assert SAMPLE_PERIOD_MS == 180


def test_power_to_severity_endpoints():
    assert power_to_severity(-13) == pytest.approx(0.3)
    assert power_to_severity(0) == pytest.approx(1.0)
    assert power_to_severity(-6.5) == pytest.approx(0.65)
    assert power_to_severity(5) == 1.0 and power_to_severity(-30) == pytest.approx(0.3)


def test_channel_defaults():
    assert default_channel(2140) == "CCH"
    assert default_channel(1950) == "DCH" and default_channel(3490) == "DCH"


def test_catalogue_shape():
    specs = catalogue_specs(0)
    assert len(specs) == 14
    assert sum(len(p) for _, p in JAM_CATALOGUE) == 13
    jams = specs[1:]
    assert [s.label.jam_type for s in jams] == list(range(1, 14))
    overlap = {s.label.key for s in jams if s.overlap}
    assert overlap == {"2140MHz/-11dBm", "2140MHz/-12dBm", "2140MHz/-13dBm"}


def test_campaign_counts(campaign):
    assert len(campaign) == 14 * 60
    big = generate_campaign(per_scenario_n=100, seed=0)
    assert len(big) == 1400


def test_campaign_4125_test_mix():
    cfg = CampaignConfig(per_scenario_n=240, clean_n=1005, seed=1)
    assert sum(n for _, n in cfg.specs()) == 4125


def test_campaign_byte_identical():
    a = serialize_dataset(generate_campaign(per_scenario_n=20, seed=9))
    b = serialize_dataset(generate_campaign(per_scenario_n=20, seed=9))
    c = serialize_dataset(generate_campaign(per_scenario_n=20, seed=10))
    assert a == b and a != c


def test_campaign_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "seed": 4,
        "per_scenario_n": 10,
        "scenarios": [
            {"kind": "Clean", "n": 30},
            {"center_freq_mhz": 1950, "power_dbm": -5, "jam_type": 2},
            {"center_freq_mhz": 2140, "power_dbm": -12},
        ],
        "baseline": {"means": {"cqi": 11.0}},
    }))
    cfg = CampaignConfig.load(path)
    data = generate_campaign(config=cfg)
    assert len(data) == 50
    assert data.labels[-1].channel == "CCH"
    assert [s.overlap for s, _ in cfg.specs()] == [False, False, True]


def test_campaign_config_rejects_unknown_keys():
    with pytest.raises(DataError):
        CampaignConfig.from_dict({"sead": 1})


def test_baseline_override_rejects_unknown_feature():
    with pytest.raises(DataError):
        BaselineModel.default().with_overrides({"means": {"nope": 1}})


def test_sub_seed_stable_and_distinct():
    assert sub_seed(1, 2) == sub_seed(1, 2)
    assert len({sub_seed(1, i) for i in range(50)}) == 50


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(catalogue_specs(0)), st.integers(0, 2**63 - 1), st.integers(1, 40))
def test_generated_records_always_validate_and_repeat(spec, seed, n):
    spec = ScenarioSpec(spec.label, spec.severity, spec.overlap, seed)
    a = generate_scenario(spec, n=n)
    b = generate_scenario(spec, n=n)
    assert a.records == b.records  # construction already validated every record


def _means(spec, n=3000):
    return generate_scenario(spec, n=n).features.mean(axis=0)


def test_dch_jamming_directions():
    c = _means(ScenarioSpec.clean(5))
    j = _means(ScenarioSpec(jam_label(3490, 0), 1.0, False, 5))
    for name in ("cqi", "pusch_snr_db", "dl_bitrate", "ul_bitrate"):
        assert j[FEATURE_INDEX[name]] < c[FEATURE_INDEX[name]], name
    for name in ("dl_retx_rate", "ul_retx_rate"):
        assert j[FEATURE_INDEX[name]] > c[FEATURE_INDEX[name]], name


def test_cch_keeps_cqi_but_cuts_throughput():
    c = _means(ScenarioSpec.clean(5))
    j = _means(ScenarioSpec(jam_label(2140, 0), 1.0, False, 5))
    _, std, _ = BaselineModel.default().vectors()
    i_cqi, i_rate = FEATURE_INDEX["cqi"], FEATURE_INDEX["dl_bitrate"]
    # about half the reports keep the stale CQI, so its drop is far smaller than the bitrate drop
    assert (c[i_cqi] - j[i_cqi]) / std[i_cqi] < 0.7 * (c[i_rate] - j[i_rate]) / std[i_rate]


def test_cch_marker_rates():
    X = generate_scenario(ScenarioSpec(jam_label(2140, 0), 1.0, False, 9), n=10000).features
    assert abs(mcs_variance_marker(X).mean() - 0.845) <= 0.02
    assert abs(inaccurate_cqi_marker(X).mean() - 0.503) <= 0.02


def test_markers_quiet_on_clean():
    X = generate_scenario(ScenarioSpec.clean(9), n=5000).features
    assert mcs_variance_marker(X).mean() < 0.02
    assert inaccurate_cqi_marker(X).mean() < 0.02


@pytest.mark.parametrize("freq", [1950, 3490, 2140])
def test_separation_grows_with_severity(freq):
    base = BaselineModel.default()
    _, std, _ = base.vectors()
    c = _means(ScenarioSpec.clean(5))
    dist = []
    for sev in (0.3, 0.5, 0.7, 0.85, 1.0):
        j = _means(ScenarioSpec(jam_label(freq, 0), sev, False, 5))
        dist.append(float(np.sqrt((((j - c) / std) ** 2).sum())))
    assert dist == sorted(dist)


@pytest.mark.parametrize("freq,power", [(2140, -11), (2140, -13), (3490, -12)])
def test_overlap_shift_bounded(freq, power):
    _, std, _ = BaselineModel.default().vectors()
    lab = jam_label(freq, power)
    c = _means(ScenarioSpec.clean(5))
    ov = _means(ScenarioSpec(lab, power_to_severity(power), True, 5))
    full = _means(ScenarioSpec(lab, 1.0, False, 5))
    assert np.all(np.abs(ov - c) / std <= OVERLAP_SCALE * np.abs(full - c) / std + 1e-9)


def test_cch_shift_constant_is_positive():
    assert CCH_LATENT_SHIFT > 0


# poisoning


def _jam_source(n=200):
    return generate_scenario(ScenarioSpec(jam_label(1950, 0), 1.0, False, 77), n=n)


def test_poison_zero_fraction_is_identity(clean_596):
    assert inject_poison(clean_596, _jam_source(), 0.0, 0.3) is clean_596


def test_poison_span_arithmetic():
    assert poison_span(100, 0.2, 0.5) == (50, 70)
    assert poison_span(596, 0.05, 0.0) == (0, 29)
    start, stop = poison_span(596, 0.05, 0.0)
    assert stop <= int(0.1 * 596)


def test_poison_replaces_exact_span(clean_596):
    jam = _jam_source()
    out = inject_poison(clean_596, jam, 0.2, 0.5)
    start, stop = poison_span(596, 0.2, 0.5)
    assert len(out) == 596
    for i in range(596):
        if start <= i < stop:
            assert np.array_equal(out.features[i], jam.features[i - start])
            assert out.records[i].timestamp_ms == clean_596.records[i].timestamp_ms
        else:
            assert out.records[i] == clean_596.records[i]
    assert all(not lab.is_jam for lab in out.labels)


def test_poison_needs_enough_jam(clean_596):
    with pytest.raises(DataError):
        inject_poison(clean_596, _jam_source(10), 0.2, 0.0)


def test_poison_overrun_rejected():
    with pytest.raises(DataError):
        poison_span(100, 0.3, 0.8)


def test_label_key_format():
    assert Label("Jam", 0, 3490.0, -11.0, "DCH").key == "3490MHz/-11dBm"
