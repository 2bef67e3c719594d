import math
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, strategies as st

from laserslot.cmis import (
    CmisEvent,
    EventKind,
    Measurement,
    Origin,
    aggregate,
    augment,
    fit_lognormal,
    format_event,
    iter_records,
    pair_events,
    parse_log,
    parse_log_line,
    stats_from_csv,
    stats_to_csv,
    synthesize_dataset,
)
from laserslot.core import FrequencySlot, SlotStatistics
from laserslot.errors import InvalidStatistics, MalformedLine, NonMonotonicTimestamps

REINIT = "Jun 20 12:30:41.069151 sonic NOTICE pmon#xcvrd: CMIS: Ethernet0: force Datapath reinit"
CONFIGURED = ("Jun 20 12:30:44.582824 sonic NOTICE pmon#xcvrd: CMIS: Ethernet0 configured "
              "laser frequency 192500 GHz grid space 100 GHz")


def ts(h, m, s, us):
    return datetime(2000, 6, 20, h, m, s, us)


def test_parse_reinit():
    ev = parse_log_line(REINIT)
    assert ev == CmisEvent(ts(12, 30, 41, 69151), "Ethernet0", EventKind.DATAPATH_REINIT)


def test_parse_configured():
    ev = parse_log_line(CONFIGURED)
    assert ev.kind is EventKind.CONFIGURED_FREQUENCY
    assert ev.timestamp == ts(12, 30, 44, 582824)
    assert (ev.frequency_ghz, ev.grid_ghz) == (192500, 100)


@pytest.mark.parametrize("line", [
    "Jun 20 12:30:41.000000 kernel: eth0 link up",
    "Jun 20 12:30:41.000000 sonic NOTICE syncd#syncd: something else",
    "",
    "Jun 20 12:30:41.084331 sonic NOTICE pmon#xcvrd: CMIS: Ethernet0: 400G, lanemask=0xff, "
    "state=DP_DEINIT, appl=1, retries=0",
])
def test_unrelated_lines_yield_nothing(line):
    assert parse_log_line(line) is None


@pytest.mark.parametrize("line", [
    REINIT.replace("12:30:41.069151", "12:30:xx.069151"),
    REINIT.replace("Jun", "Foo"),
    CONFIGURED.replace("192500", "19x500"),
])
def test_malformed_cmis_lines(line):
    with pytest.raises(MalformedLine) as exc:
        parse_log_line(line)
    assert exc.value.line == line


def test_wrapped_listing_parses(listing_lines):
    events = parse_log(listing_lines)
    assert [e.kind for e in events] == [
        EventKind.DATAPATH_REINIT, EventKind.AP_CONFIGURED,
        EventKind.TUNING_WARNING, EventKind.CONFIGURED_FREQUENCY,
    ]


def test_iter_records_joins_continuations():
    recs = list(iter_records(["Jun 20 00:00:00.000001 a", "b", "  c", "Jun 20 00:00:00.000002 d"]))
    assert recs == ["Jun 20 00:00:00.000001 a b c", "Jun 20 00:00:00.000002 d"]


def test_pair_listing(listing_lines):
    ms, unmatched = pair_events(parse_log(listing_lines))
    assert unmatched == 0
    assert len(ms) == 1
    m = ms[0]
    assert (m.port, m.slot.index) == ("Ethernet0", 12)
    # 12:30:44.582824 - 12:30:41.069151
    assert m.config_time_s == pytest.approx(3.513673, abs=1e-9)


def test_pair_empty_and_unmatched():
    assert pair_events([]) == ([], 0)
    assert pair_events([parse_log_line(REINIT)]) == ([], 1)


def test_pair_negative_delta():
    late = parse_log_line(REINIT.replace("12:30:41", "23:59:59"))
    with pytest.raises(NonMonotonicTimestamps):
        pair_events([late, parse_log_line(CONFIGURED)])


def test_pair_interleaved_ports():
    def ev(port, kind, sec, freq=None):
        return CmisEvent(ts(1, 0, sec, 0), port, kind, freq, 100 if freq else None)

    events = [
        ev("Ethernet0", EventKind.DATAPATH_REINIT, 0),
        ev("Ethernet8", EventKind.DATAPATH_REINIT, 1),
        ev("Ethernet8", EventKind.CONFIGURED_FREQUENCY, 4, 191300),
        ev("Ethernet0", EventKind.CONFIGURED_FREQUENCY, 5, 196100),
    ]
    ms, unmatched = pair_events(events)
    assert unmatched == 0
    assert [(m.port, m.slot.index, m.config_time_s) for m in ms] == [
        ("Ethernet8", 0, 3.0), ("Ethernet0", 48, 5.0)]


def test_pair_count_bounded_by_reinits():
    def ev(kind, sec, freq=None):
        return CmisEvent(ts(1, 0, sec, 0), "Ethernet0", kind, freq, 100 if freq else None)

    R, C = EventKind.DATAPATH_REINIT, EventKind.CONFIGURED_FREQUENCY
    events = [ev(R, 0), ev(R, 1), ev(C, 2, 191300), ev(C, 3, 191300), ev(R, 4)]
    ms, unmatched = pair_events(events)
    assert len(ms) == 1 and ms[0].config_time_s == 1.0
    assert len(ms) + unmatched == 3


_kinds = st.sampled_from(list(EventKind))


@st.composite
def events(draw):
    kind = draw(_kinds)
    when = datetime(2000, draw(st.integers(1, 12)), draw(st.integers(1, 28)),
                    draw(st.integers(0, 23)), draw(st.integers(0, 59)), draw(st.integers(0, 59)),
                    draw(st.integers(0, 999999)))
    port = draw(st.from_regex(r"Ethernet[0-9]{1,3}", fullmatch=True))
    if kind is EventKind.CONFIGURED_FREQUENCY:
        return CmisEvent(when, port, kind, 191300 + 100 * draw(st.integers(0, 48)), 100)
    return CmisEvent(when, port, kind)


@given(events())
def test_format_parse_round_trip(ev):
    line = format_event(ev)
    assert parse_log_line(line) == ev
    assert format_event(parse_log_line(line)) == line


def test_aggregate_two_points():
    ms = [Measurement("Ethernet0", FrequencySlot(12), 3.5), Measurement("Ethernet0", FrequencySlot(12), 4.5)]
    s = aggregate(ms)[12]
    assert (s.mean_s, s.std_s, s.count) == (4.0, 0.5, 2)


def test_aggregate_single():
    s = aggregate([Measurement("Ethernet0", FrequencySlot(0), 4.34)])[0]
    assert (s.mean_s, s.std_s, s.count) == (4.34, 0.0, 1)


def test_aggregate_two_sweeps():
    ms = [Measurement("Ethernet0", FrequencySlot(k), 3 + k / 10 + r) for r in (0, 0.2) for k in range(49)]
    stats = aggregate(ms)
    assert list(stats) == list(range(49))
    assert all(s.count == 2 for s in stats.values())
    assert stats[10].mean_s == pytest.approx(4.1)
    assert stats[10].std_s == pytest.approx(0.1)


def _originals():
    return [Measurement("Ethernet0", FrequencySlot(k), 3.0 + 0.05 * k) for _ in range(2) for k in range(49)]


def test_augment_identity():
    ms = _originals()
    assert augment(ms, copies=0) == ms


def test_augment_zero_noise_duplicates():
    ms = _originals()[:5]
    out = augment(ms, copies=3, noise_fraction=0.0)
    assert out[:5] == ms
    for i, m in enumerate(ms):
        dups = out[5 + 3 * i: 8 + 3 * i]
        assert all(d.config_time_s == m.config_time_s and d.slot == m.slot for d in dups)
        assert all(d.origin is Origin.AUGMENTED for d in dups)


def test_augment_counts():
    ms = _originals()
    assert len(ms) == 98
    out = augment(ms, copies=8, noise_fraction=0.05, seed=3)
    assert len(out) == 98 * (1 + 8) == 882
    from collections import Counter
    assert Counter(m.slot for m in out) == Counter({s: 9 * c for s, c in Counter(m.slot for m in ms).items()})
    assert sum(m.origin is Origin.REAL for m in out) == 98


def test_augment_deterministic():
    ms = _originals()
    assert augment(ms, 4, 0.1, seed=5) == augment(ms, 4, 0.1, seed=5)
    assert augment(ms, 4, 0.1, seed=5) != augment(ms, 4, 0.1, seed=6)


@given(st.floats(0.2, 50.0), st.lists(st.floats(0.11, 10.0), min_size=1, max_size=20), st.integers(0, 2**32))
def test_augment_floor(noise, values, seed):
    ms = [Measurement("Ethernet0", FrequencySlot(0), v) for v in values]
    out = augment(ms, copies=5, noise_fraction=noise, seed=seed)
    assert min(m.config_time_s for m in out) >= 0.1


def test_fit_degenerate():
    mu, sigma = fit_lognormal(SlotStatistics(FrequencySlot(0), 4.0, 0.0, 1))
    assert mu == pytest.approx(math.log(4)) and sigma == 0


def test_fit_values():
    mu, sigma = fit_lognormal((4.0, 1.0))
    assert mu == pytest.approx(1.355982, abs=1e-6)
    assert sigma == pytest.approx(0.246221, abs=1e-6)


def test_fit_rejects_nonpositive_mean():
    with pytest.raises(InvalidStatistics):
        fit_lognormal((0.0, 1.0))


@pytest.mark.parametrize("mean, std", [(4.0, 1.0), (4.34, 0.5), (3.2, 0.32)])
def test_fit_monte_carlo_oracle(mean, std):
    # independent sampler: numpy's own log-normal
    mu, sigma = fit_lognormal((mean, std))
    x = np.random.default_rng(123).lognormal(mu, sigma, 10**6)
    assert x.mean() == pytest.approx(mean, rel=0.01)
    assert x.std() == pytest.approx(std, rel=0.02)


def test_synthesize_deterministic():
    a = synthesize_dataset(3.2, 5.5, 0.1, seed=7)
    assert a == synthesize_dataset(3.2, 5.5, 0.1, seed=7)
    assert len(a.stats) == 49
    assert all(3.2 <= s.mean_s <= 5.5 and s.std_s == pytest.approx(0.1 * s.mean_s) for s in a.stats)


def test_synthesize_degenerate_range():
    d = synthesize_dataset(4.34, 4.34, 0.1, seed=1)
    assert all(s.mean_s == 4.34 for s in d.stats)
    assert d.overall_mean == pytest.approx(4.34) and d.min_mean == 4.34


def test_acceptance_dataset_ratio():
    d = synthesize_dataset()
    means = np.array([s.mean_s for s in d.stats])
    ratio = means.min() / means.mean()
    assert 0.70 <= ratio <= 0.80
    assert d.min_mean == means.min() and d.overall_mean == pytest.approx(means.mean())


def test_stats_csv_round_trip():
    d = synthesize_dataset()
    text = stats_to_csv(d.stats)
    assert text.splitlines()[0] == "slot,frequency_ghz,mean_s,std_s,count"
    assert tuple(stats_from_csv(text).values()) == d.stats
