import io

import pytest

from tradeforensics.features import flag_vague
from tradeforensics.ingest import parse_stream
from tradeforensics.price_anomaly import PricedRow, group_stats
from tradeforensics.synthgen import GroundTruth, PlantSpec, generate_dataset


@pytest.fixture(scope="module")
def default_dataset():
    return generate_dataset(PlantSpec(seed=7))


def test_plant_counts(default_dataset):
    _, truth = default_dataset
    assert len(truth.price_outliers) == 40
    assert len(truth.vague) == 15
    assert len(truth.mega_trades) == 5
    assert truth.n_records == 1000


def test_same_seed_same_bytes():
    a, ta = generate_dataset(PlantSpec(n_records=400, n_price_outliers=10, seed=3))
    b, tb = generate_dataset(PlantSpec(n_records=400, n_price_outliers=10, seed=3))
    assert a == b and ta == tb
    c, _ = generate_dataset(PlantSpec(n_records=400, n_price_outliers=10, seed=4))
    assert a != c


def test_defect_count():
    data, truth = generate_dataset(PlantSpec(n_records=1000, defect_rate=0.05, seed=1))
    assert len(truth.defects) == 50
    assert data.count(b"\n") == 1001


def test_infeasible_plant_counts():
    with pytest.raises(ValueError):
        generate_dataset(PlantSpec(n_records=10, n_price_outliers=40))
    with pytest.raises(ValueError):
        generate_dataset(PlantSpec(defect_rate=1.0))


def test_plants_recoverable_and_outside_fences(default_dataset):
    data, truth = default_dataset
    recs, rej = parse_stream(io.BytesIO(data))
    assert rej == []
    by_id = {r.record_id: r for r in recs}
    for rid in truth.price_outliers + truth.vague + truth.mega_trades:
        assert rid in by_id
    rows = [PricedRow(r.record_id, r.hs_code, r.primary_value_usd / r.net_wgt_kg) for r in recs if r.net_wgt_kg > 0]
    stats = group_stats(rows)
    for rid in truth.price_outliers:
        r = by_id[rid]
        p = r.primary_value_usd / r.net_wgt_kg
        s = stats[r.hs_code]
        assert p > s.upper_fence or p < s.lower_fence
        assert r.net_wgt_kg >= 1.0
    assert {r.record_id for r in recs if flag_vague(r.description)} == set(truth.vague)


def test_ground_truth_json_round_trip(default_dataset):
    _, truth = default_dataset
    assert GroundTruth.from_json(truth.to_json()) == truth
