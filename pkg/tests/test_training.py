import numpy as np
import pytest

from softplan.decoders import Model
from softplan.softsim import simulate
from softplan.training import TrainConfig, split, train


@pytest.fixture(scope="module")
def box_data(box_mesh):
    return [simulate(box_mesh, 2, seed=3, obstacles=False)]


def _cfg(**kw):
    base = dict(steps=60, lr=1e-3, n_query=128, n_pairs=32, query_pool=512, val_fraction=0.0,
                val_every=20)
    base.update(kw)
    return TrainConfig(**base)


def test_single_sample_overfits(box_mesh, box_data):
    one = [box_data[0][:1]]
    res = train(box_mesh, one, _cfg(steps=100))
    head = np.mean([r["total"] for r in res.curve[:10]])
    tail = np.mean([r["total"] for r in res.curve[-10:]])
    assert tail < 0.5 * head
    assert res.curve[-1]["flow"] < res.curve[0]["flow"]
    assert not res.aborted and res.best_step > 0


def test_same_seed_same_curve(box_mesh, box_data):
    a = train(box_mesh, box_data, _cfg(steps=15))
    b = train(box_mesh, box_data, _cfg(steps=15))
    assert a.curve == b.curve
    for p, q in zip(a.model.params(), b.model.params()):
        assert np.array_equal(p, q)


@pytest.mark.parametrize("kw", [dict(corr="none"), dict(corr="euclid"), dict(fusion=False),
                                dict(negatives="random")])
def test_ablation_switches_run(box_mesh, box_data, kw):
    res = train(box_mesh, box_data, _cfg(steps=5, **kw))
    assert len(res.curve) == 5
    if kw.get("corr") == "none":
        assert all(r["corr"] == 0.0 for r in res.curve)
    assert res.model.fusion == kw.get("fusion", True)
    assert res.model.meta["config_hash"] == _cfg(steps=5, **kw).hash()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_restores_best_parameters(box_mesh, box_data):
    m = Model.create(np.random.default_rng(0))
    start = [p.copy() for p in m.params()]
    res = train(box_mesh, box_data, _cfg(steps=200, lr=1e6), model=m)
    assert res.aborted and len(res.curve) < 200
    assert res.best_step == 0
    for p, s in zip(res.model.params(), start):
        assert np.array_equal(p, s)


def test_split_is_disjoint_and_seeded():
    items = list(range(10))
    tr, va = split(items, 0.2, np.random.default_rng(0))
    assert len(va) == 2 and sorted(tr + va) == items
    assert split(items, 0.2, np.random.default_rng(0)) == (tr, va)
    assert split(items[:1], 0.2, np.random.default_rng(0)) == (items[:1], [])


def test_config_rejects_bad_values(box_mesh):
    with pytest.raises(ValueError):
        TrainConfig(corr="cosine")
    with pytest.raises(ValueError):
        TrainConfig(n_pairs=1)
    with pytest.raises(ValueError):
        train(box_mesh, [[]])
    assert TrainConfig().hash() != TrainConfig(corr="euclid").hash()
