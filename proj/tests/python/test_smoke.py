import json

import numpy as np
import pytest

import nfem


def test_sample_and_solve():
    p = nfem.sample_problem("exp1", geometry_seed=0, field_seed=2, index=1)
    assert p.kind == "exp1"
    assert p.nodes.shape == (p.num_nodes, 3)
    assert p.elements.shape == (p.num_elements, 3)
    traj = nfem.solve(p)
    assert traj.shape == (p.steps + 1, p.num_nodes)
    np.testing.assert_array_equal(traj[0], p.initial)
    mask = p.dirichlet_mask.astype(bool)
    # Dirichlet nodes are held at their initial values in this family
    np.testing.assert_allclose(traj[-1][mask], p.initial[mask], rtol=0, atol=1e-12)
    r = nfem.residual(p, traj[1], traj[0], p.dt)
    assert np.max(np.abs(r)) < 1e-10


def test_unit_values():
    assert nfem.source_term(100.0, 0.0, 0.5) == pytest.approx(80.0, abs=1e-12)
    assert nfem.diffusivity(0.5) == pytest.approx(1 / 55, abs=1e-12)
    assert [nfem.decoder_outputs(k) for k in (20, 10, 50)] == [20, 10, 50]


def test_metrics():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(6, 5))
    assert nfem.normalized_l2(truth, truth) == 0.0
    assert nfem.normalized_l2(2 * truth, truth) == pytest.approx(1.0)
    assert nfem.normalized_l2(-3 * truth + 3 * 0.1 * truth, -3 * truth) == pytest.approx(0.1)
    with pytest.raises(nfem.NfemError) as e:
        nfem.normalized_l2(truth[:4], truth)
    assert e.value.category == "shape"


def test_model_rollout_checkpoint(tmp_path):
    p = nfem.sample_problem("exp1", field_seed=1)
    m = nfem.Model({"latent": 32, "blocks": 1}, seed=4)
    assert m.config["latent"] == 32
    out = m.rollout(p)
    assert out.shape == (p.steps + 1, p.num_nodes)
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, m.rollout(p))
    path = str(tmp_path / "m.ckpt")
    m.save(path, json.dumps({"method": "pi"}))
    m2, extra = nfem.load_checkpoint(path)
    assert extra == {"method": "pi"}
    np.testing.assert_array_equal(m2.rollout(p), out)
    with pytest.raises(nfem.NfemError) as e:
        nfem.Model({"latnet": 3})
    assert e.value.category == "config"


def test_train_tiny():
    seen = []
    r = nfem.train(
        "experiment = exp1\ncount = 4\nmax_elements = 300\nepochs = 2\nseed = 2\n"
        "latent = 32\nblocks = 1\nvalidate_every = 1\n",
        progress=seen.append,
    )
    assert len(r["metrics"]) == 2 and len(seen) == 2
    assert np.isfinite(r["best_val_l2"])
    assert r["model"].parameter_count() > 0
    assert any(k == "epochs" for k, _ in nfem.config_keys())


def test_plot_and_bench():
    p = nfem.sample_problem("exp2", index=0)
    svg = nfem.plot_svg(p, p.initial, "initial")
    assert svg.count("<polygon") == p.num_elements
    m = nfem.Model({"experiment": "exp2", "latent": 32, "blocks": 1})
    b = nfem.bench(m, p)
    assert b["ratio"] > 0 and b["model_calls"] == 5
