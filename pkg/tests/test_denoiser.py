import numpy as np
import pytest

from tspdiff import denoiser as D
from tspdiff.checkpoint import load_checkpoint, save_checkpoint
from tspdiff.tsp_core import generate_instance, make_instance

SMALL = D.DenoiserConfig(layers=2, width=16, time_embed_dim=16)


def perturbed(config, seed, scale=0.3):
    """Random parameters with a live output head."""
    rng = np.random.default_rng(seed)
    p = D.init_params(config, seed)
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in p.items()}


def max_fd_error(params, instance, x, t, lg, h=1e-4, floor=1e-5):
    """Worst relative error of backward vs central differences; ``floor`` keeps roundoff-level gradients out."""
    grads = D.backward(params, instance, x, t, lg)
    worst = 0.0
    for name, value in params.items():
        for idx in np.ndindex(value.shape):
            q = D.copy_params(params)
            q[name][idx] += h
            up = D.forward(q, instance, x, t) @ lg
            q[name][idx] -= 2 * h
            down = D.forward(q, instance, x, t) @ lg
            fd = (up - down) / (2 * h)
            err = abs(fd - grads[name][idx]) / max(abs(fd), abs(grads[name][idx]), floor)
            worst = max(worst, err)
    return worst


def relabel(instance, perm):
    """Instance with vertex v renamed perm[v], plus the map old edge index -> new edge index."""
    coords = np.empty_like(instance.coords)
    coords[perm] = instance.coords
    new = make_instance(coords)
    edge_map = new.edge_id[perm[instance.edges[:, 0]], perm[instance.edges[:, 1]]]
    return new, edge_map


def test_init_is_deterministic():
    a, b = D.init_params(D.DenoiserConfig(), 5), D.init_params(D.DenoiserConfig(), 5)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_untrained_output_is_zero(rng):
    inst = generate_instance(7, 0)
    p = D.init_params(D.DenoiserConfig(), 0)
    assert np.all(D.forward(p, inst, rng.standard_normal(inst.num_edges), 0.3) == 0.0)


def test_param_count_grows_with_width():
    assert D.num_params(D.DenoiserConfig(4, 128)) > D.num_params(D.DenoiserConfig(4, 64))
    p = D.init_params(D.DenoiserConfig(3, 32, 16), 0)
    assert sum(v.size for v in p.values()) == D.num_params(D.DenoiserConfig(3, 32, 16))


def test_config_validation():
    with pytest.raises(ValueError):
        D.DenoiserConfig(width=15)
    with pytest.raises(ValueError):
        D.DenoiserConfig(layers=0)


def test_forward_input_checks(rng):
    inst = generate_instance(5, 0)
    p = D.init_params(SMALL, 0)
    with pytest.raises(ValueError):
        D.forward(p, inst, np.zeros(9), 0.5)
    bad = np.zeros(10)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        D.forward(p, inst, bad, 0.5)


@pytest.mark.parametrize("draw", range(5))
def test_gradients_match_finite_differences(draw):
    rng = np.random.default_rng(draw)
    inst = generate_instance(5, [11, draw])
    p = perturbed(SMALL, draw)
    x, lg = rng.standard_normal(inst.num_edges), rng.standard_normal(inst.num_edges)
    assert max_fd_error(p, inst, x, rng.uniform(0.01, 1.0), lg) < 1e-4


def test_zero_loss_grad_gives_zero_gradients(rng):
    inst = generate_instance(6, 0)
    p = perturbed(SMALL, 1)
    g = D.backward(p, inst, rng.standard_normal(15), 0.4, np.zeros(15))
    assert all(np.all(v == 0) for v in g.values())


def test_zero_head_blocks_upstream_gradients(rng):
    inst = generate_instance(6, 0)
    p = D.init_params(SMALL, 3)
    g = D.backward(p, inst, rng.standard_normal(15), 0.4, rng.standard_normal(15))
    for name, value in g.items():
        if name in ("head.W2", "head.b2"):
            assert np.any(value != 0)
        else:
            assert np.all(value == 0), name
    # with the loss 0.5 * ||forward||^2 the output itself is zero, so nothing moves
    out = D.forward(p, inst, rng.standard_normal(15), 0.4)
    assert all(np.all(v == 0) for v in D.backward(p, inst, rng.standard_normal(15), 0.4, out).values())


@pytest.mark.parametrize("seed", range(3))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    inst = generate_instance(6, seed)
    p = perturbed(D.DenoiserConfig(3, 16, 8), seed)
    x = rng.standard_normal(inst.num_edges)
    perm = rng.permutation(6)
    other, edge_map = relabel(inst, perm)
    x_other = np.empty_like(x)
    x_other[edge_map] = x
    out = D.forward(p, inst, x, 0.6)
    out_other = D.forward(p, other, x_other, 0.6)
    np.testing.assert_allclose(out_other[edge_map], out, atol=1e-9, rtol=0)


def test_time_conditioning_changes_output(rng):
    inst = generate_instance(6, 0)
    p = perturbed(SMALL, 2)
    x = rng.standard_normal(15)
    assert not np.allclose(D.forward(p, inst, x, 0.1), D.forward(p, inst, x, 0.9))


def test_forward_backward_bit_reproducible(rng):
    inst = generate_instance(6, 0)
    p = perturbed(SMALL, 2)
    x, lg = rng.standard_normal(15), rng.standard_normal(15)
    assert D.forward(p, inst, x, 0.3).tobytes() == D.forward(p, inst, x, 0.3).tobytes()
    g1, g2 = D.backward(p, inst, x, 0.3, lg), D.backward(p, inst, x, 0.3, lg)
    assert all(g1[k].tobytes() == g2[k].tobytes() for k in g1)


def test_batch_matches_single(rng):
    insts = [generate_instance(6, s) for s in range(3)]
    p = perturbed(SMALL, 4)
    x = rng.standard_normal((3, 15))
    t = np.array([0.1, 0.5, 1.0])
    batch = D.forward_batch(p, np.stack([i.coords for i in insts]), x, t)
    for k, inst in enumerate(insts):
        np.testing.assert_allclose(batch[k], D.forward(p, inst, x[k], t[k]), atol=1e-12)


def test_float32_path_tracks_float64(rng):
    inst = generate_instance(8, 0)
    p = perturbed(SMALL, 5)
    x = rng.standard_normal(inst.num_edges)
    out64 = D.forward(p, inst, x, 0.7)
    out32 = D.forward(D.cast_params(p, np.float32), inst, x, 0.7)
    assert out32.dtype == np.float32
    np.testing.assert_allclose(out32, out64, rtol=1e-4, atol=1e-4)


def test_apply_update():
    p = D.init_params(SMALL, 0)
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    assert all(np.array_equal(D.apply_update(p, zero, 0.1)[k], p[k]) for k in p)
    ones = {k: np.ones_like(v) for k, v in p.items()}
    assert all(np.array_equal(D.apply_update(p, ones, 0.0)[k], p[k]) for k in p)
    g = dict(zero)
    g["layer0.A"] = np.zeros_like(p["layer0.A"])
    g["layer0.A"][1, 2] = 1.0
    new = D.apply_update(p, g, 0.1)
    assert new["layer0.A"][1, 2] == pytest.approx(p["layer0.A"][1, 2] - 0.1)
    g["layer0.A"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        D.apply_update(p, g, 0.1)


def test_checkpoint_round_trip(tmp_path):
    p = D.cast_params(perturbed(SMALL, 6), np.float32)
    path = save_checkpoint(tmp_path / "m", p, SMALL, {"note": "x"})
    ck = load_checkpoint(path)
    assert ck.config == SMALL and ck.meta == {"note": "x"}
    assert all(ck.params[k].tobytes() == p[k].tobytes() for k in p)
    blob = path.with_suffix(".bin").read_bytes()
    again = save_checkpoint(tmp_path / "m2", ck.params, ck.config)
    assert again.with_suffix(".bin").read_bytes() == blob
    assert len(blob) == 4 * D.num_params(SMALL)


def test_checkpoint_manifest_layout(tmp_path):
    import json

    p = D.init_params(SMALL, 0)
    m = json.loads(save_checkpoint(tmp_path / "m", p, SMALL).read_text())
    assert m["format_version"] == 1
    offsets = [t["offset"] for t in m["tensors"]]
    counts = [t["count"] for t in m["tensors"]]
    assert offsets == list(np.cumsum([0] + [4 * c for c in counts[:-1]]))


def test_checkpoint_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope")
