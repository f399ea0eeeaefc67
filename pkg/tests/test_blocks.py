"""Model block tests: partitioning against a brute-force oracle, the aux
depth schedule, seeded construction, forward composition, local updates,
and the memory proxy."""
import itertools

import numpy as np
import pytest

import locopipe as lp
from conftest import make_modules, same_params, snapshot
from locopipe.errors import ConfigMismatch, DimensionMismatch, TooManyStages


def _oracle_split(dims, s):
    """Exhaustive minimax split with earliest-cut ties, stated independently."""
    n = len(dims) - 1

    def stage_cost(a, b):
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(a, b))

    best = None
    for cuts in itertools.combinations(range(1, n), s - 1):
        edges = (0,) + cuts + (n,)
        load = max(stage_cost(a, b) for a, b in zip(edges, edges[1:]))
        if best is None or (load, cuts) < best:
            best = (load, cuts)
    edges = (0,) + best[1] + (n,)
    return tuple(zip(edges, edges[1:]))


# --- partitioning -------------------------------------------------------------

def test_partition_even_split_of_uniform_layers():
    spec = lp.NetworkSpec((8, 8, 8, 8, 8))
    assert lp.partition(spec, 2).boundaries == ((0, 2), (2, 4))


def test_partition_prefers_light_tail_stage():
    # layer params: 72, 72, 72, 18 -> best 2-way split is [2 | 2] (144 vs 90)
    spec = lp.NetworkSpec((8, 8, 8, 8, 2))
    assert lp.partition(spec, 2).boundaries == ((0, 2), (2, 4))


def test_partition_tie_breaks_toward_earliest_cut():
    # three equal layers, s=2: cutting at 1 or 2 both give max load 12
    spec = lp.NetworkSpec((2, 2, 2, 2))
    assert lp.partition(spec, 2).boundaries == ((0, 1), (1, 3))


def test_partition_single_stage_and_stage_per_layer():
    spec = lp.NetworkSpec((3, 5, 4, 2))
    assert lp.partition(spec, 1).boundaries == ((0, 3),)
    assert lp.partition(spec, 3).boundaries == ((0, 1), (1, 2), (2, 3))


def test_partition_matches_oracle_on_random_networks():
    rng = np.random.default_rng(19)
    for _ in range(40):
        n_layers = int(rng.integers(2, 8))
        dims = tuple(int(d) for d in rng.integers(1, 12, size=n_layers + 1))
        s = int(rng.integers(1, n_layers + 1))
        plan = lp.partition(lp.NetworkSpec(dims), s)
        assert plan.boundaries == _oracle_split(dims, s)


def test_partition_rejects_more_stages_than_layers():
    with pytest.raises(TooManyStages):
        lp.partition(lp.NetworkSpec((4, 4, 4)), 3)


def test_partition_plan_validates_coverage():
    with pytest.raises(ConfigMismatch):
        lp.PartitionPlan(2, ((0, 1), (2, 3)))  # gap
    with pytest.raises(ConfigMismatch):
        lp.PartitionPlan(1, ((0, 0),))  # empty stage


def test_network_spec_validation():
    with pytest.raises(ValueError):
        lp.NetworkSpec((4,))
    with pytest.raises(ValueError):
        lp.NetworkSpec((4, 0, 2))
    with pytest.raises(ValueError):
        lp.NetworkSpec((4, 3, 2), activation="tanh")
    assert lp.NetworkSpec((3, 4)).layer_params(0) == 16


# --- aux head depth schedule ----------------------------------------------------

def test_aux_depth_values():
    assert lp.aux_depth(0, 4, 3) == 4
    assert lp.aux_depth(3, 4, 3) == 3
    assert lp.aux_depth(11, 2, 3) == 0
    assert lp.aux_depth(1, 2, 3) == 2


def test_aux_depth_is_nonincreasing_and_clamped():
    rng = np.random.default_rng(3)
    for _ in range(30):
        d = int(rng.integers(0, 6))
        n = int(rng.integers(1, 5))
        depths = [lp.aux_depth(l, d, n) for l in range(14)]
        assert depths[0] == d
        assert all(a >= b for a, b in zip(depths, depths[1:]))
        assert all(v >= 0 for v in depths)


def test_aux_depth_argument_validation():
    with pytest.raises(ValueError):
        lp.aux_depth(-1, 2, 3)
    with pytest.raises(ValueError):
        lp.aux_depth(0, 2, 0)


# --- construction ----------------------------------------------------------------

def test_build_modules_records_schedule_but_final_stage_has_no_head():
    mods = make_modules((8, 8, 8, 8, 2), s=4, d_prime=4, interval=3)
    assert [m.assigned_aux_depth for m in mods] == [4, 4, 4, 3]
    assert [m.aux is None for m in mods] == [False, False, False, True]
    # a depth-d head has d hidden layers plus the classifier
    assert len(mods[0].aux.layers) == 5
    assert mods[0].aux.layers[-1].out_width == 2
    assert not mods[0].aux.layers[-1].relu_after
    assert all(layer.relu_after for layer in mods[0].aux.layers[:-1])


def test_build_modules_default_aux_width_is_block_output():
    mods = make_modules((4, 6, 5, 3), s=2, d_prime=2, interval=3)
    first = mods[0]
    hidden = first.aux.layers[0].out_width
    assert hidden == first.output_width
    wide = make_modules((4, 6, 5, 3), s=2, d_prime=2, interval=3,
                        aux_hidden_width=11)
    assert wide[0].aux.layers[0].out_width == 11


def test_build_modules_is_deterministic():
    a = make_modules((5, 7, 4, 3), s=2, d_prime=2, seed=9)
    b = make_modules((5, 7, 4, 3), s=2, d_prime=2, seed=9)
    for ma, mb in zip(a, b):
        for pa, pb in zip(ma.parameters(), mb.parameters()):
            assert np.array_equal(pa.data, pb.data)
    c = make_modules((5, 7, 4, 3), s=2, d_prime=2, seed=10)
    assert not np.array_equal(a[0].layers[0].W.data, c[0].layers[0].W.data)


def test_init_is_bounded_by_fan_in():
    mods = make_modules((9, 16, 3), s=1, seed=4)
    for layer in mods[0].layers:
        bound = 1.0 / np.sqrt(layer.W.shape[0])
        assert np.abs(layer.W.data).max() <= bound
        assert np.abs(layer.b.data).max() <= bound


def test_relu_applied_after_every_layer_but_the_last():
    mods = make_modules((4, 6, 5, 3), s=2)
    flags = [layer.relu_after for m in mods for layer in m.layers]
    assert flags == [True, True, False]


def test_parameters_cover_block_and_aux():
    mods = make_modules((4, 6, 3), s=2, d_prime=1)
    first = mods[0]
    assert len(first.block_parameters()) == 2  # W, b of one layer
    assert len(first.parameters()) == 2 + 2 * len(first.aux.layers)
    last = mods[-1]
    assert last.parameters() == last.block_parameters()


# --- forward composition -----------------------------------------------------------

def test_stage_composition_equals_monolithic_forward():
    """Chaining the stage blocks reproduces the plain numpy forward exactly."""
    mods = make_modules((4, 6, 5, 3), s=3, seed=21)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 4))

    ref = x
    layers = [layer for m in mods for layer in m.layers]
    for i, layer in enumerate(layers):
        ref = ref @ layer.W.data + layer.b.data
        if i != len(layers) - 1:
            ref = np.maximum(ref, 0.0)

    h = lp.Tensor(x)
    for m in mods:
        h = lp.block_forward(m, h)
    assert np.array_equal(h.data, ref)


def test_block_forward_checks_input_width():
    mods = make_modules((4, 6, 3), s=1)
    with pytest.raises(DimensionMismatch):
        lp.block_forward(mods[0], lp.Tensor(np.zeros((2, 5))))
    with pytest.raises(DimensionMismatch):
        lp.block_forward(mods[0], lp.Tensor(np.zeros(4)))


def test_aux_forward_passes_through_on_final_stage():
    mods = make_modules((4, 6, 3), s=2)
    h = lp.Tensor(np.zeros((2, 3)))
    assert lp.aux_forward(mods[-1], h) is h


# --- local updates --------------------------------------------------------------

def test_local_update_rejects_tracked_input():
    mods = make_modules((4, 3), s=1)
    with pytest.raises(ValueError):
        lp.local_loss_and_update(mods[0], lp.Tensor(np.zeros((2, 4)),
                                                    track_grad=True),
                                 np.array([0, 1]))


def test_local_update_touches_only_its_own_stage():
    mods = make_modules((4, 6, 5, 3), s=3, d_prime=1)
    rng = np.random.default_rng(8)
    x = lp.Tensor(rng.normal(size=(5, mods[1].input_width)))
    before = snapshot(mods)
    loss, _ = lp.local_loss_and_update(mods[1], x, np.array([0, 1, 2, 0, 1]))
    assert np.isfinite(loss)
    assert same_params([mods[0], mods[2]], [before[0], before[2]])
    assert not same_params([mods[1]], [before[1]])


def test_local_update_output_reflects_pre_step_parameters():
    mods = make_modules((4, 6, 3), s=2, d_prime=1)
    rng = np.random.default_rng(12)
    x = lp.Tensor(rng.normal(size=(3, 4)))
    expected = lp.block_forward(mods[0], x).data.copy()
    seen = []
    _, x_out = lp.local_loss_and_update(mods[0], x, np.array([0, 1, 2]),
                                        on_output=seen.append)
    assert np.array_equal(x_out.data, expected)
    assert not x_out.track_grad
    assert len(seen) == 1 and seen[0] is x_out


def test_local_update_advances_optimizer_and_aux():
    mods = make_modules((4, 6, 3), s=2, d_prime=1)
    aux_before = [p.data.copy() for p in mods[0].aux.parameters()]
    x = lp.Tensor(np.random.default_rng(0).normal(size=(4, 4)))
    lp.local_loss_and_update(mods[0], x, np.array([0, 1, 2, 0]))
    assert mods[0].optimizer.step_count == 1
    assert any(not np.array_equal(p.data, old)
               for p, old in zip(mods[0].aux.parameters(), aux_before))


def test_local_updates_learn_separable_blobs():
    """200 full-batch local steps drive a one-stage net to >= 0.99 accuracy."""
    mods = make_modules((2, 8, 2), s=1, lr0=0.1, total_steps=200, seed=0)
    ds = lp.gen_blobs(100, 2, 2, 0.5, seed=1)
    x = lp.Tensor(ds.features)
    for _ in range(200):
        lp.local_loss_and_update(mods[0], x, ds.labels)
    assert lp.evaluate(mods, ds) >= 0.99


# --- memory proxy ----------------------------------------------------------------

def test_memory_footprint_single_layer_example():
    mods = make_modules((10, 10), s=1)
    fp = lp.memory_footprint(mods[0], batch_size=4)
    assert fp.params == 110          # 10*10 weights + 10 biases
    assert fp.activations == 80      # 4 * (10 input + 10 output)
    assert fp.total == 190


def test_memory_footprint_grows_with_aux_depth_and_batch():
    shallow = make_modules((8, 8, 4), s=2, d_prime=2, interval=3)[0]
    deep = make_modules((8, 8, 4), s=2, d_prime=4, interval=3)[0]
    fp_s = lp.memory_footprint(shallow, 8)
    fp_d = lp.memory_footprint(deep, 8)
    assert fp_d.params > fp_s.params
    assert fp_d.activations > fp_s.activations
    assert lp.memory_footprint(shallow, 16).activations > fp_s.activations
    assert lp.memory_footprint(shallow, 16).params == fp_s.params
    with pytest.raises(ValueError):
        lp.memory_footprint(shallow, 0)
