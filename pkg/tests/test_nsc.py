import json

import pytest
from hypothesis import given, settings, strategies as st

from dpnas.nsc import (
    NscCode, Op, ParseError, SpaceConfig, ValidationError, codes_from_obj, from_json,
    legal_actions, parse_codes, prune_inactive, successors, to_json, validate,
)

from conftest import random_blocks


def test_minimal_block_valid(minimal):
    g = validate(minimal)
    assert g.terminal_kind == Op.TERMINAL1
    assert all(g.active)


def test_missing_terminal():
    with pytest.raises(ValidationError) as e:
        validate(parse_codes([(1, 1, 3, 0, 0)]))
    assert "MissingTerminal" in e.value.kinds


def test_pred_out_of_range():
    with pytest.raises(ValidationError) as e:
        validate(parse_codes([(1, 5, 0, 0, 2)]))
    assert "PredOutOfRange" in e.value.kinds
    assert any(i.layer == 1 for i in e.value.issues)


def test_all_violations_reported():
    codes = parse_codes([(1, 1, 2, 0, 0), (2, 7, 0, 0, 0), (3, 1, 3, 5, 0)])
    with pytest.raises(ValidationError) as e:
        validate(codes)
    assert {"KernelOpMismatch", "TerminalNotLast", "PredOutOfRange"} <= e.value.kinds


def test_duplicate_index():
    with pytest.raises(ValidationError) as e:
        validate(parse_codes([(1, 1, 3, 0, 0), (1, 7, 0, 0, 0)]))
    assert "DuplicateIndex" in e.value.kinds


def test_too_many_layers():
    codes = parse_codes([(i, 4, 0, i - 1, 0) for i in range(1, 5)] + [(5, 7, 0, 0, 0)])
    validate(codes, max_layers=5)
    with pytest.raises(ValidationError) as e:
        validate(codes, max_layers=4)
    assert "TooManyLayers" in e.value.kinds


def test_kernel_rules():
    for bad in [(1, 1, 2, 0, 0), (1, 2, 3, 0, 0), (1, 4, 1, 0, 0), (1, 7, 3, 0, 0)]:
        with pytest.raises(ValidationError) as e:
            validate(parse_codes([bad, (2, 7, 0, 0, 0)]))
        assert "KernelOpMismatch" in e.value.kinds
    # pred2 on a unary op, preds on a terminal
    with pytest.raises(ValidationError):
        validate(parse_codes([(1, 1, 3, 0, 0), (2, 1, 3, 1, 1), (3, 7, 0, 0, 0)]))
    with pytest.raises(ValidationError):
        validate(parse_codes([(1, 1, 3, 0, 0), (2, 7, 0, 1, 0)]))


def test_prune_linear_chain():
    g = prune_inactive(validate(parse_codes([(1, 1, 3, 0, 0), (2, 1, 3, 1, 0), (3, 7, 0, 0, 0)])))
    assert g.active_codes() == list(g.codes)


def test_prune_dead_layer():
    g = prune_inactive(validate(parse_codes(
        [(1, 1, 3, 0, 0), (2, 1, 3, 0, 0), (3, 1, 3, 2, 0), (4, 7, 0, 0, 0)])))
    assert [g.is_active(i) for i in (1, 2, 3, 4)] == [False, True, True, True]
    assert g.n_inactive == 1


def test_prune_add_keeps_both():
    g = prune_inactive(validate(parse_codes(
        [(1, 1, 3, 0, 0), (2, 4, 0, 1, 0), (3, 5, 0, 1, 2), (4, 7, 0, 0, 0)])))
    assert g.n_inactive == 0


def _reachable(codes):
    """Brute-force oracle: repeatedly add predecessors of the live set."""
    live = {len(codes), len(codes) - 1}
    changed = True
    while changed:
        changed = False
        for c in codes:
            if c.index in live and not c.op.is_terminal:
                for p in (c.pred1, c.pred2 if c.op.is_binary else c.pred1):
                    if p not in live:
                        live.add(p)
                        changed = True
    return {i for i in live if i >= 1}


def test_random_sequences_validate_and_prune():
    for codes in random_blocks(1000, seed=1):
        g = prune_inactive(validate(codes, 8))
        assert {c.index for c in g.active_codes()} == _reachable(codes)
        succ = successors(g)
        for c in g.active_codes():
            if not c.op.is_terminal:
                assert succ[c.index], c
        assert prune_inactive(g) == g


def test_json_round_trip():
    for codes in random_blocks(200, seed=2):
        g = validate(codes)
        assert from_json(to_json(g)) == g


def test_malformed_field_names_field():
    with pytest.raises(ParseError) as e:
        codes_from_obj([{"index": 1, "typ": 1, "kernel": 3, "pred1": 0, "pred2": 0}])
    assert "typ" in str(e.value) and "$[0]" in e.value.location
    with pytest.raises(ParseError) as e:
        from_json("[{")
    assert "line" in e.value.location


def test_legal_actions_first_layer(space):
    acts = legal_actions([], space)
    ops = {a.op for a in acts}
    assert Op.ADD not in ops and Op.CONCAT not in ops
    assert all(a.pred1 == 0 and a.pred2 == 0 for a in acts)
    assert {Op.CONV, Op.DOWN, Op.UP, Op.IDENTITY, Op.TERMINAL1, Op.TERMINAL2} == ops
    assert acts == sorted(acts, key=lambda a: a.encoding)


def test_legal_actions_at_max_layers(space):
    partial = [NscCode(i, Op.IDENTITY, 0, i - 1) for i in range(1, space.max_layers)]
    assert {a.op for a in legal_actions(partial, space)} == {Op.TERMINAL1, Op.TERMINAL2}


def test_down_masked_at_floor():
    space = SpaceConfig(patch_size=4)
    partial = [NscCode(1, Op.DOWN, 2, 0)]  # extent 2
    downs = [a for a in legal_actions(partial, space) if a.op == Op.DOWN]
    assert all(a.pred1 == 0 for a in downs)


def test_concat_channel_cap():
    space = SpaceConfig(base_width=8, max_channels=16)
    partial = [NscCode(1, Op.CONV, 3, 0), NscCode(2, Op.CONCAT, 0, 1, 1)]  # 16 channels
    cats = [a for a in legal_actions(partial, space) if a.op == Op.CONCAT]
    assert all(2 not in (a.pred1, a.pred2) for a in cats)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_legal_actions_never_invalid(seed, max_layers):
    import numpy as np
    space = SpaceConfig(max_layers=max_layers)
    rng = np.random.default_rng(seed)
    codes = []
    while True:
        acts = legal_actions(codes, space)
        a = acts[int(rng.integers(len(acts)))]
        # every offered action is individually well-formed
        for b in acts[:: max(1, len(acts) // 20)]:
            validate(codes + [b] if b.op.is_terminal else codes + [b, NscCode(len(codes) + 2, Op.TERMINAL1)])
        codes.append(a)
        if a.op.is_terminal:
            break
    validate(codes, max_layers)


def test_codes_json_shape(minimal):
    obj = json.loads(to_json(validate(minimal)))
    assert obj[0] == {"index": 1, "type": 1, "kernel": 3, "pred1": 0, "pred2": 0}
