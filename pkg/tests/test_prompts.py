import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accompanist import prompts
from accompanist.prompts import (
    PromptConstraints,
    UnknownKeyword,
    auto_prompt_vector,
    constraint_set,
    constraint_set_relaxed,
    keyword_compatible,
    load_registry,
    merge_keywords,
    prompt_vector,
    sample_compatible_keywords,
)
from accompanist.songmodel import AUTO_LABEL, PROMPT_DIM, STYLE_AXES, STYLE_VOCAB, StyleVector

REGISTRY = load_registry()


def test_registry_has_fifteen_keywords():
    assert len(REGISTRY) == 15


def test_empty_merge_is_unconstrained():
    c = merge_keywords([], REGISTRY)
    assert all(c.allowed[a] is None for a in STYLE_AXES)
    assert all(not c.preferred[a] and not c.excluded[a] for a in STYLE_AXES)


def test_quiet_gentle_merge():
    c = merge_keywords(["quiet", "gentle"], REGISTRY)
    assert c.preferred["dyn"] == {"quiet"}
    assert c.preferred["art"] == {"gentle"}
    assert "dense" in c.excluded["rhythm"]
    assert "syncopated" in c.excluded["tension"]


def test_disjoint_allowed_sets_flag_overspecified():
    c = merge_keywords(["sparse", "dense"], REGISTRY)  # rhythm {slow,medium} vs {fast,dense}
    assert c.allowed["rhythm"] == frozenset()
    assert "rhythm" in c.overspecified


def test_unknown_keyword_raises():
    with pytest.raises(UnknownKeyword):
        merge_keywords(["swagger"], REGISTRY)


# ---------------------------------------------------------------------------
# prompt vector


def test_auto_vector_shape():
    u = auto_prompt_vector()
    assert u.shape == (PROMPT_DIM,)
    pos = 0
    ones = 0
    for axis in STYLE_AXES:
        size = len(STYLE_VOCAB[axis]) + 1
        block = u[pos:pos + size]
        assert block.sum() == pytest.approx(1.0, abs=1e-9)
        if block[-1] == 1.0:
            ones += 1
        pos += size
    assert ones == 6


def test_weight_formula_normalization():
    c = PromptConstraints.unconstrained()
    c.allowed["dyn"] = frozenset({"quiet", "soft"})
    c.preferred["dyn"] = frozenset({"quiet"})
    u = prompt_vector(c)
    dyn = u[: len(STYLE_VOCAB["dyn"]) + 1]
    idx_quiet = STYLE_VOCAB["dyn"].index("quiet")
    idx_soft = STYLE_VOCAB["dyn"].index("soft")
    assert dyn[idx_quiet] == pytest.approx(2 / 3)
    assert dyn[idx_soft] == pytest.approx(1 / 3)
    assert dyn[-1] == 0.0


def test_overspecified_axis_goes_auto():
    c = merge_keywords(["sparse", "dense"], REGISTRY)
    u = prompt_vector(c)
    pos = sum(len(STYLE_VOCAB[a]) + 1 for a in STYLE_AXES[:2])  # rhythm block start
    block = u[pos:pos + len(STYLE_VOCAB["rhythm"]) + 1]
    assert block[-1] == 1.0


@given(st.sets(st.sampled_from(sorted(REGISTRY)), max_size=3))
@settings(max_examples=100, deadline=None)
def test_prompt_vector_contract(names):
    u = prompt_vector(merge_keywords(names, REGISTRY))
    assert u.shape == (PROMPT_DIM,)
    assert np.all(u >= 0.0)
    pos = 0
    for axis in STYLE_AXES:
        size = len(STYLE_VOCAB[axis]) + 1
        assert abs(u[pos:pos + size].sum() - 1.0) <= 1e-9
        pos += size


@given(st.sets(st.sampled_from(sorted(REGISTRY)), max_size=2),
       st.sampled_from(sorted(REGISTRY)))
@settings(max_examples=100, deadline=None)
def test_merge_monotone(names, extra):
    before = merge_keywords(names, REGISTRY)
    after = merge_keywords(set(names) | {extra}, REGISTRY)
    for axis in STYLE_AXES:
        if before.allowed[axis] is not None:
            assert after.allowed[axis] is not None
            assert after.allowed[axis] <= before.allowed[axis]
        assert before.excluded[axis] <= after.excluded[axis]


# ---------------------------------------------------------------------------
# constraint sets


def test_unconstrained_equals_inventory(corpus):
    c = merge_keywords([], REGISTRY)
    assert constraint_set(c, corpus.index.inventory, 4) == corpus.index.inventory.vectors(4)


def test_constraint_set_matches_brute_force(corpus):
    inv = corpus.index.inventory
    for names in (["quiet"], ["loud", "block"], ["busy", "stride"], ["gentle", "warm"]):
        c = merge_keywords(names, REGISTRY)
        got = constraint_set(c, inv, 4)
        expected = [v for v in inv.vectors(4) if c.admits(v)]
        assert got == expected


def test_exclusion_can_empty_the_set(corpus):
    c = PromptConstraints.unconstrained()
    c.excluded["texture"] = frozenset(STYLE_VOCAB["texture"])
    assert constraint_set(c, corpus.index.inventory, 4) == []
    vecs, dropped = constraint_set_relaxed(c, corpus.index.inventory, 4)
    assert vecs and dropped[0] == "texture"


def test_relaxation_order_prefers_dropping_texture_first(corpus):
    c = merge_keywords(["stride", "quiet"], REGISTRY)
    inv = corpus.index.inventory
    if constraint_set(c, inv, 4):
        vecs, dropped = constraint_set_relaxed(c, inv, 4)
        assert dropped == ()
    else:
        vecs, dropped = constraint_set_relaxed(c, inv, 4)
        assert vecs
        assert dropped[0] == "texture"


# ---------------------------------------------------------------------------
# compatibility sampling


def test_stride_compatible_alberti_not():
    gt = StyleVector("soft", "normal", "medium", "steady", "stride", "mid")
    assert keyword_compatible(REGISTRY["stride"], gt)
    assert not keyword_compatible(REGISTRY["alberti"], gt)


def test_p_drop_one_always_empty(rng):
    gt = StyleVector("soft", "normal", "medium", "steady", "block", "mid")
    for _ in range(50):
        kws, scope = sample_compatible_keywords(gt, rng, REGISTRY, p_drop=1.0)
        assert kws == frozenset()
        assert scope in ("song", "section", "measure")


def test_sampled_keywords_always_compatible(rng, corpus):
    styles = corpus.index.inventory.vectors(4)
    for _ in range(10_000):
        gt = styles[int(rng.integers(0, len(styles)))]
        kws, _ = sample_compatible_keywords(gt, rng, REGISTRY, p_drop=0.2)
        merged = merge_keywords(kws, REGISTRY)
        assert merged.admits(gt), (kws, gt)
