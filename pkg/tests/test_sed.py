# tests/test_sed.py
import pytest
import math
import os
import threading

import numpy as np

import sed
from sed import (AtomicSlot, HeuristicPromptScorer, PseudoEmbedder, SceneDatabase,
                 SedEntry, SedFormatError, SlotRecord)
from wem import CONDITIONS

pytestmark = pytest.mark.unit


def _unit(dim, *pairs):
    v = np.zeros(dim)
    for index, value in pairs:
        v[index] = value
    return v


def _random_entry(rng, dim, condition='fog', delta=0.1, params=None):
    return SedEntry(sed.normalise(rng.standard_normal(dim)), condition, params or {}, delta)


def test_entry_validation():
    """Test that entries need unit-norm vectors and known conditions."""
    with pytest.raises(SedFormatError, match="unit norm"):
        SedEntry(np.array([1.0, 1.0]), 'fog', {}, 0.1)
    with pytest.raises(SedFormatError, match="unknown condition"):
        SedEntry(np.array([1.0, 0.0]), 'hail', {}, 0.1)


def test_recommend_score_weights_similarity_by_quality():
    """Test the recommendation score sim * exp(2 * delta) for sim = 0.8, delta = 0.1."""
    db = SceneDatabase(dim=4)
    db.append(SedEntry(_unit(4, (0, 1.0)), 'fog', {'dcp_kernel': 11}, 0.1))
    rec = db.recommend(_unit(4, (0, 0.8), (1, 0.6)))
    assert rec.condition == 'fog'
    assert rec.params == {'dcp_kernel': 11}
    assert rec.similarity == pytest.approx(0.8)
    assert rec.score == pytest.approx(0.8 * math.exp(0.2), abs=1e-12)


def test_recommend_ignores_non_improving_entries():
    """Test that entries without a positive quality gain never recommend."""
    db = SceneDatabase(dim=4)
    db.append(SedEntry(_unit(4, (0, 1.0)), 'fog', {}, 0.0))
    db.append(SedEntry(_unit(4, (1, 1.0)), 'rain', {}, -0.2))
    assert db.recommend(_unit(4, (0, 1.0))) is None

    db.append(SedEntry(_unit(4, (2, 1.0)), 'sand', {'clahe_clip': 3.0}, 0.05))
    rec = db.recommend(_unit(4, (0, 1.0)))
    assert rec.condition == 'sand'
    assert rec.score == pytest.approx(0.0)


def test_recommend_prefers_quality_over_similarity():
    """Test that a larger gain can outweigh a slightly lower similarity."""
    db = SceneDatabase(dim=4)
    db.append(SedEntry(_unit(4, (0, 1.0)), 'fog', {}, 0.01))
    db.append(SedEntry(_unit(4, (0, 0.9), (1, math.sqrt(1 - 0.81))), 'sand', {}, 0.3))
    assert db.recommend(_unit(4, (0, 1.0))).condition == 'sand'


@pytest.mark.oracle
def test_knn_matches_full_sort():
    """Test exact-scan kNN against a full sort for 100 queries at D = 8."""
    rng = np.random.default_rng(5)
    db = SceneDatabase(dim=8)
    for _ in range(40):
        db.append(_random_entry(rng, 8))
    entries = db.entries
    for _ in range(100):
        q = sed.normalise(rng.standard_normal(8))
        sims = [float(e.embedding @ q) for e in entries]
        expected = sorted(range(len(entries)), key=lambda i: -sims[i])[:5]
        got = db.knn(q, 5)
        assert [e for e, _ in got] == [entries[i] for i in expected]
        assert [s for _, s in got] == pytest.approx([sims[i] for i in expected])


@pytest.mark.oracle
def test_knn_after_many_appends_and_reload(tmp_path):
    """Test kNN against a full sort after several thousand appends, a reload and further appends."""
    rng = np.random.default_rng(17)
    path = str(tmp_path / 'scenes.sed')
    db = SceneDatabase.load(path, dim=8)
    for _ in range(3000):
        db.append(_random_entry(rng, 8))
    assert len(db) == 3000

    loaded = SceneDatabase.load(path)
    for _ in range(130):
        loaded.append(_random_entry(rng, 8, 'rain'))

    for store in (db, loaded):
        entries = store.entries
        for _ in range(20):
            q = sed.normalise(rng.standard_normal(8))
            sims = [float(e.embedding @ q) for e in entries]
            expected = sorted(range(len(entries)), key=lambda i: -sims[i])[:5]
            got = store.knn(q, 5)
            assert [e for e, _ in got] == [entries[i] for i in expected]
            assert [s for _, s in got] == pytest.approx([sims[i] for i in expected])


def test_knn_edge_cases():
    """Test kNN on an empty database and with malformed queries."""
    db = SceneDatabase(dim=4)
    assert db.knn(_unit(4, (0, 1.0))) == []
    db.append(SedEntry(_unit(4, (0, 1.0)), 'fog', {}, 0.1))
    with pytest.raises(ValueError, match="dimension"):
        db.knn(_unit(3, (0, 1.0)))
    with pytest.raises(ValueError, match="unit norm"):
        db.knn(np.ones(4))
    assert len(db.knn(_unit(4, (0, 1.0)), k=10)) == 1


def test_append_rejects_wrong_dimension():
    """Test that an entry of another dimension is refused."""
    db = SceneDatabase(dim=4)
    with pytest.raises(SedFormatError):
        db.append(SedEntry(_unit(3, (0, 1.0)), 'fog', {}, 0.1))


def test_persistence_round_trip(tmp_path, rng):
    """Test that appended entries load back from disk."""
    path = str(tmp_path / 'scenes.sed')
    db = SceneDatabase.load(path, dim=16)
    originals = [_random_entry(rng, 16, c, 0.1 * i, {'clahe_clip': 1.0 + i})
                 for i, c in enumerate(('fog', 'rain', 'sand'))]
    for entry in originals:
        db.append(entry)

    loaded = SceneDatabase.load(path)
    assert loaded.dim == 16
    assert len(loaded) == 3
    for a, b in zip(loaded.entries, originals):
        assert np.array_equal(a.embedding, b.embedding)
        assert a.condition == b.condition
        assert a.delta_f1 == b.delta_f1
        assert a.filter_params == b.filter_params


def test_load_ignores_uncommitted_tail(tmp_path, rng):
    """Test that bytes past the committed count are ignored."""
    path = str(tmp_path / 'scenes.sed')
    db = SceneDatabase(dim=8, path=path)
    db.append(_random_entry(rng, 8))
    with open(path, 'ab') as f:
        f.write(b'\x01' * 50)
    assert len(SceneDatabase.load(path)) == 1


@pytest.mark.error
def test_load_truncated_file(tmp_path, rng):
    """Test that a header promising more records than present is an error."""
    path = str(tmp_path / 'scenes.sed')
    db = SceneDatabase(dim=8, path=path)
    db.append(_random_entry(rng, 8))
    with open(path, 'r+b') as f:
        f.write(sed.HEADER_FORMAT.format(dim=8, count=2).encode('ascii'))
    with pytest.raises(SedFormatError, match="promises 2 records"):
        SceneDatabase.load(path)


@pytest.mark.error
def test_load_bad_header_and_dimension(tmp_path, rng):
    """Test header and dimension validation on load."""
    bad = tmp_path / 'bad.sed'
    bad.write_bytes(b'not a database at all, just some text padding the header out\n')
    with pytest.raises(SedFormatError, match="bad header"):
        SceneDatabase.load(str(bad))

    path = str(tmp_path / 'scenes.sed')
    SceneDatabase(dim=8, path=path).append(_random_entry(rng, 8))
    with pytest.raises(SedFormatError, match="does not match expected"):
        SceneDatabase.load(path, dim=16)


def test_dump_lines(rng):
    """Test the human-readable dump."""
    db = SceneDatabase(dim=8)
    db.append(_random_entry(rng, 8, 'rain', 0.25, {'clahe_clip': 2.0}))
    lines = db.dump()
    assert lines[0] == "# dim=8 entries=1"
    assert 'rain' in lines[1]
    assert 'delta=+0.2500' in lines[1]
    assert '"clahe_clip": 2.0' in lines[1]


def test_publish_slot_versions():
    """Test that each publication increments the slot version."""
    slot = AtomicSlot()
    assert slot.read() is None
    for expected in (1, 2, 3):
        record = sed.publish_slot(slot, 'fog', [0.9, 0.1], None)
        assert record.version == expected
        assert slot.read() is record


@pytest.mark.concurrency
def test_slot_reads_are_never_torn():
    """Test 10^5 slot writes against a concurrent reader."""
    slot = AtomicSlot()
    writes = 100_000
    errors = []

    def writer():
        for _ in range(writes):
            current = slot.read()
            version = current.version + 1 if current else 1
            label = CONDITIONS[version % len(CONDITIONS)]
            slot.publish(SlotRecord(label, (float(version),) * 3, None, version))

    def reader():
        last = 0
        while last < writes:
            record = slot.read()
            if record is None:
                continue
            if record.version < last:
                errors.append(f"version went back from {last} to {record.version}")
            if record.clip_label != CONDITIONS[record.version % len(CONDITIONS)]:
                errors.append(f"label does not match version {record.version}")
            if record.clip_scores != (float(record.version),) * 3:
                errors.append(f"scores do not match version {record.version}")
            last = record.version

    threads = [threading.Thread(target=writer), threading.Thread(target=reader)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=120)
    assert not errors
    assert slot.read().version == writes


def test_pseudo_embedder_is_deterministic(clean_scene):
    """Test that the local embedder is unit-norm and repeatable."""
    scene, _ = clean_scene
    a = PseudoEmbedder(dim=64, seed=3).embed(scene)
    b = PseudoEmbedder(dim=64, seed=3).embed(scene)
    assert a.shape == (64,)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert np.array_equal(a, b)


def test_pseudo_embedder_similar_frames_are_close(clean_scene):
    """Test that a slightly perturbed frame embeds close to the original."""
    scene, _ = clean_scene
    embedder = PseudoEmbedder(dim=128)
    brighter = np.clip(scene.astype(int) + 3, 0, 255).astype(np.uint8)
    assert float(embedder.embed(scene) @ embedder.embed(brighter)) > 0.9


def test_prompt_scorer_softmax(fog_frame):
    """Test that prompt scores form a distribution over the prompts."""
    prompts = [text for _, text in sed.DEFAULT_PROMPTS]
    scores = HeuristicPromptScorer().classify_prompts(fog_frame.raster, prompts)
    assert len(scores) == len(prompts)
    assert sum(scores) == pytest.approx(1.0)
    assert all(s > 0 for s in scores)


def test_label_of():
    """Test label extraction from prefixed and plain prompts."""
    assert sed.label_of('rain|wet streets') == 'rain'
    assert sed.label_of('A photo in dense FOG') == 'fog'
    assert sed.label_of('a sunny street') == 'clear'


def test_load_prompts(tmp_path):
    """Test prompt file parsing and its errors."""
    path = tmp_path / 'prompts.txt'
    path.write_text("# weather\n\nfog| a foggy road \nsnow|snowfall\n")
    assert sed.load_prompts(str(path)) == [('fog', 'a foggy road'), ('snow', 'snowfall')]

    path.write_text("fog a foggy road\n")
    with pytest.raises(SedFormatError, match=":1: expected"):
        sed.load_prompts(str(path))
    path.write_text("hail|ice\n")
    with pytest.raises(SedFormatError, match="unknown condition label"):
        sed.load_prompts(str(path))
    path.write_text("# nothing\n")
    with pytest.raises(SedFormatError, match="no prompts"):
        sed.load_prompts(str(path))


def test_shipped_prompt_file_loads():
    """Test that the shipped prompt file covers every condition."""
    path = os.path.join(os.path.dirname(__file__), '..', 'prompts', 'weather_prompts.txt')
    labels = {label for label, _ in sed.load_prompts(path)}
    assert labels == set(CONDITIONS)
