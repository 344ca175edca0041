# tests/test_pipeline.py
import pytest
import itertools
from unittest.mock import patch

import numpy as np

import pipeline
from cape import FilterConfig
from detectors import Frame, OracleDetector
from pipeline import AblationFlags, CadenetPipeline, LatencyStats, SimulatedRunner, StageCosts, ThreadedRunner
from sed import SceneDatabase, SedEntry, SlotRecord, normalise
from synthetic import synthetic_sequence
from wem import WeatherEstimate

pytestmark = pytest.mark.unit

CAMERA_FPS = 1000.0 / 33


class FailingDetector:
    source = 'S'

    def detect(self, frame):
        raise RuntimeError("device lost")


def _pipeline(flags=None, **kwargs):
    return CadenetPipeline(OracleDetector(source='S'), OracleDetector(source='Q'), flags=flags, **kwargs)


@pytest.fixture(scope='module')
def long_sequence():
    """Fixture providing 1000 fog frames at a 33 ms camera period."""
    return synthetic_sequence(1000, 'fog', 0.5, seed=4, fps=CAMERA_FPS)


@pytest.fixture
def short_sequence():
    """Fixture providing 60 fog frames at 30 fps."""
    return synthetic_sequence(60, 'fog', 0.5, seed=6)


def test_ablation_flags_from_ids():
    """Test parsing ablation IDs from strings and lists."""
    flags = AblationFlags.from_ids('A1, a4')
    assert flags.blocking_single_thread and flags.cape_passthrough
    assert flags.ids() == ['A1', 'A4']
    assert AblationFlags.from_ids([]).ids() == []
    assert AblationFlags.from_ids(['A7']).thread_e_disabled
    with pytest.raises(ValueError, match="unknown ablation id"):
        AblationFlags.from_ids(['A8'])


def test_stage_costs_quality_chain():
    """Test the modelled Thread Q cost under the ablations that change it."""
    costs = StageCosts()
    assert costs.safety_ms() == 23.0
    assert costs.quality_ms('fog', AblationFlags()) == pytest.approx(111.5)
    assert costs.quality_ms('fog', AblationFlags(cape_passthrough=True)) == pytest.approx(31.5)
    assert costs.quality_ms('fog', AblationFlags(thread_e_disabled=True)) == pytest.approx(179.5)
    assert costs.analytics_ms() == pytest.approx(107.5)

    loaded = StageCosts(q_override=500.0)
    assert loaded.quality_ms('rain', AblationFlags()) == 500.0
    assert loaded.quality_ms('rain', AblationFlags(thread_e_disabled=True)) == 568.0


def test_latency_stats():
    """Test sample statistics and their display."""
    stats = LatencyStats.from_samples([1.0, 3.0], warmup=2)
    assert (stats.mean_ms, stats.std_ms, stats.warmup, stats.timed) == (2.0, 1.0, 2, 2)
    assert str(stats) == "2.00 ± 1.00 ms"
    with pytest.raises(ValueError):
        LatencyStats(1.0, 0.0, 0, 0)


def test_period_stats_without_outputs():
    """Test that a run without safety outputs reports zero periods."""
    result = pipeline.PipelineResult([], pipeline.LatencyReport(), [], [], [], [])
    assert result.period_stats() == {'mean': 0.0, 'p99': 0.0, 'max': 0.0}


@pytest.mark.integration
def test_safety_period_holds_under_slow_quality_stream(long_sequence):
    """Test that a 500 ms Thread Q leaves the Thread S period at the camera period."""
    result = SimulatedRunner(_pipeline(), StageCosts(q_override=500.0), CAMERA_FPS).run(long_sequence)
    stats = result.period_stats()
    assert stats['p99'] <= 38.0
    assert stats['mean'] == pytest.approx(33.0)
    assert len(result.safety_times) == 1000
    assert result.frames_dropped == 0
    assert result.q_latencies and set(result.k_values) == {16}
    assert result.slot_versions == list(range(1, len(result.slot_versions) + 1))


@pytest.mark.integration
def test_blocking_single_thread_pays_for_quality(long_sequence):
    """Test that the single-thread ablation stretches the safety period past the Q cost."""
    result = SimulatedRunner(_pipeline(AblationFlags(blocking_single_thread=True)),
                             StageCosts(q_override=500.0), CAMERA_FPS).run(long_sequence)
    assert result.period_stats()['mean'] >= 500.0
    assert set(result.k_values) == {0}
    assert result.frames_dropped > 0


def test_quality_lag_in_frames(short_sequence):
    """Test the injection lag for a 111.5 ms quality cycle at 30 fps."""
    result = SimulatedRunner(_pipeline(), StageCosts(q_override=111.5), 30.0).run(short_sequence)
    assert result.k_values
    assert set(result.k_values) == {4}
    assert all(q == pytest.approx(111.5) for q in result.q_latencies)


def test_simulated_run_is_deterministic(short_sequence):
    """Test that repeated simulated runs give the same track log."""
    first = SimulatedRunner(_pipeline()).run(short_sequence)
    second = SimulatedRunner(_pipeline()).run(short_sequence)
    assert first.track_log
    assert first.track_log == second.track_log
    assert first.k_values == second.k_values


def test_simulated_runner_rejects_bad_fps():
    """Test that a non-positive camera rate is refused."""
    with pytest.raises(ValueError):
        SimulatedRunner(_pipeline(), fps=0)


@pytest.mark.error
def test_safety_step_skips_failed_detection(clean_scene):
    """Test that a detector failure skips the frame with a warning."""
    scene, _ = clean_scene
    pipe = CadenetPipeline(FailingDetector(), OracleDetector(source='Q'))
    with patch('pipeline.logger') as mock_logger:
        assert pipe.safety_step(Frame(scene, 0)) is None
    mock_logger.warning.assert_called_once()
    assert pipe.track_log == []


def test_raw_detection_ablation_logs_unassigned_ids(short_sequence):
    """Test that the raw-detection ablation writes id -1 and never injects."""
    pipe = _pipeline(AblationFlags(ktt_raw_detections=True))
    result = SimulatedRunner(pipe).run(short_sequence[:10])
    assert result.track_log
    assert all(line.split(',')[1] == '-1' for line in result.track_log)
    assert len(pipe.store) == 0


def test_safety_only_fusion(fog_frame):
    """Test that the S-only ablation fuses nothing from the quality stream."""
    pipe = _pipeline(AblationFlags(egnms_s_only=True))
    packet = pipe.safety_step(fog_frame)
    outcome = pipe.quality_compute(packet, None)
    assert outcome.dq
    assert outcome.fused
    assert all(d.source == 'S' for d in outcome.fused)


def test_quality_compute_tags_streams(fog_frame):
    """Test that Thread Q output carries stream tags and the routed estimate."""
    pipe = _pipeline(AblationFlags(fixed_severity_0_6=True))
    packet = pipe.safety_step(fog_frame)
    assert all(d.source == 'S' for d in packet.ds)
    outcome = pipe.quality_compute(packet, None)
    assert all(d.source == 'Q' for d in outcome.dq)
    assert outcome.estimate.severity == 0.6
    assert pipe.inject(outcome, 2) == 0


def test_read_slot_warns_on_version_regression():
    """Test that a slot version going backwards is reported."""
    pipe = _pipeline()
    pipe.slot.publish(SlotRecord('fog', (1.0,), None, 5))
    assert pipe.read_slot().version == 5
    pipe.slot.publish(SlotRecord('fog', (1.0,), None, 3))
    with patch('pipeline.logger') as mock_logger:
        pipe.read_slot()
    mock_logger.warning.assert_called_once()


def test_analytics_step_publishes_and_appends(fog_frame):
    """Test that Thread E versions the slot and grows the scene database."""
    db = SceneDatabase(dim=32)
    pipe = _pipeline(sed=db)
    outcome = pipe.quality_compute(pipe.safety_step(fog_frame), None)
    first = pipe.analytics_step(outcome.enhanced_packet())
    second = pipe.analytics_step(outcome.enhanced_packet())
    assert (first.version, second.version) == (1, 2)
    assert first.clip_label in {label for label, _ in pipe.prompts}
    assert len(db) == 2
    assert pipe.read_slot() is second


class RasterKeyedEmbedder:
    """Returns one axis for the reference raster and another for anything else."""

    def __init__(self, reference):
        self.reference = reference
        self.seen = []

    def embed(self, frame):
        self.seen.append(frame)
        axis = 0 if np.array_equal(frame, self.reference) else 1
        return np.eye(4)[axis]


class RecordingClassifier:
    def __init__(self):
        self.seen = []

    def classify_prompts(self, frame, prompts):
        self.seen.append(frame)
        return [1.0] + [0.0] * (len(prompts) - 1)


def test_analytics_step_uses_enhanced_frame(fog_frame):
    """Test that Thread E labels, embeds and stores the enhanced raster, not the capture."""
    db = SceneDatabase(dim=4)
    enhanced = 255 - fog_frame.raster
    packet = pipeline.EnhancedPacket(fog_frame, enhanced, WeatherEstimate('fog', 0.8),
                                     {'dcp_kernel': 15}, 0.05)

    embedder = RasterKeyedEmbedder(packet.enhanced)
    classifier = RecordingClassifier()
    pipe = _pipeline(sed=db, embedder=embedder, classifier=classifier)
    pipe.analytics_step(packet)

    assert len(db) == 1
    assert np.array_equal(db.entries[0].embedding, np.eye(4)[0])
    assert embedder.seen and classifier.seen
    assert all(f is packet.enhanced for f in embedder.seen)
    assert all(f is packet.enhanced for f in classifier.seen)


def test_measure_latency_with_fake_clock():
    """Test warmup handling and millisecond sampling against a clock advancing 1 ms per read."""
    calls = []
    clock = itertools.count(0, 0.001).__next__
    stats = pipeline.measure_latency(lambda: calls.append(1), warmup=3, timed=5, clock=clock)
    assert len(calls) == 8
    assert stats.mean_ms == pytest.approx(1.0)
    assert stats.std_ms == pytest.approx(0.0, abs=1e-9)
    assert (stats.warmup, stats.timed) == (3, 5)
    with pytest.raises(ValueError):
        pipeline.measure_latency(lambda: None, warmup=-1)
    with pytest.raises(ValueError):
        pipeline.measure_latency(lambda: None, timed=0)


def test_timing_discipline():
    """Test the warmup and timed counts per discipline."""
    assert pipeline.timing_discipline('gpu') == (10, 50)
    assert pipeline.timing_discipline('cpu') == (5, 100)
    with pytest.raises(ValueError, match="unknown timing mode"):
        pipeline.timing_discipline('tpu')


def test_format_latency_table():
    """Test the latency table rows."""
    table = pipeline.format_latency_table({'egnms': LatencyStats(0.25, 0.05, 10, 50)})
    assert table.splitlines()[-1].split() == ['egnms', '0.25', '0.05', '10', '50']


def test_egnms_workload(rng):
    """Test that the workload splits into S and Q detections inside the frame."""
    ds, dq = pipeline.egnms_workload(rng, 64, 96, n_boxes=10)
    assert len(ds) == len(dq) == 5
    assert all(d.source == 'S' for d in ds) and all(d.source == 'Q' for d in dq)
    for d in ds + dq:
        assert 0 <= d.box.x1 and d.box.x2 <= 96 + 1e-9
        assert 0 <= d.box.y1 and d.box.y2 <= 64 + 1e-9


def test_stage_operations(clean_scene, rng):
    """Test that every named stage operation runs on a frame."""
    scene, _ = clean_scene
    db = SceneDatabase(dim=32)
    db.append(SedEntry(normalise(rng.standard_normal(32)), 'fog', {}, 0.1))
    ops = pipeline.stage_operations(scene, FilterConfig(), sed=db)
    assert {'s_detect', 'q_detect', 'wem', 'pee', 'egnms', 'embed', 'classify',
            'cape_fog', 'cape_rain', 'cape_sand', 'cape_snow', 'sed_knn'} == set(ops)
    for name, op in ops.items():
        op()
    assert len(ops['sed_knn']()) == 1
    assert 'sed_knn' not in pipeline.stage_operations(scene, FilterConfig())


@pytest.mark.error
def test_run_rejects_unknown_mode(short_sequence):
    """Test the run-mode check."""
    with pytest.raises(ValueError, match="unknown run mode"):
        pipeline.run(short_sequence, OracleDetector(), OracleDetector(source='Q'), mode='batch')


def test_run_simulated(short_sequence):
    """Test the simulated entry point."""
    result = pipeline.run(short_sequence[:20], OracleDetector(), OracleDetector(source='Q'))
    assert result.frames_in == 20
    assert 'thread_s' in result.latency.stages
    assert 'Stage' in result.latency.format()


@pytest.mark.concurrency
def test_threaded_runner_smoke(short_sequence):
    """Test a short real-clock run of the three threads."""
    result = ThreadedRunner(_pipeline(), fps=100.0).run(short_sequence[:10], timeout=30)
    assert result.frames_in == 10
    assert len(result.safety_times) == 10
    assert np.all(np.diff(result.safety_times) >= 0)
    assert result.track_log
