from __future__ import annotations

import csv

import numpy as np
import pytest

from goskill.compute import Tensor, no_grad
from goskill.errors import DataError
from goskill.skills import (
    SkillClassDataset,
    SkillClassSampler,
    SkillEnhancer,
    assign_skill_classes,
    codebook_usage_report,
)
from goskill.skills.classes import SegmentRef

from .helpers import tiny_run_config


def _classes(sizes) -> SkillClassDataset:
    indices = np.concatenate([np.full(size, skill, dtype=np.int64) for skill, size in enumerate(sizes)])
    count = len(indices)
    return SkillClassDataset(
        horizon=1,
        num_skills=len(sizes),
        segments=[SegmentRef(task_id=0, trajectory=i, start=0) for i in range(count)],
        indices=indices,
        states=np.zeros((count, 2, 11)),
        actions=np.zeros((count, 1, 2)),
    )


def test_classes_partition_every_aligned_segment(extracted_model, tiny_dataset):
    classes = assign_skill_classes(tiny_dataset, extracted_model)
    horizon = extracted_model.horizon
    expected = sum(traj.length // horizon for traj in tiny_dataset)
    assert len(classes) == expected
    assert int(classes.sizes().sum()) == expected


def test_assignment_is_deterministic_and_matches_brute_force(extracted_model, tiny_dataset):
    first = assign_skill_classes(tiny_dataset, extracted_model)
    second = assign_skill_classes(tiny_dataset, extracted_model)
    np.testing.assert_array_equal(first.indices, second.indices)
    horizon = extracted_model.horizon
    for ref, skill in zip(first.segments, first.indices.tolist()):
        traj = tiny_dataset.for_task(ref.task_id)[ref.trajectory]
        diff = traj.states[ref.start + horizon] - traj.states[ref.start]
        with no_grad():
            z = extracted_model.encoder(Tensor(diff[None])).data
        codes = extracted_model.codebook.embeddings.data
        assert int(np.argmin(((codes - z) ** 2).sum(axis=1))) == skill


def test_assignments_csv_has_one_row_per_segment(extracted_model, tiny_dataset, tmp_path):
    classes = assign_skill_classes(tiny_dataset, extracted_model)
    path = classes.write_csv(tmp_path / "assignments.csv")
    with path.open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == len(classes)
    assert set(rows[0]) == {"task_id", "trajectory", "segment_start_t", "skill_index"}


def test_sampler_is_uniform_over_non_empty_classes():
    classes = _classes([1, 5, 0, 20])
    sampler = SkillClassSampler(classes, np.random.default_rng(0))
    draws = classes.indices[sampler.draw(10_000)]
    counts = np.bincount(draws, minlength=4)
    assert counts[2] == 0
    p = 1.0 / 3.0
    bound = 3.0 * np.sqrt(10_000 * p * (1.0 - p))
    for skill in (0, 1, 3):
        assert abs(counts[skill] - 10_000 * p) < bound


def test_sixteen_unbalanced_classes_are_drawn_uniformly():
    sizes = np.random.default_rng(5).integers(1, 60, size=16)
    classes = _classes(sizes)
    sampler = SkillClassSampler(classes, np.random.default_rng(6))
    counts = np.bincount(classes.indices[sampler.draw(10_000)], minlength=16)
    p = 1.0 / 16.0
    bound = 4.0 * np.sqrt(10_000 * p * (1.0 - p))
    assert np.all(np.abs(counts - 10_000 * p) < bound)


def test_per_class_batches_cover_each_class_equally():
    classes = _classes([2, 0, 7])
    sampler = SkillClassSampler(classes, np.random.default_rng(1))
    drawn = classes.indices[sampler.draw_per_class(3)]
    assert sorted(drawn.tolist()) == [0, 0, 0, 2, 2, 2]


def test_sampler_without_resampling_follows_segment_frequency():
    classes = _classes([1, 99])
    sampler = SkillClassSampler(classes, np.random.default_rng(2), resample=False)
    drawn = classes.indices[sampler.draw(2_000)]
    assert np.mean(drawn == 1) > 0.9


def test_all_empty_classes_is_a_data_error():
    with pytest.raises(DataError):
        SkillClassSampler(_classes([0, 0]), np.random.default_rng(0))


def test_enhancement_trains_decoder_only(extracted_model, tiny_dataset):
    config = tiny_run_config()
    classes = assign_skill_classes(tiny_dataset, extracted_model)
    frozen = extracted_model.frozen_checksum()
    decoder_before = extracted_model.decoder.checksum()
    enhancer = SkillEnhancer(extracted_model, classes, config.optim, seed=0, batch_per_class=2)
    losses = [enhancer.enhancement_step() for _ in range(5)]
    assert all(np.isfinite(losses))
    assert extracted_model.frozen_checksum() == frozen
    assert extracted_model.decoder.checksum() != decoder_before


def test_usage_report_rows_match_task_segment_counts(extracted_model, tiny_dataset, tmp_path):
    classes = assign_skill_classes(tiny_dataset, extracted_model)
    report = codebook_usage_report(classes, tasks=[0, 3])
    per_task = [sum(1 for ref in classes.segments if ref.task_id == task) for task in (0, 3)]
    assert report.dataset_counts.sum(axis=1).tolist() == per_task
    assert report.eval_counts.sum() == 0

    path = report.write_csv(tmp_path / "usage.csv")
    with path.open(newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0][:2] == ["source", "task_id"]
    assert len(rows) == 1 + 2 * 2


def test_single_task_usage_puts_all_mass_in_one_row(extracted_model, tiny_dataset):
    classes = assign_skill_classes(tiny_dataset.subset([0]), extracted_model)
    report = codebook_usage_report(classes)
    assert report.tasks == [0]
    assert report.dataset_counts.sum() == len(classes)


def test_reused_cells_flag_skills_rare_in_own_data():
    classes = _classes([6, 0, 1, 3])
    eval_counts = np.array([[0, 4, 0, 2]])
    report = codebook_usage_report(classes, eval_counts, tasks=[0])
    assert report.reused_cells() == [(0, 1)]
