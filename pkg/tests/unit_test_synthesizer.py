import os
import tempfile
import unittest
from collections import Counter
from unittest import mock

import numpy as np

from base.clips import Manifest, ManifestEntry
from base.run_config import GeneratorSpec
from super.synthesizer import ASYMMETRY, DefaultSynthesizer, leaflet_trajectory
from tests.helpers import tiny_config
from utils.manifestmanager import ManifestManager


class TestGenerateClip(unittest.TestCase):
    def setUp(self) -> None:
        self.synthesizer = DefaultSynthesizer()
        self.spec = GeneratorSpec(image_size=[32, 32], clip_length=16)

    def test_seeded_determinism(self) -> None:
        first = self.synthesizer.generate_clip(self.spec, 0, False, 7)
        second = self.synthesizer.generate_clip(self.spec, 0, False, 7)
        self.assertTrue(np.array_equal(first.clip.voxels, second.clip.voxels))
        other = self.synthesizer.generate_clip(self.spec, 0, False, 8)
        self.assertFalse(np.array_equal(first.clip.voxels, other.clip.voxels))

    def test_class_two_opening_angle(self) -> None:
        record = self.synthesizer.generate_clip(self.spec, 2, False, 3)
        low, high = self.spec.amplitude_ranges[2]
        angles = leaflet_trajectory(record.amplitude, self.spec.clip_length, ASYMMETRY)
        peak_opening = float(angles.max(axis=1).mean())
        self.assertGreaterEqual(peak_opening, low)
        self.assertLessEqual(peak_opening, high)
        self.assertEqual(record.label, 2)
        self.assertFalse(record.ambiguous)

    def test_ambiguous_clip(self) -> None:
        for seed in range(10):
            record = self.synthesizer.generate_clip(self.spec, 1, True, seed)
            in_gap = [g for g, (low, high) in enumerate(self.spec.gap_ranges) if low <= record.amplitude <= high]
            self.assertEqual(len(in_gap), 1)
            self.assertIn(record.label, (in_gap[0], in_gap[0] + 1))
            self.assertTrue(record.ambiguous)
            self.assertEqual(record.severity, 1)

    def test_clip_format(self) -> None:
        record = self.synthesizer.generate_clip(self.spec, 1, False, 0)
        self.assertEqual(record.clip.shape, (32, 32, 16, 1))
        self.assertGreaterEqual(float(record.clip.voxels.min()), 0.0)
        self.assertLessEqual(float(record.clip.voxels.max()), 1.0)
        # quantized to 8 bits
        self.assertTrue(np.allclose(record.clip.voxels * 255.0, np.round(record.clip.voxels * 255.0), atol=1e-3))

    def test_rejections(self) -> None:
        with self.assertRaises(ValueError):
            self.synthesizer.generate_clip(self.spec, 3, False, 0)
        with self.assertRaises(ValueError):
            self.synthesizer.generate_clip(self.spec, 0, True, 0, gap=1)

    def test_trajectory_shape(self) -> None:
        angles = leaflet_trajectory(40.0, 8)
        self.assertEqual(angles.shape, (2, 8))
        self.assertEqual(float(angles[0, 0]), 0.0)
        self.assertAlmostEqual(float(angles[0, 4]), 40.0)

    def test_oracle_class(self) -> None:
        self.assertEqual(self.synthesizer.oracle_class(self.spec, 70.0), 0)
        self.assertEqual(self.synthesizer.oracle_class(self.spec, 45.0), 1)
        self.assertEqual(self.synthesizer.oracle_class(self.spec, 10.0), 2)
        for c in range(3):
            record = self.synthesizer.generate_clip(self.spec, c, False, 11 + c)
            self.assertEqual(self.synthesizer.oracle_class(self.spec, record.amplitude), c)


class TestSplits(unittest.TestCase):
    def setUp(self) -> None:
        self.synthesizer = DefaultSynthesizer()

    def _manifest(self, num_studies: int) -> Manifest:
        entries = []
        for i in range(num_studies):
            for k in range(2):
                entries.append(ManifestEntry(f"s{i}/c{i}/k{i}_{k}", f"s{i:02d}", f"c{i:02d}", f"k{i:02d}_{k}", i % 3))
        return Manifest(entries)

    def _study_counts(self, manifest: Manifest) -> Counter:
        return Counter({split: len(set(e.study_id for e in manifest if e.split == split))
                        for split in ("train", "val", "test")})

    def test_ten_studies(self) -> None:
        manifest = self.synthesizer.split_by_study(self._manifest(10), [0.8, 0.1, 0.1], seed=0)
        self.assertEqual(self._study_counts(manifest), Counter({"train": 8, "val": 1, "test": 1}))

    def test_fifty_studies(self) -> None:
        manifest = self.synthesizer.split_by_study(self._manifest(50), [0.8, 0.1, 0.1], seed=3)
        self.assertEqual(self._study_counts(manifest), Counter({"train": 40, "val": 5, "test": 5}))

    def test_degenerate_ratios(self) -> None:
        manifest = self.synthesizer.split_by_study(self._manifest(7), [1.0, 0.0, 0.0], seed=0)
        self.assertTrue(all(e.split == "train" for e in manifest))

    def test_one_tag_per_study(self) -> None:
        manifest = self.synthesizer.split_by_study(self._manifest(13), [0.6, 0.2, 0.2], seed=5)
        tags = {}
        for entry in manifest:
            self.assertEqual(tags.setdefault(entry.study_id, entry.split), entry.split)

    def test_rejections(self) -> None:
        with self.assertRaises(ValueError):
            self.synthesizer.split_by_study(self._manifest(4), [0.5, 0.4, 0.2], seed=0)
        with self.assertRaises(ValueError):
            self.synthesizer.split_by_study(self._manifest(2), [0.8, 0.1, 0.1], seed=0)


class TestGenerateDataset(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.synthesizer = DefaultSynthesizer()
        self.spec = tiny_config(self.tmp.name, data={"num_studies": 50, "cines_per_study": 2,
                                                     "clips_per_cine": 2}).data

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_counts_and_splits(self) -> None:
        manifest = self.synthesizer.generate_dataset(self.spec)
        self.assertEqual(len(manifest), 200)
        counts = {s: len(set(e.study_id for e in manifest.get_split(s))) for s in ("train", "val", "test")}
        self.assertEqual(counts, {"train": 40, "val": 5, "test": 5})
        for split in ("train", "val", "test"):
            self.assertTrue(any(e.ambiguous for e in manifest.get_split(split)))
        for entry in manifest:
            self.assertTrue(os.path.exists(os.path.join(self.spec.root, *entry.path.split("/"), "frame_0000.png")))

    def test_byte_identical_manifest(self) -> None:
        self.synthesizer.generate_dataset(self.spec)
        with open(os.path.join(self.spec.root, "manifest.jsonl"), "rb") as f:
            first = f.read()
        self.synthesizer.generate_dataset(self.spec)
        with open(os.path.join(self.spec.root, "manifest.jsonl"), "rb") as f:
            self.assertEqual(f.read(), first)

    def test_ambiguity_at_study_level(self) -> None:
        manifest = self.synthesizer.generate_dataset(self.spec)
        by_study = {}
        for entry in manifest:
            by_study.setdefault(entry.study_id, set()).add((entry.ambiguous, entry.label))
        self.assertTrue(all(len(values) == 1 for values in by_study.values()))

    def test_refuses_foreign_directory(self) -> None:
        os.makedirs(self.spec.root)
        with open(os.path.join(self.spec.root, "notes.txt"), "w") as f:
            f.write("keep")
        with self.assertRaises(ValueError):
            self.synthesizer.generate_dataset(self.spec)
        self.assertTrue(os.path.exists(os.path.join(self.spec.root, "notes.txt")))

    def test_any_failure_removes_partial_output(self) -> None:
        write_clip = ManifestManager.write_clip
        calls = []

        def flaky(manager, record):
            calls.append(record.clip_id)
            if len(calls) == 3:
                raise RuntimeError("renderer crashed")
            return write_clip(manager, record)

        with mock.patch.object(ManifestManager, "write_clip", autospec=True, side_effect=flaky):
            with self.assertRaisesRegex(RuntimeError, "renderer crashed"):
                self.synthesizer.generate_dataset(self.spec)
        self.assertGreater(len(calls), 3)
        self.assertFalse(os.path.exists(self.spec.root))


if __name__ == "__main__":
    unittest.main()
