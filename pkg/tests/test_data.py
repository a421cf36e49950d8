import numpy as np
import pytest

from relvox.data import (LESION_FRACTION, gen_synthetic, load_dataset,
                         save_dataset)
from relvox.errors import ConfigError, FormatError

SMALL = (6, 8, 16, 16)


class TestGenerator:
    def test_same_seed_bitwise_identical(self):
        a = gen_synthetic(seed=11, n_cases=2, shape=SMALL)
        b = gen_synthetic(seed=11, n_cases=2, shape=SMALL)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.image, cb.image)
            assert np.array_equal(ca.mask, cb.mask)

    def test_different_seeds_differ(self):
        a = gen_synthetic(seed=1, n_cases=1, shape=SMALL)[0]
        b = gen_synthetic(seed=2, n_cases=1, shape=SMALL)[0]
        assert not np.array_equal(a.image, b.image)

    def test_masks_nonempty(self):
        for case in gen_synthetic(seed=5, n_cases=4, shape=SMALL):
            assert case.mask.sum() > 0

    def test_six_channels(self):
        case = gen_synthetic(seed=0, n_cases=1, shape=SMALL)[0]
        assert case.image.shape[0] == 6

    def test_intensities_in_unit_interval(self):
        case = gen_synthetic(seed=6, n_cases=1, shape=SMALL)[0]
        assert case.image.min() >= 0.0
        assert case.image.max() <= 1.0

    def test_lesion_fraction_bounds_hundred_seeds(self):
        lo, hi = LESION_FRACTION
        for seed in range(100):
            case = gen_synthetic(seed=seed, n_cases=1, shape=SMALL)[0]
            frac = case.mask.sum() / case.mask.size
            assert lo <= frac <= hi, f"seed {seed}: fraction {frac}"

    def test_small_dims_rejected(self):
        with pytest.raises(ConfigError, match="spatial"):
            gen_synthetic(seed=0, n_cases=1, shape=(6, 4, 16, 16))

    def test_channel_offsets_visible(self):
        case = gen_synthetic(seed=8, n_cases=1, shape=SMALL)[0]
        mask = case.mask.astype(bool)
        # lesion and background intensities must separate per channel
        for c in range(6):
            inside = case.image[c][mask].mean()
            outside = case.image[c][~mask].mean()
            assert abs(inside - outside) > 0.1


class TestDatasetOnDisk:
    def test_round_trip(self, tmp_path):
        dataset = gen_synthetic(seed=3, n_cases=2, shape=SMALL)
        save_dataset(dataset, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert [c.case_id for c in loaded] == [c.case_id for c in dataset]
        for a, b in zip(dataset, loaded):
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.mask, b.mask)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path)
