import numpy as np
import pytest

from actcast.taxonomy import Taxonomy, TaxonomyError, load_mapping, save_mapping
from actcast.data import default_taxonomy, generate_corpus, default_grammar


def write_mapping(tmp_path, lines):
    path = tmp_path / "mapping.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadMapping:
    def test_four_fine_two_coarse(self, tmp_path):
        path = write_mapping(tmp_path, [
            "# comment line",
            "cut_a\tprep", "cut_b\tprep", "serve_a\tserve", "serve_b\tserve",
        ])
        tax = load_mapping(path)
        assert tax.n_fine == 4
        assert tax.n_coarse == 2
        assert tax.fine_labels == ("cut_a", "cut_b", "serve_a", "serve_b")
        assert tax.coarse_labels == ("prep", "serve")  # first-appearance order

    def test_duplicate_fine_label_rejected(self, tmp_path):
        path = write_mapping(tmp_path, ["x\ta", "x\tb", "y\tb"])
        with pytest.raises(TaxonomyError, match="mapped twice"):
            load_mapping(path)

    def test_salads_shaped_mapping(self, tmp_path):
        # 17 fine actions onto 5 coarse groups
        coarse = ["cut", "place", "mix", "dress", "serve"]
        lines = [f"fine_{i:02d}\t{coarse[i % 5]}" for i in range(17)]
        tax = load_mapping(write_mapping(tmp_path, lines))
        assert tax.n_fine == 17
        assert tax.n_coarse == 5

    def test_malformed_line(self, tmp_path):
        path = write_mapping(tmp_path, ["just_one_field"])
        with pytest.raises(TaxonomyError, match="mapping.tsv:1"):
            load_mapping(path)

    def test_empty_file(self, tmp_path):
        path = write_mapping(tmp_path, ["# nothing here"])
        with pytest.raises(TaxonomyError, match="no mappings"):
            load_mapping(path)


class TestCoarsen:
    def test_identity_taxonomy(self):
        tax = Taxonomy(("a", "b", "c"), ("a", "b", "c"), (0, 1, 2))
        for k in range(3):
            assert tax.coarsen(k) == k

    def test_shared_coarse_target(self, tiny_tax):
        assert tiny_tax.coarsen(0) == tiny_tax.coarsen(1) == 0

    def test_out_of_range(self, tiny_tax):
        with pytest.raises(TaxonomyError):
            tiny_tax.coarsen(4)
        with pytest.raises(TaxonomyError):
            tiny_tax.coarsen(-1)

    def test_track_matches_per_frame_loop(self):
        # independent oracle: recompute the coarse track frame by frame
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 5, seed=3, tax=tax)
        for video in corpus:
            expected = np.array([tax.coarsen(int(a)) for a in video.frames_fine])
            assert np.array_equal(video.frames_coarse, expected)


class TestInvariants:
    def test_roundtrip_serialization(self, tmp_path, tiny_tax):
        path = tmp_path / "out.tsv"
        save_mapping(tiny_tax, path)
        again = load_mapping(path)
        assert again == tiny_tax

    def test_coarsen_pure(self, tiny_tax):
        assert all(tiny_tax.coarsen(2) == 1 for _ in range(5))

    def test_group_sum_inverse_of_membership(self, tiny_tax, rng):
        m = rng.random((6, 4))
        grouped = tiny_tax.group_sum(m)
        assert np.allclose(grouped[:, 0], m[:, 0] + m[:, 1])
        assert np.allclose(grouped[:, 1], m[:, 2] + m[:, 3])

    def test_validation_errors(self):
        with pytest.raises(TaxonomyError):
            Taxonomy(("a", "a"), ("x", "y"), (0, 1))     # duplicate fine
        with pytest.raises(TaxonomyError):
            Taxonomy(("a", "b"), ("x",), (0, 0))          # < 2 coarse
        with pytest.raises(TaxonomyError):
            Taxonomy(("a", "b"), ("x", "y"), (0, 5))      # invalid target
        with pytest.raises(TaxonomyError):
            Taxonomy(("a", "b"), ("x", "y"), (0,))        # not total
