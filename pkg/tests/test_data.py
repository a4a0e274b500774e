import numpy as np
import pytest

from actcast import data
from actcast.data import (
    AnnotationError,
    GrammarError,
    GrammarNode,
    GrammarSpec,
    Segment,
    VideoSequence,
    default_grammar,
    default_taxonomy,
    frames_to_segments,
    generate_corpus,
    load_annotations,
    load_grammar,
    make_splits,
    save_grammar,
    segments_to_frames,
    split_observation,
    write_annotations,
)


def single_node_grammar(label="take_bowl", frames=10):
    return GrammarSpec(
        (GrammarNode("only", (label,), (frames, frames), ()),),
        "only", frozenset({"only"}))


class TestSegmentsFrames:
    def test_round_trip(self):
        segs = [Segment(0, 2), Segment(1, 1)]
        frames = segments_to_frames(segs)
        assert list(frames) == [0, 0, 1]
        assert frames_to_segments(frames) == segs

    def test_single_frame(self):
        assert frames_to_segments(np.array([3])) == [Segment(3, 1)]

    def test_random_tracks_round_trip(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            track = rng.integers(0, 5, size=500)
            assert np.array_equal(segments_to_frames(frames_to_segments(track)), track)

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            segments_to_frames([])
        with pytest.raises(ValueError):
            frames_to_segments(np.array([]))


class TestVideoSequence:
    def test_invariants_enforced(self, tiny_tax):
        segs = (Segment(0, 2), Segment(2, 1))
        good = VideoSequence.from_segments("v", list(segs), tiny_tax)
        assert good.n_frames == 3
        with pytest.raises(ValueError, match="expand"):
            VideoSequence("v", segs, np.array([0, 0, 0]), np.array([0, 0, 1]))
        with pytest.raises(ValueError, match="features"):
            VideoSequence.from_segments("v", list(segs), tiny_tax,
                                        features=np.zeros((2, 4)))


class TestGenerateCorpus:
    def test_deterministic(self):
        tax = default_taxonomy()
        spec = default_grammar()
        a = generate_corpus(spec, 6, seed=9, tax=tax)
        b = generate_corpus(spec, 6, seed=9, tax=tax)
        for va, vb in zip(a, b):
            assert va.id == vb.id
            assert np.array_equal(va.frames_fine, vb.frames_fine)
            assert va.features.tobytes() == vb.features.tobytes()

    def test_degenerate_grammar(self):
        tax = default_taxonomy()
        corpus = generate_corpus(single_node_grammar(), 5, seed=1, tax=tax)
        for video in corpus:
            assert video.segments == (Segment(0, 10),)

    def test_default_grammar_always_ends_in_tail(self):
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 200, seed=5, tax=tax)
        serve = tax.fine_index("serve_salad")
        assert all(v.segments[-1].action == serve for v in corpus)

    def test_unknown_emission_rejected(self, tiny_tax):
        with pytest.raises(GrammarError, match="unknown label"):
            generate_corpus(single_node_grammar(), 2, seed=1, tax=tiny_tax)

    def test_transition_frequencies(self):
        # empirical edge frequencies over many walks vs spec probabilities
        spec = default_grammar()
        rng = np.random.default_rng(0)
        counts = {}
        visits = {}
        for _ in range(10_000):
            path, _ = spec.sample_walk(rng)
            for src, dst in zip(path, path[1:]):
                visits[src] = visits.get(src, 0) + 1
                counts[(src, dst)] = counts.get((src, dst), 0) + 1
        for node in spec.nodes:
            for target, prob in node.transitions:
                if visits.get(node.name, 0) == 0:
                    continue
                freq = counts.get((node.name, target), 0) / visits[node.name]
                assert abs(freq - prob) <= 0.03, (node.name, target, freq, prob)


class TestGrammarValidation:
    def test_unnormalized_transitions(self):
        with pytest.raises(GrammarError, match="sum"):
            GrammarSpec((
                GrammarNode("a", ("x",), (1, 2), (("b", 0.5),)),
                GrammarNode("b", ("x",), (1, 2), ()),
            ), "a", frozenset({"b"}))

    def test_unreachable_terminal(self):
        with pytest.raises(GrammarError, match="terminal"):
            GrammarSpec((
                GrammarNode("a", ("x",), (1, 2), (("a", 1.0),)),
                GrammarNode("b", ("x",), (1, 2), ()),
            ), "a", frozenset({"b"}))

    def test_grammar_file_round_trip(self, tmp_path):
        spec = default_grammar()
        path = tmp_path / "grammar.json"
        save_grammar(spec, path)
        assert load_grammar(path) == spec


class TestAnnotations:
    def test_rle_loading(self, tmp_path, tiny_tax):
        (tmp_path / "vid1.txt").write_text("a1\na1\nb1\n", encoding="utf-8")
        corpus = load_annotations(tmp_path, tiny_tax)
        assert len(corpus) == 1
        assert corpus[0].id == "vid1"
        assert list(corpus[0].segments) == [Segment(0, 2), Segment(2, 1)]
        assert corpus[0].n_frames == 3
        assert corpus[0].features is None

    def test_unknown_label_names_file_and_line(self, tmp_path, tiny_tax):
        (tmp_path / "vid1.txt").write_text("a1\nmystery\n", encoding="utf-8")
        with pytest.raises(AnnotationError, match=r"vid1.txt:2.*mystery"):
            load_annotations(tmp_path, tiny_tax)

    def test_empty_file(self, tmp_path, tiny_tax):
        (tmp_path / "vid1.txt").write_text("\n", encoding="utf-8")
        with pytest.raises(AnnotationError, match="empty"):
            load_annotations(tmp_path, tiny_tax)

    def test_write_then_reload_round_trip(self, tmp_path):
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 4, seed=2, tax=tax)
        write_annotations(corpus, tax, tmp_path / "ann")
        again = load_annotations(tmp_path / "ann", tax)
        assert len(again) == len(corpus)
        for va, vb in zip(corpus, again):
            assert va.id == vb.id
            assert np.array_equal(va.frames_fine, vb.frames_fine)


class TestSplitObservation:
    def make_video(self, frames, tax):
        return VideoSequence.from_segments(
            "v", [Segment(0, frames)], tax)

    def test_twenty_fifty_protocol(self, tiny_tax):
        video = self.make_video(100, tiny_tax)
        split = split_observation(video, 0.2, 0.5)
        assert split.t0 == 20
        assert split.horizon == 40
        assert split.future_slice == slice(20, 60)  # frames 21..60, 1-based

    def test_full_remainder(self, tiny_tax):
        split = split_observation(self.make_video(100, tiny_tax), 0.3, 1.0)
        assert split.t0 == 30
        assert split.horizon == 70
        assert split.future_slice == slice(30, 100)

    def test_too_short(self, tiny_tax):
        with pytest.raises(ValueError, match="too short"):
            split_observation(self.make_video(10, tiny_tax), 0.05, 0.5)

    def test_parameter_validation(self, tiny_tax):
        video = self.make_video(50, tiny_tax)
        with pytest.raises(ValueError):
            split_observation(video, 0.0, 0.5)
        with pytest.raises(ValueError):
            split_observation(video, 0.2, 1.5)


class TestMakeSplits:
    def test_fold_sizes_and_partition(self):
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 50, seed=4, tax=tax)
        folds = make_splits(corpus, 5, seed=4)
        all_ids = {v.id for v in corpus}
        seen = []
        for fold in folds:
            assert len(fold.test_ids) == 10
            assert set(fold.train_ids) | set(fold.val_ids) | set(fold.test_ids) == all_ids
            assert not set(fold.train_ids) & set(fold.test_ids)
            assert not set(fold.val_ids) & set(fold.test_ids)
            assert not set(fold.train_ids) & set(fold.val_ids)
            seen.extend(fold.test_ids)
        assert sorted(seen) == sorted(all_ids)

    def test_val_fraction(self):
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 50, seed=4, tax=tax)
        fold = make_splits(corpus, 5, seed=4, val_fraction=0.15)[0]
        assert len(fold.val_ids) == round(0.15 * 40)

    def test_deterministic(self):
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 20, seed=4, tax=tax)
        assert make_splits(corpus, 4, seed=9) == make_splits(corpus, 4, seed=9)

    def test_too_small(self):
        tax = default_taxonomy()
        corpus = generate_corpus(default_grammar(), 3, seed=4, tax=tax)
        with pytest.raises(ValueError):
            make_splits(corpus, 5, seed=1)
