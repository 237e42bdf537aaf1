import numpy as np
import pytest

from stormforge.scorer import (
    LabelSet,
    RemoteFeatureExtractor,
    RemoteScorer,
    ScorerProtocolError,
    ScorerTransportError,
    ToyScorer,
    area_resize,
    predict,
)


def test_label_set_validation():
    with pytest.raises(ValueError):
        LabelSet.from_labels([])
    with pytest.raises(ValueError):
        LabelSet.from_labels(["cat", "cat"])
    with pytest.raises(ValueError):
        LabelSet(("cat",), ("a", "b"))


def test_label_set_prompts():
    labels = LabelSet.from_labels(["cat", "dog"], template="an image of a {}")
    assert labels.prompts == ("an image of a cat", "an image of a dog")


def test_predict_tie_breaks_to_lowest_index():
    assert predict([0.2, 0.9, 0.9]) == 1
    assert predict([1.0]) == 0


def test_predict_invariant_under_increasing_transform(rng):
    for _ in range(20):
        scores = rng.standard_normal(5)
        assert predict(scores) == predict(np.exp(scores))
        assert predict(scores) == predict(3.0 * scores + 7.0)


def test_area_resize_block_mean_exact(rng):
    img = rng.random((8, 8, 3))
    out = area_resize(img, 4, 4)
    manual = img.reshape(4, 2, 4, 2, 3).mean(axis=(1, 3))
    assert np.allclose(out, manual, atol=1e-12)


def test_area_resize_handles_non_divisible(rng):
    img = rng.random((10, 7, 3))
    out = area_resize(img, 4, 4)
    assert out.shape == (4, 4, 3)
    # Total mass is conserved by exact area averaging.
    assert abs(out.mean() - img.mean()) < 1e-12


def test_toy_scorer_deterministic(toy_labels, random_image):
    scorer = ToyScorer(toy_labels, seed=5)
    a = scorer.score(random_image)
    b = scorer.score(random_image)
    assert np.array_equal(a, b)
    fresh = ToyScorer(toy_labels, seed=5)
    assert np.array_equal(fresh.score(random_image), a)


def test_toy_scores_are_cosines(toy_labels, rng):
    scorer = ToyScorer(toy_labels, seed=2)
    for _ in range(5):
        scores = scorer.score(rng.random((16, 16, 3)))
        assert scores.shape == (3,)
        assert (np.abs(scores) <= 1.0 + 1e-12).all()


def test_toy_query_count_increments_by_one(toy_labels, random_image):
    scorer = ToyScorer(toy_labels, seed=0)
    assert scorer.query_count == 0
    scorer.score(random_image)
    scorer.score(random_image)
    assert scorer.query_count == 2


def test_bundled_dataset_clean_argmax_matches_planted_labels():
    from stormforge.fixtures import build_synthetic_dataset

    dataset = build_synthetic_dataset()
    scorer = ToyScorer(dataset.labels, seed=dataset.scorer_seed)
    for img, expected in zip(dataset.images, dataset.true_indices):
        assert predict(scorer.score(img)) == expected


def test_toy_label_permutation_permutes_scores(random_image):
    base = LabelSet.from_labels(["cat", "dog", "car"])
    permuted = LabelSet.from_labels(["car", "cat", "dog"])
    s1 = ToyScorer(base, seed=9).score(random_image)
    s2 = ToyScorer(permuted, seed=9).score(random_image)
    assert np.allclose(s1[[2, 0, 1]], s2, atol=1e-12)
    assert permuted.labels[predict(s2)] == base.labels[predict(s1)]


# --- remote scorer against the scripted stub server --------------------------


def test_remote_scorer_echo(stub_scorer_server, random_image):
    labels = LabelSet.from_labels(["a", "b"])
    client = RemoteScorer(stub_scorer_server.endpoint, labels, backoff=0.01)
    scores = client.score(random_image)
    assert np.allclose(scores, [0.1, 0.2])
    assert client.query_count == 1


def test_remote_scorer_malformed_body_is_protocol_error(stub_scorer_server, random_image):
    labels = LabelSet.from_labels(["a", "b"])
    client = RemoteScorer(stub_scorer_server.endpoint, labels, backoff=0.01)
    stub_scorer_server.malformed = True
    with pytest.raises(ScorerProtocolError):
        client.score(random_image)
    assert client.query_count == 0


def test_remote_scorer_retries_transient_failures(stub_scorer_server, random_image):
    labels = LabelSet.from_labels(["a", "b"])
    client = RemoteScorer(stub_scorer_server.endpoint, labels, backoff=0.01, max_retries=3)
    stub_scorer_server.fail_times = 3
    scores = client.score(random_image)
    assert np.allclose(scores, [0.1, 0.2])
    assert client.query_count == 1
    # Initial attempt plus three retries hit the wire four times.
    assert stub_scorer_server.requests.count("/score") == 4


def test_remote_scorer_exhausted_retries_raise_transport_error(
    stub_scorer_server, random_image
):
    labels = LabelSet.from_labels(["a", "b"])
    client = RemoteScorer(stub_scorer_server.endpoint, labels, backoff=0.01, max_retries=2)
    stub_scorer_server.fail_times = 10
    with pytest.raises(ScorerTransportError) as info:
        client.score(random_image)
    assert info.value.retryable
    assert client.query_count == 0


def test_remote_scorer_label_mismatch(stub_scorer_server, random_image):
    labels = LabelSet.from_labels(["a", "b", "c"])
    client = RemoteScorer(stub_scorer_server.endpoint, labels, backoff=0.01)
    from stormforge.scorer import LabelSetMismatchError

    with pytest.raises(LabelSetMismatchError):
        client.score(random_image)  # stub always returns two scores


def test_remote_scorer_unreachable_endpoint(random_image):
    labels = LabelSet.from_labels(["a", "b"])
    with pytest.raises(ScorerTransportError):
        RemoteScorer("http://127.0.0.1:9", labels, backoff=0.01, max_retries=1, timeout=0.5)


def test_remote_feature_extractor_loopback(stub_scorer_server, random_image):
    extractor = RemoteFeatureExtractor(stub_scorer_server.endpoint, backoff=0.01)
    levels = extractor.extract(random_image)
    assert len(levels) == 2
    assert np.allclose(levels[0], [0.0, 1.0])
    assert np.allclose(levels[1], [2.0, 3.0])


def test_remote_feature_extractor_malformed(stub_scorer_server, random_image):
    extractor = RemoteFeatureExtractor(stub_scorer_server.endpoint, backoff=0.01)
    stub_scorer_server.malformed = True
    with pytest.raises(ScorerProtocolError):
        extractor.extract(random_image)
