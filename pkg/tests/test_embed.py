import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lgsd.describer import Describer
from lgsd.embed import (
    DegenerateTextError,
    HashingEmbedder,
    LanguageSpace,
    cosine_distance,
    d_lang,
    embed_hash,
    fnv1a_64,
    hashed_slot,
    make_embedder,
    tokenize,
)

from oracles import fnv1a_64_reference

words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789.,[]-'", min_size=1, max_size=8)


@pytest.mark.parametrize("data, expected", [(b"", 0xCBF29CE484222325), (b"a", 0xAF63DC4C8601EC8C), (b"foobar", 0x85944171F73967E8)])
def test_fnv1a_published_vectors(data, expected):
    assert fnv1a_64(data) == expected


@given(st.binary(max_size=64))
def test_fnv1a_matches_reference(data):
    assert fnv1a_64(data) == fnv1a_64_reference(data)


def test_identical_texts_zero_distance():
    a = embed_hash("The robot is located in the southern area.")
    assert cosine_distance(a, embed_hash("The robot is located in the southern area.")) == 0.0


def test_vectors_are_unit_norm():
    assert np.linalg.norm(embed_hash("the robot's x, y position is [0.30, 0.00]")) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_tokens_without_collisions_are_orthogonal():
    a, b = "north east", "south west"
    slots = {t: fnv1a_64_reference(t.encode()) % 256 for t in (a + " " + b).split()}
    assert len(set(slots.values())) == 4
    assert cosine_distance(embed_hash(a), embed_hash(b)) == pytest.approx(1.0, abs=1e-15)


@given(st.lists(words, min_size=1, max_size=10), st.randoms())
def test_bag_of_words_ignores_order(tokens, rnd):
    shuffled = tokens[:]
    rnd.shuffle(shuffled)
    try:
        a = embed_hash(" ".join(tokens))
    except DegenerateTextError:
        return
    np.testing.assert_array_equal(a, embed_hash(" ".join(shuffled)))


def test_lowercasing():
    np.testing.assert_array_equal(embed_hash("The Robot"), embed_hash("the robot"))


def test_whitespace_tokens_keep_signs_and_alnum_drops_them():
    assert tokenize("[-0.30, 0.00]") == ["[-0.30,", "0.00]"]
    assert tokenize("[-0.30, 0.00]", "alnum") == ["0", "30", "0", "00"]
    assert cosine_distance(embed_hash("x is [-0.30, 0.00]"), embed_hash("x is [0.30, 0.00]")) > 0
    assert cosine_distance(embed_hash("x is [-0.30, 0.00]", tokenizer="alnum"), embed_hash("x is [0.30, 0.00]", tokenizer="alnum")) == 0.0


def test_empty_text_is_degenerate():
    with pytest.raises(DegenerateTextError):
        embed_hash("   ")


def test_seed_changes_slots():
    assert hashed_slot("robot", 256, 0) != hashed_slot("robot", 256, 7)


@pytest.mark.parametrize("u, v, expected", [
    ([1.0, 0.0], [1.0, 0.0], 0.0),
    ([1.0, 0.0], [0.0, 3.0], 1.0),
    ([1.0, 2.0], [-1.0, -2.0], 2.0),
])
def test_cosine_distance_reference_values(u, v, expected):
    assert cosine_distance(u, v) == pytest.approx(expected, abs=1e-15)


def test_cosine_distance_rejects_zero_vector():
    with pytest.raises(ValueError):
        cosine_distance([0.0, 0.0], [1.0, 0.0])


def test_cosine_breaks_triangle_inequality():
    h = np.sqrt(3.0) / 2.0
    a, b, c = [1.0, 0.0], [0.5, h], [-0.5, h]
    ab, bc, ac = cosine_distance(a, b), cosine_distance(b, c), cosine_distance(a, c)
    assert ab == pytest.approx(0.5, abs=1e-15) and bc == pytest.approx(0.5, abs=1e-15) and ac == pytest.approx(1.5, abs=1e-15)
    assert ac > ab + bc


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_cosine_distance_symmetric_and_bounded(u, v):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    d = cosine_distance(u, v)
    assert 0.0 <= d <= 2.0
    assert d == cosine_distance(v, u)


# language distance through the whole pipeline

@pytest.fixture
def pipeline():
    return Describer("point_half_plane_N"), HashingEmbedder().fit()


def test_d_lang_self_is_zero(pipeline):
    assert d_lang([0.3, 0.4], [0.3, 0.4], *pipeline) == 0.0


def test_d_lang_between_southern_states_is_zero(pipeline):
    assert d_lang([0.9, -0.5], [-0.7, -0.1], *pipeline) == 0.0


def test_d_lang_across_boundary_is_symmetric_and_positive(pipeline):
    a = d_lang([0.3, -0.5], [0.3, 0.5], *pipeline)
    b = d_lang([0.3, 0.5], [0.3, -0.5], *pipeline)
    assert 0.0 < a <= 2.0 and a == b


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=2, max_size=30))
def test_language_space_matches_pipeline(points):
    desc, emb = Describer("point_half_plane_N"), HashingEmbedder().fit()
    space = LanguageSpace(desc, emb)
    S = np.array(points)
    d = space.distance(S[:-1], S[1:])
    ref = [d_lang(a, b, desc, emb) for a, b in zip(S[:-1], S[1:])]
    np.testing.assert_allclose(d, ref, rtol=0, atol=1e-12)
    assert np.all((d >= 0) & (d <= 2))


def test_language_space_stores_embeddings_in_cache():
    desc = Describer("point_half_plane_N")
    space = LanguageSpace(desc, HashingEmbedder().fit())
    space.text_ids(np.array([[0.0, 0.0], [0.0, -0.5]]))
    assert set(desc.cache.embeddings) == {(0, 0), (0, -10)}


# estimator surface

def test_hashing_embedder_transform():
    X = HashingEmbedder(n_features=32).transform(["a b", "c"])
    assert X.shape == (2, 32)
    np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0)


def test_hashing_embedder_params_and_validation():
    e = HashingEmbedder(n_features=64, seed=3)
    assert e.get_params() == {"n_features": 64, "seed": 3, "tokenizer": "whitespace"}
    with pytest.raises(ValueError):
        HashingEmbedder(n_features=1).fit()
    with pytest.raises(TypeError):
        e.transform("single string")


def test_make_embedder_rejects_unknown_backend():
    with pytest.raises(ValueError):
        make_embedder("word2vec")


def test_service_embedder_over_mock_transport(monkeypatch):
    monkeypatch.setenv("LGSD_LLM_BASE_URL", "http://embed.test/v1")
    calls = []

    def handler(request):
        calls.append(request.url.path)
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0]}]})

    emb = make_embedder("external_service", transport=httpx.MockTransport(handler))
    np.testing.assert_allclose(emb.embed("hello"), [0.6, 0.8])
    emb.embed("hello")
    assert calls == ["/v1/embeddings"] and emb.dim == 2
