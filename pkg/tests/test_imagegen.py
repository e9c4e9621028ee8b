import filecmp
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from envocr.alphabet import CHARS, AlphabetError
from envocr.imagegen import (
    STANDARD_PATTERNS,
    CapacityError,
    ComposeParams,
    DatasetConfig,
    GrayImage,
    PatternSpec,
    ShapeError,
    compose_sample,
    generate_dataset,
    load_dataset,
    make_sample,
    read_pgm,
    render_text,
    synth_pattern,
    write_pgm,
)
from envocr.imagegen.dataset import canonical_json, fnv1a64
from envocr.imagegen.image import decode_pgm, encode_pgm, quantize
from envocr.imagegen.render import max_chars, text_width

words = st.text(alphabet=CHARS, min_size=0, max_size=6)


# -- images ---------------------------------------------------------------------

def test_gray_image_validates():
    with pytest.raises(ValueError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ValueError):
        GrayImage(np.array([[np.nan]]))
    with pytest.raises(ShapeError):
        GrayImage(np.ones(4))
    img = GrayImage.blank(3, 2)
    assert (img.width, img.height) == (3, 2)
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 0.0


def test_quantize_rounds_half_up():
    assert quantize(np.array([0.0, 1.0, 0.5, 1 / 510, 0.998])).tolist() == [0, 255, 128, 1, 254]


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32))
def test_pgm_round_trip_is_exact_after_quantization(w, h, seed):
    px = np.random.default_rng(seed).random((h, w))
    img = GrayImage(px)
    back = decode_pgm(encode_pgm(img))
    assert np.array_equal(quantize(back.pixels), quantize(px))
    assert decode_pgm(encode_pgm(back)) == back


def test_pgm_file_io_and_errors(tmp_path):
    img = GrayImage(np.array([[0.0, 0.5], [1.0, 0.25]]))
    write_pgm(img, tmp_path / "a.pgm")
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw == b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64])
    assert read_pgm(tmp_path / "a.pgm").shape == (2, 2)
    assert decode_pgm(b"P5 # note\n2 2\n255\n" + bytes(4)).shape == (2, 2)
    with pytest.raises(ValueError):
        decode_pgm(raw[:-1])
    with pytest.raises(ValueError):
        decode_pgm(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ValueError):
        decode_pgm(b"P5\n2")


# -- rendering -----------------------------------------------------------------------

def test_render_empty_is_white():
    img = render_text("", 160, 32)
    assert img.shape == (32, 160)
    assert np.all(img.pixels == 1.0)


def test_render_single_glyph_ink_count():
    # the embedded "A" has 18 inked cells, each drawn as a 4x4 block
    img = render_text("A", 160, 32)
    assert int((img.pixels == 0.0).sum()) == 18 * 16


def test_render_two_glyph_extent():
    img = render_text("AB", 160, 32)
    cols = np.where((img.pixels < 1).any(axis=0))[0]
    rows = np.where((img.pixels < 1).any(axis=1))[0]
    # 2 * advance(6) * scale(4) minus the trailing 1-column gap
    assert cols.min() == 0 and cols.max() - cols.min() + 1 == 44
    assert rows.min() == 2 and rows.max() == 29


def test_render_capacity_and_alphabet():
    assert max_chars(160) == 6
    render_text("ABCDEF", 160, 32)
    with pytest.raises(CapacityError):
        render_text("ABCDEFG", 160, 32)
    with pytest.raises(CapacityError):
        render_text("A", 160, 20)
    with pytest.raises(AlphabetError):
        render_text("a", 160, 32)


@given(words)
def test_render_is_binary_and_bounded(w):
    img = render_text(w, 160, 32)
    assert set(np.unique(img.pixels)) <= {0.0, 1.0}
    ink_cols = np.where((img.pixels < 1).any(axis=0))[0]
    if w:
        assert ink_cols.max() < text_width(len(w))
    assert render_text(w, 160, 32) == img


# -- patterns ------------------------------------------------------------------------

def test_diagonal_origin_is_ink():
    img = synth_pattern(PatternSpec("diagonal-hatch", 8, 2), 16, 16)
    assert img.pixels[0, 0] == 0.0
    # (x + y) mod 8 < 2
    ys, xs = np.mgrid[0:16, 0:16]
    assert np.array_equal(img.pixels == 0.0, (xs + ys) % 8 < 2)


def test_crosshatch_tile_fraction():
    img = synth_pattern(PatternSpec("crosshatch", 8, 2), 8, 8)
    count = int((img.pixels == 0.0).sum())
    # brute count over the 8x8 tile
    brute = sum(((x + y) % 8 < 2) or ((x - y) % 8 < 2) for x in range(8) for y in range(8))
    assert count == brute == 28
    f = 2 / 8
    assert abs(count / 64 - (2 * f - f * f)) <= 1 / 64


def test_pattern_ink_level():
    img = synth_pattern(PatternSpec("crosshatch", 8, 2, ink=0.4), 8, 8)
    assert set(np.unique(img.pixels)) == {0.6, 1.0}


@given(
    st.sampled_from(["diagonal-hatch", "crosshatch", "tiled-glyph"]),
    st.integers(0, 40),
    st.integers(0, 40),
    st.integers(0, 2**20),
)
def test_patterns_are_periodic(kind, dx, dy, seed):
    period = 16 if kind == "tiled-glyph" else 9
    spec = PatternSpec(kind, period, 2, phase=(dx, dy), seed=seed)
    px = synth_pattern(spec, 40, 40).pixels
    assert np.array_equal(px[:, period:], px[:, :-period])
    assert np.array_equal(px[period:, :], px[:-period, :])


def test_phase_is_a_translation():
    base = synth_pattern(STANDARD_PATTERNS[3], 48, 48).pixels
    moved = synth_pattern(STANDARD_PATTERNS[3].shifted(5, 3), 48, 48).pixels
    assert np.array_equal(moved[:-3, :-5], base[3:, 5:])


def test_pattern_spec_validation_and_dict():
    with pytest.raises(ValueError):
        PatternSpec("diagonal-hatch", 4, 4)
    with pytest.raises(ValueError):
        PatternSpec("spiral", 8, 2)
    with pytest.raises(ValueError):
        PatternSpec("crosshatch", 8, 2, ink=1.5)
    for spec in STANDARD_PATTERNS.values():
        assert PatternSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    assert [STANDARD_PATTERNS[i].pattern_id for i in (1, 2, 3)] == [1, 2, 3]


# -- compositing -------------------------------------------------------------------------

def test_compose_identity():
    text = render_text("HI", 160, 32)
    pattern = synth_pattern(STANDARD_PATTERNS[1], 160, 32)
    assert compose_sample(text, pattern, ComposeParams(0.0, 1.0, 0.0), 1) == text


def test_compose_white_text_gives_pattern():
    pattern = synth_pattern(STANDARD_PATTERNS[2], 160, 32)
    out = compose_sample(GrayImage.blank(160, 32), pattern, ComposeParams(1.0, 1.0, 0.0), 1)
    assert out == pattern


def test_compose_worked_example():
    zero = GrayImage(np.zeros((1, 1)))
    out = compose_sample(zero, zero, ComposeParams(0.5, 0.8, 0.0), 0)
    # stacked = min(0, 0.5) = 0; 0.5 + 0.8 * (0 - 0.5)
    assert out.pixels[0, 0] == pytest.approx(0.1, abs=1e-12)


def test_compose_noise_follows_seed():
    text = render_text("A", 16 * 4, 32)
    pat = GrayImage.blank(64, 32)
    p = ComposeParams(0.6, 0.7, 0.02)
    a = compose_sample(text, pat, p, 5)
    assert a == compose_sample(text, pat, p, 5)
    assert a != compose_sample(text, pat, p, 6)
    from envocr.rng import Rng
    expected = np.clip(0.7 * text.pixels + 0.15 + 0.02 * Rng(5).gaussian_array(64 * 32).reshape(32, 64), 0, 1)
    assert np.allclose(a.pixels, expected, atol=1e-12)


def test_compose_shape_error():
    with pytest.raises(ShapeError):
        compose_sample(GrayImage.blank(4, 4), GrayImage.blank(5, 4), ComposeParams(), 0)


@given(st.floats(0, 1), st.floats(0.01, 1), st.floats(0, 0.3), st.integers(0, 2**32))
def test_compose_stays_in_range(alpha, beta, sigma, seed):
    text = render_text("X", 32, 32)
    pat = synth_pattern(STANDARD_PATTERNS[1], 32, 32)
    px = compose_sample(text, pat, ComposeParams(alpha, beta, sigma), seed).pixels
    assert px.min() >= 0.0 and px.max() <= 1.0


def test_compose_params_validation():
    for bad in ((1.5, 0.5, 0.0), (0.5, 0.0, 0.0), (0.5, 0.5, -1.0)):
        with pytest.raises(ValueError):
            ComposeParams(*bad)


# -- datasets ------------------------------------------------------------------------------

def small_config(**kw):
    base = dict(
        wordlist=["CAT", "DOG", "W2", "HELLO"],
        n_samples=100,
        split_fraction=0.8,
        patterns=(STANDARD_PATTERNS[1], STANDARD_PATTERNS[3]),
        seed=42,
    )
    base.update(kw)
    return DatasetConfig(**base)


def test_fnv1a_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_dataset_is_byte_identical(tmp_path):
    cfg = small_config(n_samples=30)
    generate_dataset(cfg, tmp_path / "a")
    generate_dataset(cfg, tmp_path / "b", workers=2)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.left_only and not cmp.right_only
    for name in ["manifest.jsonl"] + [f"images/{i:06d}.pgm" for i in range(30)]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dataset_partition_and_membership(tmp_path):
    cfg = small_config()
    records = generate_dataset(cfg, tmp_path)
    ds = load_dataset(tmp_path)
    assert len(ds.select("train")) + len(ds.select("eval")) == 100
    assert 60 <= len(ds.select("train")) <= 95
    assert all(r.label in cfg.wordlist for r in ds.records)
    assert {r.pattern_id for r in records} == {1, 3}
    header = json.loads((tmp_path / "manifest.jsonl").read_text().splitlines()[0])
    assert header["config_hash"] == f"{fnv1a64(canonical_json(cfg.to_dict()).encode()):016x}"
    assert header["schema_version"] == 1
    images, labels = ds.arrays("eval")
    assert images.shape == (len(labels), 1, 32, 160) and images.dtype == np.float32


def test_sample_depends_only_on_index():
    cfg = small_config()
    rec, img = make_sample(cfg, 17)
    rec2, img2 = make_sample(small_config(n_samples=20), 17)
    assert rec == rec2 and img == img2
    assert make_sample(cfg, 18)[1] != img


def test_clean_dataset_has_no_pattern():
    rec, img = make_sample(small_config(patterns=()), 3)
    assert rec.pattern_id == "none"
    assert img.pixels.min() >= 0.0


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        small_config(split_fraction=1.0)
    with pytest.raises(ValueError):
        small_config(n_samples=0)
    cfg = small_config()
    assert DatasetConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
