import numpy as np
import pytest

from cspot.exceptions import GridTooLargeError, InvalidSpecError, LayoutOverflowError
from cspot.integral import build_integrals, count_histogram
from cspot.maps import Box, encode_page_maps, load_page_maps
from cspot.proposal import SpotConfig, centering_filter
from cspot.synth import (
    SynthSpec,
    WordPlacement,
    generate,
    naive_spot_oracle,
    render_page,
    write_corpus,
)
from helpers import LOWER, make_page, query, text_page

SMALL = SynthSpec(pages=3, seed=4)


def grid_box(page, gt):
    b = gt.box
    d = page.maps.downscale
    return Box(b.row_start // d, b.col_start // d, b.row_end // d, b.col_end // d)


def word_hist(stack, box):
    hist = np.array(count_histogram(stack, box))
    hist[LOWER.blank_index] = 0.0
    return hist


def test_spec_validation():
    with pytest.raises(InvalidSpecError):
        SynthSpec(noise=1.0)
    with pytest.raises(InvalidSpecError):
        SynthSpec(lines_per_page=(5, 2))
    with pytest.raises(InvalidSpecError):
        SynthSpec(lexicon=("ok", "n0pe"))
    with pytest.raises(InvalidSpecError, match="unknown"):
        SynthSpec.from_dict({"colour": "red"})
    assert SynthSpec.from_dict(SMALL.to_dict()) == SMALL


def test_generation_is_deterministic():
    a = [encode_page_maps(p.maps) for p in generate(SMALL)]
    b = [encode_page_maps(p.maps) for p in generate(SMALL)]
    assert a == b
    c = [encode_page_maps(p.maps) for p in generate(SynthSpec(pages=3, seed=5))]
    assert a != c


def test_pages_are_independent_of_page_count():
    three = generate(SMALL)
    five = generate(SynthSpec(pages=5, seed=4))
    assert [encode_page_maps(p.maps) for p in three] == \
        [encode_page_maps(p.maps) for p in five[:3]]


def test_noise_free_histograms_exact():
    for page in generate(SMALL):
        stack = build_integrals(page.maps)
        for g in page.gts:
            np.testing.assert_allclose(word_hist(stack, grid_box(page, g)),
                                       query(g.text).count_hist, atol=1e-6)


def test_glyph_mass_and_page_mass():
    for page in generate(SynthSpec(pages=3, seed=1, noise=0.1)):
        total = sum(len(g.text) for g in page.gts)
        assert float(page.maps.scale.sum(dtype=np.float64)) == pytest.approx(total, abs=1e-4)
        for pl in page.placements:
            for _, gb in pl.glyph_boxes():
                mass = page.maps.scale[gb.row_start:gb.row_end, gb.col_start:gb.col_end]
                assert float(mass.sum(dtype=np.float64)) == pytest.approx(1.0, abs=1e-6)


def test_noise_deviation_bound():
    spec = SynthSpec(pages=12, seed=2, noise=0.1)
    deviations, lengths = [], []
    for page in generate(spec):
        stack = build_integrals(page.maps)
        for g in page.gts:
            dev = np.abs(word_hist(stack, grid_box(page, g)) - query(g.text).count_hist).sum()
            deviations.append(dev)
            lengths.append(len(g.text))
    deviations = np.array(deviations[:100])
    lengths = np.array(lengths[:100])
    assert len(deviations) == 100
    # expected deviation is at most noise * |word|; a single word never exceeds twice that
    assert deviations.sum() <= 0.1 * lengths.sum()
    assert np.all(deviations <= 2 * 0.1 * lengths)


def test_gt_boxes_are_centered():
    cfg = SpotConfig()
    for page in generate(SMALL):
        stack = build_integrals(page.maps)
        assert all(centering_filter(stack, grid_box(page, g), cfg) for g in page.gts)


def test_gt_in_pixel_space_and_tight():
    page = generate(SMALL)[0]
    for g, pl in zip(page.gts, page.placements):
        assert g.box == pl.box.scaled(8)
        assert g.text == pl.text


def test_repeated_letters_get_a_gap():
    pl = text_page([["all"]], 8, 30, char_h=4, char_w=4).placements[0]
    assert pl.gaps == (0, 1)


def test_roundtrip_through_files(tmp_path):
    pages = generate(SMALL)
    write_corpus(pages, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == \
        ["gt.json", "page0000.cpmap", "page0001.cpmap", "page0002.cpmap"]
    for p in pages:
        loaded = load_page_maps(tmp_path / f"{p.maps.page_id}.cpmap")
        np.testing.assert_array_equal(loaded.prob, p.maps.prob)
        np.testing.assert_array_equal(loaded.scale, p.maps.scale)


def test_layout_overflow_reports_page():
    with pytest.raises(LayoutOverflowError) as err:
        generate(SynthSpec(pages=2, width_cells=20, height_cells=20))
    assert err.value.page_index == 0


def test_render_rejects_out_of_grid_word():
    pl = WordPlacement("abc", 0, 0, 4, 4, (0, 0))
    with pytest.raises(LayoutOverflowError):
        render_page("p", [pl], 4, 10, LOWER)


def test_distractor_pages_hold_permutation_pairs():
    spec = SynthSpec(pages=10, seed=3, distractor_fraction=1.0)
    for page in generate(spec):
        texts = [g.text for g in page.gts]
        pairs = [(a, b) for a in texts for b in texts
                 if a != b and sorted(a) == sorted(b)]
        assert pairs, texts


def test_oracle_contains_gt_box():
    synth = text_page([["cab", "bead"]], 14, 40, char_h=4, char_w=4)
    for pl in synth.placements:
        found = dict(naive_spot_oracle(synth, query(pl.text)))
        assert pl.box in found
        assert found[pl.box] == pytest.approx(0.0, abs=1e-6)


def test_oracle_empty_scale_page():
    page = make_page(np.zeros((6, 6)), alphabet=LOWER)
    assert naive_spot_oracle(page, query("a")) == []


def test_oracle_grid_limit():
    page = make_page(np.zeros((33, 10)), alphabet=LOWER)
    with pytest.raises(GridTooLargeError):
        naive_spot_oracle(page, query("a"))
