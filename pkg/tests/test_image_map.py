import math

import numpy as np
import pytest
from oracles import brute_assignment_cost, brute_hull

from safe_ids.errors import DataError
from safe_ids.image_map import (
    PixelLayout,
    convex_hull,
    fit_layout,
    frame_and_rasterize,
    inverse_transform,
    linear_sum_assignment,
    load_images,
    resolve_collisions,
    save_images,
    transform_batch,
    transform_sample,
    tsne_embed,
)
from safe_ids.image_map.geometry import Framing
from safe_ids.image_map.tsne import conditional_affinities, default_perplexity

# ---------------------------------------------------------------- t-SNE


def test_perplexity_calibration():
    X = np.random.default_rng(0).normal(size=(30, 5))
    P = conditional_affinities(X, 7.0)
    H = -np.sum(np.where(P > 0, P * np.log(np.where(P > 0, P, 1)), 0), axis=1)
    assert np.allclose(np.exp(H), 7.0, rtol=1e-4)
    assert np.allclose(P.sum(axis=1), 1.0) and np.all(np.diag(P) == 0)


def test_default_perplexity():
    assert default_perplexity(100) == 30
    assert default_perplexity(31) == 10
    assert default_perplexity(4) == 1


def test_duplicate_rows_coembed_at_k4():
    base = np.random.default_rng(3).normal(size=(2, 40))
    X = np.vstack([base[0], base[0], base[1], base[1]])
    emb = tsne_embed(X, iters=1000, seed=0)
    Y = emb.coords
    assert np.linalg.norm(Y[0] - Y[1]) < 1e-3
    assert np.linalg.norm(Y[2] - Y[3]) < 1e-3
    assert np.linalg.norm(Y[0] - Y[2]) > 100 * max(np.linalg.norm(Y[0] - Y[1]), 1e-12)


def test_tsne_deterministic_and_kl_trend():
    X = np.random.default_rng(4).normal(size=(20, 30))
    a = tsne_embed(X, seed=5)
    b = tsne_embed(X, seed=5)
    assert np.array_equal(a.coords, b.coords)
    assert a.kl_history[999] <= a.kl_history[299] + 1e-6


@pytest.mark.parametrize("X, perp", [(np.zeros((3, 5)), 1.0), (np.zeros((6, 5)), 6.0), (np.full((6, 5), np.nan), 2.0)])
def test_tsne_errors(X, perp):
    with pytest.raises(DataError):
        tsne_embed(X, perplexity=perp, iters=5)


# ---------------------------------------------------------------- hull


def test_hull_square_with_center():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    h = convex_hull(pts)
    assert sorted(h.tolist()) == [0, 1, 2, 3]
    area = 0.5 * sum(pts[h[i - 1], 0] * pts[h[i], 1] - pts[h[i], 0] * pts[h[i - 1], 1] for i in range(len(h)))
    assert area > 0  # counter-clockwise


def test_hull_triangle():
    assert sorted(convex_hull(np.array([[0, 0], [2, 0], [1, 3]], float)).tolist()) == [0, 1, 2]


@pytest.mark.parametrize("seed", range(5))
def test_hull_matches_bruteforce(seed):
    pts = np.random.default_rng(seed).normal(size=(100, 2))
    assert set(convex_hull(pts).tolist()) == brute_hull(pts)


def test_collinear_points_fall_back_to_bounding_box():
    pts = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    fr = frame_and_rasterize(pts, 8)
    assert fr.used_bounding_box
    assert fr.cells[0].tolist() == [0, 0] and fr.cells[-1].tolist() == [7, 7]


# ---------------------------------------------------------------- framing


def test_axis_aligned_corners():
    pts = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.3, 0.6]], dtype=float)
    fr = frame_and_rasterize(pts, 8)
    assert {tuple(c) for c in fr.cells[:4].tolist()} == {(0, 0), (0, 7), (7, 0), (7, 7)}


def _d4_orbit(cells, g):
    out = []
    c = np.asarray(cells)
    for flip in (False, True):
        cc = c[:, ::-1] if flip else c
        for rot in range(4):
            r = cc.copy()
            for _ in range(rot):
                r = np.column_stack([r[:, 1], g - 1 - r[:, 0]])
            out.append(sorted(map(tuple, r.tolist())))
    return out


@pytest.mark.parametrize("seed", range(4))
def test_rotation_invariance_of_occupied_cells(seed):
    pts = np.random.default_rng(seed).normal(size=(20, 2)) * [3.0, 1.0]
    th = math.radians(30)
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    a = frame_and_rasterize(pts, 8).cells
    b = frame_and_rasterize(pts @ R.T, 8).cells
    assert sorted(map(tuple, b.tolist())) in _d4_orbit(a, 8)


def test_grid_too_small():
    with pytest.raises(ValueError):
        frame_and_rasterize(np.random.default_rng(0).normal(size=(10, 2)), 3)


# ---------------------------------------------------------------- assignment


@pytest.mark.parametrize("shape", [(3, 3), (4, 6), (6, 4), (1, 5), (7, 7)])
def test_assignment_matches_permutations(shape):
    rng = np.random.default_rng(sum(shape))
    for _ in range(5):
        cost = rng.integers(0, 20, size=shape).astype(float)
        r, c = linear_sum_assignment(cost)
        assert len(set(r.tolist())) == len(r) and len(set(c.tolist())) == len(c) == min(shape)
        assert cost[r, c].sum() == brute_assignment_cost(cost)


def test_collision_farther_feature_moves():
    # both round to (0, 0); (0, 1) is the free neighbor
    pos = np.array([[0.1, 0.05], [0.2, 0.45]])
    fr = Framing(pos, np.array([[0, 0], [0, 0]]), 0.0, False)
    lay = resolve_collisions(fr, 2)
    assert lay.cells.tolist() == [[0, 0], [0, 1]]


def test_no_collision_keeps_rounding_and_full_grid():
    g = 8
    rr, cc = np.divmod(np.arange(64), g)
    pos = np.column_stack([rr, cc]).astype(float) + 0.2
    lay = resolve_collisions(Framing(pos, np.floor(pos + 0.5).astype(int), 0.0, False), g)
    assert np.array_equal(lay.cells, np.column_stack([rr, cc]))
    assert lay.occupied_mask().all()


def test_layout_rejects_shared_cells():
    with pytest.raises(ValueError):
        PixelLayout(4, np.array([[0, 0], [0, 0]]))


# ---------------------------------------------------------------- transform


def _layout(k=3, g=4):
    return PixelLayout(g, np.array([[0, 0], [1, 2], [3, 3], [2, 1]])[:k])


def test_transform_examples():
    lay = _layout()
    assert not transform_sample(np.zeros(3), lay).any()
    img = transform_sample(np.array([1.0, 0.5, 0.25]), lay)
    assert img.dtype == np.uint8
    assert img[0, 0] == 255 and img[1, 2] == 128 and img[3, 3] == 64
    assert int(img.sum()) == 255 + 128 + 64
    with pytest.raises(ValueError):
        transform_sample(np.zeros(4), lay)


def test_inverse_within_quantization():
    X = np.random.default_rng(0).random((500, 3))
    back = inverse_transform(transform_batch(X, _layout()), _layout())
    assert np.max(np.abs(back - X)) <= 1 / 510 + 1e-12


def test_layout_and_images_roundtrip(tmp_path):
    lay = PixelLayout(4, np.array([[0, 0], [1, 2]]), ("a", "b"))
    lay.save(tmp_path / "l.json", scaler={"min": [0, 1], "max": [2, 3]})
    back = PixelLayout.load(tmp_path / "l.json")
    assert np.array_equal(back.cells, lay.cells) and back.feature_names == ("a", "b")
    imgs = transform_batch(np.random.default_rng(1).random((7, 2)), lay)
    save_images(tmp_path / "i.bin", imgs, np.arange(7) % 2)
    im2, lab = load_images(tmp_path / "i.bin")
    assert np.array_equal(im2, imgs) and lab.tolist() == [0, 1, 0, 1, 0, 1, 0]


def test_fit_layout_deterministic_and_bijective():
    X = np.random.default_rng(7).random((300, 12))
    a = fit_layout(X, 8, iters=300, seed=2)
    b = fit_layout(X, 8, iters=300, seed=2)
    assert np.array_equal(a.layout.cells, b.layout.cells)
    assert len({tuple(c) for c in a.layout.cells.tolist()}) == 12
